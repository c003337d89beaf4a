use super::KernelError;

/// Polynomially decaying SGLD step size `ε_i = a (b + i)^{-c}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgldSchedule {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SgldSchedule {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, KernelError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(KernelError::InvalidSchedule(format!("scale a must be positive, got {a}")));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(KernelError::InvalidSchedule(format!("offset b must be non-negative, got {b}")));
        }
        if !(c > 0.5 && c <= 1.0) {
            return Err(KernelError::InvalidSchedule(format!("exponent c must lie in (0.5, 1], got {c}")));
        }
        Ok(Self { a, b, c })
    }

    /// Parses an `a,b,c` triple.
    pub fn parse(text: &str) -> Result<Self, KernelError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(KernelError::InvalidSchedule(format!(
                "expected `a,b,c`, got `{text}`"
            )));
        }
        let mut vals = [0.0; 3];
        for (slot, p) in vals.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| KernelError::InvalidSchedule(format!("not a number: `{p}`")))?;
        }
        Self::new(vals[0], vals[1], vals[2])
    }

    pub fn step_size(&self, i: u64) -> Result<f64, KernelError> {
        let base = self.b + i as f64;
        if base <= 0.0 {
            return Err(KernelError::SingularStep { c: self.c });
        }
        Ok(self.a * base.powf(-self.c))
    }
}

impl Default for SgldSchedule {
    /// Single-machine setting: mini-batches of 60 documents.
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 100.0,
            c: 0.8,
        }
    }
}

impl std::fmt::Display for SgldSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.a, self.b, self.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let s = SgldSchedule::default();
        // 0.5 * 100^-0.8 and 0.5 * 1000^-0.8
        assert!((s.step_size(0).unwrap() - 0.012559432157547897).abs() < 1e-12);
        assert!((s.step_size(900).unwrap() - 0.001990535852767486).abs() < 1e-12);
    }

    #[test]
    fn singular_and_invalid() {
        let s = SgldSchedule::new(1.0, 0.0, 1.0).unwrap();
        assert!(matches!(s.step_size(0), Err(KernelError::SingularStep { .. })));
        assert!((s.step_size(4).unwrap() - 0.25).abs() < 1e-15);
        assert!(SgldSchedule::new(0.0, 1.0, 0.8).is_err());
        assert!(SgldSchedule::new(1.0, -1.0, 0.8).is_err());
        assert!(SgldSchedule::new(1.0, 1.0, 0.5).is_err());
        assert!(SgldSchedule::new(1.0, 1.0, 1.1).is_err());
    }

    #[test]
    fn parse_triple() {
        let s = SgldSchedule::parse("0.5, 1000, 0.75").unwrap();
        assert_eq!(s, SgldSchedule::new(0.5, 1000.0, 0.75).unwrap());
        assert!(SgldSchedule::parse("0.5,100").is_err());
        assert!(SgldSchedule::parse("a,b,c").is_err());
        assert_eq!(SgldSchedule::parse(&s.to_string()).unwrap(), s);
    }

    proptest::proptest! {
        #[test]
        fn strictly_decreasing(a in 0.01f64..10.0, b in 0.1f64..1000.0, c in 0.51f64..=1.0, i in 0u64..100_000) {
            let s = SgldSchedule::new(a, b, c).unwrap();
            let e0 = s.step_size(i).unwrap();
            let e1 = s.step_size(i + 1).unwrap();
            proptest::prop_assert!(e0 > 0.0 && e1 > 0.0 && e1 < e0);
        }
    }
}
