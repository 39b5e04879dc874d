use crate::error::{ensure_finite, Error, Result};

/// `lower[i]` couples row `i + 1` to column `i`; `upper[i]` couples row `i`
/// to column `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.diag.len();
        if n == 0 {
            return Err(Error::Sizing("empty tridiagonal system".into()));
        }
        if self.lower.len() + 1 != n || self.upper.len() + 1 != n || self.rhs.len() != n {
            return Err(Error::Sizing(format!(
                "tridiagonal lengths lower={} diag={n} upper={} rhs={} are inconsistent",
                self.lower.len(),
                self.upper.len(),
                self.rhs.len()
            )));
        }
        Ok(())
    }

    /// `A x` for the stored matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Whether `|diag| >= |lower| + |upper|` holds on every row.
    pub fn is_diagonally_dominant(&self) -> bool {
        let n = self.diag.len();
        (0..n).all(|i| {
            let off = if i > 0 { self.lower[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.upper[i].abs() } else { 0.0 };
            self.diag[i].abs() >= off
        })
    }
}

/// Thomas algorithm: forward elimination then back substitution, O(n).
pub fn thomas_solve(sys: &TridiagonalSystem) -> Result<Vec<f64>> {
    sys.check()?;
    let n = sys.diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];

    let mut pivot = sys.diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::Singular { index: 0 });
    }
    if n > 1 {
        c[0] = sys.upper[0] / pivot;
    }
    d[0] = sys.rhs[0] / pivot;
    for i in 1..n {
        let a = sys.lower[i - 1];
        pivot = sys.diag[i] - a * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular { index: i });
        }
        if i + 1 < n {
            c[i] = sys.upper[i] / pivot;
        }
        d[i] = (sys.rhs[i] - a * d[i - 1]) / pivot;
    }

    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    ensure_finite(&x, "tridiagonal solution")?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity() {
        let r = vec![1.5, -2.0, 0.25, 7.0];
        let sys = TridiagonalSystem {
            lower: vec![0.0; 3],
            diag: vec![1.0; 4],
            upper: vec![0.0; 3],
            rhs: r.clone(),
        };
        assert_eq!(thomas_solve(&sys).unwrap(), r);
    }

    #[test]
    fn single_equation() {
        let sys = TridiagonalSystem {
            lower: vec![],
            diag: vec![4.0],
            upper: vec![],
            rhs: vec![2.0],
        };
        assert_eq!(thomas_solve(&sys).unwrap(), vec![0.5]);
    }

    #[test]
    fn zero_pivot_reports_row() {
        let sys = TridiagonalSystem {
            lower: vec![1.0, 1.0],
            diag: vec![1.0, 1.0, 1.0],
            upper: vec![1.0, 1.0],
            rhs: vec![1.0; 3],
        };
        assert!(matches!(thomas_solve(&sys), Err(Error::Singular { index: 1 })));
        let sys = TridiagonalSystem {
            lower: vec![1.0],
            diag: vec![0.0, 1.0],
            upper: vec![1.0],
            rhs: vec![1.0; 2],
        };
        assert!(matches!(thomas_solve(&sys), Err(Error::Singular { index: 0 })));
    }

    #[test]
    fn inconsistent_lengths() {
        let sys = TridiagonalSystem {
            lower: vec![1.0],
            diag: vec![1.0, 1.0, 1.0],
            upper: vec![1.0, 1.0],
            rhs: vec![1.0; 3],
        };
        assert!(matches!(thomas_solve(&sys), Err(Error::Sizing(_))));
    }
}
