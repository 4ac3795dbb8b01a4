use crate::{Error, Result};

const PARTITION_TOL: f64 = 1e-12;

/// Piecewise-constant vector function of time, used for deterministic
/// volatility structures. `values[i]` holds on `[breakpoints[i],
/// breakpoints[i+1])`; the final right endpoint is included.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseVector {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PiecewiseVector {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::invariant(format!(
                "piecewise function needs {} breakpoints for {} values, got {}",
                values.len() + 1,
                values.len(),
                breakpoints.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::invariant("piecewise function needs at least one value"));
        }
        for w in breakpoints.windows(2) {
            if w[1] - w[0] <= 0.0 {
                return Err(Error::invariant(format!(
                    "piecewise breakpoints not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::invariant("piecewise values have mixed dimensions"));
        }
        Ok(PiecewiseVector {
            breakpoints,
            values,
        })
    }

    /// Constant value on `[0, horizon]`.
    pub fn constant(value: Vec<f64>, horizon: f64) -> Result<Self> {
        PiecewiseVector::new(vec![0.0, horizon], vec![value])
    }

    pub fn dimension(&self) -> usize {
        self.values[0].len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty")
    }

    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        if t < self.start() - PARTITION_TOL || t > self.end() + PARTITION_TOL {
            return Err(Error::domain(format!(
                "time {t} outside [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let idx = self
            .breakpoints
            .partition_point(|b| *b <= t)
            .saturating_sub(1)
            .min(self.values.len() - 1);
        Ok(&self.values[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_respects_half_open_segments() {
        let pw = PiecewiseVector::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, 0.0], vec![2.0, 0.5]],
        )
        .unwrap();
        assert_eq!(pw.value_at(0.0).unwrap(), &[1.0, 0.0]);
        assert_eq!(pw.value_at(0.999).unwrap(), &[1.0, 0.0]);
        assert_eq!(pw.value_at(1.0).unwrap(), &[2.0, 0.5]);
        assert_eq!(pw.value_at(2.0).unwrap(), &[2.0, 0.5]);
        assert!(pw.value_at(2.5).is_err());
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(PiecewiseVector::new(vec![0.0, 0.0], vec![vec![1.0]]).is_err());
        assert!(PiecewiseVector::new(vec![0.0], vec![]).is_err());
    }
}
