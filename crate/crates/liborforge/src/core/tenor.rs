use crate::{Error, Result};

const ACCRUAL_TOL: f64 = 1e-12;

/// Discrete tenor structure: dates `T_0 = 0 < T_1 < ... < T_N` with accrual
/// factors `delta_k = T_k - T_{k-1}` in year fractions.
///
/// Rates and measures are indexed by `k` in `1..=N`; the forward rates live
/// on `1..=N-1` (the last date only serves as the terminal numeraire).
#[derive(Debug, Clone, PartialEq)]
pub struct TenorStructure {
    dates: Vec<f64>,
    accruals: Vec<f64>,
}

impl TenorStructure {
    /// Build from dates alone; accruals are derived.
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        let accruals = derived_accruals(&dates)?;
        Ok(TenorStructure { dates, accruals })
    }

    /// Build from dates plus user-supplied accruals, which must agree with
    /// the date differences to within 1e-12.
    pub fn with_accruals(dates: Vec<f64>, accruals: Vec<f64>) -> Result<Self> {
        let derived = derived_accruals(&dates)?;
        if accruals.len() != derived.len() {
            return Err(Error::invariant(format!(
                "expected {} accruals for {} dates, got {}",
                derived.len(),
                dates.len(),
                accruals.len()
            )));
        }
        for (k, (given, want)) in accruals.iter().zip(derived.iter()).enumerate() {
            if (given - want).abs() > ACCRUAL_TOL {
                return Err(Error::invariant(format!(
                    "accrual delta_{} = {} does not match date difference {}",
                    k + 1,
                    given,
                    want
                )));
            }
        }
        Ok(TenorStructure { dates, accruals })
    }

    /// Number of tenor intervals `N`.
    pub fn interval_count(&self) -> usize {
        self.accruals.len()
    }

    /// `T_k` for `k` in `0..=N`.
    pub fn date(&self, k: usize) -> f64 {
        self.dates[k]
    }

    /// `delta_k` for `k` in `1..=N`.
    pub fn accrual(&self, k: usize) -> f64 {
        self.accruals[k - 1]
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn accruals(&self) -> &[f64] {
        &self.accruals
    }

    /// Terminal date `T_N`.
    pub fn horizon(&self) -> f64 {
        *self.dates.last().expect("tenor has at least one interval")
    }

    /// Full index set `K = 1..=N`.
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.interval_count()
    }

    /// Rate index set: `K` without the terminal index.
    pub fn rate_indices(&self) -> std::ops::Range<usize> {
        1..self.interval_count()
    }

    /// Number of modeled forward rates, `N - 1`.
    pub fn rate_count(&self) -> usize {
        self.interval_count().saturating_sub(1)
    }

    pub(crate) fn check_rate_index(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.interval_count() {
            return Err(Error::index(format!(
                "tenor index k = {k} outside 1..={}",
                self.interval_count() - 1
            )));
        }
        Ok(())
    }
}

fn derived_accruals(dates: &[f64]) -> Result<Vec<f64>> {
    if dates.len() < 2 {
        return Err(Error::invariant(
            "tenor structure needs at least two dates".to_string(),
        ));
    }
    if dates[0].abs() > ACCRUAL_TOL {
        return Err(Error::invariant(format!(
            "first tenor date must be 0, got {}",
            dates[0]
        )));
    }
    let mut accruals = Vec::with_capacity(dates.len() - 1);
    for k in 1..dates.len() {
        let delta = dates[k] - dates[k - 1];
        if delta <= 0.0 {
            return Err(Error::invariant(format!(
                "tenor dates not strictly increasing at k = {k}: T_{} = {} >= T_{} = {}",
                k - 1,
                dates[k - 1],
                k,
                dates[k]
            )));
        }
        accruals.push(delta);
    }
    Ok(accruals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_standard_semiannual_structure() {
        let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        assert_eq!(tenor.interval_count(), 4);
        assert_eq!(tenor.rate_count(), 3);
        assert_eq!(tenor.accrual(2), 0.5);
        assert_eq!(tenor.horizon(), 2.0);
        assert_eq!(tenor.rate_indices().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_non_increasing_dates() {
        let err = TenorStructure::new(vec![0.0, 1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("k = 2"));
    }

    #[test]
    fn rejects_nonzero_first_date() {
        assert!(TenorStructure::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn rejects_mismatched_accruals_naming_index() {
        let err =
            TenorStructure::with_accruals(vec![0.0, 0.5, 1.0], vec![0.5, 0.6]).unwrap_err();
        assert!(err.to_string().contains("delta_2"));
    }

    #[test]
    fn accepts_consistent_accruals() {
        let tenor =
            TenorStructure::with_accruals(vec![0.0, 0.25, 0.75], vec![0.25, 0.5]).unwrap();
        assert_eq!(tenor.accrual(1), 0.25);
    }
}
