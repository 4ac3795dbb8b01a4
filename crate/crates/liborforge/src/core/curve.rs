use crate::core::TenorStructure;
use crate::{Error, Result};

const DATE_MATCH_TOL: f64 = 1e-9;

/// Initial zero-coupon bond prices `B(0, T_k)` for every tenor date,
/// strictly positive. Initial rates and forward prices are read off this
/// curve, so the initial term structure is a direct model input.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCurve {
    prices: Vec<f64>,
}

impl InitialCurve {
    /// Prices aligned with `T_1..T_N`.
    pub fn from_prices(prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::invariant("initial curve needs at least one bond price"));
        }
        for (i, p) in prices.iter().enumerate() {
            if !(*p > 0.0) || !p.is_finite() {
                return Err(Error::invariant(format!(
                    "bond price B(0, T_{}) = {p} is not strictly positive",
                    i + 1
                )));
            }
        }
        Ok(InitialCurve { prices })
    }

    /// Build from `(date, price)` pairs which must cover every tenor date
    /// `T_1..T_N` exactly once.
    pub fn from_pairs(tenor: &TenorStructure, pairs: &[(f64, f64)]) -> Result<Self> {
        let n = tenor.interval_count();
        if pairs.len() != n {
            return Err(Error::invariant(format!(
                "initial curve has {} entries, tenor needs {n}",
                pairs.len()
            )));
        }
        let mut prices = vec![f64::NAN; n];
        for (date, price) in pairs {
            let k = (1..=n).find(|k| (tenor.date(*k) - date).abs() <= DATE_MATCH_TOL);
            match k {
                Some(k) => {
                    if !prices[k - 1].is_nan() {
                        return Err(Error::invariant(format!(
                            "duplicate curve entry for date {date}"
                        )));
                    }
                    prices[k - 1] = *price;
                }
                None => {
                    return Err(Error::invariant(format!(
                        "curve date {date} does not match any tenor date"
                    )))
                }
            }
        }
        InitialCurve::from_prices(prices)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// `B(0, T_k)` for `k` in `1..=N`.
    pub fn bond_price(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.prices.len() {
            return Err(Error::index(format!(
                "bond index k = {k} outside 1..={}",
                self.prices.len()
            )));
        }
        Ok(self.prices[k - 1])
    }

    /// `F(0, T_k, T_n) = B(0, T_k) / B(0, T_n)`.
    pub fn forward_price(&self, k: usize, n: usize) -> Result<f64> {
        Ok(self.bond_price(k)? / self.bond_price(n)?)
    }

    /// Initial forward rate `L(0, T_k)` for `k` in `1..=N-1`.
    pub fn libor(&self, tenor: &TenorStructure, k: usize) -> Result<f64> {
        tenor.check_rate_index(k)?;
        let fp = self.forward_price(k, k + 1)?;
        libor_from_forward_price(fp, tenor.accrual(k + 1))
    }
}

/// `L = (F - 1) / delta` for a forward price over one accrual period.
pub fn libor_from_forward_price(forward_price: f64, accrual: f64) -> Result<f64> {
    if !(forward_price > 0.0) {
        return Err(Error::domain(format!(
            "forward price must be positive, got {forward_price}"
        )));
    }
    if !(accrual > 0.0) {
        return Err(Error::domain(format!("accrual must be positive, got {accrual}")));
    }
    Ok((forward_price - 1.0) / accrual)
}

/// Inverse relation `F = 1 + delta L`.
pub fn forward_price_from_libor(libor: f64, accrual: f64) -> Result<f64> {
    if !(accrual > 0.0) {
        return Err(Error::domain(format!("accrual must be positive, got {accrual}")));
    }
    Ok(1.0 + accrual * libor)
}

/// `F(0, T_k, T_n)` read from an initial curve.
pub fn forward_price_from_curve(curve: &InitialCurve, k: usize, n: usize) -> Result<f64> {
    curve.forward_price(k, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_conversions_follow_the_defining_identity() {
        assert_eq!(libor_from_forward_price(1.0, 0.5).unwrap(), 0.0);
        assert!((libor_from_forward_price(1.01, 0.5).unwrap() - 0.02).abs() < 1e-15);
        let fp = 1.0 + 0.25 * 0.03;
        assert!((libor_from_forward_price(fp, 0.25).unwrap() - 0.03).abs() < 1e-15);
        assert!(libor_from_forward_price(0.0, 0.5).is_err());
        assert!(libor_from_forward_price(1.0, 0.0).is_err());
        assert!(forward_price_from_libor(0.02, -1.0).is_err());
    }

    #[test]
    fn forward_prices_are_bond_ratios() {
        let curve = InitialCurve::from_prices(vec![0.99, 0.97]).unwrap();
        assert_eq!(forward_price_from_curve(&curve, 1, 1).unwrap(), 1.0);
        let f12 = forward_price_from_curve(&curve, 1, 2).unwrap();
        assert!((f12 - 1.0206185567010309).abs() < 1e-15);
        let f21 = forward_price_from_curve(&curve, 2, 1).unwrap();
        assert!((f21 - 0.9797979797979798).abs() < 1e-15);
        assert!((f12 * f21 - 1.0).abs() < 1e-15);
        assert!(forward_price_from_curve(&curve, 0, 1).is_err());
        assert!(forward_price_from_curve(&curve, 1, 3).is_err());
    }

    #[test]
    fn curve_pairs_must_match_tenor_dates() {
        let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0]).unwrap();
        let curve = InitialCurve::from_pairs(&tenor, &[(1.0, 0.97), (0.5, 0.99)]).unwrap();
        assert_eq!(curve.bond_price(1).unwrap(), 0.99);
        assert!(InitialCurve::from_pairs(&tenor, &[(0.5, 0.99), (0.7, 0.98)]).is_err());
        assert!(InitialCurve::from_pairs(&tenor, &[(0.5, 0.99), (0.5, 0.98)]).is_err());
        let libor = curve.libor(&tenor, 1).unwrap();
        assert!((libor - (0.99 / 0.97 - 1.0) / 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_prices() {
        assert!(InitialCurve::from_prices(vec![0.99, 0.0]).is_err());
        assert!(InitialCurve::from_prices(vec![-0.5]).is_err());
    }
}
