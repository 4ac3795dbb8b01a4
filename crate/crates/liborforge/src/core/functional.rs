use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::math;
use crate::{Error, Result};

/// Deterministic scalar function of time with a derivative, used for the
/// coefficients of affine functionals.
pub trait TimeFunction: Send + Sync + fmt::Debug {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFn(pub f64);

impl TimeFunction for ConstantFn {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }
    fn derivative(&self, _t: f64) -> f64 {
        0.0
    }
}

/// Weighted sum of time functions; closed under the functional algebra used
/// by the backward/terminal conversions.
#[derive(Debug)]
struct CombinedFn {
    terms: Vec<(f64, Arc<dyn TimeFunction>)>,
}

impl TimeFunction for CombinedFn {
    fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(t)).sum()
    }
    fn derivative(&self, t: f64) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.derivative(t)).sum()
    }
}

/// Evaluator interface for user-supplied functionals.
pub trait FunctionalEval: Send + Sync {
    fn dimension(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, t: f64, x: &[f64]) -> DMatrix<f64>;

    /// `f(t, x + jump) - f(t, x)`. Override when a stabler form exists.
    fn increment(&self, t: f64, x: &[f64], jump: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(jump).map(|(a, b)| a + b).collect();
        self.value(t, &shifted) - self.value(t, x)
    }
}

#[derive(Clone)]
pub enum FunctionalKind {
    /// `alpha(t) + <beta(t), x>`.
    Affine {
        intercept: Arc<dyn TimeFunction>,
        slope: Vec<Arc<dyn TimeFunction>>,
    },
    /// `log(1 + accrual * rate * exp(x_coordinate))`, the log forward price
    /// of a single rate driven by one coordinate of the state.
    LogOnePlusExp {
        accrual: f64,
        initial_rate: f64,
        coordinate: usize,
        dimension: usize,
    },
    Custom(Arc<dyn FunctionalEval>),
}

/// A forward-price exponent `f(t, x)`: value, time derivative, gradient and
/// Hessian, plus a declared global Lipschitz bound in the state variable.
///
/// The Lipschitz bound is taken on trust at construction and audited
/// statistically by the validation engine.
#[derive(Clone)]
pub struct ForwardFunctional {
    kind: FunctionalKind,
    dimension: usize,
    lipschitz: f64,
}

impl fmt::Debug for ForwardFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardFunctional")
            .field("kind", &self.kind_name())
            .field("dimension", &self.dimension)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl ForwardFunctional {
    pub fn affine(
        intercept: Arc<dyn TimeFunction>,
        slope: Vec<Arc<dyn TimeFunction>>,
        lipschitz: f64,
    ) -> Result<Self> {
        if slope.is_empty() {
            return Err(Error::invariant("affine functional needs a slope vector"));
        }
        check_lipschitz(lipschitz)?;
        Ok(ForwardFunctional {
            dimension: slope.len(),
            kind: FunctionalKind::Affine { intercept, slope },
            lipschitz,
        })
    }

    /// Affine functional with constant coefficients; the Lipschitz bound is
    /// the Euclidean norm of the slope.
    pub fn affine_const(intercept: f64, slope: Vec<f64>) -> Result<Self> {
        let bound = math::euclidean_norm(&slope).max(f64::MIN_POSITIVE);
        let slope_fns: Vec<Arc<dyn TimeFunction>> = slope
            .into_iter()
            .map(|v| Arc::new(ConstantFn(v)) as Arc<dyn TimeFunction>)
            .collect();
        ForwardFunctional::affine(Arc::new(ConstantFn(intercept)), slope_fns, bound)
    }

    /// Log forward price of one rate: `log(1 + delta L0 e^{x_k})`. Lipschitz
    /// with constant one.
    pub fn log_one_plus_exp(
        accrual: f64,
        initial_rate: f64,
        coordinate: usize,
        dimension: usize,
    ) -> Result<Self> {
        if accrual <= 0.0 {
            return Err(Error::domain(format!("accrual must be positive, got {accrual}")));
        }
        if initial_rate <= 0.0 {
            return Err(Error::domain(format!(
                "initial rate must be positive, got {initial_rate}"
            )));
        }
        if coordinate >= dimension {
            return Err(Error::index(format!(
                "coordinate {coordinate} outside dimension {dimension}"
            )));
        }
        Ok(ForwardFunctional {
            kind: FunctionalKind::LogOnePlusExp {
                accrual,
                initial_rate,
                coordinate,
                dimension,
            },
            dimension,
            lipschitz: 1.0,
        })
    }

    pub fn custom(eval: Arc<dyn FunctionalEval>, lipschitz: f64) -> Result<Self> {
        check_lipschitz(lipschitz)?;
        Ok(ForwardFunctional {
            dimension: eval.dimension(),
            kind: FunctionalKind::Custom(eval),
            lipschitz,
        })
    }

    pub fn kind(&self) -> &FunctionalKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            FunctionalKind::Affine { .. } => "affine",
            FunctionalKind::LogOnePlusExp { .. } => "log-one-plus-exp",
            FunctionalKind::Custom(_) => "custom",
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, FunctionalKind::Affine { .. })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match &self.kind {
            FunctionalKind::Affine { intercept, slope } => {
                let mut acc = intercept.value(t);
                for (s, xi) in slope.iter().zip(x) {
                    acc += s.value(t) * xi;
                }
                acc
            }
            FunctionalKind::LogOnePlusExp {
                accrual,
                initial_rate,
                coordinate,
                ..
            } => {
                let a = accrual * initial_rate;
                let z = x[*coordinate];
                // ln(1 + a e^z); switch to the asymptote before a e^z overflows
                if a.ln() + z > 30.0 {
                    a.ln() + z
                } else {
                    (a * z.exp()).ln_1p()
                }
            }
            FunctionalKind::Custom(eval) => eval.value(t, x),
        }
    }

    pub fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        match &self.kind {
            FunctionalKind::Affine { intercept, slope } => {
                let mut acc = intercept.derivative(t);
                for (s, xi) in slope.iter().zip(x) {
                    acc += s.derivative(t) * xi;
                }
                acc
            }
            FunctionalKind::LogOnePlusExp { .. } => 0.0,
            FunctionalKind::Custom(eval) => eval.time_derivative(t, x),
        }
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            FunctionalKind::Affine { slope, .. } => slope.iter().map(|s| s.value(t)).collect(),
            FunctionalKind::LogOnePlusExp { coordinate, .. } => {
                let mut g = vec![0.0; self.dimension];
                g[*coordinate] = self.logistic_weight(x);
                g
            }
            FunctionalKind::Custom(eval) => eval.gradient(t, x),
        }
    }

    pub fn hessian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            FunctionalKind::Affine { .. } => DMatrix::zeros(self.dimension, self.dimension),
            FunctionalKind::LogOnePlusExp { coordinate, .. } => {
                let mut h = DMatrix::zeros(self.dimension, self.dimension);
                let ell = self.logistic_weight(x);
                h[(*coordinate, *coordinate)] = ell * (1.0 - ell);
                h
            }
            FunctionalKind::Custom(eval) => eval.hessian(t, x),
        }
    }

    /// `f(t, x + jump) - f(t, x)`, in a form that is exact for affine
    /// functionals (state independent) and numerically stable for the
    /// logistic rate functional.
    pub fn increment(&self, t: f64, x: &[f64], jump: &[f64]) -> f64 {
        match &self.kind {
            FunctionalKind::Affine { slope, .. } => {
                let mut acc = 0.0;
                for (s, j) in slope.iter().zip(jump) {
                    acc += s.value(t) * j;
                }
                acc
            }
            FunctionalKind::LogOnePlusExp { coordinate, .. } => {
                let j = jump[*coordinate];
                if j == 0.0 {
                    return 0.0;
                }
                let ell = self.logistic_weight(x);
                (ell * j.exp_m1()).ln_1p()
            }
            FunctionalKind::Custom(eval) => eval.increment(t, x, jump),
        }
    }

    /// Logistic weight `delta L0 e^{x_k} / (1 + delta L0 e^{x_k})` of the
    /// rate functional; zero for other kinds.
    pub fn logistic_weight(&self, x: &[f64]) -> f64 {
        match &self.kind {
            FunctionalKind::LogOnePlusExp {
                accrual,
                initial_rate,
                coordinate,
                ..
            } => {
                let z = accrual * initial_rate * x[*coordinate].exp();
                if z.is_infinite() {
                    1.0
                } else {
                    z / (1.0 + z)
                }
            }
            _ => 0.0,
        }
    }

    /// Weighted sum of functionals. Affine inputs stay affine; anything else
    /// produces a custom evaluator that combines terms (increments included,
    /// so telescoping stays exact).
    pub fn combine(terms: Vec<(f64, ForwardFunctional)>) -> Result<ForwardFunctional> {
        if terms.is_empty() {
            return Err(Error::invariant("cannot combine zero functionals"));
        }
        let dim = terms[0].1.dimension();
        if terms.iter().any(|(_, f)| f.dimension() != dim) {
            return Err(Error::invariant(
                "cannot combine functionals of different dimensions",
            ));
        }
        let bound: f64 = terms
            .iter()
            .map(|(c, f)| c.abs() * f.lipschitz_bound())
            .sum();
        if terms.iter().all(|(_, f)| f.is_affine()) {
            let mut intercepts: Vec<(f64, Arc<dyn TimeFunction>)> = Vec::new();
            let mut slopes: Vec<Vec<(f64, Arc<dyn TimeFunction>)>> = vec![Vec::new(); dim];
            for (c, f) in &terms {
                if let FunctionalKind::Affine { intercept, slope } = f.kind() {
                    intercepts.push((*c, intercept.clone()));
                    for (i, s) in slope.iter().enumerate() {
                        slopes[i].push((*c, s.clone()));
                    }
                }
            }
            let slope: Vec<Arc<dyn TimeFunction>> = slopes
                .into_iter()
                .map(|terms| Arc::new(CombinedFn { terms }) as Arc<dyn TimeFunction>)
                .collect();
            return ForwardFunctional::affine(
                Arc::new(CombinedFn { terms: intercepts }),
                slope,
                bound,
            );
        }
        ForwardFunctional::custom(Arc::new(CombinationEval { terms }), bound)
    }

    pub fn difference(a: &ForwardFunctional, b: &ForwardFunctional) -> Result<ForwardFunctional> {
        ForwardFunctional::combine(vec![(1.0, a.clone()), (-1.0, b.clone())])
    }
}

fn check_lipschitz(bound: f64) -> Result<()> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::domain(format!(
            "Lipschitz bound must be positive and finite, got {bound}"
        )));
    }
    Ok(())
}

struct CombinationEval {
    terms: Vec<(f64, ForwardFunctional)>,
}

impl FunctionalEval for CombinationEval {
    fn dimension(&self) -> usize {
        self.terms[0].1.dimension()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(t, x)).sum()
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, f)| c * f.time_derivative(t, x))
            .sum()
    }
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dimension()];
        for (c, f) in &self.terms {
            for (gi, v) in g.iter_mut().zip(f.gradient(t, x)) {
                *gi += c * v;
            }
        }
        g
    }
    fn hessian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let d = self.dimension();
        let mut h = DMatrix::zeros(d, d);
        for (c, f) in &self.terms {
            h += f.hessian(t, x) * *c;
        }
        h
    }
    fn increment(&self, t: f64, x: &[f64], jump: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, f)| c * f.increment(t, x, jump))
            .sum()
    }
}

/// Backward functionals from terminal ones: `f_k = g_k - g_{k+1}` with the
/// convention that the terminal functional past the end is identically zero.
/// Lipschitz bounds add.
pub fn f_from_g(g: &[ForwardFunctional]) -> Result<Vec<ForwardFunctional>> {
    if g.is_empty() {
        return Err(Error::invariant("empty terminal functional list"));
    }
    let mut out = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        if k + 1 < g.len() {
            out.push(ForwardFunctional::difference(&g[k], &g[k + 1])?);
        } else {
            out.push(g[k].clone());
        }
    }
    Ok(out)
}

/// Terminal functionals from backward ones: `g_k = sum_{j >= k} f_j`.
pub fn g_from_f(f: &[ForwardFunctional]) -> Result<Vec<ForwardFunctional>> {
    if f.is_empty() {
        return Err(Error::invariant("empty backward functional list"));
    }
    let mut out = Vec::with_capacity(f.len());
    for k in 0..f.len() {
        if k + 1 == f.len() {
            out.push(f[k].clone());
        } else {
            let terms = f[k..].iter().map(|fj| (1.0, fj.clone())).collect();
            out.push(ForwardFunctional::combine(terms)?);
        }
    }
    Ok(out)
}

/// Result of checking analytic derivatives against central finite
/// differences of the value.
#[derive(Debug, Clone)]
pub struct DerivativeAudit {
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
    pub samples: usize,
    pub tolerance: f64,
}

impl DerivativeAudit {
    pub fn passed(&self) -> bool {
        self.max_gradient_error <= self.tolerance && self.max_hessian_error <= self.tolerance
    }
}

/// Compare gradient and Hessian against central differences at `samples`
/// random points of `[0, t_max] x [lo, hi]^d`. Step 1e-5; errors are
/// relative with denominator floored at one.
pub fn audit_derivatives(
    f: &ForwardFunctional,
    t_max: f64,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> DerivativeAudit {
    let h = 1e-5;
    let tol = 1e-6;
    let d = f.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_grad = 0.0f64;
    let mut max_hess = 0.0f64;
    for _ in 0..samples {
        let t = rng.random_range(0.0..=t_max);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let grad = f.gradient(t, &x);
        let hess = f.hessian(t, &x);
        for i in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(t, &xp) - f.value(t, &xm)) / (2.0 * h);
            max_grad = max_grad.max(rel_err(fd, grad[i]));

            let fd2 = (f.value(t, &xp) - 2.0 * f.value(t, &x) + f.value(t, &xm)) / (h * h);
            max_hess = max_hess.max(rel_err(fd2, hess[(i, i)]));
            for j in (i + 1)..d {
                let mut xpp = x.clone();
                let mut xpm = x.clone();
                let mut xmp = x.clone();
                let mut xmm = x.clone();
                xpp[i] += h;
                xpp[j] += h;
                xpm[i] += h;
                xpm[j] -= h;
                xmp[i] -= h;
                xmp[j] += h;
                xmm[i] -= h;
                xmm[j] -= h;
                let fd_ij = (f.value(t, &xpp) - f.value(t, &xpm) - f.value(t, &xmp)
                    + f.value(t, &xmm))
                    / (4.0 * h * h);
                max_hess = max_hess.max(rel_err(fd_ij, hess[(i, j)]));
            }
        }
    }
    DerivativeAudit {
        max_gradient_error: max_grad,
        max_hessian_error: max_hess,
        samples,
        tolerance: tol,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Statistical audit of a declared Lipschitz bound over random point pairs.
#[derive(Debug, Clone)]
pub struct LipschitzAudit {
    pub declared: f64,
    pub observed: f64,
    pub samples: usize,
}

impl LipschitzAudit {
    pub fn passed(&self) -> bool {
        self.observed <= self.declared * (1.0 + 1e-9) + 1e-12
    }
}

pub fn audit_lipschitz(
    f: &ForwardFunctional,
    t_max: f64,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> LipschitzAudit {
    let d = f.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = 0.0f64;
    for _ in 0..samples {
        let t = rng.random_range(0.0..=t_max);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
        let dist = math::euclidean_norm(
            &x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<f64>>(),
        );
        if dist < 1e-12 {
            continue;
        }
        let ratio = (f.value(t, &x) - f.value(t, &y)).abs() / dist;
        observed = observed.max(ratio);
    }
    LipschitzAudit {
        declared: f.lipschitz_bound(),
        observed,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points(dim: usize, n: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = rng.random_range(0.0..=2.0);
                let x = (0..dim).map(|_| rng.random_range(-5.0..=5.0)).collect();
                (t, x)
            })
            .collect()
    }

    #[test]
    fn affine_functional_evaluates_and_differentiates() {
        let f = ForwardFunctional::affine_const(0.5, vec![2.0, -1.0]).unwrap();
        assert_eq!(f.value(0.3, &[1.0, 2.0]), 0.5 + 2.0 - 2.0);
        assert_eq!(f.gradient(0.0, &[9.0, 9.0]), vec![2.0, -1.0]);
        assert_eq!(f.hessian(0.0, &[0.0, 0.0])[(0, 0)], 0.0);
        assert_eq!(f.time_derivative(0.1, &[1.0, 1.0]), 0.0);
        // increment is state independent and exact
        assert_eq!(f.increment(0.0, &[7.0, -3.0], &[0.5, 0.25]), 2.0 * 0.5 - 0.25);
    }

    #[test]
    fn rate_functional_matches_closed_forms() {
        let f = ForwardFunctional::log_one_plus_exp(0.5, 0.04, 1, 3).unwrap();
        let x = [0.0, 0.3, 0.0];
        let a = 0.5 * 0.04;
        let want = (1.0 + a * 0.3f64.exp()).ln();
        assert!((f.value(0.0, &x) - want).abs() < 1e-15);
        let ell = a * 0.3f64.exp() / (1.0 + a * 0.3f64.exp());
        assert!((f.gradient(0.0, &x)[1] - ell).abs() < 1e-15);
        assert_eq!(f.gradient(0.0, &x)[0], 0.0);
        assert!((f.hessian(0.0, &x)[(1, 1)] - ell * (1.0 - ell)).abs() < 1e-15);
        // increment against direct evaluation
        let jump = [0.0, 0.4, 0.0];
        let direct = f.value(0.0, &[0.0, 0.7, 0.0]) - f.value(0.0, &x);
        assert!((f.increment(0.0, &x, &jump) - direct).abs() < 1e-14);
        assert_eq!(f.increment(0.0, &x, &[1.0, 0.0, 1.0]), 0.0);
    }

    #[test]
    fn zero_terminal_functionals_convert_to_zero_backward() {
        let g: Vec<ForwardFunctional> = (0..3)
            .map(|_| ForwardFunctional::affine_const(0.0, vec![0.0, 0.0]).unwrap())
            .collect();
        let f = f_from_g(&g).unwrap();
        for fk in &f {
            for (t, x) in sample_points(2, 20, 1) {
                assert_eq!(fk.value(t, &x), 0.0);
            }
        }
    }

    #[test]
    fn affine_difference_subtracts_coefficients_and_adds_bounds() {
        let g1 = ForwardFunctional::affine_const(0.0, vec![2.0]).unwrap();
        let g2 = ForwardFunctional::affine_const(0.0, vec![1.0]).unwrap();
        let f = f_from_g(&[g1, g2]).unwrap();
        for (t, x) in sample_points(1, 50, 2) {
            assert!((f[0].value(t, &x) - x[0]).abs() < 1e-12);
        }
        assert!((f[0].lipschitz_bound() - 3.0).abs() < 1e-12);
        assert!(f[0].is_affine());
    }

    #[test]
    fn backward_sums_reproduce_terminal_functionals() {
        // N = 3 with f1 = x, f2 = 2x gives g1 = 3x, g2 = 2x
        let f1 = ForwardFunctional::affine_const(0.0, vec![1.0]).unwrap();
        let f2 = ForwardFunctional::affine_const(0.0, vec![2.0]).unwrap();
        let g = g_from_f(&[f1, f2]).unwrap();
        for (t, x) in sample_points(1, 50, 3) {
            assert!((g[0].value(t, &x) - 3.0 * x[0]).abs() < 1e-12);
            assert!((g[1].value(t, &x) - 2.0 * x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn conversion_round_trip_is_identity_on_values() {
        let f: Vec<ForwardFunctional> = (0..3)
            .map(|k| ForwardFunctional::log_one_plus_exp(0.5, 0.02 + 0.01 * k as f64, k, 3).unwrap())
            .collect();
        let back = f_from_g(&g_from_f(&f).unwrap()).unwrap();
        for (orig, round) in f.iter().zip(&back) {
            for (t, x) in sample_points(3, 100, 4) {
                assert!((orig.value(t, &x) - round.value(t, &x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_audit_passes_for_builtin_kinds() {
        let f = ForwardFunctional::log_one_plus_exp(0.5, 0.03, 0, 2).unwrap();
        let audit = audit_derivatives(&f, 2.0, -5.0, 5.0, 100, 7);
        assert!(audit.passed(), "gradient/hessian audit failed: {audit:?}");
        let a = ForwardFunctional::affine_const(1.0, vec![0.5, -0.25]).unwrap();
        assert!(audit_derivatives(&a, 2.0, -5.0, 5.0, 100, 8).passed());
    }

    #[test]
    fn lipschitz_audit_accepts_declared_unit_bound() {
        let f = ForwardFunctional::log_one_plus_exp(0.5, 0.03, 0, 1).unwrap();
        let audit = audit_lipschitz(&f, 2.0, -5.0, 5.0, 10_000, 11);
        assert!(audit.passed());
        assert!(audit.observed <= 1.0 + 1e-12);
    }
}
