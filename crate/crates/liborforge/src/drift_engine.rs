//! The no-arbitrage core: drift-condition residuals, the closed-form drifts
//! of the rate and forward-price families, and audits of the integrability,
//! volatility and positivity assumptions.
//!
//! Residual evaluation is the generic primitive; closed-form drifts are
//! provided only for the families that admit them. Solving the drift
//! condition for an arbitrary functional family in several dimensions is
//! underdetermined, so the engine checks rather than constructs in the
//! generic case.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::math::{dot, quad_form};
use crate::core::{
    audit_derivatives, audit_lipschitz, AtomicJumpMeasure, CharacteristicsPoint,
    ForwardFunctional, InitialCurve, JumpAtom, LocalCharacteristics, ModelFamily, ModelSpec,
    PiecewiseVector, Segment, TenorStructure, Truncation,
};
use crate::measure_change::{local_martingale_residual, GirsanovTilt};
use crate::{Error, Result};

const PARTITION_TOL: f64 = 1e-12;

/// Rate-family inputs: factor process characteristics, per-tenor volatility
/// functions, the volatility bound, the exponential-moment margin, and the
/// initial rates (read from the curve during model assembly).
#[derive(Debug, Clone)]
pub struct LmmSpec {
    levy: LocalCharacteristics,
    volatilities: Vec<PiecewiseVector>,
    bound_m: f64,
    epsilon: f64,
    initial_rates: Vec<f64>,
    accruals: Vec<f64>,
}

impl LmmSpec {
    pub fn new(
        levy: LocalCharacteristics,
        volatilities: Vec<PiecewiseVector>,
        bound_m: f64,
        epsilon: f64,
    ) -> Result<Self> {
        check_levy_inputs(&levy, &volatilities, bound_m, epsilon)?;
        Ok(LmmSpec {
            levy,
            volatilities,
            bound_m,
            epsilon,
            initial_rates: Vec::new(),
            accruals: Vec::new(),
        })
    }

    pub(crate) fn assemble(
        mut self,
        tenor: &TenorStructure,
        curve: &InitialCurve,
    ) -> Result<Self> {
        self.volatilities = normalize_volatilities(&self.volatilities, tenor)?;
        self.accruals = tenor.rate_indices().map(|k| tenor.accrual(k + 1)).collect();
        self.initial_rates = tenor
            .rate_indices()
            .map(|k| curve.libor(tenor, k))
            .collect::<Result<Vec<f64>>>()?;
        for (k, rate) in self.initial_rates.iter().enumerate() {
            if !(*rate > 0.0) {
                return Err(Error::domain(format!(
                    "rate family needs positive initial rates, got L(0, T_{}) = {rate}",
                    k + 1
                )));
            }
        }
        Ok(self)
    }

    pub fn levy(&self) -> &LocalCharacteristics {
        &self.levy
    }

    pub fn volatilities(&self) -> &[PiecewiseVector] {
        &self.volatilities
    }

    /// Volatility of tenor `k`, 1-based.
    pub fn volatility(&self, k: usize) -> &PiecewiseVector {
        &self.volatilities[k - 1]
    }

    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn initial_rates(&self) -> &[f64] {
        &self.initial_rates
    }

    pub fn accruals(&self) -> &[f64] {
        &self.accruals
    }

    pub fn rate_count(&self) -> usize {
        self.volatilities.len()
    }

    /// `delta_k L(0, T_k)`, the coefficient of the logistic weight.
    pub(crate) fn rate_coefficient(&self, k: usize) -> f64 {
        self.accruals[k - 1] * self.initial_rates[k - 1]
    }

    pub(crate) fn functionals(&self, tenor: &TenorStructure) -> Result<Vec<ForwardFunctional>> {
        let d = tenor.rate_count();
        tenor
            .rate_indices()
            .map(|k| {
                ForwardFunctional::log_one_plus_exp(
                    tenor.accrual(k + 1),
                    self.initial_rates[k - 1],
                    k - 1,
                    d,
                )
            })
            .collect()
    }

    /// Deterministic part of the driver triplet: zero drift placeholders,
    /// diffusion `Lam c^L Lam'` and the image atoms of the factor jumps.
    pub(crate) fn build_driver(&self, tenor: &TenorStructure) -> Result<LocalCharacteristics> {
        build_mapped_driver(&self.levy, &self.volatilities, tenor, |_, _| 0.0, |rows| {
            rows.to_vec()
        })
    }
}

/// Forward-price-family inputs: same driver data as the rate family plus the
/// initial terminal-quoted forward prices.
#[derive(Debug, Clone)]
pub struct FpmSpec {
    levy: LocalCharacteristics,
    volatilities: Vec<PiecewiseVector>,
    bound_m: f64,
    epsilon: f64,
    initial_forward_prices: Vec<f64>,
}

impl FpmSpec {
    pub fn new(
        levy: LocalCharacteristics,
        volatilities: Vec<PiecewiseVector>,
        bound_m: f64,
        epsilon: f64,
    ) -> Result<Self> {
        check_levy_inputs(&levy, &volatilities, bound_m, epsilon)?;
        Ok(FpmSpec {
            levy,
            volatilities,
            bound_m,
            epsilon,
            initial_forward_prices: Vec::new(),
        })
    }

    pub(crate) fn assemble(
        mut self,
        tenor: &TenorStructure,
        curve: &InitialCurve,
    ) -> Result<Self> {
        self.volatilities = normalize_volatilities(&self.volatilities, tenor)?;
        self.initial_forward_prices = tenor
            .rate_indices()
            .map(|k| curve.forward_price(k, tenor.interval_count()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self)
    }

    pub fn levy(&self) -> &LocalCharacteristics {
        &self.levy
    }

    pub fn volatilities(&self) -> &[PiecewiseVector] {
        &self.volatilities
    }

    pub fn volatility(&self, k: usize) -> &PiecewiseVector {
        &self.volatilities[k - 1]
    }

    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `F(0, T_k, T_N)` per rate index.
    pub fn initial_forward_prices(&self) -> &[f64] {
        &self.initial_forward_prices
    }

    pub fn rate_count(&self) -> usize {
        self.volatilities.len()
    }

    /// Cumulative volatility `Lam_k(t) = sum_{i >= k} lambda_i(t)`, 1-based.
    pub fn cumulative_volatility(&self, k: usize, t: f64) -> Result<Vec<f64>> {
        if k == 0 || k > self.rate_count() + 1 {
            return Err(Error::index(format!(
                "tenor index k = {k} outside 1..={}",
                self.rate_count() + 1
            )));
        }
        let n = self.levy.dimension();
        let mut cum = vec![0.0; n];
        for i in k..=self.rate_count() {
            let lam = self.volatilities[i - 1].value_at(t)?;
            for (c, v) in cum.iter_mut().zip(lam) {
                *c += v;
            }
        }
        Ok(cum)
    }

    pub(crate) fn functionals(&self) -> Result<Vec<ForwardFunctional>> {
        let d = self.rate_count();
        self.initial_forward_prices
            .iter()
            .enumerate()
            .map(|(idx, f0)| {
                let mut slope = vec![0.0; d];
                slope[idx] = 1.0;
                ForwardFunctional::affine_const(f0.ln(), slope)
            })
            .collect()
    }

    /// Driver triplet with rows given by the cumulative volatilities and the
    /// deterministic no-arbitrage drifts.
    pub(crate) fn build_driver(&self, tenor: &TenorStructure) -> Result<LocalCharacteristics> {
        let vols = self.volatilities.clone();
        build_mapped_driver(
            &self.levy,
            &self.volatilities,
            tenor,
            |seg, rows| deterministic_drift_core(&seg.diffusion, seg.jumps.atoms(), rows),
            move |rows| {
                // cumulative rows: row_k = sum_{i >= k} lambda_i
                let n = rows.first().map(|r| r.len()).unwrap_or(0);
                let mut out = vec![vec![0.0; n]; vols.len()];
                for k in 0..vols.len() {
                    for i in k..vols.len() {
                        for (c, v) in out[k].iter_mut().zip(&rows[i]) {
                            *c += v;
                        }
                    }
                }
                out
            },
        )
    }
}

fn check_levy_inputs(
    levy: &LocalCharacteristics,
    volatilities: &[PiecewiseVector],
    bound_m: f64,
    epsilon: f64,
) -> Result<()> {
    if levy.truncation() != Truncation::Identity {
        return Err(Error::contract(
            "factor characteristics must use the identity truncation",
        ));
    }
    for seg in levy.segments() {
        if seg.drift.iter().any(|b| *b != 0.0) {
            return Err(Error::invariant(
                "factor process must be driftless; the model drift is derived",
            ));
        }
    }
    if volatilities.is_empty() {
        return Err(Error::invariant("at least one volatility function required"));
    }
    if volatilities
        .iter()
        .any(|v| v.dimension() != levy.dimension())
    {
        return Err(Error::invariant(format!(
            "volatility dimension must match factor dimension {}",
            levy.dimension()
        )));
    }
    if !(bound_m > 0.0) {
        return Err(Error::domain(format!("volatility bound must be positive, got {bound_m}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Extend each volatility to cover `[0, T_N]`, appending a zero tail where a
/// function stops early (the usual way to encode vanishing after expiry).
fn normalize_volatilities(
    vols: &[PiecewiseVector],
    tenor: &TenorStructure,
) -> Result<Vec<PiecewiseVector>> {
    if vols.len() != tenor.rate_count() {
        return Err(Error::invariant(format!(
            "expected {} volatility functions, got {}",
            tenor.rate_count(),
            vols.len()
        )));
    }
    let horizon = tenor.horizon();
    vols.iter()
        .enumerate()
        .map(|(idx, v)| {
            if v.start().abs() > PARTITION_TOL {
                return Err(Error::invariant(format!(
                    "volatility {} must start at 0",
                    idx + 1
                )));
            }
            if v.end() > horizon + PARTITION_TOL {
                return Err(Error::invariant(format!(
                    "volatility {} extends past the horizon {horizon}",
                    idx + 1
                )));
            }
            if (v.end() - horizon).abs() <= PARTITION_TOL {
                return Ok(v.clone());
            }
            let mut breakpoints = v.breakpoints().to_vec();
            let mut values: Vec<Vec<f64>> = Vec::with_capacity(breakpoints.len());
            for i in 0..breakpoints.len() - 1 {
                values.push(v.value_at(breakpoints[i])?.to_vec());
            }
            breakpoints.push(horizon);
            values.push(vec![0.0; v.dimension()]);
            PiecewiseVector::new(breakpoints, values)
        })
        .collect()
}

/// Shared builder for the mapped driver of the two factor-driven families.
fn build_mapped_driver(
    levy: &LocalCharacteristics,
    vols: &[PiecewiseVector],
    tenor: &TenorStructure,
    drift_of: impl Fn(&MappedSegment, &[f64]) -> f64,
    map_rows: impl Fn(&[Vec<f64>]) -> Vec<Vec<f64>>,
) -> Result<LocalCharacteristics> {
    let d = vols.len();
    let mut breaks: Vec<f64> = Vec::new();
    for seg in levy.segments() {
        breaks.push(seg.t_start);
        breaks.push(seg.t_end);
    }
    for v in vols {
        breaks.extend_from_slice(v.breakpoints());
    }
    breaks.push(0.0);
    breaks.push(tenor.horizon());
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= PARTITION_TOL);

    let mut segments = Vec::with_capacity(breaks.len() - 1);
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let levy_seg = levy.segment_at(a)?;
        let raw_rows: Vec<Vec<f64>> = vols
            .iter()
            .map(|v| v.value_at(a).map(|s| s.to_vec()))
            .collect::<Result<_>>()?;
        let rows = map_rows(&raw_rows);
        let mut diffusion = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                diffusion[(i, j)] = quad_form(&levy_seg.diffusion, &rows[i], &rows[j]);
            }
        }
        let mut atoms = Vec::new();
        for atom in levy_seg.jumps.atoms() {
            let image: Vec<f64> = rows.iter().map(|r| dot(r, &atom.size)).collect();
            if image.iter().any(|v| *v != 0.0) {
                atoms.push(JumpAtom {
                    size: image,
                    intensity: atom.intensity,
                });
            }
        }
        let mapped = MappedSegment {
            diffusion: levy_seg.diffusion.clone(),
            jumps: levy_seg.jumps.clone(),
        };
        let drift: Vec<f64> = rows.iter().map(|row| drift_of(&mapped, row)).collect();
        segments.push(Segment {
            t_start: a,
            t_end: b,
            drift,
            diffusion,
            jumps: AtomicJumpMeasure::new(d, atoms)?,
        });
    }
    LocalCharacteristics::new(d, segments, Truncation::Identity)
}

struct MappedSegment {
    diffusion: DMatrix<f64>,
    jumps: AtomicJumpMeasure,
}

/// Deterministic terminal-measure drift for an exposure row `lam`:
/// `-1/2 <lam, c lam> - sum_atoms (e^{<lam, y>} - 1 - <lam, y>) intensity`.
fn deterministic_drift_core(c: &DMatrix<f64>, atoms: &[JumpAtom], lam: &[f64]) -> f64 {
    let mut b = -0.5 * quad_form(c, lam, lam);
    for atom in atoms {
        let e = dot(lam, &atom.size);
        b -= (e.exp_m1() - e) * atom.intensity;
    }
    b
}

fn logistic(coefficient: f64, x: f64) -> f64 {
    let z = coefficient * x.exp();
    if z.is_infinite() {
        1.0
    } else {
        z / (1.0 + z)
    }
}

/// State-dependent no-arbitrage drift of rate `k` under the terminal
/// measure. Every term carries the own volatility, so the drift vanishes
/// after the rate's expiry.
pub fn lmm_drift(spec: &LmmSpec, k: usize, t: f64, x: &[f64]) -> Result<f64> {
    let n = spec.rate_count();
    if k == 0 || k > n {
        return Err(Error::index(format!("tenor index k = {k} outside 1..={n}")));
    }
    if x.len() != n {
        return Err(Error::domain(format!(
            "state has dimension {}, need {n}",
            x.len()
        )));
    }
    let seg = spec.levy.segment_at(t)?;
    let lam_k = spec.volatility(k).value_at(t)?;

    let mut b = -0.5 * quad_form(&seg.diffusion, lam_k, lam_k);
    let weights: Vec<f64> = ((k + 1)..=n)
        .map(|j| logistic(spec.rate_coefficient(j), x[j - 1]))
        .collect();
    for (j, w) in ((k + 1)..=n).zip(&weights) {
        let lam_j = spec.volatility(j).value_at(t)?;
        b -= w * quad_form(&seg.diffusion, lam_k, lam_j);
    }
    for atom in seg.jumps.atoms() {
        let own = dot(lam_k, &atom.size);
        let mut tail = 1.0;
        for (j, w) in ((k + 1)..=n).zip(&weights) {
            let ej = dot(spec.volatility(j).value_at(t)?, &atom.size);
            tail *= 1.0 + w * ej.exp_m1();
        }
        b -= (own.exp_m1() * tail - own) * atom.intensity;
    }
    Ok(b)
}

/// All rate drifts at once.
pub fn lmm_drift_vector(
    spec: &LmmSpec,
    tenor: &TenorStructure,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    tenor
        .rate_indices()
        .map(|k| lmm_drift(spec, k, t, x))
        .collect()
}

/// Deterministic drift of the terminal-quoted forward-price exponent `X^k`.
pub fn fpm_drift(spec: &FpmSpec, k: usize, t: f64) -> Result<f64> {
    if k == 0 || k > spec.rate_count() + 1 {
        return Err(Error::index(format!(
            "tenor index k = {k} outside 1..={}",
            spec.rate_count() + 1
        )));
    }
    let cum = spec.cumulative_volatility(k, t)?;
    let seg = spec.levy.segment_at(t)?;
    Ok(deterministic_drift_core(
        &seg.diffusion,
        seg.jumps.atoms(),
        &cum,
    ))
}

/// Drift of the per-period forward price `b^{k} - b^{k+1}`, verified against
/// its closed form before returning.
pub fn fpm_pairwise_drift(spec: &FpmSpec, k: usize, t: f64) -> Result<f64> {
    if k == 0 || k > spec.rate_count() {
        return Err(Error::index(format!(
            "tenor index k = {k} outside 1..={}",
            spec.rate_count()
        )));
    }
    let value = fpm_drift(spec, k, t)? - fpm_drift(spec, k + 1, t)?;

    let seg = spec.levy.segment_at(t)?;
    let lam_k = spec.volatility(k).value_at(t)?.to_vec();
    let cum_next = spec.cumulative_volatility(k + 1, t)?;
    let mut closed = -0.5 * quad_form(&seg.diffusion, &lam_k, &lam_k)
        - quad_form(&seg.diffusion, &lam_k, &cum_next);
    for atom in seg.jumps.atoms() {
        let own = dot(&lam_k, &atom.size);
        let tail = dot(&cum_next, &atom.size);
        closed -= (own.exp_m1() * tail.exp() - own) * atom.intensity;
    }
    if (value - closed).abs() > 1e-12 * value.abs().max(1.0) {
        return Err(Error::contract(format!(
            "pairwise drift mismatch at k = {k}, t = {t}: telescoped {value} vs closed form {closed}"
        )));
    }
    Ok(value)
}

/// Residual of the backward drift condition for rate `k` at `(t, x)`,
/// against an explicit terminal-measure triplet. Zero means the condition
/// holds at that state.
pub fn drift_residual_backward_at(
    functionals: &[ForwardFunctional],
    point: &CharacteristicsPoint,
    k: usize,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let n = functionals.len();
    if k == 0 || k > n {
        return Err(Error::index(format!("tenor index k = {k} outside 1..={n}")));
    }
    let f_k = &functionals[k - 1];
    let grad = f_k.gradient(t, x);
    let hess = f_k.hessian(t, x);

    let mut residual = dot(&grad, &point.drift) + f_k.time_derivative(t, x);
    for i in 0..grad.len() {
        for j in 0..grad.len() {
            residual += 0.5 * hess[(i, j)] * point.diffusion[(i, j)];
        }
    }
    residual += 0.5 * quad_form(&point.diffusion, &grad, &grad);
    for f_j in &functionals[k..] {
        let grad_j = f_j.gradient(t, x);
        residual += quad_form(&point.diffusion, &grad, &grad_j);
    }
    for atom in point.jumps.atoms() {
        let own = f_k.increment(t, x, &atom.size);
        let tail: f64 = functionals[k..]
            .iter()
            .map(|f_j| f_j.increment(t, x, &atom.size))
            .sum();
        residual += (own.exp_m1() * tail.exp() - dot(&grad, &atom.size)) * atom.intensity;
    }
    Ok(residual)
}

/// Residual of the backward drift condition using the model's own driver
/// triplet and per-period functionals.
pub fn drift_residual_backward(spec: &ModelSpec, k: usize, t: f64, x: &[f64]) -> Result<f64> {
    spec.tenor().check_rate_index(k)?;
    let functionals = spec.backward_functionals()?;
    let point = spec.characteristics_at(t, x)?;
    drift_residual_backward_at(&functionals, &point, k, t, x)
}

/// Residual of the terminal drift condition for the terminal-quoted
/// functional `g^k` at `(t, x)`.
pub fn drift_residual_terminal(spec: &ModelSpec, k: usize, t: f64, x: &[f64]) -> Result<f64> {
    spec.tenor().check_rate_index(k)?;
    let functionals = spec.terminal_functionals()?;
    let point = spec.characteristics_at(t, x)?;
    Ok(local_martingale_residual(&point, &functionals[k - 1], t, x))
}

/// One validation entry: a named quantity, the bound it is held against (if
/// any) and the verdict.
#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub bound: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

/// Assumption audit report; the overall verdict is the conjunction of the
/// per-check flags.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckRecord>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sampling configuration for the statistical audits.
#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    /// Sampling box; defaults to `[-5, 5]` per coordinate, `[0, 5]` for the
    /// affine state space.
    pub box_override: Option<(f64, f64)>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            samples: 10_000,
            seed: 7,
            box_override: None,
        }
    }
}

fn sampling_box(spec: &ModelSpec, opts: &ValidationOptions) -> (f64, f64) {
    opts.box_override.unwrap_or(match spec.family() {
        ModelFamily::Affine(_) => (0.0, 5.0),
        _ => (-5.0, 5.0),
    })
}

/// Jump-moment and diffusion integrals of the integrability assumption for a
/// piecewise-constant triplet: exact segment sums of
/// `sum_atoms (|x|^2 1_{|x|<=1} + |x| e^{K |x|} 1_{|x|>1}) intensity` and of
/// the Frobenius norm of the diffusion.
pub fn assumption_integrals(chars: &LocalCharacteristics, lipschitz_sum: f64) -> (f64, f64) {
    let mut jump = 0.0;
    let mut diffusion = 0.0;
    for seg in chars.segments() {
        let len = seg.t_end - seg.t_start;
        let mut density = 0.0;
        for atom in seg.jumps.atoms() {
            let norm = crate::core::math::euclidean_norm(&atom.size);
            let integrand = if norm <= 1.0 {
                norm * norm
            } else {
                norm * (lipschitz_sum * norm).exp()
            };
            density += integrand * atom.intensity;
        }
        jump += len * density;
        diffusion += len * crate::core::math::frobenius_norm(&seg.diffusion);
    }
    (jump, diffusion)
}

/// Audit the model assumptions: integrability of the driver, statistical
/// Lipschitz and derivative checks of every functional, the volatility
/// support and bound conditions, and finiteness of the exponential moments
/// over the inflated parameter box. Failures become report entries, never
/// errors.
pub fn validate_assumptions(spec: &ModelSpec) -> Result<ValidationReport> {
    validate_assumptions_with(spec, &ValidationOptions::default())
}

pub fn validate_assumptions_with(
    spec: &ModelSpec,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let (lo, hi) = sampling_box(spec, opts);
    let horizon = spec.tenor().horizon();

    let backward = spec.backward_functionals()?;
    let lipschitz_sum: f64 = backward.iter().map(|f| f.lipschitz_bound()).sum();

    let affine_note = match spec.family() {
        ModelFamily::Affine(_) => " (driver quoted at the initial state)",
        _ => "",
    };
    let (jump_integral, diffusion_integral) = assumption_integrals(spec.driver(), lipschitz_sum);
    checks.push(CheckRecord {
        name: "int_jump_moment".into(),
        value: jump_integral,
        bound: None,
        passed: jump_integral.is_finite(),
        detail: format!("candidate C1 with K = {lipschitz_sum}{affine_note}"),
    });
    checks.push(CheckRecord {
        name: "int_diffusion".into(),
        value: diffusion_integral,
        bound: None,
        passed: diffusion_integral.is_finite(),
        detail: format!("candidate C2{affine_note}"),
    });

    match spec.family() {
        ModelFamily::Fpm(_) | ModelFamily::Affine(_) => {
            for (idx, g) in spec.functionals().iter().enumerate() {
                let marginal = marginal_characteristics(spec.driver(), idx)?;
                let (jk, dk) = assumption_integrals(&marginal, g.lipschitz_bound());
                checks.push(CheckRecord {
                    name: format!("int_jump_moment_k{}", idx + 1),
                    value: jk,
                    bound: None,
                    passed: jk.is_finite(),
                    detail: format!("candidate C1_k with K_k = {}", g.lipschitz_bound()),
                });
                checks.push(CheckRecord {
                    name: format!("int_diffusion_k{}", idx + 1),
                    value: dk,
                    bound: None,
                    passed: dk.is_finite(),
                    detail: "candidate C2_k".into(),
                });
            }
        }
        ModelFamily::Lmm(_) => {}
    }

    for (idx, f) in spec.functionals().iter().enumerate() {
        let lip = audit_lipschitz(f, horizon, lo, hi, opts.samples, opts.seed ^ (idx as u64));
        checks.push(CheckRecord {
            name: format!("lipschitz_k{}", idx + 1),
            value: lip.observed,
            bound: Some(lip.declared),
            passed: lip.passed(),
            detail: format!("{} pairs in [{lo}, {hi}]", lip.samples),
        });
        let deriv = audit_derivatives(f, horizon, lo, hi, 100, opts.seed ^ (0x100 + idx as u64));
        checks.push(CheckRecord {
            name: format!("derivatives_k{}", idx + 1),
            value: deriv.max_gradient_error.max(deriv.max_hessian_error),
            bound: Some(deriv.tolerance),
            passed: deriv.passed(),
            detail: "central differences, step 1e-5".into(),
        });
    }

    match spec.family() {
        ModelFamily::Lmm(lmm) => {
            volatility_checks(
                &mut checks,
                lmm.volatilities(),
                lmm.levy(),
                lmm.bound_m(),
                lmm.epsilon(),
                spec.tenor(),
            )?;
        }
        ModelFamily::Fpm(fpm) => {
            volatility_checks(
                &mut checks,
                fpm.volatilities(),
                fpm.levy(),
                fpm.bound_m(),
                fpm.epsilon(),
                spec.tenor(),
            )?;
        }
        ModelFamily::Affine(a) => {
            let max_psi = a.max_abs_psi();
            checks.push(CheckRecord {
                name: "riccati_finite".into(),
                value: max_psi,
                bound: None,
                passed: max_psi.is_finite(),
                detail: "all terminal parameters inside the finite-moment region".into(),
            });
        }
    }

    Ok(ValidationReport { checks })
}

/// Scalar marginal of coordinate `idx` of a driver triplet.
fn marginal_characteristics(
    chars: &LocalCharacteristics,
    idx: usize,
) -> Result<LocalCharacteristics> {
    let segments = chars
        .segments()
        .iter()
        .map(|seg| {
            let atoms: Vec<JumpAtom> = seg
                .jumps
                .atoms()
                .iter()
                .filter(|a| a.size[idx] != 0.0)
                .map(|a| JumpAtom {
                    size: vec![a.size[idx]],
                    intensity: a.intensity,
                })
                .collect();
            Ok(Segment {
                t_start: seg.t_start,
                t_end: seg.t_end,
                drift: vec![seg.drift[idx]],
                diffusion: DMatrix::from_element(1, 1, seg.diffusion[(idx, idx)]),
                jumps: AtomicJumpMeasure::new(1, atoms)?,
            })
        })
        .collect::<Result<Vec<Segment>>>()?;
    LocalCharacteristics::new(1, segments, Truncation::Identity)
}

fn volatility_checks(
    checks: &mut Vec<CheckRecord>,
    vols: &[PiecewiseVector],
    levy: &LocalCharacteristics,
    bound_m: f64,
    epsilon: f64,
    tenor: &TenorStructure,
) -> Result<()> {
    // sample at every refined breakpoint midpoint; volatilities are
    // piecewise constant so this is exhaustive
    let mut breaks: Vec<f64> = vols.iter().flat_map(|v| v.breakpoints().to_vec()).collect();
    breaks.push(0.0);
    breaks.push(tenor.horizon());
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= PARTITION_TOL);

    let mut support_violation = 0.0f64;
    let mut min_entry = f64::INFINITY;
    let mut max_coordinate_sum = 0.0f64;
    for w in breaks.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let n = levy.dimension();
        let mut sums = vec![0.0; n];
        for (idx, v) in vols.iter().enumerate() {
            let lam = v.value_at(t)?;
            for (s, l) in sums.iter_mut().zip(lam) {
                *s += l;
                min_entry = min_entry.min(*l);
            }
            if t > tenor.date(idx + 1) {
                let sup = lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                support_violation = support_violation.max(sup);
            }
        }
        max_coordinate_sum = sums
            .iter()
            .fold(max_coordinate_sum, |m, s| m.max(*s));
    }
    checks.push(CheckRecord {
        name: "vol_support".into(),
        value: support_violation,
        bound: Some(0.0),
        passed: support_violation == 0.0,
        detail: "volatility must vanish after its own expiry".into(),
    });
    checks.push(CheckRecord {
        name: "vol_nonneg".into(),
        value: min_entry,
        bound: Some(0.0),
        passed: min_entry >= 0.0,
        detail: "smallest volatility entry".into(),
    });
    checks.push(CheckRecord {
        name: "vol_bound".into(),
        value: max_coordinate_sum,
        bound: Some(bound_m),
        passed: max_coordinate_sum <= bound_m + PARTITION_TOL,
        detail: "largest coordinate sum of volatilities".into(),
    });

    // exponential moments of big jumps over the inflated box; the maximum of
    // e^{<u, y>} over the box sits at a corner, bounded by the L1 norm
    let reach = (1.0 + epsilon) * bound_m;
    let mut moment = 0.0;
    for seg in levy.segments() {
        let len = seg.t_end - seg.t_start;
        let mut density = 0.0;
        for atom in seg.jumps.atoms() {
            let norm = crate::core::math::euclidean_norm(&atom.size);
            if norm > 1.0 {
                let l1: f64 = atom.size.iter().map(|v| v.abs()).sum();
                density += (reach * l1).exp() * atom.intensity;
            }
        }
        moment += len * density;
    }
    checks.push(CheckRecord {
        name: "exponential_moment".into(),
        value: moment,
        bound: None,
        passed: moment.is_finite(),
        detail: format!("big-jump exponential moment over the (1 + {epsilon})-inflated box"),
    });
    Ok(())
}

/// Per-tenor positivity report.
#[derive(Debug, Clone)]
pub struct PositivityEntry {
    pub tenor_index: usize,
    pub min_value: f64,
    /// `(t, x, value)` of the worst violation, when negative.
    pub witness: Option<(f64, Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct PositivityReport {
    pub family: &'static str,
    /// Minimum of `f^k` (rate family) or `g^k` (terminal families).
    pub entries: Vec<PositivityEntry>,
    /// Minimum of `g^k - g^{k+1}` for terminal families.
    pub monotone: Vec<PositivityEntry>,
    pub samples: usize,
}

impl PositivityReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .chain(&self.monotone)
            .all(|e| e.min_value >= -1e-12)
    }
}

/// Sample the positivity conditions for non-negative rates: the rate family
/// needs non-negative per-period functionals, the terminal families need
/// non-negative and monotone terminal functionals.
pub fn positivity_check(spec: &ModelSpec, sample_count: usize) -> Result<PositivityReport> {
    let opts = ValidationOptions::default();
    let (lo, hi) = sampling_box(spec, &opts);
    let horizon = spec.tenor().horizon();
    let d = spec.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB055);

    let points: Vec<(f64, Vec<f64>)> = (0..sample_count)
        .map(|_| {
            let t = rng.random_range(0.0..=horizon);
            let x = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
            (t, x)
        })
        .collect();

    let minimize = |f: &dyn Fn(f64, &[f64]) -> f64, tenor_index: usize| {
        let mut min_value = f64::INFINITY;
        let mut witness = None;
        for (t, x) in &points {
            let v = f(*t, x);
            if v < min_value {
                min_value = v;
                if v < -1e-12 {
                    witness = Some((*t, x.clone(), v));
                }
            }
        }
        PositivityEntry {
            tenor_index,
            min_value,
            witness,
        }
    };

    let is_lmm = matches!(spec.family(), ModelFamily::Lmm(_));
    let mut entries = Vec::new();
    let mut monotone = Vec::new();
    if is_lmm {
        for (idx, f) in spec.functionals().iter().enumerate() {
            entries.push(minimize(&|t, x| f.value(t, x), idx + 1));
        }
    } else {
        let g = spec.functionals();
        for (idx, gk) in g.iter().enumerate() {
            entries.push(minimize(&|t, x| gk.value(t, x), idx + 1));
            let next = g.get(idx + 1);
            monotone.push(minimize(
                &|t, x| gk.value(t, x) - next.map(|gn| gn.value(t, x)).unwrap_or(0.0),
                idx + 1,
            ));
        }
    }
    Ok(PositivityReport {
        family: spec.family().name(),
        entries,
        monotone,
        samples: sample_count,
    })
}

#[derive(Debug, Clone)]
pub struct StructureEntry {
    pub tenor_index: usize,
    pub preserving: bool,
    /// Two states with different tilts, when not preserving.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct StructurePreservationReport {
    pub entries: Vec<StructureEntry>,
    pub all_affine: bool,
    pub samples: usize,
}

impl StructurePreservationReport {
    pub fn preserving(&self) -> bool {
        self.entries.iter().all(|e| e.preserving)
    }
}

/// Evaluate the measure-change tilt of every per-period functional at many
/// random states and report whether the tilts are state independent (exact
/// equality). Affine functional families must come out preserving.
pub fn structure_preservation_check(
    spec: &ModelSpec,
    state_samples: usize,
) -> Result<StructurePreservationReport> {
    let opts = ValidationOptions::default();
    let (lo, hi) = sampling_box(spec, &opts);
    let horizon = spec.tenor().horizon();
    let d = spec.dimension();
    let backward = spec.backward_functionals()?;
    let all_affine = backward.iter().all(|f| f.is_affine());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x57AB);

    let times = [0.0, horizon / 3.0, 2.0 * horizon / 3.0, 0.99 * horizon];
    let mut entries = Vec::new();
    for (idx, f) in backward.iter().enumerate() {
        let mut preserving = true;
        let mut witness = None;
        'outer: for t in times {
            let atoms = spec.driver().segment_at(t)?.jumps.clone();
            let mut reference: Option<(Vec<f64>, GirsanovTilt)> = None;
            for _ in 0..state_samples {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
                let tilt = GirsanovTilt::evaluate(f, t, &x, &atoms);
                match &reference {
                    None => reference = Some((x, tilt)),
                    Some((x0, t0)) => {
                        if *t0 != tilt {
                            preserving = false;
                            witness = Some((x0.clone(), x));
                            break 'outer;
                        }
                    }
                }
            }
        }
        if all_affine {
            debug_assert!(preserving, "affine tilts must be state independent");
        }
        entries.push(StructureEntry {
            tenor_index: idx + 1,
            preserving,
            witness,
        });
    }
    Ok(StructurePreservationReport {
        entries,
        all_affine,
        samples: state_samples,
    })
}

/// Max absolute drift-condition residual per tenor over random `(t, x)`
/// samples: the backward condition for the rate family, the terminal
/// condition otherwise.
#[derive(Debug, Clone)]
pub struct ResidualSummary {
    pub tenor_index: usize,
    pub max_abs_residual: f64,
    pub samples: usize,
    pub condition: &'static str,
}

pub fn drift_residual_sweep(
    spec: &ModelSpec,
    samples_per_tenor: usize,
    seed: u64,
) -> Result<Vec<ResidualSummary>> {
    let opts = ValidationOptions {
        seed,
        ..ValidationOptions::default()
    };
    let (lo, hi) = sampling_box(spec, &opts);
    let horizon = spec.tenor().horizon();
    let d = spec.dimension();
    let is_lmm = matches!(spec.family(), ModelFamily::Lmm(_));
    let condition = if is_lmm { "backward" } else { "terminal" };

    let backward = spec.backward_functionals()?;
    let terminal = spec.terminal_functionals()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in spec.tenor().rate_indices() {
        let mut max_abs = 0.0f64;
        for _ in 0..samples_per_tenor {
            let t = rng.random_range(0.0..=horizon);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
            let point = spec.characteristics_at(t, &x)?;
            let r = if is_lmm {
                drift_residual_backward_at(&backward, &point, k, t, &x)?
            } else {
                local_martingale_residual(&point, &terminal[k - 1], t, &x)
            };
            max_abs = max_abs.max(r.abs());
        }
        out.push(ResidualSummary {
            tenor_index: k,
            max_abs_residual: max_abs,
            samples: samples_per_tenor,
            condition,
        });
    }
    Ok(out)
}
