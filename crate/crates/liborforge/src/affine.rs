//! Affine driver on the positive half-line, its generalized Riccati system,
//! exponential-affine forward prices, and calibration of the terminal
//! parameters to an initial curve.
//!
//! The driver is one-dimensional with drift `b~ + beta x`, diffusion
//! `2 alpha x` and jump measure `F1 + x F2`, quoted under the bounded
//! truncation `min(1, x)`. Conversion to the identity truncation shifts the
//! drift by the truncated-jump gap; the conversion is applied whenever the
//! driver is exposed as ordinary characteristics.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::core::{
    AtomicJumpMeasure, CharacteristicsPoint, ForwardFunctional, InitialCurve, JumpAtom,
    LocalCharacteristics, Segment, TenorStructure, TimeFunction, Truncation,
};
use crate::{Error, Result};

/// Starting state of the affine driver; the calibration normalizes on it.
pub const INITIAL_STATE: f64 = 1.0;

/// Blow-up guard: a solution leaving this band is treated as divergent.
pub const BLOW_UP_GUARD: f64 = 1e8;

/// Default integration step as a fraction of the horizon.
pub const DEFAULT_STEP_FRACTION: f64 = 1e-3;

const EXP_OVERFLOW: f64 = 700.0;

/// Affine driver parameters. Atom sizes of both jump measures must be
/// strictly positive so jumps stay inside the state space.
#[derive(Debug, Clone)]
pub struct AffineDriverSpec {
    b_tilde: f64,
    beta: f64,
    alpha: f64,
    jumps_const: AtomicJumpMeasure,
    jumps_linear: AtomicJumpMeasure,
}

impl AffineDriverSpec {
    pub fn new(
        b_tilde: f64,
        beta: f64,
        alpha: f64,
        jumps_const: AtomicJumpMeasure,
        jumps_linear: AtomicJumpMeasure,
    ) -> Result<Self> {
        if !(b_tilde > 0.0) {
            return Err(Error::domain(format!(
                "affine drift constant must be positive, got {b_tilde}"
            )));
        }
        if !(alpha >= 0.0) {
            return Err(Error::domain(format!(
                "diffusion slope coefficient must be non-negative, got {alpha}"
            )));
        }
        if !beta.is_finite() {
            return Err(Error::domain(format!("linear drift slope must be finite, got {beta}")));
        }
        for (name, measure) in [("constant", &jumps_const), ("linear", &jumps_linear)] {
            if measure.dimension() != 1 {
                return Err(Error::invariant(format!(
                    "{name} jump measure must be one-dimensional"
                )));
            }
            if measure.atoms().iter().any(|a| a.size[0] <= 0.0) {
                return Err(Error::invariant(format!(
                    "{name} jump measure has a non-positive atom; jumps must stay in the state space"
                )));
            }
        }
        Ok(AffineDriverSpec {
            b_tilde,
            beta,
            alpha,
            jumps_const,
            jumps_linear,
        })
    }

    /// Driver without jumps (square-root diffusion).
    pub fn diffusion_only(b_tilde: f64, beta: f64, alpha: f64) -> Result<Self> {
        AffineDriverSpec::new(
            b_tilde,
            beta,
            alpha,
            AtomicJumpMeasure::empty(1),
            AtomicJumpMeasure::empty(1),
        )
    }

    pub fn b_tilde(&self) -> f64 {
        self.b_tilde
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn jumps_const(&self) -> &AtomicJumpMeasure {
        &self.jumps_const
    }

    pub fn jumps_linear(&self) -> &AtomicJumpMeasure {
        &self.jumps_linear
    }

    /// Untruncated drift constant `b = b~ - sum min(1, xi) F1-intensity`.
    pub fn drift_constant(&self) -> f64 {
        let mut b = self.b_tilde;
        for atom in self.jumps_const.atoms() {
            b -= atom.size[0].min(1.0) * atom.intensity;
        }
        b
    }

    fn rhs_f_unchecked(&self, u: f64) -> f64 {
        let mut v = self.drift_constant() * u;
        for atom in self.jumps_const.atoms() {
            v += (u * atom.size[0]).exp_m1() * atom.intensity;
        }
        v
    }

    fn rhs_r_unchecked(&self, u: f64) -> f64 {
        let mut v = self.alpha * u * u + self.beta * u;
        for atom in self.jumps_linear.atoms() {
            let xi = atom.size[0];
            v += ((u * xi).exp_m1() - u * xi.min(1.0)) * atom.intensity;
        }
        v
    }

    fn check_exponents(&self, u: f64) -> Result<()> {
        for (name, measure) in [("constant", &self.jumps_const), ("linear", &self.jumps_linear)] {
            for (i, atom) in measure.atoms().iter().enumerate() {
                if u * atom.size[0] > EXP_OVERFLOW {
                    return Err(Error::divergence(format!(
                        "exponent overflow at {name} jump atom {i} (size {}) for u = {u}",
                        atom.size[0]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Identity-truncation characteristics at state `x`: drift, diffusion and
    /// jump intensities are affine in the state.
    pub fn characteristics_at(&self, x: f64) -> Result<CharacteristicsPoint> {
        if !x.is_finite() {
            return Err(Error::domain(format!("state must be finite, got {x}")));
        }
        let xp = x.max(0.0);
        let mut drift = self.b_tilde + self.beta * x;
        let mut atoms = Vec::new();
        for atom in self.jumps_const.atoms() {
            let xi = atom.size[0];
            drift += (xi - xi.min(1.0)) * atom.intensity;
            atoms.push(JumpAtom {
                size: atom.size.clone(),
                intensity: atom.intensity,
            });
        }
        for atom in self.jumps_linear.atoms() {
            let xi = atom.size[0];
            let intensity = xp * atom.intensity;
            drift += (xi - xi.min(1.0)) * intensity;
            if intensity > 0.0 {
                atoms.push(JumpAtom {
                    size: atom.size.clone(),
                    intensity,
                });
            }
        }
        Ok(CharacteristicsPoint {
            drift: vec![drift],
            diffusion: DMatrix::from_element(1, 1, 2.0 * self.alpha * xp),
            jumps: AtomicJumpMeasure::new(1, atoms)?,
        })
    }
}

/// Right-hand sides of the generalized Riccati system:
/// `F(u) = b u + sum (e^{u xi} - 1) F1`, and
/// `R(u) = alpha u^2 + beta u + sum (e^{u xi} - 1 - u min(1, xi)) F2`.
pub fn riccati_rhs(driver: &AffineDriverSpec, u: f64) -> Result<(f64, f64)> {
    driver.check_exponents(u)?;
    Ok((driver.rhs_f_unchecked(u), driver.rhs_r_unchecked(u)))
}

/// Solution of the Riccati system on a uniform grid: `phi(t, u)` and
/// `psi(t, u)` for `t` in `[0, horizon]`, with the right-hand-side values
/// stored per node for dense interpolation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub u: f64,
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    dphi: Vec<f64>,
    dpsi: Vec<f64>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn step(&self) -> f64 {
        if self.grid.len() < 2 {
            0.0
        } else {
            self.grid[1] - self.grid[0]
        }
    }

    pub fn phi_at(&self, t: f64) -> Result<f64> {
        self.hermite(t, &self.phi, &self.dphi)
    }

    pub fn psi_at(&self, t: f64) -> Result<f64> {
        self.hermite(t, &self.psi, &self.dpsi)
    }

    pub fn terminal_phi(&self) -> f64 {
        *self.phi.last().expect("non-empty")
    }

    pub fn terminal_psi(&self) -> f64 {
        *self.psi.last().expect("non-empty")
    }

    pub fn max_abs_psi(&self) -> f64 {
        self.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Cubic Hermite interpolation; exact at the nodes and fourth-order in
    /// between, matching the integrator's accuracy.
    fn hermite(&self, t: f64, values: &[f64], derivs: &[f64]) -> Result<f64> {
        let horizon = self.horizon();
        if t < -1e-12 || t > horizon + 1e-12 {
            return Err(Error::domain(format!(
                "time {t} outside the solved range [0, {horizon}]"
            )));
        }
        if self.grid.len() == 1 {
            return Ok(values[0]);
        }
        let t = t.clamp(0.0, horizon);
        let h = self.step();
        let idx = ((t / h).floor() as usize).min(self.grid.len() - 2);
        let s = (t - self.grid[idx]) / h;
        if s == 0.0 {
            return Ok(values[idx]);
        }
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(h00 * values[idx]
            + h10 * h * derivs[idx]
            + h01 * values[idx + 1]
            + h11 * h * derivs[idx + 1])
    }

    fn node_near(&self, t: f64) -> Result<usize> {
        let h = self.step();
        if h == 0.0 {
            return Err(Error::domain("single-node grid has no interior"));
        }
        let idx = (t / h).round() as isize;
        if idx <= 0 || idx as usize >= self.grid.len() - 1 {
            return Err(Error::domain(format!(
                "time {t} does not map to an interior grid node"
            )));
        }
        Ok(idx as usize)
    }
}

/// Classical fourth-order one-step integration of the coupled system on a
/// uniform grid. The second component drives the first and never feeds back.
/// Solutions leaving the blow-up guard report the divergence time.
pub fn riccati_solve(
    driver: &AffineDriverSpec,
    u: f64,
    horizon: f64,
    step: f64,
) -> Result<RiccatiSolution> {
    if horizon < 0.0 {
        return Err(Error::domain(format!("horizon must be non-negative, got {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(RiccatiSolution {
            u,
            grid: vec![0.0],
            phi: vec![0.0],
            psi: vec![u],
            dphi: vec![driver.rhs_f_unchecked(u)],
            dpsi: vec![driver.rhs_r_unchecked(u)],
        });
    }
    if !(step > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {step}")));
    }
    driver.check_exponents(u)?;

    let steps = (horizon / step).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut grid = Vec::with_capacity(steps + 1);
    let mut phi = Vec::with_capacity(steps + 1);
    let mut psi = Vec::with_capacity(steps + 1);
    let mut dphi = Vec::with_capacity(steps + 1);
    let mut dpsi = Vec::with_capacity(steps + 1);

    let mut p = 0.0f64;
    let mut q = u;
    grid.push(0.0);
    phi.push(p);
    psi.push(q);
    dphi.push(driver.rhs_f_unchecked(q));
    dpsi.push(driver.rhs_r_unchecked(q));

    for m in 0..steps {
        let k1q = driver.rhs_r_unchecked(q);
        let k1p = driver.rhs_f_unchecked(q);
        let k2q = driver.rhs_r_unchecked(q + 0.5 * h * k1q);
        let k2p = driver.rhs_f_unchecked(q + 0.5 * h * k1q);
        let k3q = driver.rhs_r_unchecked(q + 0.5 * h * k2q);
        let k3p = driver.rhs_f_unchecked(q + 0.5 * h * k2q);
        let k4q = driver.rhs_r_unchecked(q + h * k3q);
        let k4p = driver.rhs_f_unchecked(q + h * k3q);
        q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        let t = (m + 1) as f64 * h;
        if !q.is_finite() || !p.is_finite() || q.abs() > BLOW_UP_GUARD {
            return Err(Error::divergence(format!(
                "Riccati solution for u = {u} blew up near t = {t}"
            )));
        }
        grid.push(t);
        phi.push(p);
        psi.push(q);
        dphi.push(driver.rhs_f_unchecked(q));
        dpsi.push(driver.rhs_r_unchecked(q));
    }
    Ok(RiccatiSolution {
        u,
        grid,
        phi,
        psi,
        dphi,
        dpsi,
    })
}

pub fn default_step(horizon: f64) -> f64 {
    (horizon * DEFAULT_STEP_FRACTION).max(1e-9)
}

/// Moment generating function value `E[e^{u X_t} | X_0 = x]
/// = exp(phi(t, u) + psi(t, u) x)`.
pub fn mgf(driver: &AffineDriverSpec, u: f64, t: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::domain(format!("state must be non-negative, got {x}")));
    }
    let sol = riccati_solve(driver, u, t, default_step(t))?;
    Ok((sol.terminal_phi() + sol.terminal_psi() * x).exp())
}

struct ThetaFn {
    solution: Arc<RiccatiSolution>,
    driver: AffineDriverSpec,
    horizon: f64,
}

impl std::fmt::Debug for ThetaFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ThetaFn(u = {})", self.solution.u)
    }
}

impl TimeFunction for ThetaFn {
    fn value(&self, t: f64) -> f64 {
        self.solution
            .phi_at(self.horizon - t)
            .expect("inside solved range")
    }
    // time reversal: d/dt phi(horizon - t) = -F(psi(horizon - t))
    fn derivative(&self, t: f64) -> f64 {
        let psi = self
            .solution
            .psi_at(self.horizon - t)
            .expect("inside solved range");
        -self.driver.rhs_f_unchecked(psi)
    }
}

struct VarthetaFn {
    solution: Arc<RiccatiSolution>,
    driver: AffineDriverSpec,
    horizon: f64,
}

impl std::fmt::Debug for VarthetaFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VarthetaFn(u = {})", self.solution.u)
    }
}

impl TimeFunction for VarthetaFn {
    fn value(&self, t: f64) -> f64 {
        self.solution
            .psi_at(self.horizon - t)
            .expect("inside solved range")
    }
    fn derivative(&self, t: f64) -> f64 {
        let psi = self
            .solution
            .psi_at(self.horizon - t)
            .expect("inside solved range");
        -self.driver.rhs_r_unchecked(psi)
    }
}

/// Affine model block: driver plus terminal parameters `u_k` with their
/// solved Riccati flows. The terminal-quoted functionals are
/// `g_k(t, x) = theta_k(t) + vartheta_k(t) x` with
/// `theta_k(t) = phi(horizon - t, u_k)` and
/// `vartheta_k(t) = psi(horizon - t, u_k)`.
#[derive(Debug, Clone)]
pub struct AffineModelSpec {
    driver: AffineDriverSpec,
    u: Vec<f64>,
    horizon: f64,
    step: f64,
    solutions: Vec<Arc<RiccatiSolution>>,
}

impl AffineModelSpec {
    pub fn new(driver: AffineDriverSpec, u: Vec<f64>, horizon: f64) -> Result<Self> {
        let step = default_step(horizon);
        AffineModelSpec::with_step(driver, u, horizon, step)
    }

    pub fn with_step(
        driver: AffineDriverSpec,
        u: Vec<f64>,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::invariant("affine model needs at least one terminal parameter"));
        }
        if !(horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let solutions = u
            .iter()
            .map(|uk| riccati_solve(&driver, *uk, horizon, step).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(AffineModelSpec {
            driver,
            u,
            horizon,
            step,
            solutions,
        })
    }

    pub fn driver(&self) -> &AffineDriverSpec {
        &self.driver
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.u.len()
    }

    pub fn initial_state(&self) -> f64 {
        INITIAL_STATE
    }

    /// Solved flow for tenor index `k`, 1-based.
    pub fn solution(&self, k: usize) -> Result<&Arc<RiccatiSolution>> {
        self.check_index(k)?;
        Ok(&self.solutions[k - 1])
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.u.len() {
            return Err(Error::index(format!(
                "tenor index k = {k} outside 1..={}",
                self.u.len()
            )));
        }
        Ok(())
    }

    pub fn theta(&self, k: usize, t: f64) -> Result<f64> {
        self.check_index(k)?;
        self.solutions[k - 1].phi_at(self.horizon - t)
    }

    pub fn vartheta(&self, k: usize, t: f64) -> Result<f64> {
        self.check_index(k)?;
        self.solutions[k - 1].psi_at(self.horizon - t)
    }

    pub fn max_abs_psi(&self) -> f64 {
        self.solutions
            .iter()
            .fold(0.0f64, |m, s| m.max(s.max_abs_psi()))
    }

    pub fn characteristics_at(&self, x: f64) -> Result<CharacteristicsPoint> {
        self.driver.characteristics_at(x)
    }

    /// Terminal-quoted functionals backed by the Riccati flows. The
    /// time derivatives come from the flow equations evaluated at the
    /// interpolated coefficient, not from numerical differentiation.
    pub fn functionals(&self) -> Result<Vec<ForwardFunctional>> {
        self.solutions
            .iter()
            .map(|sol| {
                let theta = ThetaFn {
                    solution: sol.clone(),
                    driver: self.driver.clone(),
                    horizon: self.horizon,
                };
                let vartheta = VarthetaFn {
                    solution: sol.clone(),
                    driver: self.driver.clone(),
                    horizon: self.horizon,
                };
                let bound = sol.max_abs_psi().max(1e-12);
                ForwardFunctional::affine(
                    Arc::new(theta),
                    vec![Arc::new(vartheta) as Arc<dyn TimeFunction>],
                    bound,
                )
            })
            .collect()
    }

    /// Deterministic reference triplet: the identity-truncation
    /// characteristics frozen at the initial state, over the whole horizon.
    pub fn reference_characteristics(&self) -> Result<LocalCharacteristics> {
        let point = self.driver.characteristics_at(INITIAL_STATE)?;
        LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: self.horizon,
                drift: point.drift,
                diffusion: point.diffusion,
                jumps: point.jumps,
            }],
            Truncation::Identity,
        )
    }
}

/// Terminal-quoted forward price `exp(theta_k(t) + vartheta_k(t) x)`.
pub fn affine_forward_price(model: &AffineModelSpec, k: usize, t: f64, x: f64) -> Result<f64> {
    if t < 0.0 || t > model.horizon() + 1e-12 {
        return Err(Error::domain(format!(
            "time {t} outside [0, {}]",
            model.horizon()
        )));
    }
    if x < 0.0 {
        return Err(Error::domain(format!("state must be non-negative, got {x}")));
    }
    Ok((model.theta(k, t)? + model.vartheta(k, t)? * x).exp())
}

/// Residuals of the coefficient flow equations at a stored grid node near
/// `t`, via centered differences:
/// `(d theta / dt + F(vartheta), d vartheta / dt + R(vartheta))`.
/// Both are small iff the flow equations hold; an independent check of the
/// solver output.
pub fn affine_ode_residual(model: &AffineModelSpec, k: usize, t: f64) -> Result<(f64, f64)> {
    let sol = model.solution(k)?.clone();
    let s = model.horizon() - t;
    let idx = sol.node_near(s)?;
    let h = sol.step();
    // d/dt theta(t) = -d/ds phi(s); centered differences on the grid
    let dtheta = -(sol.phi[idx + 1] - sol.phi[idx - 1]) / (2.0 * h);
    let dvartheta = -(sol.psi[idx + 1] - sol.psi[idx - 1]) / (2.0 * h);
    let psi = sol.psi[idx];
    Ok((
        dtheta + model.driver().rhs_f_unchecked(psi),
        dvartheta + model.driver().rhs_r_unchecked(psi),
    ))
}

/// Calibrate the terminal parameters to the initial curve: for each tenor
/// index, find `u_k` with `mgf(u_k, horizon, 1) = F(0, T_k, T_N)` by
/// bracketing and bisection on the strictly increasing log moment
/// generating function.
pub fn calibrate_u(
    driver: &AffineDriverSpec,
    curve: &InitialCurve,
    tenor: &TenorStructure,
) -> Result<Vec<f64>> {
    let horizon = tenor.horizon();
    let step = default_step(horizon);
    let log_mgf = |u: f64| -> Option<f64> {
        match riccati_solve(driver, u, horizon, step) {
            Ok(sol) => {
                let v = sol.terminal_phi() + sol.terminal_psi() * INITIAL_STATE;
                v.is_finite().then_some(v)
            }
            Err(_) => None,
        }
    };

    let mut out = Vec::with_capacity(tenor.rate_count());
    for k in tenor.rate_indices() {
        let target = curve.forward_price(k, tenor.interval_count())?;
        let log_target = target.ln();
        if log_target == 0.0 {
            out.push(0.0);
            continue;
        }

        // bracket [lo, hi] with G(lo) <= log_target <= G(hi)
        let (mut lo, mut hi);
        if log_target > 0.0 {
            lo = 0.0;
            hi = 1e-3;
            let mut best_finite = 0.0;
            loop {
                match log_mgf(hi) {
                    Some(v) if v >= log_target => break,
                    Some(_) => {
                        best_finite = hi;
                        hi *= 2.0;
                        if hi > 1e9 {
                            return Err(Error::calibration(format!(
                                "target F(0, T_{k}, T_N) = {target} not attainable; ran out of parameter range"
                            )));
                        }
                    }
                    None => {
                        // blow-up: the attainable supremum sits between
                        // best_finite and hi
                        let sup = attainable_sup(&log_mgf, best_finite, hi);
                        return Err(Error::calibration(format!(
                            "target F(0, T_{k}, T_N) = {target} outside the attainable range; supremum of the moment generating function is about {}",
                            sup.exp()
                        )));
                    }
                }
            }
        } else {
            hi = 0.0;
            lo = -1e-3;
            loop {
                match log_mgf(lo) {
                    Some(v) if v <= log_target => break,
                    Some(_) => {
                        lo *= 2.0;
                        if lo < -1e9 {
                            return Err(Error::calibration(format!(
                                "target F(0, T_{k}, T_N) = {target} below the attainable infimum"
                            )));
                        }
                    }
                    None => {
                        return Err(Error::calibration(format!(
                            "moment generating function diverged at u = {lo} while bracketing"
                        )))
                    }
                }
            }
        }

        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = log_mgf(mid).ok_or_else(|| {
                Error::calibration(format!("divergence inside the bracket at u = {mid}"))
            })?;
            if v < log_target {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= 1e-15 * hi.abs().max(lo.abs()).max(1.0) {
                break;
            }
        }
        let achieved = log_mgf(mid)
            .ok_or_else(|| Error::calibration("divergence at the calibrated parameter"))?;
        if (achieved.exp() - target).abs() > 1e-10 * target.max(1.0) {
            return Err(Error::calibration(format!(
                "calibration residual {} exceeds tolerance for tenor {k}",
                (achieved.exp() - target).abs()
            )));
        }
        out.push(mid);
    }
    Ok(out)
}

fn attainable_sup(log_mgf: &dyn Fn(f64) -> Option<f64>, mut lo: f64, mut hi: f64) -> f64 {
    let mut best = log_mgf(lo).unwrap_or(0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match log_mgf(mid) {
            Some(v) => {
                best = v;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cir_with_jumps() -> AffineDriverSpec {
        AffineDriverSpec::new(
            0.3,
            -0.6,
            0.2,
            AtomicJumpMeasure::scalar(&[(0.25, 0.5)]).unwrap(),
            AtomicJumpMeasure::scalar(&[(0.2, 0.4)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rhs_vanishes_at_zero() {
        let d = cir_with_jumps();
        let (f, r) = riccati_rhs(&d, 0.0).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rhs_linear_case_by_substitution() {
        let d = AffineDriverSpec::diffusion_only(1.0, -1.0, 0.0).unwrap();
        let (f, r) = riccati_rhs(&d, 1.0).unwrap();
        assert!((f - 1.0).abs() < 1e-15);
        assert!((r - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn rhs_quadratic_with_unit_jump() {
        let d = AffineDriverSpec::new(
            1.0,
            0.0,
            0.5,
            AtomicJumpMeasure::empty(1),
            AtomicJumpMeasure::scalar(&[(1.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let (_, r) = riccati_rhs(&d, 1.0).unwrap();
        // alpha u^2 + (e - 1 - 1) with the bounded truncation at one
        assert!((r - 1.2182818284590452).abs() < 1e-14);
    }

    #[test]
    fn rhs_overflow_names_the_atom() {
        let d = cir_with_jumps();
        let err = riccati_rhs(&d, 1e5).unwrap_err();
        assert!(err.to_string().contains("atom"));
    }

    #[test]
    fn solve_at_zero_parameter_is_identically_zero() {
        let d = cir_with_jumps();
        let sol = riccati_solve(&d, 0.0, 2.0, 1e-3).unwrap();
        assert!(sol.phi.iter().all(|v| *v == 0.0));
        assert!(sol.psi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn solve_linear_case_matches_exponential_decay() {
        let d = AffineDriverSpec::diffusion_only(1.0, -1.0, 0.0).unwrap();
        let sol = riccati_solve(&d, 1.0, 1.0, 1e-3).unwrap();
        // psi(t) = e^{-t}, phi(t) = 1 - e^{-t}
        let mut max_err = 0.0f64;
        for (t, psi) in sol.grid.iter().zip(&sol.psi) {
            max_err = max_err.max((psi - (-t).exp()).abs());
        }
        assert!(max_err < 1e-12, "psi error {max_err}");
        assert!((sol.terminal_psi() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((sol.terminal_phi() - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn solve_pure_quadratic_matches_rational_closed_form() {
        // drift constant is kept strictly positive but negligible
        let d = AffineDriverSpec::diffusion_only(1e-8, 0.0, 1.0).unwrap();
        let sol = riccati_solve(&d, -1.0, 0.5, 1e-4).unwrap();
        for (t, psi) in sol.grid.iter().zip(&sol.psi) {
            let want = -1.0 / (1.0 + t);
            assert!((psi - want).abs() < 1e-10, "t = {t}");
        }
        assert!((sol.terminal_psi() - (-2.0 / 3.0)).abs() < 1e-10);
        assert!(sol.terminal_phi().abs() < 1e-8);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        // R(u) = u^2 from x0 with u = 3 blows up at t = 1/3
        let d = AffineDriverSpec::diffusion_only(1e-8, 0.0, 1.0).unwrap();
        let err = riccati_solve(&d, 3.0, 1.0, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert!(err.to_string().contains("t ="));
    }

    #[test]
    fn fourth_order_step_halving() {
        let d = cir_with_jumps();
        let run = |h: f64| riccati_solve(&d, -0.8, 1.0, h).unwrap().terminal_psi();
        let a = run(0.1);
        let b = run(0.05);
        let c = run(0.025);
        let change1 = (a - b).abs();
        let change2 = (b - c).abs();
        assert!(change1 > 0.0 && change2 > 0.0);
        assert!(
            change2 < change1 / 15.0,
            "halving ratio {} below fourth order",
            change1 / change2
        );
    }

    #[test]
    fn mgf_boundary_cases() {
        let d = cir_with_jumps();
        assert!((mgf(&d, 0.0, 1.5, 0.7).unwrap() - 1.0).abs() < 1e-14);
        let t0 = mgf(&d, 0.4, 0.0, 1.3).unwrap();
        assert!((t0 - (0.4f64 * 1.3).exp()).abs() < 1e-14);
        assert!(mgf(&d, 0.1, 1.0, -0.5).is_err());
    }

    #[test]
    fn mgf_is_strictly_increasing_in_u() {
        let d = cir_with_jumps();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let u = -1.0 + 0.08 * i as f64;
            let v = mgf(&d, u, 1.0, INITIAL_STATE).unwrap();
            assert!(v > prev, "mgf not increasing at u = {u}");
            prev = v;
        }
        assert_eq!(mgf(&d, 0.0, 1.0, INITIAL_STATE).unwrap(), 1.0);
    }

    #[test]
    fn flow_additivity_of_the_homogeneous_driver() {
        let d = cir_with_jumps();
        let u = -0.5;
        for (s, t) in [(0.3, 0.5), (0.6, 0.9), (1.0, 0.7)] {
            let first = riccati_solve(&d, u, s, 1e-4).unwrap();
            let composed = riccati_solve(&d, first.terminal_psi(), t, 1e-4).unwrap();
            let direct = riccati_solve(&d, u, s + t, 1e-4).unwrap();
            let psi_composed = composed.terminal_psi();
            assert!((psi_composed - direct.terminal_psi()).abs() < 1e-6);
            let phi_composed = first.terminal_phi() + composed.terminal_phi();
            assert!((phi_composed - direct.terminal_phi()).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_price_terminal_cases() {
        let d = cir_with_jumps();
        let model = AffineModelSpec::new(d, vec![0.0, 0.0], 2.0).unwrap();
        for (t, x) in [(0.0, 1.0), (0.5, 0.2), (2.0, 3.0)] {
            assert!((affine_forward_price(&model, 1, t, x).unwrap() - 1.0).abs() < 1e-14);
        }
        let d2 = cir_with_jumps();
        let model2 = AffineModelSpec::new(d2, vec![0.3], 2.0).unwrap();
        // zero time-to-go: theta = 0, vartheta = u
        let v = affine_forward_price(&model2, 1, 2.0, 0.8).unwrap();
        assert!((v - (0.3f64 * 0.8).exp()).abs() < 1e-12);
    }

    #[test]
    fn forward_price_matches_linear_closed_form() {
        let d = AffineDriverSpec::diffusion_only(1.0, -1.0, 0.0).unwrap();
        let model = AffineModelSpec::new(d, vec![0.7], 1.0).unwrap();
        for (t, x) in [(0.25f64, 0.5f64), (0.6, 1.4)] {
            let s = 1.0 - t;
            let psi = 0.7 * (-s).exp();
            let phi = 0.7 * (1.0 - (-s).exp());
            let want: f64 = (phi + psi * x).exp();
            let got = affine_forward_price(&model, 1, t, x).unwrap();
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn ode_residuals_small_on_solved_model_and_large_when_corrupted() {
        let model = AffineModelSpec::new(cir_with_jumps(), vec![-0.8], 1.0).unwrap();
        // boundary times have no centered difference
        assert!(affine_ode_residual(&model, 1, 0.0).is_err());
        assert!(affine_ode_residual(&model, 1, 1.0).is_err());
        let mut worst = (0.0f64, 0.0f64);
        for i in 1..40 {
            let t = i as f64 / 40.0;
            let (a, b) = affine_ode_residual(&model, 1, t).unwrap();
            worst = (worst.0.max(a.abs()), worst.1.max(b.abs()));
        }
        assert!(worst.0 < 1e-6 && worst.1 < 1e-6, "residuals {worst:?}");

        // corrupt the slope coefficient and expect detection
        let mut corrupted = model.clone();
        let sol = Arc::make_mut(&mut corrupted.solutions[0]);
        for v in sol.psi.iter_mut() {
            *v *= 1.1;
        }
        let mut detected = false;
        for i in 1..40 {
            let t = i as f64 / 40.0;
            let (_, rb) = affine_ode_residual(&corrupted, 1, t).unwrap();
            if rb.abs() > 1e-3 {
                detected = true;
                break;
            }
        }
        assert!(detected, "corrupted coefficient not detected");
    }

    #[test]
    fn zero_parameter_ode_residual_is_zero() {
        let model = AffineModelSpec::new(cir_with_jumps(), vec![0.0], 1.0).unwrap();
        let (a, b) = affine_ode_residual(&model, 1, 0.5).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn calibration_solves_unit_and_degenerate_targets() {
        let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0]).unwrap();
        // target F(0, T_1, T_2) = 1 gives u = 0
        let flat = InitialCurve::from_prices(vec![0.97, 0.97]).unwrap();
        let u = calibrate_u(&cir_with_jumps(), &flat, &tenor).unwrap();
        assert_eq!(u[0], 0.0);

        // frozen driver: X stays at 1, so mgf(u) = e^u and u = ln target
        let d = AffineDriverSpec::diffusion_only(1e-8, 0.0, 0.0).unwrap();
        let curve = InitialCurve::from_prices(vec![1.03 * 0.96, 0.96]).unwrap();
        let u = calibrate_u(&d, &curve, &tenor).unwrap();
        assert!((u[0] - 1.03f64.ln()).abs() < 1e-6, "u = {}", u[0]);
    }

    #[test]
    fn calibration_orders_parameters_with_the_curve() {
        let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        let curve = InitialCurve::from_prices(vec![
            (-0.01f64).exp(),
            (-0.02f64).exp(),
            (-0.03f64).exp(),
            (-0.04f64).exp(),
        ])
        .unwrap();
        let d = cir_with_jumps();
        let u = calibrate_u(&d, &curve, &tenor).unwrap();
        assert_eq!(u.len(), 3);
        assert!(u[0] > u[1] && u[1] > u[2] && u[2] > 0.0, "u = {u:?}");
        // calibrated parameters reproduce the targets
        for (idx, uk) in u.iter().enumerate() {
            let target = curve.forward_price(idx + 1, 4).unwrap();
            let got = mgf(&d, *uk, 2.0, INITIAL_STATE).unwrap();
            assert!((got - target).abs() < 1e-10);
        }
    }

    #[test]
    fn calibration_reports_unattainable_targets() {
        // pure quadratic blows up for moderate positive u; huge targets are
        // out of range
        let d = AffineDriverSpec::diffusion_only(1e-6, 0.0, 1.0).unwrap();
        let tenor = TenorStructure::new(vec![0.0, 1.0, 2.0]).unwrap();
        let curve = InitialCurve::from_prices(vec![50.0, 1.0]).unwrap();
        let err = calibrate_u(&d, &curve, &tenor).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
    }
}
