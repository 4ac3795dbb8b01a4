//! Path generation under the terminal measure, Monte Carlo martingale
//! testing, pathwise positivity and telescoping scans, and caplet pricing.
//!
//! Paths are independent work units: path `i` draws from its own counter
//! stream of the seeded generator, so results are bit-identical for any
//! worker count. Statistics are accumulated with a deterministic pairwise
//! reduction over path-ordered buffers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::affine::AffineDriverSpec;
use crate::core::math::{dot, mean_and_stderr, psd_factor};
use crate::core::{
    ForwardFunctional, LocalCharacteristics, ModelFamily, ModelSpec, TenorStructure,
};
use crate::drift_engine::{FpmSpec, LmmSpec};
use crate::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Monte Carlo run configuration.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub path_count: usize,
    pub time_step: f64,
    pub master_seed: u64,
    /// Worker count hint; zero uses the global thread pool. Results never
    /// depend on it.
    pub worker_hint: usize,
    /// Sabotage switch: drop the model drift, keeping the martingale parts.
    /// Used by deliberate-bug detection runs.
    pub zero_drift: bool,
}

impl SimulationConfig {
    pub fn new(path_count: usize, time_step: f64, master_seed: u64) -> Result<Self> {
        if path_count == 0 {
            return Err(Error::domain("path count must be at least one"));
        }
        if !(time_step > 0.0) {
            return Err(Error::domain(format!(
                "time step must be positive, got {time_step}"
            )));
        }
        Ok(SimulationConfig {
            path_count,
            time_step,
            master_seed,
            worker_hint: 0,
            zero_drift: false,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.worker_hint = workers;
        self
    }

    pub fn with_zero_drift(mut self, zero_drift: bool) -> Self {
        self.zero_drift = zero_drift;
        self
    }

    /// Default step: the smallest accrual divided by 32.
    pub fn default_step(tenor: &TenorStructure) -> f64 {
        tenor
            .accruals()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            / 32.0
    }
}

/// Simulated paths on a shared time grid. States are stored per path in
/// time-major layout; jump logs record `(time, atom index)` per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub times: Vec<f64>,
    pub dimension: usize,
    pub states: Vec<Vec<f64>>,
    pub jump_log: Vec<Vec<(f64, usize)>>,
}

impl PathGrid {
    pub fn path_count(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let d = self.dimension;
        &self.states[path][time_index * d..(time_index + 1) * d]
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        grid_index(&self.times, t)
    }
}

fn grid_index(times: &[f64], t: f64) -> Result<usize> {
    let idx = times.partition_point(|v| *v < t - GRID_TOL);
    if idx < times.len() && (times[idx] - t).abs() <= GRID_TOL {
        Ok(idx)
    } else {
        Err(Error::contract(format!("time {t} is not a grid point")))
    }
}

/// Uniform grid refined so that every breakpoint (tenor dates, driver and
/// volatility segment bounds) is hit exactly.
fn build_time_grid(breakpoints: &[f64], step: f64) -> Vec<f64> {
    let mut breaks = breakpoints.to_vec();
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= GRID_TOL);
    let mut times = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a) / step - GRID_TOL).ceil().max(1.0) as usize;
        for i in 1..=n {
            times.push(a + (b - a) * i as f64 / n as f64);
        }
    }
    times
}

// ---------------------------------------------------------------------------
// stepping engine

struct LevySegmentPlan {
    t_end: f64,
    factor_chol: DMatrix<f64>,
    atom_intensities: Vec<f64>,
    /// Image of each factor atom under the exposure rows.
    mapped_atoms: Vec<Vec<f64>>,
    /// Sum of mapped atom sizes weighted by intensity (jump compensator).
    compensator: Vec<f64>,
    base_drift: Vec<f64>,
    rows: Vec<Vec<f64>>,
    // state-dependent drift tables (rate family only)
    cross: Vec<Vec<f64>>,
    atom_dot: Vec<Vec<f64>>,
    atom_expm1: Vec<Vec<f64>>,
}

enum LevyDrift {
    Deterministic,
    Rate { coefficients: Vec<f64> },
}

struct LevyPlan {
    dimension: usize,
    factors: usize,
    segments: Vec<LevySegmentPlan>,
    drift: LevyDrift,
}

struct AffinePlan {
    b_tilde: f64,
    beta: f64,
    alpha: f64,
    const_atoms: Vec<(f64, f64)>,
    linear_atoms: Vec<(f64, f64)>,
}

struct RawSegmentPlan {
    t_end: f64,
    drift: Vec<f64>,
    chol: DMatrix<f64>,
    atoms: Vec<(Vec<f64>, f64)>,
    compensator: Vec<f64>,
}

struct RawPlan {
    dimension: usize,
    segments: Vec<RawSegmentPlan>,
}

enum StepModel {
    Levy(LevyPlan),
    Affine(AffinePlan),
    Raw(RawPlan),
}

impl StepModel {
    fn dimension(&self) -> usize {
        match self {
            StepModel::Levy(p) => p.dimension,
            StepModel::Affine(_) => 1,
            StepModel::Raw(p) => p.dimension,
        }
    }
}

fn levy_plan(
    levy: &LocalCharacteristics,
    vols: &[crate::core::PiecewiseVector],
    cumulative: bool,
    tenor: &TenorStructure,
    base_drift_of: impl Fn(&[f64], &DMatrix<f64>, &[(Vec<f64>, f64)]) -> f64,
) -> Result<(Vec<LevySegmentPlan>, Vec<f64>)> {
    let d = vols.len();
    let mut breaks: Vec<f64> = Vec::new();
    for seg in levy.segments() {
        breaks.push(seg.t_start);
        breaks.push(seg.t_end);
    }
    for v in vols {
        breaks.extend_from_slice(v.breakpoints());
    }
    breaks.extend_from_slice(tenor.dates());
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= GRID_TOL);

    let mut segments = Vec::new();
    for w in breaks.windows(2) {
        let t = w[0];
        let seg = levy.segment_at(t)?;
        let plain: Vec<Vec<f64>> = vols
            .iter()
            .map(|v| v.value_at(t).map(|s| s.to_vec()))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = if cumulative {
            (0..d)
                .map(|k| {
                    let mut acc = vec![0.0; seg.diffusion.nrows()];
                    for row in plain.iter().skip(k) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc
                })
                .collect()
        } else {
            plain.clone()
        };
        let atoms: Vec<(Vec<f64>, f64)> = seg
            .jumps
            .atoms()
            .iter()
            .map(|a| (a.size.clone(), a.intensity))
            .collect();
        let mapped_atoms: Vec<Vec<f64>> = atoms
            .iter()
            .map(|(y, _)| rows.iter().map(|r| dot(r, y)).collect())
            .collect();
        let mut compensator = vec![0.0; d];
        for (mapped, (_, intensity)) in mapped_atoms.iter().zip(&atoms) {
            for (c, m) in compensator.iter_mut().zip(mapped) {
                *c += m * intensity;
            }
        }
        let base_drift: Vec<f64> = rows
            .iter()
            .map(|row| base_drift_of(row, &seg.diffusion, &atoms))
            .collect();
        let mut cross = vec![vec![0.0; d]; d];
        let mut atom_dot = vec![vec![0.0; d]; atoms.len()];
        let mut atom_expm1 = vec![vec![0.0; d]; atoms.len()];
        for k in 0..d {
            for j in 0..d {
                cross[k][j] =
                    crate::core::math::quad_form(&seg.diffusion, &plain[k], &plain[j]);
            }
        }
        for (i, (y, _)) in atoms.iter().enumerate() {
            for k in 0..d {
                atom_dot[i][k] = dot(&plain[k], y);
                atom_expm1[i][k] = atom_dot[i][k].exp_m1();
            }
        }
        segments.push(LevySegmentPlan {
            t_end: w[1],
            factor_chol: psd_factor(&seg.diffusion),
            atom_intensities: atoms.iter().map(|(_, l)| *l).collect(),
            mapped_atoms,
            compensator,
            base_drift,
            rows,
            cross,
            atom_dot,
            atom_expm1,
        });
    }
    Ok((segments, breaks))
}

fn lmm_step_model(lmm: &LmmSpec, tenor: &TenorStructure) -> Result<StepModel> {
    let (segments, _) = levy_plan(lmm.levy(), lmm.volatilities(), false, tenor, |_, _, _| 0.0)?;
    let coefficients: Vec<f64> = (1..=lmm.rate_count())
        .map(|k| lmm.accruals()[k - 1] * lmm.initial_rates()[k - 1])
        .collect();
    Ok(StepModel::Levy(LevyPlan {
        dimension: lmm.rate_count(),
        factors: lmm.levy().dimension(),
        segments,
        drift: LevyDrift::Rate { coefficients },
    }))
}

fn fpm_step_model(fpm: &FpmSpec, tenor: &TenorStructure) -> Result<StepModel> {
    let (segments, _) = levy_plan(
        fpm.levy(),
        fpm.volatilities(),
        true,
        tenor,
        |row, c, atoms| {
            let mut b = -0.5 * crate::core::math::quad_form(c, row, row);
            for (y, intensity) in atoms {
                let e = dot(row, y);
                b -= (e.exp_m1() - e) * intensity;
            }
            b
        },
    )?;
    Ok(StepModel::Levy(LevyPlan {
        dimension: fpm.rate_count(),
        factors: fpm.levy().dimension(),
        segments,
        drift: LevyDrift::Deterministic,
    }))
}

fn affine_step_model(driver: &AffineDriverSpec) -> StepModel {
    StepModel::Affine(AffinePlan {
        b_tilde: driver.b_tilde(),
        beta: driver.beta(),
        alpha: driver.alpha(),
        const_atoms: driver
            .jumps_const()
            .atoms()
            .iter()
            .map(|a| (a.size[0], a.intensity))
            .collect(),
        linear_atoms: driver
            .jumps_linear()
            .atoms()
            .iter()
            .map(|a| (a.size[0], a.intensity))
            .collect(),
    })
}

fn raw_step_model(chars: &LocalCharacteristics) -> StepModel {
    let segments = chars
        .segments()
        .iter()
        .map(|seg| {
            let atoms: Vec<(Vec<f64>, f64)> = seg
                .jumps
                .atoms()
                .iter()
                .map(|a| (a.size.clone(), a.intensity))
                .collect();
            let mut compensator = vec![0.0; chars.dimension()];
            for (y, intensity) in &atoms {
                for (c, v) in compensator.iter_mut().zip(y) {
                    *c += v * intensity;
                }
            }
            RawSegmentPlan {
                t_end: seg.t_end,
                drift: seg.drift.clone(),
                chol: psd_factor(&seg.diffusion),
                atoms,
                compensator,
            }
        })
        .collect();
    StepModel::Raw(RawPlan {
        dimension: chars.dimension(),
        segments,
    })
}

fn step_model_for(spec: &ModelSpec) -> Result<StepModel> {
    match spec.family() {
        ModelFamily::Lmm(lmm) => lmm_step_model(lmm, spec.tenor()),
        ModelFamily::Fpm(fpm) => fpm_step_model(fpm, spec.tenor()),
        ModelFamily::Affine(a) => Ok(affine_step_model(a.driver())),
    }
}

fn path_rng(master_seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path as u64);
    rng
}

fn exp_waiting_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// One path on the supplied grid. Drift is frozen at the left grid point;
/// diffusion uses Gaussian increments with the segment covariance; jumps use
/// exponential clocks per atom with the exact arrival times logged.
fn simulate_path(
    model: &StepModel,
    times: &[f64],
    x0: &[f64],
    zero_drift: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<(f64, usize)>)> {
    let d = model.dimension();
    let mut states = Vec::with_capacity(times.len() * d);
    let mut jumps: Vec<(f64, usize)> = Vec::new();
    let mut x = x0.to_vec();
    states.extend_from_slice(&x);

    match model {
        StepModel::Levy(plan) => {
            let mut seg_idx = 0usize;
            let mut z = vec![0.0; plan.factors];
            let mut dl = vec![0.0; plan.factors];
            let mut weights = vec![0.0; plan.dimension];
            for w in times.windows(2) {
                let (t, t_next) = (w[0], w[1]);
                let h = t_next - t;
                while plan.segments[seg_idx].t_end <= t + GRID_TOL
                    && seg_idx + 1 < plan.segments.len()
                {
                    seg_idx += 1;
                }
                let seg = &plan.segments[seg_idx];

                // drift at the left point
                if !zero_drift {
                    match &plan.drift {
                        LevyDrift::Deterministic => {
                            for (xi, b) in x.iter_mut().zip(&seg.base_drift) {
                                *xi += b * h;
                            }
                        }
                        LevyDrift::Rate { coefficients } => {
                            let n = plan.dimension;
                            for j in 0..n {
                                let zc = coefficients[j] * x[j].exp();
                                weights[j] = if zc.is_infinite() { 1.0 } else { zc / (1.0 + zc) };
                            }
                            for k in 0..n {
                                let mut b = -0.5 * seg.cross[k][k];
                                for j in (k + 1)..n {
                                    b -= weights[j] * seg.cross[k][j];
                                }
                                for (i, intensity) in seg.atom_intensities.iter().enumerate() {
                                    let mut tail = 1.0;
                                    for j in (k + 1)..n {
                                        tail *= 1.0 + weights[j] * seg.atom_expm1[i][j];
                                    }
                                    b -= (seg.atom_expm1[i][k] * tail - seg.atom_dot[i][k])
                                        * intensity;
                                }
                                x[k] += b * h;
                            }
                        }
                    }
                }

                // jump compensator of the identity truncation
                for (xi, c) in x.iter_mut().zip(&seg.compensator) {
                    *xi -= c * h;
                }

                // diffusion increment mapped through the exposure rows
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let sqrt_h = h.sqrt();
                for (i, dli) in dl.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..plan.factors {
                        acc += seg.factor_chol[(i, j)] * z[j];
                    }
                    *dli = acc * sqrt_h;
                }
                for (k, xi) in x.iter_mut().enumerate() {
                    *xi += dot(&seg.rows[k], &dl);
                }

                // exact compound-Poisson jumps within the step
                for (i, intensity) in seg.atom_intensities.iter().enumerate() {
                    if *intensity <= 0.0 {
                        continue;
                    }
                    let mut tau = exp_waiting_time(rng, *intensity);
                    while tau < h {
                        for (xi, m) in x.iter_mut().zip(&seg.mapped_atoms[i]) {
                            *xi += m;
                        }
                        jumps.push((t + tau, i));
                        tau += exp_waiting_time(rng, *intensity);
                    }
                }

                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::simulation(format!(
                        "non-finite state at t = {t_next}"
                    )));
                }
                states.extend_from_slice(&x);
            }
        }
        StepModel::Affine(plan) => {
            let n_const = plan.const_atoms.len();
            for w in times.windows(2) {
                let (t, t_next) = (w[0], w[1]);
                let h = t_next - t;
                let xp = x[0].max(0.0);
                let mut next = x[0];

                if !zero_drift {
                    let mut drift = plan.b_tilde + plan.beta * x[0];
                    for (xi, intensity) in &plan.const_atoms {
                        drift += (xi - xi.min(1.0)) * intensity;
                    }
                    for (xi, intensity) in &plan.linear_atoms {
                        drift += (xi - xi.min(1.0)) * intensity * xp;
                    }
                    next += drift * h;
                }
                // full jump compensator under the identity truncation
                let mut comp = 0.0;
                for (xi, intensity) in &plan.const_atoms {
                    comp += xi * intensity;
                }
                for (xi, intensity) in &plan.linear_atoms {
                    comp += xi * intensity * xp;
                }
                next -= comp * h;

                let z: f64 = rng.sample(StandardNormal);
                next += (2.0 * plan.alpha * xp).sqrt() * h.sqrt() * z;

                for (i, (size, intensity)) in plan.const_atoms.iter().enumerate() {
                    if *intensity <= 0.0 {
                        continue;
                    }
                    let mut tau = exp_waiting_time(rng, *intensity);
                    while tau < h {
                        next += size;
                        jumps.push((t + tau, i));
                        tau += exp_waiting_time(rng, *intensity);
                    }
                }
                for (i, (size, intensity)) in plan.linear_atoms.iter().enumerate() {
                    let rate = intensity * xp;
                    if rate <= 0.0 {
                        continue;
                    }
                    let mut tau = exp_waiting_time(rng, rate);
                    while tau < h {
                        next += size;
                        jumps.push((t + tau, n_const + i));
                        tau += exp_waiting_time(rng, rate);
                    }
                }

                // reflection guard keeps the path in the state space
                x[0] = next.max(0.0);
                if !x[0].is_finite() {
                    return Err(Error::simulation(format!(
                        "non-finite state at t = {t_next}"
                    )));
                }
                states.extend_from_slice(&x);
            }
        }
        StepModel::Raw(plan) => {
            let mut seg_idx = 0usize;
            let d = plan.dimension;
            let mut z = vec![0.0; d];
            for w in times.windows(2) {
                let (t, t_next) = (w[0], w[1]);
                let h = t_next - t;
                while plan.segments[seg_idx].t_end <= t + GRID_TOL
                    && seg_idx + 1 < plan.segments.len()
                {
                    seg_idx += 1;
                }
                let seg = &plan.segments[seg_idx];
                if !zero_drift {
                    for (xi, b) in x.iter_mut().zip(&seg.drift) {
                        *xi += b * h;
                    }
                }
                for (xi, c) in x.iter_mut().zip(&seg.compensator) {
                    *xi -= c * h;
                }
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let sqrt_h = h.sqrt();
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += seg.chol[(i, j)] * z[j];
                    }
                    x[i] += acc * sqrt_h;
                }
                for (i, (size, intensity)) in seg.atoms.iter().enumerate() {
                    if *intensity <= 0.0 {
                        continue;
                    }
                    let mut tau = exp_waiting_time(rng, *intensity);
                    while tau < h {
                        for (xi, s) in x.iter_mut().zip(size) {
                            *xi += s;
                        }
                        jumps.push((t + tau, i));
                        tau += exp_waiting_time(rng, *intensity);
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::simulation(format!(
                        "non-finite state at t = {t_next}"
                    )));
                }
                states.extend_from_slice(&x);
            }
        }
    }
    Ok((states, jumps))
}

/// Per-path view handed to fold observers.
pub struct PathRecord<'a> {
    pub path_index: usize,
    pub times: &'a [f64],
    pub dimension: usize,
    pub states: Vec<f64>,
    pub jumps: Vec<(f64, usize)>,
}

impl PathRecord<'_> {
    pub fn state(&self, time_index: usize) -> &[f64] {
        &self.states[time_index * self.dimension..(time_index + 1) * self.dimension]
    }
}

fn run_parallel<R, F>(paths: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let body = || (0..paths).into_par_iter().map(&f).collect::<Result<Vec<R>>>();
    if workers == 0 {
        body()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::simulation(format!("thread pool: {e}")))?;
        pool.install(body)
    }
}

fn simulate_fold<R, F>(
    model: &StepModel,
    times: &[f64],
    x0: &[f64],
    config: &SimulationConfig,
    observe: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&PathRecord) -> R + Sync,
{
    run_parallel(config.path_count, config.worker_hint, |path| {
        let mut rng = path_rng(config.master_seed, path);
        let (states, jumps) = simulate_path(model, times, x0, config.zero_drift, &mut rng)
            .map_err(|e| Error::simulation(format!("path {path}: {e}")))?;
        Ok(observe(&PathRecord {
            path_index: path,
            times,
            dimension: x0.len(),
            states,
            jumps,
        }))
    })
}

fn model_grid(spec: &ModelSpec, config: &SimulationConfig) -> Vec<f64> {
    let mut breaks: Vec<f64> = spec.tenor().dates().to_vec();
    for seg in spec.driver().segments() {
        breaks.push(seg.t_start);
        breaks.push(seg.t_end);
    }
    build_time_grid(&breaks, config.time_step)
}

/// Simulate the driver under the terminal measure and materialize all paths.
pub fn simulate_driver(spec: &ModelSpec, config: &SimulationConfig) -> Result<PathGrid> {
    let model = step_model_for(spec)?;
    let times = model_grid(spec, config);
    let x0 = spec.initial_state();
    let records = simulate_fold(&model, &times, &x0, config, |rec| {
        (rec.states.clone(), rec.jumps.clone())
    })?;
    let (states, jump_log) = records.into_iter().unzip();
    Ok(PathGrid {
        times,
        dimension: x0.len(),
        states,
        jump_log,
    })
}

/// Simulate explicit piecewise-constant characteristics from a given state
/// (identity truncation; jumps are compensated into the drift).
pub fn simulate_characteristics(
    chars: &LocalCharacteristics,
    x0: &[f64],
    config: &SimulationConfig,
) -> Result<PathGrid> {
    if x0.len() != chars.dimension() {
        return Err(Error::domain(format!(
            "initial state has dimension {}, characteristics need {}",
            x0.len(),
            chars.dimension()
        )));
    }
    let model = raw_step_model(chars);
    let mut breaks: Vec<f64> = vec![0.0, chars.horizon()];
    for seg in chars.segments() {
        breaks.push(seg.t_start);
        breaks.push(seg.t_end);
    }
    let times = build_time_grid(&breaks, config.time_step);
    let records = simulate_fold(&model, &times, x0, config, |rec| {
        (rec.states.clone(), rec.jumps.clone())
    })?;
    let (states, jump_log) = records.into_iter().unzip();
    Ok(PathGrid {
        times,
        dimension: x0.len(),
        states,
        jump_log,
    })
}

// ---------------------------------------------------------------------------
// price observables

/// Price basis: evaluates per-period and terminal-quoted forward prices from
/// the family's native functionals.
struct PriceBasis {
    backward: bool,
    functionals: Vec<ForwardFunctional>,
}

impl PriceBasis {
    fn for_model(spec: &ModelSpec) -> PriceBasis {
        PriceBasis {
            backward: matches!(spec.family(), ModelFamily::Lmm(_)),
            functionals: spec.functionals().to_vec(),
        }
    }

    /// `log F(t, T_k, T_N)`; tenor index 1-based, `k = N` gives zero.
    fn log_terminal(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        if k > self.functionals.len() {
            return 0.0;
        }
        if self.backward {
            self.functionals[k - 1..]
                .iter()
                .map(|f| f.value(t, x))
                .sum()
        } else {
            self.functionals[k - 1].value(t, x)
        }
    }

    /// `log F(t, T_k, T_{k+1})`.
    fn log_pair(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        if self.backward {
            self.functionals[k - 1].value(t, x)
        } else {
            let own = self.functionals[k - 1].value(t, x);
            let next = if k < self.functionals.len() {
                self.functionals[k].value(t, x)
            } else {
                0.0
            };
            own - next
        }
    }
}

/// Per-period or terminal-quoted forward price series for one tenor index:
/// the rate family yields `F(t, T_k, T_{k+1})`, the terminal families
/// `F(t, T_k, T_N)`. Strictly positive by construction.
pub fn forward_price_paths(spec: &ModelSpec, grid: &PathGrid, k: usize) -> Result<Vec<Vec<f64>>> {
    spec.tenor().check_rate_index(k)?;
    if grid.dimension != spec.dimension() {
        return Err(Error::contract(
            "path grid dimension does not match the model driver",
        ));
    }
    let basis = PriceBasis::for_model(spec);
    let is_lmm = basis.backward;
    Ok((0..grid.path_count())
        .map(|p| {
            grid.times
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let x = grid.state(p, i);
                    if is_lmm {
                        basis.log_pair(k, *t, x).exp()
                    } else {
                        basis.log_terminal(k, *t, x).exp()
                    }
                })
                .collect()
        })
        .collect())
}

/// Density series `e^{f^k(t, X_t)} / e^{f^k(0, x_0)}` per path: the
/// Radon-Nikodym process relating consecutive forward measures.
pub fn density_process(spec: &ModelSpec, grid: &PathGrid, k: usize) -> Result<Vec<Vec<f64>>> {
    spec.tenor().check_rate_index(k)?;
    let basis = PriceBasis::for_model(spec);
    let x0 = spec.initial_state();
    let log_f0 = basis.log_pair(k, 0.0, &x0);
    Ok((0..grid.path_count())
        .map(|p| {
            grid.times
                .iter()
                .enumerate()
                .map(|(i, t)| (basis.log_pair(k, *t, grid.state(p, i)) - log_f0).exp())
                .collect()
        })
        .collect())
}

/// One martingale test row: terminal-quoted price at a checkpoint against
/// its initial value.
#[derive(Debug, Clone)]
pub struct MartingaleRow {
    pub tenor_index: usize,
    pub time: f64,
    pub sample_mean: f64,
    pub target: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub paths: usize,
}

impl MartingaleReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().fold(0.0f64, |m, r| m.max(r.z_score.abs()))
    }
}

/// Monte Carlo martingale test of the terminal-quoted forward prices: for
/// every tenor index and checkpoint not past the rate's expiry, compare the
/// sample mean of `F(t, T_k, T_N)` with `F(0, T_k, T_N)`; pass iff the
/// z-score stays within three standard errors.
pub fn martingale_test(
    spec: &ModelSpec,
    config: &SimulationConfig,
    checkpoints: &[f64],
) -> Result<MartingaleReport> {
    let model = step_model_for(spec)?;
    let times = model_grid(spec, config);
    let x0 = spec.initial_state();
    let basis = PriceBasis::for_model(spec);

    let mut cells: Vec<(usize, usize, f64)> = Vec::new(); // (k, grid index, time)
    for k in spec.tenor().rate_indices() {
        for cp in checkpoints {
            if *cp <= spec.tenor().date(k) + GRID_TOL {
                cells.push((k, grid_index(&times, *cp)?, *cp));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::contract("no valid (tenor, checkpoint) pairs"));
    }

    let per_path = simulate_fold(&model, &times, &x0, config, |rec| {
        cells
            .iter()
            .map(|(k, idx, t)| basis.log_terminal(*k, *t, rec.state(*idx)).exp())
            .collect::<Vec<f64>>()
    })?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut column = vec![0.0; per_path.len()];
    for (c, (k, _, t)) in cells.iter().enumerate() {
        for (p, values) in per_path.iter().enumerate() {
            column[p] = values[c];
        }
        let (mean, se) = mean_and_stderr(&column);
        let target = basis.log_terminal(*k, 0.0, &x0).exp();
        let (z, pass) = if se == 0.0 {
            let exact = (mean - target).abs() <= 1e-12 * target.abs().max(1.0);
            (if exact { 0.0 } else { f64::INFINITY }, exact)
        } else {
            let z = (mean - target) / se;
            (z, z.abs() <= 3.0)
        };
        rows.push(MartingaleRow {
            tenor_index: *k,
            time: *t,
            sample_mean: mean,
            target,
            std_error: se,
            z_score: z,
            pass,
        });
    }
    Ok(MartingaleReport {
        rows,
        paths: config.path_count,
    })
}

/// Caplet quote produced by the Monte Carlo pricer.
#[derive(Debug, Clone)]
pub struct CapletQuote {
    pub tenor_index: usize,
    pub strike: f64,
    pub price: f64,
    pub std_error: f64,
}

/// Price caplets for every tenor index and strike in one pass: the payoff
/// `delta_k (L(T_k, T_k) - strike)^+` paid at `T_{k+1}` is converted to the
/// terminal numeraire pathwise and discounted with the initial terminal
/// bond.
pub fn caplet_table(
    spec: &ModelSpec,
    config: &SimulationConfig,
    strikes: &[f64],
) -> Result<Vec<CapletQuote>> {
    if strikes.is_empty() {
        return Err(Error::domain("at least one strike required"));
    }
    let model = step_model_for(spec)?;
    let times = model_grid(spec, config);
    let x0 = spec.initial_state();
    let basis = PriceBasis::for_model(spec);
    let tenor = spec.tenor();

    let fixings: Vec<(usize, usize, usize, f64)> = tenor
        .rate_indices()
        .map(|k| {
            Ok((
                k,
                grid_index(&times, tenor.date(k))?,
                grid_index(&times, tenor.date(k + 1))?,
                tenor.accrual(k + 1),
            ))
        })
        .collect::<Result<_>>()?;

    let per_path = simulate_fold(&model, &times, &x0, config, |rec| {
        let mut payoffs = Vec::with_capacity(fixings.len() * strikes.len());
        for (k, fix_idx, pay_idx, accrual) in &fixings {
            let fixing_state = rec.state(*fix_idx);
            let rate =
                (basis.log_pair(*k, rec.times[*fix_idx], fixing_state).exp() - 1.0) / accrual;
            let numeraire_ratio = basis
                .log_terminal(*k + 1, rec.times[*pay_idx], rec.state(*pay_idx))
                .exp();
            for strike in strikes {
                payoffs.push(accrual * (rate - strike).max(0.0) * numeraire_ratio);
            }
        }
        payoffs
    })?;

    let discount = spec.initial_curve().bond_price(tenor.interval_count())?;
    let mut quotes = Vec::new();
    let mut column = vec![0.0; per_path.len()];
    for (row, (k, _, _, _)) in fixings.iter().enumerate() {
        for (s, strike) in strikes.iter().enumerate() {
            let c = row * strikes.len() + s;
            for (p, values) in per_path.iter().enumerate() {
                column[p] = values[c];
            }
            let (mean, se) = mean_and_stderr(&column);
            quotes.push(CapletQuote {
                tenor_index: *k,
                strike: *strike,
                price: discount * mean,
                std_error: discount * se,
            });
        }
    }
    Ok(quotes)
}

/// Single caplet price and standard error. Negative strikes are accepted
/// only for families that allow negative rates.
pub fn caplet_price(
    spec: &ModelSpec,
    config: &SimulationConfig,
    k: usize,
    strike: f64,
) -> Result<(f64, f64)> {
    spec.tenor().check_rate_index(k)?;
    if strike < 0.0 && matches!(spec.family(), ModelFamily::Lmm(_)) {
        return Err(Error::domain(
            "negative strike is vacuous: the rate family keeps rates non-negative",
        ));
    }
    let quotes = caplet_table(spec, config, &[strike])?;
    let q = quotes
        .into_iter()
        .find(|q| q.tenor_index == k)
        .expect("tenor present");
    Ok((q.price, q.std_error))
}

/// Pathwise scan results: positivity of rates and states, telescoping error
/// of per-period against terminal-quoted prices, and jump-count statistics.
#[derive(Debug, Clone)]
pub struct PathwiseScan {
    pub paths: usize,
    /// Minimum simulated rate per tenor index.
    pub min_rate: Vec<f64>,
    /// `(path, tenor index, time, rate)` of the first negative rate seen.
    pub negative_rate_witness: Option<(usize, usize, f64, f64)>,
    /// Minimum driver state (meaningful for the affine family).
    pub min_state: f64,
    /// Max relative gap between the per-period price product and the
    /// terminal-quoted price, over all paths and times.
    pub max_telescoping_error: f64,
    /// Mean jump count per atom with standard error and, where the
    /// intensity is deterministic, the expected count.
    pub jump_counts: Vec<(usize, f64, f64, Option<f64>)>,
}

/// Stream all paths once, collecting positivity, telescoping and jump-count
/// statistics without materializing the grid.
pub fn pathwise_scan(spec: &ModelSpec, config: &SimulationConfig) -> Result<PathwiseScan> {
    let model = step_model_for(spec)?;
    let times = model_grid(spec, config);
    let x0 = spec.initial_state();
    let basis = PriceBasis::for_model(spec);
    let tenor = spec.tenor();
    let n_rates = tenor.rate_count();
    let accruals: Vec<f64> = tenor.rate_indices().map(|k| tenor.accrual(k + 1)).collect();
    let atom_count = expected_atom_count(spec);

    struct Partial {
        min_rate: Vec<f64>,
        witness: Option<(usize, usize, f64, f64)>,
        min_state: f64,
        max_tel: f64,
        counts: Vec<f64>,
    }

    let partials = simulate_fold(&model, &times, &x0, config, |rec| {
        let mut p = Partial {
            min_rate: vec![f64::INFINITY; n_rates],
            witness: None,
            min_state: f64::INFINITY,
            max_tel: 0.0,
            counts: vec![0.0; atom_count],
        };
        for (i, t) in rec.times.iter().enumerate() {
            let x = rec.state(i);
            for v in x {
                p.min_state = p.min_state.min(*v);
            }
            // suffix products of per-period prices against terminal quotes
            let mut suffix = 1.0;
            for k in (1..=n_rates).rev() {
                if *t > tenor.date(k) + GRID_TOL {
                    continue;
                }
                let pair = basis.log_pair(k, *t, x).exp();
                suffix *= pair;
                let term = basis.log_terminal(k, *t, x).exp();
                let rel = (suffix - term).abs() / term;
                p.max_tel = p.max_tel.max(rel);
                let rate = (pair - 1.0) / accruals[k - 1];
                if rate < p.min_rate[k - 1] {
                    p.min_rate[k - 1] = rate;
                    if rate < 0.0 && p.witness.is_none() {
                        p.witness = Some((rec.path_index, k, *t, rate));
                    }
                }
            }
        }
        for (_, atom) in &rec.jumps {
            if *atom < atom_count {
                p.counts[*atom] += 1.0;
            }
        }
        p
    })?;

    let mut min_rate = vec![f64::INFINITY; n_rates];
    let mut witness = None;
    let mut min_state = f64::INFINITY;
    let mut max_tel = 0.0f64;
    for p in &partials {
        for (m, v) in min_rate.iter_mut().zip(&p.min_rate) {
            *m = m.min(*v);
        }
        if witness.is_none() {
            witness = p.witness;
        }
        min_state = min_state.min(p.min_state);
        max_tel = max_tel.max(p.max_tel);
    }
    let expected = expected_jump_counts(spec);
    let mut jump_counts = Vec::new();
    for atom in 0..atom_count {
        let column: Vec<f64> = partials.iter().map(|p| p.counts[atom]).collect();
        let (mean, se) = mean_and_stderr(&column);
        jump_counts.push((atom, mean, se, expected.get(atom).cloned().flatten()));
    }
    Ok(PathwiseScan {
        paths: config.path_count,
        min_rate,
        negative_rate_witness: witness,
        min_state,
        max_telescoping_error: max_tel,
        jump_counts,
    })
}

fn expected_atom_count(spec: &ModelSpec) -> usize {
    match spec.family() {
        ModelFamily::Lmm(lmm) => lmm
            .levy()
            .segments()
            .iter()
            .map(|s| s.jumps.atoms().len())
            .max()
            .unwrap_or(0),
        ModelFamily::Fpm(fpm) => fpm
            .levy()
            .segments()
            .iter()
            .map(|s| s.jumps.atoms().len())
            .max()
            .unwrap_or(0),
        ModelFamily::Affine(a) => {
            a.driver().jumps_const().atoms().len() + a.driver().jumps_linear().atoms().len()
        }
    }
}

fn expected_jump_counts(spec: &ModelSpec) -> Vec<Option<f64>> {
    let levy = match spec.family() {
        ModelFamily::Lmm(lmm) => Some(lmm.levy()),
        ModelFamily::Fpm(fpm) => Some(fpm.levy()),
        ModelFamily::Affine(_) => None,
    };
    match levy {
        Some(levy) => {
            let count = levy
                .segments()
                .iter()
                .map(|s| s.jumps.atoms().len())
                .max()
                .unwrap_or(0);
            (0..count)
                .map(|i| {
                    let mut total = 0.0;
                    for seg in levy.segments() {
                        if let Some(atom) = seg.jumps.atoms().get(i) {
                            total += (seg.t_end - seg.t_start) * atom.intensity;
                        }
                    }
                    Some(total)
                })
                .collect()
        }
        None => {
            if let ModelFamily::Affine(a) = spec.family() {
                let horizon = spec.tenor().horizon();
                let mut out: Vec<Option<f64>> = a
                    .driver()
                    .jumps_const()
                    .atoms()
                    .iter()
                    .map(|atom| Some(horizon * atom.intensity))
                    .collect();
                // linear-intensity atoms depend on the path; no closed form here
                out.extend(a.driver().jumps_linear().atoms().iter().map(|_| None));
                out
            } else {
                Vec::new()
            }
        }
    }
}

/// Monte Carlo estimate of `E[e^{u X_t}]` for a bare affine driver started
/// at the unit state. Returns the sample mean and standard error.
pub fn affine_mgf_mc(
    driver: &AffineDriverSpec,
    u: f64,
    t: f64,
    config: &SimulationConfig,
) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    let model = affine_step_model(driver);
    let times = build_time_grid(&[0.0, t], config.time_step);
    let x0 = [crate::affine::INITIAL_STATE];
    let last = times.len() - 1;
    let values = simulate_fold(&model, &times, &x0, config, |rec| {
        (u * rec.state(last)[0]).exp()
    })?;
    Ok(mean_and_stderr(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{AtomicJumpMeasure, InitialCurve, PiecewiseVector, Segment, Truncation};

    fn tenor() -> TenorStructure {
        TenorStructure::new(vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap()
    }

    fn curve() -> InitialCurve {
        InitialCurve::from_prices(vec![
            (-0.01f64).exp(),
            (-0.02f64).exp(),
            (-0.03f64).exp(),
            (-0.04f64).exp(),
        ])
        .unwrap()
    }

    fn levy_driver(atoms: &[(f64, f64)]) -> LocalCharacteristics {
        LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: 2.0,
                drift: vec![0.0],
                diffusion: DMatrix::from_element(1, 1, 1.0),
                jumps: AtomicJumpMeasure::new(
                    1,
                    atoms
                        .iter()
                        .map(|(s, i)| crate::core::JumpAtom {
                            size: vec![*s],
                            intensity: *i,
                        })
                        .collect(),
                )
                .unwrap(),
            }],
            Truncation::Identity,
        )
        .unwrap()
    }

    fn fpm_model(vol: f64, atoms: &[(f64, f64)]) -> ModelSpec {
        let vols: Vec<PiecewiseVector> = (1..=3)
            .map(|k| PiecewiseVector::constant(vec![vol], 0.5 * k as f64).unwrap())
            .collect();
        let fpm = FpmSpec::new(levy_driver(atoms), vols, 1.0, 0.5).unwrap();
        ModelSpec::fpm(tenor(), curve(), fpm).unwrap()
    }

    fn lmm_model(vols: &[f64], atoms: &[(f64, f64)]) -> ModelSpec {
        let vols: Vec<PiecewiseVector> = vols
            .iter()
            .enumerate()
            .map(|(i, v)| PiecewiseVector::constant(vec![*v], 0.5 * (i as f64 + 1.0)).unwrap())
            .collect();
        let lmm = LmmSpec::new(levy_driver(atoms), vols, 1.0, 0.5).unwrap();
        ModelSpec::lmm(tenor(), curve(), lmm).unwrap()
    }

    #[test]
    fn zero_characteristics_paths_are_constant() {
        let chars = LocalCharacteristics::zero(2, 1.0).unwrap();
        let config = SimulationConfig::new(16, 0.125, 9).unwrap();
        let grid = simulate_characteristics(&chars, &[0.3, -0.7], &config).unwrap();
        for p in 0..grid.path_count() {
            for i in 0..grid.times.len() {
                assert_eq!(grid.state(p, i), &[0.3, -0.7]);
            }
        }
    }

    #[test]
    fn constant_drift_integrates_exactly() {
        let chars = LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: 1.0,
                drift: vec![0.1],
                diffusion: DMatrix::zeros(1, 1),
                jumps: AtomicJumpMeasure::empty(1),
            }],
            Truncation::Identity,
        )
        .unwrap();
        let config = SimulationConfig::new(8, 1.0 / 32.0, 1).unwrap();
        let grid = simulate_characteristics(&chars, &[0.0], &config).unwrap();
        let last = grid.times.len() - 1;
        for p in 0..grid.path_count() {
            assert!((grid.state(p, last)[0] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn jump_counts_match_the_intensity() {
        let chars = LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: 1.0,
                drift: vec![0.0],
                diffusion: DMatrix::zeros(1, 1),
                jumps: AtomicJumpMeasure::scalar(&[(1.0, 2.0)]).unwrap(),
            }],
            Truncation::Identity,
        )
        .unwrap();
        let config = SimulationConfig::new(30_000, 0.05, 3).unwrap();
        let grid = simulate_characteristics(&chars, &[0.0], &config).unwrap();
        let counts: Vec<f64> = grid.jump_log.iter().map(|j| j.len() as f64).collect();
        let (mean, se) = mean_and_stderr(&counts);
        assert!(
            (mean - 2.0).abs() <= 3.0 * se,
            "mean count {mean}, se {se}"
        );
        // each jump adds one unit; exact jump insertion means the terminal
        // state equals count - compensator drift
        let last = grid.times.len() - 1;
        for p in 0..50 {
            let want = grid.jump_log[p].len() as f64 - 2.0;
            assert!((grid.state(p, last)[0] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn reproducible_across_worker_hints() {
        let spec = fpm_model(0.2, &[(0.1, 0.5)]);
        let base = SimulationConfig::new(64, 0.125, 42).unwrap();
        let one = simulate_driver(&spec, &base.clone().with_workers(1)).unwrap();
        let four = simulate_driver(&spec, &base.with_workers(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn forward_prices_start_on_the_curve() {
        let spec = fpm_model(0.2, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(4, 0.25, 5).unwrap();
        let grid = simulate_driver(&spec, &config).unwrap();
        for k in 1..=3 {
            let prices = forward_price_paths(&spec, &grid, k).unwrap();
            let want = curve().forward_price(k, 4).unwrap();
            for series in prices {
                assert!((series[0] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lmm_prices_reproduce_initial_rates() {
        let spec = lmm_model(&[0.2, 0.15, 0.1], &[(0.1, 0.5)]);
        let config = SimulationConfig::new(4, 0.25, 5).unwrap();
        let grid = simulate_driver(&spec, &config).unwrap();
        let prices = forward_price_paths(&spec, &grid, 1).unwrap();
        let want = 1.0 + 0.5 * curve().libor(&tenor(), 1).unwrap();
        assert!((prices[0][0] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_volatility_martingale_rows_are_exact() {
        let spec = fpm_model(0.0, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(32, 0.125, 11).unwrap();
        let report = martingale_test(&spec, &config, &[0.5, 1.0, 1.5]).unwrap();
        assert!(report.passed());
        for row in &report.rows {
            assert_eq!(row.z_score, 0.0);
            assert_eq!(row.std_error, 0.0);
        }
    }

    #[test]
    fn fpm_martingale_passes_and_sabotage_fails() {
        let spec = fpm_model(0.3, &[(0.1, 0.5), (-0.15, 0.3), (0.05, 1.0)]);
        let config = SimulationConfig::new(20_000, 0.5 / 32.0, 2024).unwrap();
        let report = martingale_test(&spec, &config, &[0.5, 1.0, 1.5]).unwrap();
        assert!(report.passed(), "max |z| = {}", report.max_abs_z());

        let sabotaged = martingale_test(
            &spec,
            &config.clone().with_zero_drift(true),
            &[0.5, 1.0, 1.5],
        )
        .unwrap();
        assert!(!sabotaged.passed(), "sabotage not detected");
    }

    #[test]
    fn density_process_is_one_at_time_zero_and_mean_one_at_expiry() {
        let spec = fpm_model(0.25, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(20_000, 0.5 / 16.0, 77).unwrap();
        let grid = simulate_driver(&spec, &config).unwrap();
        let series = density_process(&spec, &grid, 2).unwrap();
        let idx = grid.time_index(1.0).unwrap();
        let column: Vec<f64> = series.iter().map(|s| s[idx]).collect();
        for s in &series {
            assert!((s[0] - 1.0).abs() < 1e-14);
        }
        let (mean, se) = mean_and_stderr(&column);
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn caplet_parity_and_degenerate_strikes() {
        let spec = fpm_model(0.25, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(20_000, 0.5 / 16.0, 31).unwrap();
        // huge strike kills the payoff
        let (price, _) = caplet_price(&spec, &config, 1, 1e6).unwrap();
        assert_eq!(price, 0.0);
        // strike zero collapses to the discounted initial rate
        let (price, se) = caplet_price(&spec, &config, 2, 0.0).unwrap();
        let want = curve().bond_price(3).unwrap() * 0.5 * curve().libor(&tenor(), 2).unwrap();
        assert!(
            (price - want).abs() <= 3.0 * se,
            "price {price}, want {want}, se {se}"
        );
    }

    #[test]
    fn zero_volatility_caplet_is_deterministic() {
        let spec = fpm_model(0.0, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(16, 0.125, 8).unwrap();
        let strike = 0.01;
        let (price, se) = caplet_price(&spec, &config, 1, strike).unwrap();
        let l0 = curve().libor(&tenor(), 1).unwrap();
        let want = curve().bond_price(2).unwrap() * 0.5 * (l0 - strike).max(0.0);
        assert!(se.abs() < 1e-14);
        assert!((price - want).abs() < 1e-12, "price {price}, want {want}");
    }

    #[test]
    fn negative_strike_rejected_for_rate_family() {
        let spec = lmm_model(&[0.2, 0.15, 0.1], &[(0.1, 0.5)]);
        let config = SimulationConfig::new(8, 0.125, 8).unwrap();
        assert!(caplet_price(&spec, &config, 1, -0.01).is_err());
    }

    #[test]
    fn pathwise_scan_telescopes_and_flags_signs() {
        let spec = fpm_model(0.3, &[(0.1, 0.5)]);
        let config = SimulationConfig::new(500, 0.5 / 16.0, 12).unwrap();
        let scan = pathwise_scan(&spec, &config).unwrap();
        assert!(scan.max_telescoping_error < 1e-12);
        // forward-price family admits negative rates at this volatility
        assert!(scan.negative_rate_witness.is_some());

        let lmm = lmm_model(&[0.2, 0.15, 0.1], &[(0.1, 0.5)]);
        let scan = pathwise_scan(&lmm, &config).unwrap();
        assert!(scan.negative_rate_witness.is_none());
        assert!(scan.min_rate.iter().all(|r| *r >= 0.0));
        assert!(scan.max_telescoping_error < 1e-12);
    }

    #[test]
    fn affine_mgf_monte_carlo_matches_riccati() {
        let driver = crate::affine::AffineDriverSpec::new(
            0.3,
            -0.6,
            0.2,
            AtomicJumpMeasure::scalar(&[(0.25, 0.5)]).unwrap(),
            AtomicJumpMeasure::scalar(&[(0.2, 0.4)]).unwrap(),
        )
        .unwrap();
        let config = SimulationConfig::new(30_000, 1.0 / 256.0, 99).unwrap();
        for (u, t) in [(-0.5, 0.5), (0.25, 1.0)] {
            let (mean, se) = affine_mgf_mc(&driver, u, t, &config).unwrap();
            let want = crate::affine::mgf(&driver, u, t, 1.0).unwrap();
            assert!(
                (mean - want).abs() <= 4.0 * se,
                "u = {u}, t = {t}: mc {mean} vs {want} (se {se})"
            );
        }
    }
}
