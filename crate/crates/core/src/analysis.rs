//! Weak-error Monte Carlo, order fitting, the decay check for `F̄`, and the
//! first-order corrector `u₁`.
//!
//! The weak difference is `E φ(U^ε_T) − E φ(Ū_T)` (coupled minus averaged).
//! The corrector is reported with the matching sign, so that
//! `mean_diff ≈ ε·u₁` and the residual is `r^ε = mean_diff − ε·u₁`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fast::{fit_decay_rate, FastModel, FastStepper};
use crate::nonlinearity::{AveragedDrift, GridScratch};
use crate::rng::{Purpose, RngStream};
use crate::slow::{simulate_coupled, AveragedRun, MultiscaleConfig, ReplicaNoise, SlowModel};
use crate::spectral::{SpectralField, WaveState};
use crate::stats::{moments, ols, Moments, Z95};

/// Bounded observable `φ` of the displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctional {
    /// `φ(u) = sin((u, w) + c)`.
    BoundedProjection { w: SpectralField, c: f64 },
    /// `φ(u) = exp(−‖u‖²/2)`.
    GaussianBump,
}

impl TestFunctional {
    pub fn value(&self, u: &SpectralField) -> f64 {
        match self {
            TestFunctional::BoundedProjection { w, c } => (u.dot(w) + c).sin(),
            TestFunctional::GaussianBump => (-0.5 * u.dot(u)).exp(),
        }
    }

    /// `φ'(u)·h`.
    pub fn derivative(&self, u: &SpectralField, h: &SpectralField) -> f64 {
        match self {
            TestFunctional::BoundedProjection { w, c } => (u.dot(w) + c).cos() * h.dot(w),
            TestFunctional::GaussianBump => -(-0.5 * u.dot(u)).exp() * u.dot(h),
        }
    }

    pub fn check_modes(&self, n: usize) -> Result<()> {
        match self {
            TestFunctional::BoundedProjection { w, .. } => check_dim(n, w.len()),
            TestFunctional::GaussianBump => Ok(()),
        }
    }
}

/// A fully specified slow-fast problem with a frozen `F̄`.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub slow: SlowModel,
    pub fast: FastModel,
    pub fbar: AveragedDrift,
    pub phi: TestFunctional,
    pub x0: WaveState,
    pub y0: SpectralField,
    pub h_slow: f64,
    pub micro_ratio: usize,
    pub horizon: f64,
}

impl Experiment {
    /// Step configuration at scale `epsilon`, with the micro ratio adapted to the fast model.
    pub fn multiscale(&self, epsilon: f64) -> MultiscaleConfig {
        MultiscaleConfig::new(epsilon, self.h_slow, self.micro_ratio, self.horizon).adapted_to(&self.fast)
    }

    fn averaged_config(&self) -> MultiscaleConfig {
        MultiscaleConfig::new(1.0, self.h_slow, 1, self.horizon)
    }

    fn check(&self) -> Result<()> {
        let n = self.slow.basis.modes();
        check_dim(n, self.fast.basis.modes())?;
        check_dim(n, self.y0.len())?;
        check_dim(n, self.x0.modes())?;
        self.phi.check_modes(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakErrorPoint {
    pub epsilon: f64,
    pub mean_diff: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
}

fn point(epsilon: f64, m: Moments, seed: u64) -> WeakErrorPoint {
    WeakErrorPoint {
        epsilon,
        mean_diff: m.mean,
        stderr: m.stderr(),
        replicas: m.count as usize,
        seed,
    }
}

fn check_replicas(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::usage(format!("need at least 2 replicas for a standard error, got {m}")));
    }
    Ok(())
}

/// `φ(Ū_T)` for replicas `0..m`, each driven by its own `W¹` stream.
pub fn averaged_observables(exp: &Experiment, m: usize, seed: u64) -> Result<Vec<f64>> {
    averaged_observables_with(exp, m, seed, false)
}

fn averaged_observables_with(exp: &Experiment, m: usize, seed: u64, independent: bool) -> Result<Vec<f64>> {
    exp.check()?;
    let cfg = exp.averaged_config();
    cfg.validate()?;
    (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let mut noise = ReplicaNoise::new(seed, r);
            if independent {
                noise = noise.independent_slow();
            }
            let mut run = AveragedRun::new(&cfg, &exp.slow, &exp.fbar)?;
            let stream = noise.slow_stream();
            let mut x = exp.x0.clone();
            for step in 0..run.steps {
                run.step(&mut x, &mut stream.at(step as u64));
            }
            Ok(exp.phi.value(&x.u))
        })
        .collect()
}

/// `φ(U^ε_T)` for replicas `0..m`; `lane` keys the fast noise.
pub fn coupled_observables(exp: &Experiment, epsilon: f64, lane: u64, m: usize, seed: u64) -> Result<Vec<f64>> {
    exp.check()?;
    let cfg = exp.multiscale(epsilon);
    cfg.validate()?;
    (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let noise = ReplicaNoise::new(seed, r).fast_lane(lane);
            let path = simulate_coupled(&exp.x0, &exp.y0, &cfg, &exp.slow, &exp.fast, noise, None)?;
            Ok(exp.phi.value(&path.terminal.u))
        })
        .collect()
}

fn differences(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Weak difference at one ε with common `W¹` between the coupled and averaged runs.
pub fn weak_error(exp: &Experiment, epsilon: f64, lane: u64, m: usize, seed: u64) -> Result<WeakErrorPoint> {
    check_replicas(m)?;
    let reference = averaged_observables(exp, m, seed)?;
    let coupled = coupled_observables(exp, epsilon, lane, m, seed)?;
    Ok(point(epsilon, moments(&differences(&coupled, &reference)), seed))
}

/// The same difference with independent `W¹` for the averaged runs.
pub fn weak_error_uncoupled(exp: &Experiment, epsilon: f64, lane: u64, m: usize, seed: u64) -> Result<WeakErrorPoint> {
    check_replicas(m)?;
    let coupled = moments(&coupled_observables(exp, epsilon, lane, m, seed)?);
    let averaged = moments(&averaged_observables_with(exp, m, seed, true)?);
    Ok(WeakErrorPoint {
        epsilon,
        mean_diff: coupled.mean - averaged.mean,
        stderr: (coupled.variance() / m as f64 + averaged.variance() / m as f64).sqrt(),
        replicas: m,
        seed,
    })
}

/// Weak differences over an ε ladder; the `i`-th ε uses fast-noise lane `i`
/// and the averaged runs are shared by all of them.
pub fn weak_error_sweep(exp: &Experiment, epsilons: &[f64], m: usize, seed: u64) -> Result<Vec<WeakErrorPoint>> {
    check_replicas(m)?;
    let reference = averaged_observables(exp, m, seed)?;
    epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let coupled = coupled_observables(exp, eps, i as u64, m, seed)?;
            Ok(point(eps, moments(&differences(&coupled, &reference)), seed))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// Fewer than three points above the noise floor.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub used: Vec<f64>,
    /// ε values with `|mean_diff| ≤ 2·stderr`.
    pub excluded: Vec<f64>,
    pub status: FitStatus,
}

/// Least-squares fit of `log|mean_diff|` against `log ε` over the points above the noise floor.
pub fn order_fit(points: &[WeakErrorPoint]) -> OrderFit {
    let (used, excluded): (Vec<&WeakErrorPoint>, Vec<&WeakErrorPoint>) = points
        .iter()
        .partition(|p| p.mean_diff.abs() > 2.0 * p.stderr && p.epsilon > 0.0);
    let mut out = OrderFit {
        slope: None,
        intercept: None,
        r_squared: None,
        used: used.iter().map(|p| p.epsilon).collect(),
        excluded: excluded.iter().map(|p| p.epsilon).collect(),
        status: FitStatus::Inconclusive,
    };
    if used.len() >= 3 {
        let x: Vec<f64> = used.iter().map(|p| p.epsilon.ln()).collect();
        let y: Vec<f64> = used.iter().map(|p| p.mean_diff.abs().ln()).collect();
        if let Some(f) = ols(&x, &y) {
            out.slope = Some(f.slope);
            out.intercept = Some(f.intercept);
            out.r_squared = Some(f.r_squared);
            out.status = FitStatus::Ok;
        }
    }
    out
}

/// Unlogged least-squares slope of `mean_diff` against ε over the `k` smallest
/// ε, with its standard error from the per-point standard errors.
pub fn small_epsilon_slope(points: &[WeakErrorPoint], k: usize) -> Option<(f64, f64)> {
    let mut sorted: Vec<&WeakErrorPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let pts = &sorted[..k.min(sorted.len())];
    if pts.len() < 2 {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|p| p.epsilon).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.mean_diff).collect();
    let fit = ols(&x, &y)?;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let var: f64 = pts
        .iter()
        .map(|p| ((p.epsilon - mx) / sxx).powi(2) * p.stderr * p.stderr)
        .sum();
    Some((fit.slope, var.sqrt()))
}

/// Advances `y` by consecutive intervals, one precomputed stepper per interval.
struct IntervalSteppers<'a> {
    steppers: Vec<(FastStepper<'a>, usize)>,
}

impl<'a> IntervalSteppers<'a> {
    fn new(model: &'a FastModel, times: &[f64]) -> Result<Self> {
        let bound = model.accuracy_step_bound();
        let mut steppers = Vec::with_capacity(times.len().saturating_sub(1));
        for w in times.windows(2) {
            let dt = w[1] - w[0];
            if !(dt > 0.0) {
                return Err(Error::usage("time grid must be strictly increasing"));
            }
            let sub = if bound.is_finite() { (dt / bound - 1e-9).ceil().max(1.0) as usize } else { 1 };
            steppers.push((model.stepper(dt / sub as f64)?, sub));
        }
        Ok(Self { steppers })
    }
}

/// Inner Monte Carlo of `E F(u, Y_t(y))` on a time grid. Returns, per replica,
/// the drift coefficients at every grid time (flattened `times × N`).
fn inner_drift_paths(
    slow: &SlowModel,
    fast: &FastModel,
    u: &SpectralField,
    y: &SpectralField,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_dim(slow.basis.modes(), u.len())?;
    check_dim(fast.basis.modes(), y.len())?;
    if times.is_empty() || times[0] < 0.0 {
        return Err(Error::usage("time grid must be non-empty and non-negative"));
    }
    let mut grid = vec![0.0];
    grid.extend(times.iter().copied().filter(|t| *t > 0.0));
    let prototype = IntervalSteppers::new(fast, &grid)?;
    let n = slow.basis.modes();
    let skip_zero = times[0] > 0.0;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut steppers = prototype.steppers.clone();
            let stream = RngStream::new(seed, Purpose::Inner).replica(r);
            let mut yk = y.coeffs().to_vec();
            let mut scratch = GridScratch::new(&slow.colloc);
            let mut drift = vec![0.0; n];
            let mut out = Vec::with_capacity(times.len() * n);
            if !skip_zero {
                slow.coupling.eval_into(&slow.colloc, u.coeffs(), &yk, &mut scratch, &mut drift);
                out.extend_from_slice(&drift);
            }
            for (j, (stepper, sub)) in steppers.iter_mut().enumerate() {
                let mut rng = stream.at(j as u64);
                for _ in 0..*sub {
                    stepper.step(&mut yk, &mut rng);
                }
                slow.coupling.eval_into(&slow.colloc, u.coeffs(), &yk, &mut scratch, &mut drift);
                out.extend_from_slice(&drift);
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCheck {
    pub times: Vec<f64>,
    /// Bias-corrected `‖F̄(u) − E F(u, Y_t(y))‖²`.
    pub distance_sq: Vec<f64>,
    /// `tr Var / n`, the Monte Carlo floor subtracted from the raw estimate.
    pub noise_floor: Vec<f64>,
    pub fitted_rate: f64,
    pub eta: f64,
    /// `d(0) / (1 + ‖y‖²)`.
    pub envelope_constant: f64,
    pub passes: bool,
}

/// Estimates `d(t) = ‖F̄(u) − E F(u, Y_t(y))‖²` by inner Monte Carlo and fits an
/// exponential rate over the points standing clear of the noise floor.
#[allow(clippy::too_many_arguments)]
pub fn fbar_decay_check(
    slow: &SlowModel,
    fast: &FastModel,
    fbar: &AveragedDrift,
    u: &SpectralField,
    y: &SpectralField,
    times: &[f64],
    inner_replicas: usize,
    seed: u64,
) -> Result<DecayCheck> {
    let eta = fast.mixing_rate()?;
    check_replicas(inner_replicas)?;
    let target = fbar.eval(u)?;
    let paths = inner_drift_paths(slow, fast, u, y, times, inner_replicas, seed)?;
    let n = slow.basis.modes();
    let mut distance_sq = Vec::with_capacity(times.len());
    let mut noise_floor = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let (mut d, mut floor) = (0.0, 0.0);
        for k in 0..n {
            let col: Vec<f64> = paths.iter().map(|p| p[j * n + k]).collect();
            let m = moments(&col);
            d += (m.mean - target.coeffs()[k]).powi(2);
            floor += m.variance() / inner_replicas as f64;
        }
        distance_sq.push(d - floor);
        noise_floor.push(floor);
    }
    let (ft, fd): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(distance_sq.iter().zip(&noise_floor))
        .filter(|(_, (d, f))| **d > 10.0 * **f)
        .map(|(t, (d, _))| (*t, *d))
        .unzip();
    let fitted_rate = fit_decay_rate(&ft, &fd);
    let y_norm = y.norm();
    let envelope_constant = match times.iter().position(|t| *t == 0.0) {
        Some(i) => distance_sq[i] / (1.0 + y_norm * y_norm),
        None => f64::NAN,
    };
    Ok(DecayCheck {
        times: times.to_vec(),
        distance_sq,
        noise_floor,
        fitted_rate,
        eta,
        envelope_constant,
        passes: fitted_rate >= 0.75 * eta,
    })
}

/// Per-replica values of `φ'(Ū_T)·Π₁η_T^{h_j}` for each direction `h_j`, with
/// the first variation integrated by the linearized averaged scheme along the
/// same path. Row `r` holds replica `r`.
pub fn ubar_gradient_samples(
    exp: &Experiment,
    directions: &[WaveState],
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    exp.check()?;
    let n = exp.slow.basis.modes();
    for d in directions {
        check_dim(n, d.modes())?;
        if !(d.u.is_finite() && d.v.is_finite()) {
            return Err(Error::usage("direction has non-finite coefficients"));
        }
    }
    let cfg = exp.averaged_config();
    cfg.validate()?;
    let colloc = exp.fbar.collocation();
    (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let mut run = AveragedRun::new(&cfg, &exp.slow, &exp.fbar)?;
            let stream = ReplicaNoise::new(seed, r).slow_stream();
            let mut x = exp.x0.clone();
            let mut etas: Vec<WaveState> = directions.to_vec();
            let g = colloc.grid_size();
            let (mut u_nodes, mut mult, mut w_nodes) = (vec![0.0; g], vec![0.0; g], vec![0.0; g]);
            let mut lin = vec![0.0; n];
            for step in 0..run.steps {
                colloc.to_grid_into(x.u.coeffs(), &mut u_nodes);
                exp.fbar.derivative_nodes(&u_nodes, &mut mult);
                for eta in etas.iter_mut() {
                    colloc.to_grid_into(eta.u.coeffs(), &mut w_nodes);
                    w_nodes.iter_mut().zip(&mult).for_each(|(w, m)| *w *= m);
                    colloc.from_grid_into(&w_nodes, &mut lin);
                    run.trig.apply(&mut eta.u.0, &mut eta.v.0, &lin);
                }
                run.step(&mut x, &mut stream.at(step as u64));
            }
            Ok(etas.iter().map(|e| exp.phi.derivative(&x.u, &e.u)).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// `D_x ū(T, x0)·h = E[φ'(Ū_T)·Π₁η_T^{h}]`.
pub fn directional_derivative_ubar(exp: &Experiment, h: &WaveState, m: usize, seed: u64) -> Result<DerivativeEstimate> {
    check_replicas(m)?;
    let rows = ubar_gradient_samples(exp, std::slice::from_ref(h), m, seed)?;
    let mm = moments(&rows.iter().map(|r| r[0]).collect::<Vec<_>>());
    Ok(DerivativeEstimate {
        value: mm.mean,
        stderr: mm.stderr(),
        replicas: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSettings {
    /// Tail tolerance; sets `s_max = 2 ln(1/tol)/η`.
    pub tol: f64,
    pub inner_replicas: usize,
    pub outer_replicas: usize,
    /// Trapezoid step of the `s` quadrature.
    pub ds: f64,
}

impl Default for CorrectorSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            inner_replicas: 4096,
            outer_replicas: 4096,
            ds: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectorEstimate {
    pub u1_value: f64,
    /// 95% half-width.
    pub ci_halfwidth: f64,
    pub stderr: f64,
    pub s_max: f64,
    pub inner_replicas: usize,
    pub outer_replicas: usize,
    /// `v = ∫₀^{s_max} (E F(x₁, Y_s(y₀)) − F̄(x₁)) ds`.
    pub direction: SpectralField,
}

/// Integrated discrepancy `v` and the covariance of its inner Monte Carlo estimate.
fn discrepancy_direction(exp: &Experiment, s_max: f64, settings: &CorrectorSettings, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = exp.slow.basis.modes();
    let intervals = (s_max / settings.ds).ceil().max(1.0) as usize;
    let ds = s_max / intervals as f64;
    let times: Vec<f64> = (0..=intervals).map(|i| i as f64 * ds).collect();
    let target = exp.fbar.eval(&exp.x0.u)?;
    let paths = inner_drift_paths(&exp.slow, &exp.fast, &exp.x0.u, &exp.y0, &times, settings.inner_replicas, seed)?;
    let per_replica: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            let mut v = vec![0.0; n];
            for j in 0..times.len() {
                let w = if j == 0 || j == intervals { 0.5 * ds } else { ds };
                for k in 0..n {
                    v[k] += w * (p[j * n + k] - target.coeffs()[k]);
                }
            }
            v
        })
        .collect();
    let cols: Vec<Vec<f64>> = (0..n).map(|k| per_replica.iter().map(|v| v[k]).collect()).collect();
    let mean: Vec<f64> = cols.iter().map(|c| moments(c).mean).collect();
    let count = per_replica.len() as f64;
    let mut cov = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let c = cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(x, y)| (x - mean[a]) * (y - mean[b]))
                .sum::<f64>()
                / (count - 1.0)
                / count;
            cov[a * n + b] = c;
            cov[b * n + a] = c;
        }
    }
    Ok((mean, cov))
}

/// First-order corrector `u₁(T, x₀, y₀) = D_x ū(T, x₀)·(0, v)`.
///
/// The outer time integral is collapsed into the single direction `v` by
/// linearity of the first variation. The gradient of `ū` is propagated along
/// each unit velocity direction so the inner-sample uncertainty of `v` can be
/// added to the outer Monte Carlo variance.
pub fn corrector_u1(exp: &Experiment, settings: &CorrectorSettings, seed: u64) -> Result<CorrectorEstimate> {
    let eta = exp.fast.mixing_rate()?;
    check_replicas(settings.inner_replicas)?;
    check_replicas(settings.outer_replicas)?;
    if !(settings.tol > 0.0 && settings.tol < 1.0) {
        return Err(Error::config("corrector.tol", "tolerance must lie in (0, 1)"));
    }
    if !(settings.ds > 0.0) {
        return Err(Error::config("corrector.ds", "quadrature step must be positive"));
    }
    let s_max = 2.0 * (1.0 / settings.tol).ln() / eta;
    let n = exp.slow.basis.modes();
    let (v, cov) = discrepancy_direction(exp, s_max, settings, seed)?;
    let estimate = |u1_value: f64, var: f64| CorrectorEstimate {
        u1_value,
        ci_halfwidth: Z95 * var.sqrt(),
        stderr: var.sqrt(),
        s_max,
        inner_replicas: settings.inner_replicas,
        outer_replicas: settings.outer_replicas,
        direction: SpectralField(v.clone()),
    };
    if v.iter().all(|x| *x == 0.0) {
        return Ok(estimate(0.0, 0.0));
    }
    let directions: Vec<WaveState> = (0..n)
        .map(|k| WaveState {
            u: SpectralField::zeros(n),
            v: SpectralField::unit(n, k),
        })
        .collect();
    let rows = ubar_gradient_samples(exp, &directions, settings.outer_replicas, seed)?;
    let z: Vec<f64> = rows
        .iter()
        .map(|g| g.iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect();
    let outer = moments(&z);
    let grad: Vec<f64> = (0..n)
        .map(|k| moments(&rows.iter().map(|g| g[k]).collect::<Vec<_>>()).mean)
        .collect();
    let mut inner_var = 0.0;
    for a in 0..n {
        for b in 0..n {
            inner_var += grad[a] * cov[a * n + b] * grad[b];
        }
    }
    Ok(estimate(outer.mean, outer.variance() / outer.count as f64 + inner_var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualRow {
    pub epsilon: f64,
    pub mean_diff: f64,
    pub r_eps: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualTable {
    pub rows: Vec<ResidualRow>,
    /// `|r^ε| ≤ |mean_diff| + 2·stderr` at the smallest ε.
    pub smallest_not_worse: bool,
}

/// `r^ε = mean_diff − ε·u₁` with standard errors combined in quadrature.
pub fn expansion_residual(points: &[WeakErrorPoint], corrector: &CorrectorEstimate) -> ResidualTable {
    let rows: Vec<ResidualRow> = points
        .iter()
        .map(|p| ResidualRow {
            epsilon: p.epsilon,
            mean_diff: p.mean_diff,
            r_eps: p.mean_diff - p.epsilon * corrector.u1_value,
            stderr: (p.stderr.powi(2) + (p.epsilon * corrector.stderr).powi(2)).sqrt(),
        })
        .collect();
    let smallest_not_worse = rows
        .iter()
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .map(|r| r.r_eps.abs() <= r.mean_diff.abs() + 2.0 * r.stderr)
        .unwrap_or(true);
    ResidualTable { rows, smallest_not_worse }
}
