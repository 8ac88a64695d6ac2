//! Stochastic trigonometric integrator for the slow wave equation, coupled to
//! the fast process on the clock `t/ε`, and the same scheme for the averaged
//! equation.
//!
//! Each slow step propagates the state with the exact wave group, adds the
//! drift frozen at the left endpoint through the exact integrated group
//! action, and adds an exactly distributed wave-convolution noise sample. The
//! `W¹` sample of step `n` is addressed by `(seed, replica, n)` only, so the
//! coupled run at every ε and the averaged run see the same noise path.

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::fast::FastModel;
use crate::noise::{QWienerSpec, WaveConvolution};
use crate::nonlinearity::{AveragedDrift, CouplingSpec, GridScratch};
use crate::rng::{Purpose, RngStream};
use crate::spectral::{Collocation, SpectralBasis, SpectralField, WaveState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiscaleConfig {
    pub epsilon: f64,
    pub h_slow: f64,
    /// Fast sub-steps per slow step.
    pub micro_ratio: usize,
    pub horizon: f64,
    /// Largest admissible fast-clock step `h_slow / (ε micro_ratio)`.
    pub max_fast_step: f64,
}

impl MultiscaleConfig {
    pub fn new(epsilon: f64, h_slow: f64, micro_ratio: usize, horizon: f64) -> Self {
        Self {
            epsilon,
            h_slow,
            micro_ratio,
            horizon,
            max_fast_step: f64::INFINITY,
        }
    }

    /// Raises `micro_ratio` until the fast-clock step meets the fast model's
    /// accuracy bound, and records that bound.
    pub fn adapted_to(mut self, fast: &FastModel) -> Self {
        let bound = fast.accuracy_step_bound();
        if bound.is_finite() {
            let needed = (self.h_slow / (self.epsilon * bound) - 1e-9).ceil() as usize;
            self.micro_ratio = self.micro_ratio.max(needed);
        }
        self.max_fast_step = bound;
        self
    }

    pub fn fast_step(&self) -> f64 {
        self.h_slow / (self.epsilon * self.micro_ratio as f64)
    }

    pub fn slow_steps(&self) -> usize {
        (self.horizon / self.h_slow - 1e-9).ceil().max(1.0) as usize
    }

    /// Actual slow step: `horizon / slow_steps()`, equal to `h_slow` when it divides the horizon.
    pub fn step(&self) -> f64 {
        self.horizon / self.slow_steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            v.push(crate::Violation::new("sweep.epsilons", format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        if !(self.h_slow > 0.0 && self.h_slow.is_finite()) {
            v.push(crate::Violation::new("numerics.h_slow", "slow step must be positive"));
        }
        if self.micro_ratio == 0 {
            v.push(crate::Violation::new("numerics.micro_ratio", "need at least one fast sub-step"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(crate::Violation::new("numerics.T", "horizon must be positive"));
        } else if self.h_slow > self.horizon {
            v.push(crate::Violation::new("numerics.h_slow", "slow step exceeds the horizon"));
        }
        if v.is_empty() && self.fast_step() > self.max_fast_step * (1.0 + 1e-12) {
            v.push(crate::Violation::new(
                "numerics.micro_ratio",
                format!(
                    "fast-clock step {} exceeds the stability bound {}",
                    self.fast_step(),
                    self.max_fast_step
                ),
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Data of the slow equation other than the drift.
#[derive(Debug, Clone)]
pub struct SlowModel {
    pub basis: SpectralBasis,
    pub q: QWienerSpec,
    pub sigma: f64,
    pub coupling: CouplingSpec,
    pub colloc: Collocation,
}

impl SlowModel {
    pub fn new(basis: SpectralBasis, q: QWienerSpec, sigma: f64, coupling: CouplingSpec) -> Result<Self> {
        check_dim(basis.modes(), q.len())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config("noise.sigma1", "noise intensity must be non-negative"));
        }
        let colloc = basis.default_collocation();
        Ok(Self {
            basis,
            q,
            sigma,
            coupling,
            colloc,
        })
    }
}

/// Per-mode coefficients of one trigonometric step of size `h`.
#[derive(Debug, Clone)]
pub struct TrigStep {
    cos: Vec<f64>,
    sin_over_w: Vec<f64>,
    w_sin: Vec<f64>,
    /// `(1 - cos ωh) / ω²`
    drift_u: Vec<f64>,
}

impl TrigStep {
    pub fn new(basis: &SpectralBasis, h: f64) -> Self {
        let mut s = Self {
            cos: Vec::with_capacity(basis.modes()),
            sin_over_w: Vec::with_capacity(basis.modes()),
            w_sin: Vec::with_capacity(basis.modes()),
            drift_u: Vec::with_capacity(basis.modes()),
        };
        for &w in basis.omegas() {
            let (sn, cs) = (w * h).sin_cos();
            let half = (0.5 * w * h).sin();
            s.cos.push(cs);
            s.sin_over_w.push(sn / w);
            s.w_sin.push(w * sn);
            s.drift_u.push(2.0 * half * half / (w * w));
        }
        s
    }

    /// `x ← 𝒮_h x + ∫_0^h 𝒮_{h-s} B drift ds`.
    #[inline]
    pub fn apply(&self, u: &mut [f64], v: &mut [f64], drift: &[f64]) {
        for k in 0..u.len() {
            let (uk, vk) = (u[k], v[k]);
            u[k] = self.cos[k] * uk + self.sin_over_w[k] * vk + self.drift_u[k] * drift[k];
            v[k] = -self.w_sin[k] * uk + self.cos[k] * vk + self.sin_over_w[k] * drift[k];
        }
    }

    #[inline]
    pub fn apply_free(&self, u: &mut [f64], v: &mut [f64]) {
        for k in 0..u.len() {
            let (uk, vk) = (u[k], v[k]);
            u[k] = self.cos[k] * uk + self.sin_over_w[k] * vk;
            v[k] = -self.w_sin[k] * uk + self.cos[k] * vk;
        }
    }
}

/// One slow step `x⁺ = 𝒮_h x + Ψ_h(drift) + noise`.
pub fn step_slow(
    x: &WaveState,
    drift: &SpectralField,
    h: f64,
    basis: &SpectralBasis,
    noise_sample: &WaveState,
) -> Result<WaveState> {
    let n = basis.modes();
    for len in [x.u.len(), x.v.len(), drift.len(), noise_sample.u.len(), noise_sample.v.len()] {
        check_dim(n, len)?;
    }
    let step = TrigStep::new(basis, h);
    let mut out = x.clone();
    step.apply(out.u.coeffs_mut(), out.v.coeffs_mut(), drift.coeffs());
    out.u.axpy(1.0, &noise_sample.u);
    out.v.axpy(1.0, &noise_sample.v);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SlowPath {
    pub snapshots: Vec<(f64, WaveState)>,
    pub terminal: WaveState,
}

/// Stream coordinates for one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaNoise {
    pub seed: u64,
    pub replica: u64,
    /// Lane of the fast noise (the ε index); never used for `W¹`.
    pub fast_lane: u64,
    pub slow_purpose: Purpose,
}

impl ReplicaNoise {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            seed,
            replica,
            fast_lane: 0,
            slow_purpose: Purpose::SlowNoise,
        }
    }

    pub fn fast_lane(mut self, lane: u64) -> Self {
        self.fast_lane = lane;
        self
    }

    /// Uses a `W¹` stream independent of the default one.
    pub fn independent_slow(mut self) -> Self {
        self.slow_purpose = Purpose::SlowNoiseIndependent;
        self
    }

    pub fn slow_stream(&self) -> RngStream {
        RngStream::new(self.seed, self.slow_purpose).replica(self.replica)
    }

    pub fn fast_stream(&self) -> RngStream {
        RngStream::new(self.seed, Purpose::FastNoise)
            .lane(self.fast_lane)
            .replica(self.replica)
    }
}

fn check_initial(basis: &SpectralBasis, x0: &WaveState) -> Result<()> {
    check_dim(basis.modes(), x0.u.len())?;
    check_dim(basis.modes(), x0.v.len())?;
    if !(x0.u.is_finite() && x0.v.is_finite()) {
        return Err(Error::usage("initial state has non-finite coefficients"));
    }
    Ok(())
}

/// Multiscale run of `(X^ε, Y_{t/ε})`. Snapshots every `snapshot_every` slow
/// steps (always including `t = 0` and the terminal time) when requested.
pub fn simulate_coupled(
    x0: &WaveState,
    y0: &SpectralField,
    cfg: &MultiscaleConfig,
    slow: &SlowModel,
    fast: &FastModel,
    noise: ReplicaNoise,
    snapshot_every: Option<usize>,
) -> Result<SlowPath> {
    cfg.validate()?;
    check_initial(&slow.basis, x0)?;
    check_dim(fast.basis.modes(), y0.len())?;
    check_dim(slow.basis.modes(), fast.basis.modes())?;
    let steps = cfg.slow_steps();
    let h = cfg.step();
    let micro = cfg.micro_ratio;
    let trig = TrigStep::new(&slow.basis, h);
    let w1 = WaveConvolution::new(&slow.q, slow.sigma, h, &slow.basis)?;
    let mut fast_stepper = fast.stepper(h / (cfg.epsilon * micro as f64))?;
    let slow_stream = noise.slow_stream();
    let fast_stream = noise.fast_stream();

    let n = slow.basis.modes();
    let mut x = x0.clone();
    let mut y = y0.coeffs().to_vec();
    let mut drift = vec![0.0; n];
    let mut scratch = GridScratch::new(&slow.colloc);
    let mut snapshots = Vec::new();
    if snapshot_every.is_some() {
        snapshots.push((0.0, x.clone()));
    }
    for step in 0..steps {
        slow.coupling
            .eval_into(&slow.colloc, x.u.coeffs(), &y, &mut scratch, &mut drift);
        trig.apply(&mut x.u.0, &mut x.v.0, &drift);
        w1.add_sample(&mut x.u.0, &mut x.v.0, &mut slow_stream.at(step as u64));
        let mut rng = fast_stream.at(step as u64);
        for _ in 0..micro {
            fast_stepper.step(&mut y, &mut rng);
        }
        record(&mut snapshots, snapshot_every, step + 1, steps, h, &x);
    }
    Ok(SlowPath { snapshots, terminal: x })
}

fn record(snapshots: &mut Vec<(f64, WaveState)>, every: Option<usize>, i: usize, steps: usize, h: f64, x: &WaveState) {
    if let Some(every) = every {
        if i.is_multiple_of(every.max(1)) || i == steps {
            snapshots.push((i as f64 * h, x.clone()));
        }
    }
}

/// Averaged run of `X̄` with the frozen drift `F̄`; `W¹` addressed exactly as
/// in [`simulate_coupled`].
pub fn simulate_averaged(
    x0: &WaveState,
    cfg: &MultiscaleConfig,
    slow: &SlowModel,
    fbar: &AveragedDrift,
    noise: ReplicaNoise,
    snapshot_every: Option<usize>,
) -> Result<SlowPath> {
    cfg.validate()?;
    check_initial(&slow.basis, x0)?;
    check_dim(slow.basis.modes(), fbar.collocation().modes())?;
    let mut run = AveragedRun::new(cfg, slow, fbar)?;
    let mut x = x0.clone();
    let mut snapshots = Vec::new();
    if snapshot_every.is_some() {
        snapshots.push((0.0, x.clone()));
    }
    let stream = noise.slow_stream();
    for step in 0..run.steps {
        run.step(&mut x, &mut stream.at(step as u64));
        record(&mut snapshots, snapshot_every, step + 1, run.steps, run.h, &x);
    }
    Ok(SlowPath { snapshots, terminal: x })
}

/// Reusable stepping state for the averaged scheme (shared with the
/// variational solver).
pub(crate) struct AveragedRun<'a> {
    pub(crate) trig: TrigStep,
    pub(crate) w1: WaveConvolution,
    pub(crate) fbar: &'a AveragedDrift,
    pub(crate) scratch: GridScratch,
    pub(crate) drift: Vec<f64>,
    pub(crate) steps: usize,
    pub(crate) h: f64,
}

impl<'a> AveragedRun<'a> {
    pub(crate) fn new(cfg: &MultiscaleConfig, slow: &SlowModel, fbar: &'a AveragedDrift) -> Result<Self> {
        let h = cfg.step();
        Ok(Self {
            trig: TrigStep::new(&slow.basis, h),
            w1: WaveConvolution::new(&slow.q, slow.sigma, h, &slow.basis)?,
            fbar,
            scratch: GridScratch::new(fbar.collocation()),
            drift: vec![0.0; slow.basis.modes()],
            steps: cfg.slow_steps(),
            h,
        })
    }

    #[inline]
    pub(crate) fn step<R: Rng + ?Sized>(&mut self, x: &mut WaveState, rng: &mut R) {
        self.fbar.eval_into(x.u.coeffs(), &mut self.scratch, &mut self.drift);
        self.trig.apply(&mut x.u.0, &mut x.v.0, &self.drift);
        self.w1.add_sample(&mut x.u.0, &mut x.v.0, rng);
    }
}

/// `‖V_t‖² + ‖U_t‖₁²` (the squared graph norm `‖|𝒜X_t|‖²`) along a path.
pub fn graph_norm_diagnostic(path: &SlowPath, basis: &SpectralBasis) -> Result<Vec<(f64, f64)>> {
    path.snapshots
        .iter()
        .map(|(t, x)| {
            let u1 = basis.sobolev_norm(&x.u, 1.0)?;
            let v0 = basis.sobolev_norm(&x.v, 0.0)?;
            Ok((*t, v0 * v0 + u1 * u1))
        })
        .collect()
}
