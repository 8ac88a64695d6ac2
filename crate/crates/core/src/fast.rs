//! The fast reaction-diffusion process `dY = (AY + g(Y))dτ + σ₂ dW²` on its
//! own clock, integrated by exponential Euler with exact heat-convolution
//! noise, plus mixing and invariant-measure diagnostics.

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::noise::{HeatConvolution, QWienerSpec};
use crate::nonlinearity::{GridScratch, ReactionSpec};
use crate::spectral::{Collocation, SpectralBasis, SpectralField};

/// Everything needed to step the fast equation.
#[derive(Debug, Clone)]
pub struct FastModel {
    pub basis: SpectralBasis,
    pub q: QWienerSpec,
    pub sigma: f64,
    pub reaction: ReactionSpec,
    pub colloc: Collocation,
}

impl FastModel {
    pub fn new(basis: SpectralBasis, q: QWienerSpec, sigma: f64, reaction: ReactionSpec) -> Result<Self> {
        check_dim(basis.modes(), q.len())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config("noise.sigma2", "noise intensity must be non-negative"));
        }
        let colloc = basis.default_collocation();
        Ok(Self {
            basis,
            q,
            sigma,
            reaction,
            colloc,
        })
    }

    /// `η = α₁ - L_g`.
    pub fn mixing_rate(&self) -> Result<f64> {
        self.reaction.mixing_rate(&self.basis)
    }

    /// Largest fast-clock step that keeps the explicit reaction term accurate;
    /// unbounded when `g ≡ 0` because each step is then exact in law.
    pub fn accuracy_step_bound(&self) -> f64 {
        if self.reaction.is_zero() {
            f64::INFINITY
        } else {
            0.1 / self.basis.alpha_max()
        }
    }

    /// Stationary per-mode variances when `g ≡ 0`.
    pub fn ou_variances(&self) -> Vec<f64> {
        crate::nonlinearity::ou_stationary_variances(&self.basis, self.q.lambdas(), self.sigma)
    }

    pub fn stepper(&self, h: f64) -> Result<FastStepper<'_>> {
        FastStepper::new(self, h)
    }
}

/// Precomputed exponential-Euler step of fixed size.
#[derive(Debug, Clone)]
pub struct FastStepper<'a> {
    model: &'a FastModel,
    h: f64,
    decay: Vec<f64>,
    noise: HeatConvolution,
    scratch: GridScratch,
    g: Vec<f64>,
}

impl<'a> FastStepper<'a> {
    fn new(model: &'a FastModel, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::usage(format!("fast step must be positive, got {h}")));
        }
        Ok(Self {
            model,
            h,
            decay: model.basis.alphas().iter().map(|a| (-a * h).exp()).collect(),
            noise: HeatConvolution::new(&model.q, model.sigma, h, &model.basis)?,
            scratch: GridScratch::new(&model.colloc),
            g: vec![0.0; model.basis.modes()],
        })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// `y ← E_h(y + h g(y)) + σ₂ ∫ E_{h-s} dW²`.
    pub fn step<R: Rng + ?Sized>(&mut self, y: &mut [f64], rng: &mut R) {
        self.step_drift(y);
        self.noise.add_sample(y, rng);
    }

    /// Deterministic part of the step; shared-noise diagnostics add the
    /// noise themselves.
    fn step_drift(&mut self, y: &mut [f64]) {
        if !self.model.reaction.is_zero() {
            self.model
                .reaction
                .eval_into(&self.model.colloc, y, &mut self.scratch, &mut self.g);
            for (yk, gk) in y.iter_mut().zip(&self.g) {
                *yk += self.h * gk;
            }
        }
        for (yk, d) in y.iter_mut().zip(&self.decay) {
            *yk *= d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FastState {
    pub y: SpectralField,
    /// Elapsed fast time.
    pub tau: f64,
}

impl FastState {
    pub fn new(y: SpectralField) -> Self {
        Self { y, tau: 0.0 }
    }
}

pub fn step_fast<R: Rng + ?Sized>(state: &FastState, h: f64, model: &FastModel, rng: &mut R) -> Result<FastState> {
    check_dim(model.basis.modes(), state.y.len())?;
    let mut stepper = model.stepper(h)?;
    let mut y = state.y.clone();
    stepper.step(y.coeffs_mut(), rng);
    Ok(FastState {
        y,
        tau: state.tau + h,
    })
}

#[derive(Debug, Clone)]
pub struct FastRun {
    pub terminal: FastState,
    /// `(τ, Y_τ)` every `snapshot_every` steps, including `τ = 0` and the terminal state.
    pub snapshots: Vec<(f64, SpectralField)>,
}

/// Integrates to fast time `horizon` with `⌈horizon/h⌉` equal steps (the step
/// is shrunk so the last one lands exactly on `horizon`).
pub fn simulate_fast<R: Rng + ?Sized>(
    y0: &SpectralField,
    horizon: f64,
    h: f64,
    model: &FastModel,
    rng: &mut R,
    snapshot_every: Option<usize>,
) -> Result<FastRun> {
    check_dim(model.basis.modes(), y0.len())?;
    if !(horizon >= 0.0) {
        return Err(Error::usage(format!("horizon must be non-negative, got {horizon}")));
    }
    let mut snapshots = Vec::new();
    if snapshot_every.is_some() {
        snapshots.push((0.0, y0.clone()));
    }
    if horizon == 0.0 {
        return Ok(FastRun {
            terminal: FastState::new(y0.clone()),
            snapshots,
        });
    }
    if !(h > 0.0 && h <= horizon) {
        return Err(Error::usage(format!("fast step must lie in (0, {horizon}], got {h}")));
    }
    let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
    let dt = horizon / steps as f64;
    let mut stepper = model.stepper(dt)?;
    let mut y = y0.clone();
    for i in 1..=steps {
        stepper.step(y.coeffs_mut(), rng);
        if let Some(every) = snapshot_every {
            if i % every.max(1) == 0 || i == steps {
                snapshots.push((i as f64 * dt, y.clone()));
            }
        }
    }
    Ok(FastRun {
        terminal: FastState { y, tau: horizon },
        snapshots,
    })
}

/// Two trajectories driven by the same noise path.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionCurve {
    pub times: Vec<f64>,
    pub differences: Vec<SpectralField>,
    pub sq_distances: Vec<f64>,
    /// Least-squares rate `r` in `‖Y_t(y) - Y_t(y')‖² ≈ C e^{-r t}`.
    pub fitted_rate: f64,
}

pub fn contraction_diagnostic<R: Rng + ?Sized>(
    y: &SpectralField,
    y2: &SpectralField,
    horizon: f64,
    h: f64,
    model: &FastModel,
    rng: &mut R,
) -> Result<ContractionCurve> {
    check_dim(model.basis.modes(), y.len())?;
    check_dim(model.basis.modes(), y2.len())?;
    if !(h > 0.0 && horizon >= h) {
        return Err(Error::usage("contraction diagnostic needs 0 < h <= horizon"));
    }
    let steps = (horizon / h - 1e-9).ceil() as usize;
    let dt = horizon / steps as f64;
    let mut a = model.stepper(dt)?;
    let mut b = model.stepper(dt)?;
    let noise = HeatConvolution::new(&model.q, model.sigma, dt, &model.basis)?;
    let (mut ya, mut yb) = (y.clone(), y2.clone());
    // The shared noise cancels in the difference; propagating the difference
    // through its own (deterministic) dynamics avoids the cancellation error.
    let mut d = ya.sub(&yb);
    let mut times = vec![0.0];
    let mut differences = vec![d.clone()];
    let mut ga = vec![0.0; d.len()];
    let mut gb = vec![0.0; d.len()];
    let mut scratch = GridScratch::new(&model.colloc);
    for i in 1..=steps {
        if !model.reaction.is_zero() {
            model.reaction.eval_into(&model.colloc, ya.coeffs(), &mut scratch, &mut ga);
            model.reaction.eval_into(&model.colloc, yb.coeffs(), &mut scratch, &mut gb);
            for ((dk, a), b) in d.coeffs_mut().iter_mut().zip(&ga).zip(&gb) {
                *dk += dt * (a - b);
            }
        }
        for (dk, decay) in d.coeffs_mut().iter_mut().zip(&a.decay) {
            *dk *= decay;
        }
        a.step_drift(ya.coeffs_mut());
        b.step_drift(yb.coeffs_mut());
        let z = noise.sample(rng);
        ya.axpy(1.0, &z);
        yb.axpy(1.0, &z);
        times.push(i as f64 * dt);
        differences.push(d.clone());
    }
    let sq_distances: Vec<f64> = differences.iter().map(|d| d.dot(d)).collect();
    let fitted_rate = fit_decay_rate(&times, &sq_distances);
    Ok(ContractionCurve {
        times,
        differences,
        sq_distances,
        fitted_rate,
    })
}

/// Slope of `-ln d` against `t` over the strictly positive entries.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 1e-280)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -sxy / sxx
}

/// Approximate draws from the invariant measure `μ`, thinned from one long
/// trajectory started at zero.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantSample {
    pub samples: Vec<SpectralField>,
    pub burn_in: f64,
    pub thinning: f64,
}

impl InvariantSample {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mode_means(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mut m = vec![0.0; self.samples.first().map_or(0, |s| s.len())];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s.coeffs()) {
                *a += b / n;
            }
        }
        m
    }

    /// Unbiased per-mode sample variances.
    pub fn mode_variances(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mean = self.mode_means();
        let mut v = vec![0.0; mean.len()];
        for s in &self.samples {
            for ((a, b), m) in v.iter_mut().zip(s.coeffs()).zip(&mean) {
                *a += (b - m).powi(2);
            }
        }
        v.iter_mut().for_each(|a| *a /= n - 1.0);
        v
    }

    /// `(1/n) Σ ‖y_i‖²`.
    pub fn second_moment(&self) -> f64 {
        self.samples.iter().map(|s| s.dot(s)).sum::<f64>() / self.samples.len() as f64
    }
}

/// Burn-in, count and spacing for invariant sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantSettings {
    pub burn_in: f64,
    pub n: usize,
    pub thin: f64,
}

impl InvariantSettings {
    /// `burn_in = 10/η`, `thin = 1/η`.
    pub fn for_rate(eta: f64, n: usize) -> Self {
        Self {
            burn_in: 10.0 / eta,
            n,
            thin: 1.0 / eta,
        }
    }
}

pub fn sample_invariant<R: Rng + ?Sized>(
    model: &FastModel,
    settings: InvariantSettings,
    h: f64,
    rng: &mut R,
) -> Result<InvariantSample> {
    model.mixing_rate()?;
    let InvariantSettings { burn_in, n, thin } = settings;
    if !(burn_in >= 0.0 && thin > 0.0 && h > 0.0) {
        return Err(Error::usage("invariant sampling needs burn_in >= 0, thin > 0, h > 0"));
    }
    let h = h.min(thin);
    let per_thin = (thin / h - 1e-9).ceil() as usize;
    let dt = thin / per_thin as f64;
    let burn_steps = (burn_in / dt).ceil() as usize;
    let mut stepper = model.stepper(dt)?;
    let mut y = vec![0.0; model.basis.modes()];
    for _ in 0..burn_steps {
        stepper.step(&mut y, rng);
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..per_thin {
            stepper.step(&mut y, rng);
        }
        samples.push(SpectralField(y.clone()));
    }
    Ok(InvariantSample {
        samples,
        burn_in: burn_steps as f64 * dt,
        thinning: thin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::ScalarFn;
    use crate::rng::{Purpose, RngStream};

    fn model(n: usize, sigma: f64, reaction: ReactionSpec) -> FastModel {
        let b = SpectralBasis::new(1.0, n).unwrap();
        FastModel::new(b, QWienerSpec::default_for(n), sigma, reaction).unwrap()
    }

    #[test]
    fn linear_noiseless_step_is_exact_decay() {
        let m = model(4, 0.0, ReactionSpec::zero());
        let y = FastState::new(SpectralField::new(vec![1.0, -0.5, 0.25, 2.0]).unwrap());
        let mut rng = RngStream::new(0, Purpose::Diagnostic).at(0);
        let out = step_fast(&y, 0.013, &m, &mut rng).unwrap();
        for k in 0..4 {
            let want = y.y.coeffs()[k] * (-m.basis.alphas()[k] * 0.013).exp();
            assert!((out.y.coeffs()[k] - want).abs() <= 1e-15 * want.abs().max(1e-300));
        }
        assert_eq!(out.tau, 0.013);
    }

    #[test]
    fn simulate_edge_cases() {
        let m = model(4, 0.0, ReactionSpec::zero());
        let y0 = SpectralField::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = RngStream::new(0, Purpose::Diagnostic).at(0);
        let run = simulate_fast(&y0, 0.0, 0.1, &m, &mut rng, None).unwrap();
        assert_eq!(run.terminal.y, y0);
        // Linear noiseless: reproduces the heat semigroup for any step.
        for h in [0.3, 0.01, 0.0007] {
            let run = simulate_fast(&y0, 0.3, h, &m, &mut rng, Some(10)).unwrap();
            let exact = m.basis.apply_heat_semigroup(&y0, 0.3).unwrap();
            for k in 0..4 {
                let e = exact.coeffs()[k];
                assert!((run.terminal.y.coeffs()[k] - e).abs() <= 1e-12 * e.abs().max(1e-300), "h={h}");
            }
            assert_eq!(run.snapshots.last().unwrap().0, 0.3);
        }
    }

    #[test]
    fn small_step_is_continuous() {
        let m = model(6, 0.5, ReactionSpec::new(ScalarFn::ScaledTanh { a: 2.0 }).unwrap());
        let y = FastState::new(SpectralField::unit(6, 0));
        let s = RngStream::new(1, Purpose::Diagnostic);
        let d = |h: f64| step_fast(&y, h, &m, &mut s.at(0)).unwrap().y.sub(&y.y).norm();
        assert!(d(1e-8) < d(1e-4));
        assert!(d(1e-8) < 1e-3);
    }

    #[test]
    fn contraction_linear_case_exact() {
        let m = model(5, 0.5, ReactionSpec::zero());
        let y = SpectralField::new(vec![1.0, 0.5, -0.3, 0.2, 0.1]).unwrap();
        let y2 = SpectralField::zeros(5);
        let mut rng = RngStream::new(2, Purpose::Diagnostic).at(0);
        let c = contraction_diagnostic(&y, &y2, 0.2, 0.01, &m, &mut rng).unwrap();
        for (t, d) in c.times.iter().zip(&c.differences) {
            for k in 0..5 {
                let want = (-m.basis.alphas()[k] * t).exp() * y.coeffs()[k];
                let got = d.coeffs()[k];
                assert!((got - want).abs() <= 1e-12 * want.abs(), "t={t} k={k}");
            }
        }
        let same = contraction_diagnostic(&y, &y, 0.2, 0.01, &m, &mut rng).unwrap();
        assert!(same.sq_distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn contraction_nonlinear_rate() {
        let b = SpectralBasis::new(1.0, 8).unwrap();
        let a = 0.6 * b.alpha_1();
        let m = FastModel::new(
            b,
            QWienerSpec::default_for(8),
            0.5,
            ReactionSpec::new(ScalarFn::ScaledTanh { a }).unwrap(),
        )
        .unwrap();
        let eta = m.mixing_rate().unwrap();
        let y = SpectralField::unit(8, 0).scaled(2.0);
        let y2 = SpectralField::unit(8, 1).scaled(-1.0);
        let mut rng = RngStream::new(3, Purpose::Diagnostic).at(0);
        let c = contraction_diagnostic(&y, &y2, 1.0, 1e-3, &m, &mut rng).unwrap();
        assert!(c.fitted_rate >= 0.9 * eta, "{} vs {eta}", c.fitted_rate);
        let d0 = c.sq_distances[0].sqrt();
        for (t, d) in c.times.iter().zip(&c.sq_distances) {
            assert!(d.sqrt() <= (-eta * t / 2.0).exp() * d0 * 1.1);
        }
    }

    #[test]
    fn invariant_rejects_non_dissipative() {
        let b = SpectralBasis::new(1.0, 4).unwrap();
        let a = b.alpha_1();
        let m = FastModel::new(b, QWienerSpec::default_for(4), 0.5, ReactionSpec::new(ScalarFn::ScaledTanh { a }).unwrap())
            .unwrap();
        let mut rng = RngStream::new(0, Purpose::Diagnostic).at(0);
        let s = InvariantSettings {
            burn_in: 1.0,
            n: 10,
            thin: 0.1,
        };
        assert!(matches!(sample_invariant(&m, s, 0.01, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn ou_invariant_moments() {
        let m = model(6, 0.5, ReactionSpec::zero());
        let eta = m.mixing_rate().unwrap();
        let settings = InvariantSettings::for_rate(eta, 10_000);
        let mut rng = RngStream::new(4, Purpose::Invariant).at(0);
        let inv = sample_invariant(&m, settings, settings.thin, &mut rng).unwrap();
        let want = m.ou_variances();
        let var = inv.mode_variances();
        let mean = inv.mode_means();
        for k in 0..6 {
            assert!((var[k] / want[k] - 1.0).abs() < 0.05, "mode {k}: {} vs {}", var[k], want[k]);
            // lag-one autocorrelation e^{-α_k thin} inflates the standard error
            let rho = (-m.basis.alphas()[k] * settings.thin).exp();
            let se = (want[k] / 1e4 * (1.0 + rho) / (1.0 - rho)).sqrt();
            assert!(mean[k].abs() < 3.0 * se, "mode {k} mean {}", mean[k]);
        }
    }

    #[test]
    fn ou_long_run_variance_via_stepping() {
        // Many short steps instead of exact thinning steps.
        let m = model(3, 0.5, ReactionSpec::zero());
        let eta = m.mixing_rate().unwrap();
        let settings = InvariantSettings::for_rate(eta, 10_000);
        let mut rng = RngStream::new(5, Purpose::Invariant).at(0);
        let inv = sample_invariant(&m, settings, settings.thin / 7.0, &mut rng).unwrap();
        let want = m.ou_variances();
        for (v, w) in inv.mode_variances().iter().zip(&want) {
            assert!((v / w - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn second_moment_stable_across_seeds() {
        let m = model(8, 0.5, ReactionSpec::new(ScalarFn::ScaledTanh { a: 3.0 }).unwrap());
        let eta = m.mixing_rate().unwrap();
        let settings = InvariantSettings::for_rate(eta, 2000);
        let h = m.accuracy_step_bound().max(1e-3);
        let a = sample_invariant(&m, settings, h, &mut RngStream::new(6, Purpose::Invariant).at(0)).unwrap();
        let b = sample_invariant(&m, settings, h, &mut RngStream::new(7, Purpose::Invariant).at(0)).unwrap();
        let (ma, mb) = (a.second_moment(), b.second_moment());
        assert!(ma.is_finite() && mb.is_finite());
        assert!((ma / mb - 1.0).abs() < 0.1, "{ma} vs {mb}");
    }
}
