//! TOML experiment configuration, validation, presets and construction of the
//! simulation objects.
//!
//! Validation reports every violation at once, each tagged with the dotted
//! path of the offending field. No simulation work happens before it passes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{CorrectorSettings, Experiment, TestFunctional};
use crate::error::{Error, Result, Violation};
use crate::fast::{sample_invariant, FastModel, InvariantSettings};
use crate::noise::QWienerSpec;
use crate::nonlinearity::{AveragedDrift, CouplingSpec, ReactionSpec, ScalarFn};
use crate::rng::{Purpose, RngStream};
use crate::slow::{MultiscaleConfig, SlowModel};
use crate::spectral::{SpectralBasis, SpectralField, WaveState};

const SMOKE: &str = include_str!("../presets/smoke.toml");
const ACCEPTANCE: &str = include_str!("../presets/acceptance.toml");
const OU: &str = include_str!("../presets/ou.toml");

/// Names accepted by [`ConfigFile::preset`].
pub const PRESETS: [&str; 3] = ["smoke", "acceptance", "ou"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub modes: usize,
}

/// Eigenvalues of `Q` as an explicit list or the power law `λ_k = c k^{-p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumSpec {
    List(Vec<f64>),
    PowerLaw { c: f64, p: f64 },
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec::PowerLaw { c: 1.0, p: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma1: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub lambda1: SpectrumSpec,
    #[serde(default)]
    pub lambda2: SpectrumSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub kind: String,
    #[serde(default)]
    pub f1: Option<String>,
    #[serde(default)]
    pub f2: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub reaction: String,
    #[serde(rename = "F")]
    pub coupling: CouplingSection,
}

/// Initial data: a named preset or explicit coefficient lists (shorter lists
/// are padded with zeros).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub x1: Option<Vec<f64>>,
    #[serde(default)]
    pub x2: Option<Vec<f64>>,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub h_slow: f64,
    pub micro_ratio: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    #[serde(rename = "M")]
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSection {
    pub kind: String,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub c: Option<f64>,
}

impl Default for FunctionalSection {
    fn default() -> Self {
        Self {
            kind: "bounded_projection".into(),
            w: None,
            c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbarSection {
    pub mode: String,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub thin: Option<f64>,
    /// Fast step used for invariant sampling.
    #[serde(default)]
    pub h: Option<f64>,
}

impl Default for FbarSection {
    fn default() -> Self {
        Self {
            mode: "oracle".into(),
            burn_in: None,
            n: None,
            thin: None,
            h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_inner")]
    pub inner_replicas: usize,
    #[serde(default)]
    pub outer_replicas: Option<usize>,
    #[serde(default = "default_ds")]
    pub ds: f64,
}

fn default_tol() -> f64 {
    1e-3
}
fn default_inner() -> usize {
    4096
}
fn default_ds() -> f64 {
    2.5e-3
}

impl Default for CorrectorSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            inner_replicas: default_inner(),
            outer_replicas: None,
            ds: default_ds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Number of invariant samples for the moment check.
    #[serde(default = "default_samples")]
    pub invariant_samples: usize,
    /// Inner replicas for the decay check.
    #[serde(default = "default_inner")]
    pub inner_replicas: usize,
    /// Slow steps of the free-wave graph-norm run.
    #[serde(default = "default_wave_steps")]
    pub wave_steps: usize,
}

fn default_samples() -> usize {
    10_000
}
fn default_wave_steps() -> usize {
    1000
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            invariant_samples: default_samples(),
            inner_replicas: default_inner(),
            wave_steps: default_wave_steps(),
        }
    }
}

/// The configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub basis: BasisSection,
    pub noise: NoiseSection,
    pub nonlinearities: NonlinearitySection,
    #[serde(default)]
    pub initial: InitialSection,
    pub numerics: NumericsSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub functional: FunctionalSection,
    #[serde(default)]
    pub fbar: FbarSection,
    #[serde(default)]
    pub corrector: CorrectorSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "smoke" => SMOKE,
            "acceptance" => ACCEPTANCE,
            "ou" => OU,
            other => {
                return Err(Error::usage(format!(
                    "unknown preset {other:?} (available: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config sections always serialize")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// How `F̄` is frozen before the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FbarMode {
    Oracle,
    Ergodic { settings: InvariantSettings, h: f64 },
}

/// A configuration that passed validation, with all catalog entries parsed.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub basis: SpectralBasis,
    pub q1: QWienerSpec,
    pub q2: QWienerSpec,
    pub reaction: ReactionSpec,
    pub coupling: CouplingSpec,
    pub x0: WaveState,
    pub y0: SpectralField,
    pub phi: TestFunctional,
    pub fbar_mode: FbarMode,
    pub corrector: CorrectorSettings,
    pub eta: f64,
}

impl ExperimentConfig {
    pub fn epsilons(&self) -> &[f64] {
        &self.file.sweep.epsilons
    }

    pub fn replicas(&self) -> usize {
        self.file.sweep.replicas
    }

    pub fn seed(&self) -> u64 {
        self.file.sweep.seed
    }

    pub fn fast_model(&self) -> FastModel {
        FastModel::new(self.basis.clone(), self.q2.clone(), self.file.noise.sigma2, self.reaction)
            .expect("validated")
    }

    pub fn slow_model(&self) -> SlowModel {
        SlowModel::new(self.basis.clone(), self.q1.clone(), self.file.noise.sigma1, self.coupling)
            .expect("validated")
    }

    /// Freezes `F̄` (sampling `μ` when in ergodic mode) and assembles the experiment.
    pub fn build(&self) -> Result<Experiment> {
        let slow = self.slow_model();
        let fast = self.fast_model();
        let fbar = self.freeze_fbar(&slow, &fast)?;
        let n = &self.file.numerics;
        Ok(Experiment {
            slow,
            fast,
            fbar,
            phi: self.phi.clone(),
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            h_slow: n.h_slow,
            micro_ratio: n.micro_ratio,
            horizon: n.horizon,
        })
    }

    pub fn freeze_fbar(&self, slow: &SlowModel, fast: &FastModel) -> Result<AveragedDrift> {
        match self.fbar_mode {
            FbarMode::Oracle => AveragedDrift::oracle(&self.coupling, &self.reaction, &fast.ou_variances(), &slow.colloc),
            FbarMode::Ergodic { settings, h } => {
                let mut rng = RngStream::new(self.seed(), Purpose::Invariant).at(0);
                let inv = sample_invariant(fast, settings, h, &mut rng)?;
                AveragedDrift::ergodic(&self.coupling, &inv, &slow.colloc)
            }
        }
    }
}

fn spectrum(spec: &SpectrumSpec, n: usize, field: &str, v: &mut Vec<Violation>) -> Option<QWienerSpec> {
    let out = match spec {
        SpectrumSpec::List(l) => {
            if l.len() != n {
                v.push(Violation::new(field, format!("expected {n} eigenvalues, got {}", l.len())));
                return None;
            }
            QWienerSpec::new(l.clone())
        }
        SpectrumSpec::PowerLaw { c, p } => QWienerSpec::power_law(n, *c, *p),
    };
    out.map_err(|e| v.push(Violation::new(field, e.to_string()))).ok()
}

fn scalar(text: &str, field: &str, v: &mut Vec<Violation>) -> Option<ScalarFn> {
    text.parse::<ScalarFn>()
        .map_err(|e| v.push(Violation::new(field, e.to_string())))
        .ok()
}

fn coefficients(list: &Option<Vec<f64>>, n: usize, field: &str, v: &mut Vec<Violation>) -> Option<SpectralField> {
    let list = list.as_deref().unwrap_or(&[]);
    if list.len() > n {
        v.push(Violation::new(field, format!("{} coefficients for {n} modes", list.len())));
        return None;
    }
    if list.iter().any(|x| !x.is_finite()) {
        v.push(Violation::new(field, "coefficients must be finite"));
        return None;
    }
    let mut c = list.to_vec();
    c.resize(n, 0.0);
    Some(SpectralField::new(c).expect("finite"))
}

/// Named initial data: `single_mode` puts coefficient one on the first mode of
/// `x₁` and `y`; `smooth_bump` uses coefficients `k^{-3}` for both.
fn initial_preset(name: &str, n: usize) -> Option<(WaveState, SpectralField)> {
    match name {
        "single_mode" => Some((
            WaveState {
                u: SpectralField::unit(n, 0),
                v: SpectralField::zeros(n),
            },
            SpectralField::unit(n, 0),
        )),
        "smooth_bump" => {
            let c: Vec<f64> = (1..=n).map(|k| (k as f64).powi(-3)).collect();
            let f = SpectralField::new(c).expect("finite");
            Some((
                WaveState {
                    u: f.clone(),
                    v: SpectralField::zeros(n),
                },
                f,
            ))
        }
        _ => None,
    }
}

/// Checks every field and cross-field constraint, returning the parsed
/// configuration or the full list of violations.
pub fn validate_config(file: &ConfigFile) -> Result<ExperimentConfig> {
    let mut v = Vec::new();
    let basis = SpectralBasis::new(file.basis.length, file.basis.modes)
        .map_err(|_| {
            if !(file.basis.length > 0.0 && file.basis.length.is_finite()) {
                v.push(Violation::new("basis.L", "domain length must be positive"));
            }
            if file.basis.modes == 0 {
                v.push(Violation::new("basis.N", "need at least one mode"));
            }
        })
        .ok();
    let n = file.basis.modes;

    let noise = &file.noise;
    for (name, s) in [("noise.sigma1", noise.sigma1), ("noise.sigma2", noise.sigma2)] {
        if !(s >= 0.0 && s.is_finite()) {
            v.push(Violation::new(name, "noise intensity must be finite and non-negative"));
        }
    }
    let q1 = spectrum(&noise.lambda1, n, "noise.lambda1", &mut v);
    let q2 = spectrum(&noise.lambda2, n, "noise.lambda2", &mut v);

    let nl = &file.nonlinearities;
    let reaction = scalar(&nl.reaction, "nonlinearities.reaction", &mut v).and_then(|g| {
        ReactionSpec::new(g)
            .map_err(|e| v.push(Violation::new("nonlinearities.reaction", e.to_string())))
            .ok()
    });
    let mut eta = f64::NAN;
    if let (Some(g), Some(b)) = (&reaction, &basis) {
        match g.mixing_rate(b) {
            Ok(rate) => eta = rate,
            Err(Error::Config(mut errs)) => v.append(&mut errs),
            Err(e) => v.push(Violation::new("nonlinearities.reaction", e.to_string())),
        }
    }
    let coupling = match nl.coupling.kind.as_str() {
        "separable" => {
            let f1 = nl.coupling.f1.as_deref().unwrap_or("zero");
            let f2 = nl.coupling.f2.as_deref().unwrap_or("zero");
            let f1 = scalar(f1, "nonlinearities.F.f1", &mut v);
            let f2 = scalar(f2, "nonlinearities.F.f2", &mut v);
            f1.zip(f2).map(|(a, b)| CouplingSpec::separable(a, b))
        }
        "entangled_sin" => {
            if nl.coupling.f1.is_some() || nl.coupling.f2.is_some() {
                v.push(Violation::new("nonlinearities.F", "entangled_sin takes no f1/f2"));
            }
            Some(CouplingSpec::EntangledSin)
        }
        other => {
            v.push(Violation::new(
                "nonlinearities.F.kind",
                format!("unknown coupling {other:?} (expected separable or entangled_sin)"),
            ));
            None
        }
    };

    let init = &file.initial;
    let explicit = init.x1.is_some() || init.x2.is_some() || init.y.is_some();
    let initial = match (&init.preset, explicit) {
        (Some(_), true) => {
            v.push(Violation::new("initial", "give either a preset or coefficient lists, not both"));
            None
        }
        (Some(name), false) => initial_preset(name, n).or_else(|| {
            v.push(Violation::new(
                "initial.preset",
                format!("unknown preset {name:?} (expected single_mode or smooth_bump)"),
            ));
            None
        }),
        (None, true) => {
            let x1 = coefficients(&init.x1, n, "initial.x1", &mut v);
            let x2 = coefficients(&init.x2, n, "initial.x2", &mut v);
            let y = coefficients(&init.y, n, "initial.y", &mut v);
            match (x1, x2, y) {
                (Some(u), Some(w), Some(y)) => Some((WaveState { u, v: w }, y)),
                _ => None,
            }
        }
        (None, false) => initial_preset("single_mode", n),
    };

    let num = &file.numerics;
    if num.micro_ratio == 0 {
        v.push(Violation::new("numerics.micro_ratio", "need at least one fast sub-step"));
    }
    if !(num.h_slow > 0.0 && num.h_slow.is_finite()) {
        v.push(Violation::new("numerics.h_slow", "slow step must be positive"));
    }
    if !(num.horizon > 0.0 && num.horizon.is_finite()) {
        v.push(Violation::new("numerics.T", "horizon must be positive"));
    } else if num.h_slow > num.horizon {
        v.push(Violation::new("numerics.h_slow", "slow step exceeds the horizon"));
    }

    let sweep = &file.sweep;
    if sweep.epsilons.is_empty() {
        v.push(Violation::new("sweep.epsilons", "need at least one epsilon"));
    }
    for (i, e) in sweep.epsilons.iter().enumerate() {
        if !(*e > 0.0 && *e <= 1.0) {
            v.push(Violation::new(format!("sweep.epsilons[{i}]"), format!("{e} outside (0, 1]")));
        }
    }
    if sweep.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        v.push(Violation::new("sweep.epsilons", "values must be distinct and sorted descending"));
    }
    if sweep.replicas < 2 {
        v.push(Violation::new("sweep.M", "need at least 2 replicas"));
    }
    if v.iter().all(|x| !x.field.starts_with("numerics") && !x.field.starts_with("sweep")) {
        if let (Some(g), Some(b), Some(q)) = (&reaction, &basis, &q2) {
            if let Ok(fast) = FastModel::new(b.clone(), q.clone(), noise.sigma2.max(0.0), *g) {
                for e in &sweep.epsilons {
                    let c = MultiscaleConfig::new(*e, num.h_slow, num.micro_ratio, num.horizon).adapted_to(&fast);
                    if let Err(Error::Config(mut errs)) = c.validate() {
                        v.append(&mut errs);
                    }
                }
            }
        }
    }

    let f = &file.functional;
    let phi = match f.kind.as_str() {
        "bounded_projection" => coefficients(&f.w.clone().or(Some(vec![1.0])), n, "functional.w", &mut v).map(|w| {
            TestFunctional::BoundedProjection { w, c: f.c.unwrap_or(0.5) }
        }),
        "gaussian_bump" => {
            if f.w.is_some() || f.c.is_some() {
                v.push(Violation::new("functional", "gaussian_bump takes no w/c"));
            }
            Some(TestFunctional::GaussianBump)
        }
        other => {
            v.push(Violation::new(
                "functional.kind",
                format!("unknown functional {other:?} (expected bounded_projection or gaussian_bump)"),
            ));
            None
        }
    };
    if let Some(c) = f.c {
        if !c.is_finite() {
            v.push(Violation::new("functional.c", "must be finite"));
        }
    }

    let fb = &file.fbar;
    let fbar_mode = match fb.mode.as_str() {
        "oracle" => {
            if fb.burn_in.is_some() || fb.n.is_some() || fb.thin.is_some() || fb.h.is_some() {
                v.push(Violation::new("fbar", "burn_in/n/thin/h apply to ergodic mode only"));
            }
            if reaction.is_some_and(|g| !g.is_zero()) {
                v.push(Violation::new("fbar.mode", "oracle needs an Ornstein-Uhlenbeck fast process (reaction = zero)"));
            }
            if matches!(coupling, Some(CouplingSpec::EntangledSin)) {
                v.push(Violation::new("fbar.mode", "oracle needs a separable coupling"));
            }
            Some(FbarMode::Oracle)
        }
        "ergodic" => {
            let base = InvariantSettings::for_rate(if eta.is_finite() { eta } else { 1.0 }, fb.n.unwrap_or(4096));
            let settings = InvariantSettings {
                burn_in: fb.burn_in.unwrap_or(base.burn_in),
                n: base.n,
                thin: fb.thin.unwrap_or(base.thin),
            };
            if !(settings.burn_in >= 0.0 && settings.burn_in.is_finite()) {
                v.push(Violation::new("fbar.burn_in", "must be finite and non-negative"));
            }
            if settings.n == 0 {
                v.push(Violation::new("fbar.n", "need at least one sample"));
            }
            if !(settings.thin > 0.0 && settings.thin.is_finite()) {
                v.push(Violation::new("fbar.thin", "must be positive"));
            }
            let h = fb.h.unwrap_or(match &basis {
                Some(b) if reaction.is_some_and(|g| !g.is_zero()) => 0.1 / b.alpha_max(),
                _ => settings.thin,
            });
            if !(h > 0.0 && h.is_finite()) {
                v.push(Violation::new("fbar.h", "must be positive"));
            }
            Some(FbarMode::Ergodic { settings, h })
        }
        other => {
            v.push(Violation::new("fbar.mode", format!("unknown mode {other:?} (expected oracle or ergodic)")));
            None
        }
    };

    let c = &file.corrector;
    if !(c.tol > 0.0 && c.tol < 1.0) {
        v.push(Violation::new("corrector.tol", "must lie in (0, 1)"));
    }
    if c.inner_replicas < 2 {
        v.push(Violation::new("corrector.inner_replicas", "need at least 2"));
    }
    if c.outer_replicas.is_some_and(|m| m < 2) {
        v.push(Violation::new("corrector.outer_replicas", "need at least 2"));
    }
    if !(c.ds > 0.0 && c.ds.is_finite()) {
        v.push(Violation::new("corrector.ds", "must be positive"));
    }
    let d = &file.diagnostics;
    if d.invariant_samples < 2 {
        v.push(Violation::new("diagnostics.invariant_samples", "need at least 2"));
    }
    if d.inner_replicas < 2 {
        v.push(Violation::new("diagnostics.inner_replicas", "need at least 2"));
    }
    if d.wave_steps == 0 {
        v.push(Violation::new("diagnostics.wave_steps", "need at least one step"));
    }

    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let (x0, y0) = initial.expect("checked");
    Ok(ExperimentConfig {
        file: file.clone(),
        basis: basis.expect("checked"),
        q1: q1.expect("checked"),
        q2: q2.expect("checked"),
        reaction: reaction.expect("checked"),
        coupling: coupling.expect("checked"),
        x0,
        y0,
        phi: phi.expect("checked"),
        fbar_mode: fbar_mode.expect("checked"),
        corrector: CorrectorSettings {
            tol: c.tol,
            inner_replicas: c.inner_replicas,
            outer_replicas: c.outer_replicas.unwrap_or(sweep.replicas),
            ds: c.ds,
        },
        eta,
    })
}
