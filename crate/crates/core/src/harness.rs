//! Experiment orchestration and result persistence.
//!
//! All simulation work finishes before the first file is written, and a
//! failed write removes whatever this run had already created, so an output
//! directory holds either a complete result set or nothing new.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    corrector_u1, expansion_residual, fbar_decay_check, order_fit, small_epsilon_slope, weak_error_sweep,
    CorrectorEstimate, DecayCheck, FitStatus, OrderFit, ResidualTable, WeakErrorPoint,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fast::{contraction_diagnostic, sample_invariant, InvariantSettings};
use crate::nonlinearity::{dfbar_exchange_check, ExchangeReport};
use crate::rng::{Purpose, RngStream};
use crate::slow::{graph_norm_diagnostic, simulate_coupled, ReplicaNoise};
use crate::spectral::{SpectralField, WaveState};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "epsilon,mean_diff,stderr,replicas,seed";
pub const REPORT_JSON: &str = "report.json";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_TOML: &str = "config.toml";

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedInfo {
    pub base_seed: u64,
    /// Fast-noise lane used for each ε, in sweep order.
    pub epsilon_lanes: Vec<(f64, u64)>,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: SeedInfo,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
    pub files: Vec<OutputFile>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub status: FitStatus,
    pub fit: OrderFit,
    pub u1: f64,
    /// 95% half-width.
    pub u1_ci: f64,
    pub corrector: CorrectorEstimate,
    /// Unlogged slope of `mean_diff` against ε over the three smallest ε.
    pub small_epsilon_slope: Option<(f64, f64)>,
    pub r_eps_table: ResidualTable,
    pub points: Vec<WeakErrorPoint>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))
}

/// Files staged in memory and written together.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    /// Writes the staged files, then the manifest that lists them.
    fn commit(self, mut manifest: RunManifest) -> Result<RunManifest> {
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| {
            std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
            for (name, contents) in &self.files {
                let path = self.dir.join(name);
                std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
                written.push(path);
                manifest.files.push(OutputFile {
                    path: name.clone(),
                    sha256: hex::encode(Sha256::digest(contents.as_bytes())),
                    bytes: contents.len(),
                });
            }
            manifest.finished_at = now();
            let path = self.dir.join(MANIFEST_JSON);
            std::fs::write(&path, json(&manifest)?).map_err(|e| Error::io(&path, e))?;
            Ok(())
        })();
        if let Err(e) = result {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        Ok(manifest)
    }
}

fn manifest(kind: &str, cfg: &ExperimentConfig, started_at: u64) -> RunManifest {
    RunManifest {
        kind: kind.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.file.hash(),
        seeds: SeedInfo {
            base_seed: cfg.seed(),
            epsilon_lanes: cfg.epsilons().iter().enumerate().map(|(i, e)| (*e, i as u64)).collect(),
            replicas: cfg.replicas(),
        },
        started_at,
        finished_at: started_at,
        files: Vec::new(),
    }
}

/// The sweep table in its CSV form.
pub fn sweep_csv(points: &[WeakErrorPoint]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.epsilon, p.mean_diff, p.stderr, p.replicas, p.seed);
    }
    s
}

/// Runs the sweep, order fit, corrector and residual table without touching disk.
pub fn compute_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let exp = cfg.build()?;
    let points = weak_error_sweep(&exp, cfg.epsilons(), cfg.replicas(), cfg.seed())?;
    let fit = order_fit(&points);
    let corrector = corrector_u1(&exp, &cfg.corrector, cfg.seed())?;
    let r_eps_table = expansion_residual(&points, &corrector);
    Ok(SweepReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        status: fit.status,
        u1: corrector.u1_value,
        u1_ci: corrector.ci_halfwidth,
        small_epsilon_slope: small_epsilon_slope(&points, 3),
        fit,
        corrector,
        r_eps_table,
        points,
    })
}

/// Sweep over the configured ε ladder; writes `sweep.csv`, `report.json`,
/// `config.toml` and `manifest.json` into `out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunManifest, SweepReport)> {
    let started = now();
    let report = compute_sweep(cfg)?;
    let mut out = Outputs::new(out_dir);
    out.add(SWEEP_CSV, sweep_csv(&report.points));
    out.add(REPORT_JSON, json(&report)?);
    out.add(CONFIG_TOML, cfg.file.to_toml());
    let m = out.commit(manifest("sweep", cfg, started))?;
    Ok((m, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionSummary {
    pub fitted_rate: f64,
    pub eta: f64,
    /// Largest relative deviation of each mode's difference from `e^{-α_k t}`
    /// scaling (only when the reaction is zero).
    pub linear_max_rel_error: Option<f64>,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantSummary {
    pub samples: usize,
    pub burn_in: f64,
    pub thinning: f64,
    pub mode_variances: Vec<f64>,
    /// `σ₂²λ_k/(2α_k)` when the fast process is Ornstein-Uhlenbeck.
    pub reference_variances: Option<Vec<f64>>,
    pub max_rel_error: Option<f64>,
    pub second_moment: f64,
    pub passes: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveSummary {
    pub steps: usize,
    /// Largest relative change of `‖|x|‖₀` along the free evolution.
    pub max_rel_drift: f64,
    /// `‖𝒮_t𝒮_{-t}x - x‖₀ / ‖x‖₀` at the final time.
    pub inverse_error: f64,
    /// `(t, ‖V_t‖² + ‖U_t‖₁²)` along one coupled replica at the first ε.
    pub coupled_graph_norm: Vec<(f64, f64)>,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub eta: f64,
    pub contraction: ContractionSummary,
    pub invariant: InvariantSummary,
    pub decay: DecayCheck,
    pub wave: WaveSummary,
    pub exchange: ExchangeReport,
}

pub fn contraction_summary(cfg: &ExperimentConfig) -> Result<ContractionSummary> {
    let fast = cfg.fast_model();
    let eta = fast.mixing_rate()?;
    let horizon = 1.0 / eta;
    let h = (horizon / 100.0).min(fast.accuracy_step_bound());
    let y = if cfg.y0.norm() > 0.0 { cfg.y0.clone() } else { SpectralField::unit(fast.basis.modes(), 0) };
    let y2 = y.scaled(-1.0);
    let mut rng = RngStream::new(cfg.seed(), Purpose::Diagnostic).at(0);
    let curve = contraction_diagnostic(&y, &y2, horizon, h, &fast, &mut rng)?;
    let linear_max_rel_error = fast.reaction.is_zero().then(|| {
        let d0 = y.sub(&y2);
        let mut worst: f64 = 0.0;
        for (t, d) in curve.times.iter().zip(&curve.differences) {
            for k in 0..d.len() {
                let want = d0.coeffs()[k] * (-fast.basis.alphas()[k] * t).exp();
                if want != 0.0 {
                    worst = worst.max(((d.coeffs()[k] - want) / want).abs());
                } else {
                    worst = worst.max(d.coeffs()[k].abs());
                }
            }
        }
        worst
    });
    let passes = curve.fitted_rate >= 0.9 * eta && linear_max_rel_error.is_none_or(|e| e <= 1e-10);
    Ok(ContractionSummary {
        fitted_rate: curve.fitted_rate,
        eta,
        linear_max_rel_error,
        passes,
    })
}

pub fn invariant_summary(cfg: &ExperimentConfig) -> Result<(InvariantSummary, crate::fast::InvariantSample)> {
    let fast = cfg.fast_model();
    let eta = fast.mixing_rate()?;
    let settings = InvariantSettings::for_rate(eta, cfg.file.diagnostics.invariant_samples);
    let h = settings.thin.min(fast.accuracy_step_bound());
    let mut rng = RngStream::new(cfg.seed(), Purpose::Invariant).lane(1).at(0);
    let inv = sample_invariant(&fast, settings, h, &mut rng)?;
    let vars = inv.mode_variances();
    let reference = fast.reaction.is_zero().then(|| fast.ou_variances());
    let max_rel_error = reference.as_ref().map(|r| {
        vars.iter()
            .zip(r)
            .filter(|(_, r)| **r > 0.0)
            .map(|(v, r)| ((v - r) / r).abs())
            .fold(0.0, f64::max)
    });
    Ok((
        InvariantSummary {
            samples: inv.len(),
            burn_in: inv.burn_in,
            thinning: inv.thinning,
            mode_variances: vars,
            reference_variances: reference,
            max_rel_error,
            second_moment: inv.second_moment(),
            passes: max_rel_error.map(|e| e <= 0.05),
        },
        inv,
    ))
}

/// Uniform grid on `[0, 3/η]` for the decay check. `d(t)` can rise briefly
/// while the fast variance builds up, so the window reaches well past that.
pub fn decay_times(eta: f64) -> Vec<f64> {
    (0..=30).map(|i| i as f64 * 0.1 / eta).collect()
}

pub fn wave_summary(cfg: &ExperimentConfig) -> Result<WaveSummary> {
    let basis = &cfg.basis;
    let h = cfg.file.numerics.h_slow;
    let steps = cfg.file.diagnostics.wave_steps;
    let step = crate::slow::TrigStep::new(basis, h);
    let x0 = if basis.product_norm(&cfg.x0, 0.0)? > 0.0 {
        cfg.x0.clone()
    } else {
        WaveState {
            u: SpectralField::unit(basis.modes(), 0),
            v: SpectralField::zeros(basis.modes()),
        }
    };
    let n0 = basis.product_norm(&x0, 0.0)?;
    let mut x = x0.clone();
    let mut max_rel_drift: f64 = 0.0;
    for _ in 0..steps {
        step.apply_free(&mut x.u.0, &mut x.v.0);
        max_rel_drift = max_rel_drift.max((basis.product_norm(&x, 0.0)? - n0).abs() / n0);
    }
    let t = h * steps as f64;
    let back = basis.apply_wave_group(&basis.apply_wave_group(&x0, t)?, -t)?;
    let diff = WaveState {
        u: back.u.sub(&x0.u),
        v: back.v.sub(&x0.v),
    };
    let inverse_error = basis.product_norm(&diff, 0.0)? / n0;

    let exp = cfg.build()?;
    let ms = exp.multiscale(cfg.epsilons()[0]);
    let every = (ms.slow_steps() / 50).max(1);
    let path = simulate_coupled(
        &exp.x0,
        &exp.y0,
        &ms,
        &exp.slow,
        &exp.fast,
        ReplicaNoise::new(cfg.seed(), 0),
        Some(every),
    )?;
    Ok(WaveSummary {
        steps,
        max_rel_drift,
        inverse_error,
        coupled_graph_norm: graph_norm_diagnostic(&path, basis)?,
        passes: max_rel_drift <= 1e-10 && inverse_error <= 1e-12,
    })
}

pub fn compute_diagnostics(cfg: &ExperimentConfig) -> Result<DiagnosticsReport> {
    let exp = cfg.build()?;
    let eta = exp.fast.mixing_rate()?;
    let contraction = contraction_summary(cfg)?;
    let (invariant, inv) = invariant_summary(cfg)?;
    let decay = fbar_decay_check(
        &exp.slow,
        &exp.fast,
        &exp.fbar,
        &exp.x0.u,
        &exp.y0,
        &decay_times(eta),
        cfg.file.diagnostics.inner_replicas,
        cfg.seed(),
    )?;
    let wave = wave_summary(cfg)?;
    let n = cfg.basis.modes();
    let exchange = dfbar_exchange_check(
        &cfg.coupling,
        &exp.slow.colloc,
        &exp.x0.u,
        &SpectralField::unit(n, 0),
        &inv,
        1e-6,
    )?;
    Ok(DiagnosticsReport {
        eta,
        contraction,
        invariant,
        decay,
        wave,
        exchange,
    })
}

/// Fast-process and wave diagnostics; writes `diagnostics.json`,
/// `config.toml` and `manifest.json` into `out_dir`.
pub fn run_diagnostics(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunManifest, DiagnosticsReport)> {
    let started = now();
    let report = compute_diagnostics(cfg)?;
    let mut out = Outputs::new(out_dir);
    out.add(DIAGNOSTICS_JSON, json(&report)?);
    out.add(CONFIG_TOML, cfg.file.to_toml());
    let m = out.commit(manifest("diagnostics", cfg, started))?;
    Ok((m, report))
}

/// Writes a small JSON document (used by the `fbar` subcommand) with a manifest.
pub fn write_json_output<T: Serialize>(cfg: &ExperimentConfig, out_dir: &Path, name: &str, value: &T) -> Result<RunManifest> {
    let started = now();
    let mut out = Outputs::new(out_dir);
    out.add(name, json(value)?);
    out.add(CONFIG_TOML, cfg.file.to_toml());
    out.commit(manifest(name.trim_end_matches(".json"), cfg, started))
}

/// Fast trajectory as CSV with columns `t, mode_1 .. mode_N`.
pub fn trajectory_csv(snapshots: &[(f64, SpectralField)]) -> String {
    let n = snapshots.first().map(|s| s.1.len()).unwrap_or(0);
    let mut s = String::from("t");
    for k in 1..=n {
        let _ = write!(s, ",mode_{k}");
    }
    s.push('\n');
    for (t, y) in snapshots {
        let _ = write!(s, "{t}");
        for c in y.coeffs() {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

pub fn write_text_output(cfg: &ExperimentConfig, out_dir: &Path, name: &str, contents: String) -> Result<RunManifest> {
    let started = now();
    let mut out = Outputs::new(out_dir);
    out.add(name, contents);
    out.add(CONFIG_TOML, cfg.file.to_toml());
    out.commit(manifest(name.split('.').next().unwrap_or(name), cfg, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{validate_config, ConfigFile};

    fn smoke() -> ExperimentConfig {
        validate_config(&ConfigFile::preset("smoke").unwrap()).unwrap()
    }

    #[test]
    fn csv_header_and_rows() {
        let p = WeakErrorPoint {
            epsilon: 0.5,
            mean_diff: 1e-3,
            stderr: 2e-4,
            replicas: 64,
            seed: 7,
        };
        let s = sweep_csv(&[p]);
        assert_eq!(s, "epsilon,mean_diff,stderr,replicas,seed\n0.5,0.001,0.0002,64,7\n");
    }

    #[test]
    fn smoke_sweep_writes_complete_output() {
        let dir = tempfile::tempdir().unwrap();
        let (m, report) = run_sweep(&smoke(), dir.path()).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, [SWEEP_CSV, REPORT_JSON, CONFIG_TOML]);
        for f in &m.files {
            let bytes = std::fs::read(dir.path().join(&f.path)).unwrap();
            assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
        }
        assert!(dir.path().join(MANIFEST_JSON).exists());
        assert_eq!(report.points.len(), 2);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_JSON)).unwrap()).unwrap();
        for key in ["slope", "intercept", "r_squared", "u1", "u1_ci", "r_eps_table"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut out = Outputs::new(&blocker.join("sub"));
        out.add("a.txt", "a".into());
        let err = out.commit(manifest("t", &smoke(), 0)).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));

        // Partial failure: the first file lands, the second cannot.
        let target = dir.path().join("out");
        std::fs::create_dir(&target).unwrap();
        std::fs::create_dir(target.join("b.txt")).unwrap();
        let mut out = Outputs::new(&target);
        out.add("a.txt", "a".into());
        out.add("b.txt", "b".into());
        assert!(out.commit(manifest("t", &smoke(), 0)).is_err());
        assert!(!target.join("a.txt").exists());
    }

    #[test]
    fn trajectory_csv_columns() {
        let s = trajectory_csv(&[(0.0, SpectralField::new(vec![1.0, 2.0]).unwrap())]);
        assert_eq!(s, "t,mode_1,mode_2\n0,1,2\n");
    }
}
