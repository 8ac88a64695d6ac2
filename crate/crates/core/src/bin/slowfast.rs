use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slowfast::analysis::FitStatus;
use slowfast::config::{validate_config, ConfigFile, ExperimentConfig};
use slowfast::fast::simulate_fast;
use slowfast::harness;
use slowfast::nonlinearity::{estimate_fbar, fbar_oracle};
use slowfast::rng::{Purpose, RngStream};
use slowfast::{Error, SpectralField};

#[derive(Parser)]
#[command(name = "slowfast", version, about = "Averaging experiments for slow-fast stochastic wave-heat systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: smoke, acceptance or ou.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and list every violation.
    Validate(Common),
    /// Weak-error sweep, order fit and first-order corrector.
    Sweep(Common),
    /// Fast-process, averaged-drift and wave-group diagnostics.
    Diagnostics(Common),
    /// Estimate the averaged drift at the initial displacement (or at `--u`).
    Fbar {
        #[command(flatten)]
        common: Common,
        /// Displacement coefficients, comma separated (padded with zeros).
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
        /// Invariant samples for the ergodic estimate.
        #[arg(long, default_value_t = 4096)]
        samples: usize,
    },
    /// Export one fast-process trajectory as CSV.
    Fast {
        #[command(flatten)]
        common: Common,
        /// Fast-time horizon.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Fast step.
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// Record every this many steps.
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::UnsupportedOracle(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => 1,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::usage(format!("cannot start thread pool: {e}")))?;
    }
    let mut file = match (&common.config, &common.preset) {
        (Some(path), _) => ConfigFile::load(path)?,
        (None, Some(name)) => ConfigFile::preset(name)?,
        (None, None) => return Err(Error::usage("pass --config <path> or --preset <name>")),
    };
    if let Some(seed) = common.seed {
        file.sweep.seed = seed;
    }
    validate_config(&file)
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Validate(common) => {
            let cfg = load(&common)?;
            println!("ok: config {} (eta = {})", cfg.file.hash(), cfg.eta);
            Ok(0)
        }
        Command::Sweep(common) => {
            let cfg = load(&common)?;
            let (_, report) = harness::run_sweep(&cfg, &common.out)?;
            for p in &report.points {
                println!("eps {:<10} mean_diff {:+.4e} stderr {:.2e}", p.epsilon, p.mean_diff, p.stderr);
            }
            match report.status {
                FitStatus::Ok => {
                    println!(
                        "slope {:.4} r2 {:.4}; u1 {:.4e} +/- {:.1e}",
                        report.slope.unwrap_or(f64::NAN),
                        report.r_squared.unwrap_or(f64::NAN),
                        report.u1,
                        report.u1_ci
                    );
                    Ok(0)
                }
                FitStatus::Inconclusive => {
                    eprintln!(
                        "inconclusive: only {} point(s) above the noise floor",
                        report.fit.used.len()
                    );
                    Ok(EXIT_INCONCLUSIVE)
                }
            }
        }
        Command::Diagnostics(common) => {
            let cfg = load(&common)?;
            let (_, r) = harness::run_diagnostics(&cfg, &common.out)?;
            println!("eta {:.4}", r.eta);
            println!("contraction rate {:.4} (pass: {})", r.contraction.fitted_rate, r.contraction.passes);
            println!("decay rate {:.4} (pass: {})", r.decay.fitted_rate, r.decay.passes);
            println!("wave drift {:.2e} (pass: {})", r.wave.max_rel_drift, r.wave.passes);
            if let Some(e) = r.invariant.max_rel_error {
                println!("invariant variance error {:.2}%", 100.0 * e);
            }
            Ok(0)
        }
        Command::Fbar { common, u, samples } => {
            let cfg = load(&common)?;
            let exp = cfg.build()?;
            let n = cfg.basis.modes();
            let u = match u {
                Some(mut c) => {
                    if c.len() > n {
                        return Err(Error::usage(format!("--u has {} coefficients for {n} modes", c.len())));
                    }
                    c.resize(n, 0.0);
                    SpectralField::new(c)?
                }
                None => exp.x0.u.clone(),
            };
            let eta = exp.fast.mixing_rate()?;
            let settings = slowfast::fast::InvariantSettings::for_rate(eta, samples);
            let h = settings.thin.min(exp.fast.accuracy_step_bound());
            let mut rng = RngStream::new(cfg.seed(), Purpose::Invariant).at(0);
            let inv = slowfast::fast::sample_invariant(&exp.fast, settings, h, &mut rng)?;
            let estimate = estimate_fbar(&cfg.coupling, &exp.slow.colloc, &u, &inv)?;
            let oracle = fbar_oracle(&cfg.coupling, &cfg.reaction, &exp.slow.colloc, &u, &exp.fast.ou_variances()).ok();
            let doc = serde_json::json!({
                "u": u,
                "nodes": exp.slow.colloc.nodes(),
                "estimate": estimate,
                "oracle": oracle,
            });
            harness::write_json_output(&cfg, &common.out, "fbar.json", &doc)?;
            println!("wrote {}", common.out.join("fbar.json").display());
            Ok(0)
        }
        Command::Fast { common, horizon, h, every } => {
            let cfg = load(&common)?;
            let fast = cfg.fast_model();
            let mut rng = RngStream::new(cfg.seed(), Purpose::Diagnostic).at(1);
            let run = simulate_fast(&cfg.y0, horizon, h, &fast, &mut rng, Some(every))?;
            harness::write_text_output(&cfg, &common.out, "fast.csv", harness::trajectory_csv(&run.snapshots))?;
            println!("wrote {} ({} rows)", common.out.join("fast.csv").display(), run.snapshots.len());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
