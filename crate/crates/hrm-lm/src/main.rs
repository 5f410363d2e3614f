use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hrm_lm::analyze::{analyze, AnalyzeOptions, Which};
use hrm_lm::config::{RawConfig, RunConfig};
use hrm_lm::error::{CliError, Result, EXIT_ACCEPTANCE, EXIT_OK};
use hrm_lm::gradcheck::{gradcheck, GradcheckOptions, TOLERANCE};
use hrm_lm::memcalc::{memcalc, render_table, MemcalcArgs};
use hrm_lm::presets::load_config_text;
use hrm_lm::train::train;
use hrm_lm_core::ModelKind;

#[derive(Parser)]
#[command(name = "hrm-lm", version, about = "Train and analyze two-speed recurrent language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file path or preset name.
    #[arg(long)]
    config: String,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`, repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, learning curve, checkpoints and a summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare tape gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        eps: Option<f64>,
        /// Scale the analytic gradient of this tensor (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Stored parameters and KV-cache bytes.
    Memcalc {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 4096)]
        d: u64,
        #[arg(long = "L")]
        layers: Option<u64>,
        #[arg(long = "M")]
        steps: Option<u64>,
        #[arg(long = "N")]
        cycles: Option<u64>,
        #[arg(long = "T")]
        steps_per_cycle: Option<u64>,
        #[arg(long, default_value_t = 1024)]
        n: u64,
        #[arg(long, default_value_t = 16)]
        heads: u64,
        /// Defaults to d / heads.
        #[arg(long)]
        head_dim: Option<u64>,
        #[arg(long, default_value_t = 2)]
        bytes: u64,
        #[arg(long, default_value_t = 50257)]
        vocab: u64,
        /// Transformer depth to compare KV memory against.
        #[arg(long = "ref-L")]
        ref_layers: Option<u64>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Analyses of a trained (or freshly initialized) HRM.
    Analyze {
        #[arg(value_enum)]
        which: AnalysisArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Byte corpus replacing the configured data.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated windows K for amplification.
        #[arg(long, value_delimiter = ',')]
        windows: Vec<usize>,
        /// Amplification on the aligned linear toy.
        #[arg(long)]
        linear: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Hrm,
    Transformer,
    Unitf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisArg {
    FreezeH,
    Trace,
    Stability,
    Amplification,
}

fn load(args: &ConfigArgs) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(&load_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        raw.set(&format!("run.seed={seed}"))?;
    }
    for o in &args.overrides {
        raw.set(o)?;
    }
    RunConfig::from_raw(raw)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, resume } => {
            let config = load(&cfg)?;
            let outcome = train(&config, resume.as_deref())?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let s = &outcome.summary;
            println!(
                "summary: steps={} best_val_ce={:.6} final_val_ce={:.6} stability_violations={}",
                s.steps, s.best_val_ce, s.final_val_ce, s.stability_violations
            );
            println!("metrics: {}", outcome.metrics_path.display());
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            Ok(())
        }
        Command::Gradcheck { cfg, eps, corrupt } => {
            let config = load(&cfg)?;
            let out = gradcheck(&config, &GradcheckOptions { eps, corrupt })?;
            let r = &out.report;
            println!(
                "max_rel_err={:.3e} param={} index={} analytic={:.6e} numeric={:.6e} checked={} eps={:e} init_std={}",
                r.max_rel_err, r.worst_param, r.worst_index, r.analytic, r.numeric, r.checked, out.eps, out.init_std
            );
            if out.passed {
                println!("gradcheck passed (< {TOLERANCE:e})");
                Ok(())
            } else {
                Err(CliError::CheckFailed(format!(
                    "gradcheck failed: {:.3e} >= {TOLERANCE:e} at `{}`",
                    r.max_rel_err, r.worst_param
                )))
            }
        }
        Command::Memcalc {
            kind,
            d,
            layers,
            steps,
            cycles,
            steps_per_cycle,
            n,
            heads,
            head_dim,
            bytes,
            vocab,
            ref_layers,
            json,
        } => {
            let kind = match kind {
                Kind::Hrm => ModelKind::Hrm,
                Kind::Transformer => ModelKind::Transformer,
                Kind::Unitf => ModelKind::UniTf,
            };
            let report = memcalc(&MemcalcArgs {
                kind,
                d,
                layers,
                steps,
                cycles,
                steps_per_cycle,
                seq_len: n,
                heads,
                head_dim,
                bytes,
                vocab,
                ref_layers,
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_table(&report));
            }
            Ok(())
        }
        Command::Analyze {
            which,
            cfg,
            checkpoint,
            corpus,
            out,
            windows,
            linear,
        } => {
            let config = load(&cfg)?;
            let which = match which {
                AnalysisArg::FreezeH => Which::FreezeH,
                AnalysisArg::Trace => Which::Trace,
                AnalysisArg::Stability => Which::Stability,
                AnalysisArg::Amplification => Which::Amplification,
            };
            let options = AnalyzeOptions {
                checkpoint,
                corpus,
                out_dir: out,
                windows,
                linear,
            };
            let outcome = analyze(&config, which, &options)?;
            println!("{}", outcome.summary());
            println!("wrote {}", outcome.file.display());
            if let hrm_lm::analyze::Analysis::Stability { violations, .. } = &outcome.analysis {
                if !violations.is_empty() {
                    return Err(CliError::CheckFailed(format!("{} stability violations", violations.len())));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(code == EXIT_ACCEPTANCE || code != 0);
            ExitCode::from(code as u8)
        }
    }
}
