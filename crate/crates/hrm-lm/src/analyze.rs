//! `analyze`: Slow-module freeze, step traces, the stability monitor and
//! gradient amplification, each written as CSV or JSON.

use std::path::{Path, PathBuf};

use serde::Serialize;

use hrm_lm_core::analysis::{
    freeze_h_eval, hrm_amplification, linear_amplification, stability_monitor, trace_report, AmplificationRow,
    FreezeReport, Violation,
};
use hrm_lm_core::data::Sequence;
use hrm_lm_core::hrm::{HrmModel, StepRecord};
use hrm_lm_core::{LanguageModel, Model};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{build_model, create_dir, load_split, metrics_dir, read_checkpoint};

pub const TRACE_COLUMNS: [&str; 7] = [
    "step",
    "h_fired",
    "gate_mean",
    "norm_zL",
    "norm_zH_before",
    "norm_zH_after",
    "cos_hl",
];
/// Dimension of the linear amplification toy.
const TOY_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    FreezeH,
    Trace,
    Stability,
    Amplification,
}

#[derive(Clone, Debug, Default)]
pub struct AnalyzeOptions {
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Defaults to the metrics directory.
    pub out_dir: Option<PathBuf>,
    /// Windows K for `amplification`.
    pub windows: Vec<usize>,
    /// `amplification` on the aligned linear toy instead of the model.
    pub linear: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Analysis {
    FreezeH(FreezeReport),
    Trace(Vec<StepRecord>),
    Stability { steps: usize, violations: Vec<Violation> },
    Amplification(Vec<AmplificationRow>),
}

#[derive(Clone, Debug)]
pub struct AnalyzeOutcome {
    pub analysis: Analysis,
    pub file: PathBuf,
}

impl AnalyzeOutcome {
    pub fn summary(&self) -> String {
        match &self.analysis {
            Analysis::FreezeH(r) => format!(
                "ce_normal={:.6} ce_frozen={:.6} delta={:+.6}",
                r.ce_normal, r.ce_frozen, r.delta
            ),
            Analysis::Trace(rows) => {
                let fired: Vec<String> = rows.iter().filter(|r| r.h_fired).map(|r| r.step.to_string()).collect();
                format!("{} steps, slow module fired at steps {}", rows.len(), fired.join(","))
            }
            Analysis::Stability { steps, violations } => {
                format!("{steps} steps checked, {} violations", violations.len())
            }
            Analysis::Amplification(rows) => rows
                .iter()
                .map(|r| format!("K={} ratio={:.9}", r.window, r.ratio))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// The config's model with checkpoint parameters loaded; any name or shape
/// difference is a schema error naming the first differing tensor.
pub fn load_model(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Model> {
    let mut model = build_model(config)?;
    if let Some(path) = checkpoint {
        let ckpt = read_checkpoint(path)?;
        model.params_mut().load_values(&ckpt.params)?;
    }
    Ok(model)
}

fn hrm(model: &Model) -> Result<&HrmModel> {
    model
        .as_hrm()
        .ok_or_else(|| CliError::config("model.kind", "this analysis needs an hrm model"))
}

pub fn analyze(config: &RunConfig, which: Which, options: &AnalyzeOptions) -> Result<AnalyzeOutcome> {
    let out_dir = options.out_dir.clone().unwrap_or_else(|| metrics_dir(config));
    create_dir(&out_dir)?;
    if which == Which::Amplification && options.linear {
        let windows = windows_or_default(&options.windows);
        let steps = windows.iter().copied().max().unwrap_or(1);
        let rows = linear_amplification(&windows, steps, TOY_DIM, config.train.seed)?;
        let file = out_dir.join("amplification.csv");
        write_amplification(&file, &rows)?;
        return Ok(AnalyzeOutcome {
            analysis: Analysis::Amplification(rows),
            file,
        });
    }

    let model = load_model(config, options.checkpoint.as_deref())?;
    let model = hrm(&model)?;
    let split = load_split(config, options.corpus.as_deref())?;
    let first: &Sequence = &split.eval[0];
    let (analysis, file) = match which {
        Which::FreezeH => {
            let report = freeze_h_eval(model, &split.eval)?;
            let file = out_dir.join("freeze_h.json");
            crate::write_atomic(&file, serde_json::to_string_pretty(&report)?.as_bytes())?;
            (Analysis::FreezeH(report), file)
        }
        Which::Trace => {
            let rows = trace_report(model, first)?;
            let file = out_dir.join("trace.csv");
            write_trace(&file, &rows, model.config.steps_per_pass())?;
            (Analysis::Trace(rows), file)
        }
        Which::Stability => {
            let mut steps = 0;
            let mut violations = Vec::new();
            for seq in &split.eval {
                let rows = trace_report(model, seq)?;
                steps += rows.len();
                violations.extend(stability_monitor(&rows));
            }
            let file = out_dir.join("stability.csv");
            write_rows(&file, &["pass", "step", "value", "bound"], &violations)?;
            (Analysis::Stability { steps, violations }, file)
        }
        Which::Amplification => {
            let windows = windows_or_default(&options.windows);
            let rows = hrm_amplification(model, first, &windows)?;
            let file = out_dir.join("amplification.csv");
            write_amplification(&file, &rows)?;
            (Analysis::Amplification(rows), file)
        }
    };
    Ok(AnalyzeOutcome { analysis, file })
}

fn windows_or_default(windows: &[usize]) -> Vec<usize> {
    if windows.is_empty() {
        vec![1, 2, 4, 8]
    } else {
        windows.to_vec()
    }
}

fn write_trace(path: &Path, rows: &[StepRecord], steps_per_pass: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for r in rows {
        let step = (r.pass - 1) * steps_per_pass + r.step;
        w.write_record([
            step.to_string(),
            u8::from(r.h_fired).to_string(),
            format!("{:?}", r.gate_mean),
            format!("{:?}", r.norm_zl),
            format!("{:?}", r.norm_zh_before),
            format!("{:?}", r.norm_zh_after),
            format!("{:?}", r.cos_hl),
        ])?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct AmplificationCsv {
    window: usize,
    grad_norm: f64,
    ratio: f64,
}

fn write_amplification(path: &Path, rows: &[AmplificationRow]) -> Result<()> {
    let rows: Vec<AmplificationCsv> = rows
        .iter()
        .map(|r| AmplificationCsv {
            window: r.window,
            grad_norm: r.grad_norm,
            ratio: r.ratio,
        })
        .collect();
    write_rows(path, &["window", "grad_norm", "ratio"], &rows)
}

// Header written explicitly so an empty table still has one.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
