//! `train`: metrics stream, learning curve, checkpoints and summary.
//!
//! Outputs under the metrics directory:
//! - `metrics.jsonl`: a `{"config": …}` header line, then one
//!   metrics record per evaluation
//! - `curve.csv`: `iter,val_ce`
//! - `summary.json`
//! - `diagnostic.json` and `diagnostic.ckpt` when a step fails
//!
//! Checkpoints go to `latest.ckpt` (every evaluation) and `final.ckpt`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use hrm_lm_core::trainer::{MetricsRecord, TrainSummary, Trainer};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{build_model, create_dir, load_split, metrics_dir, read_checkpoint, write_atomic};

#[derive(Debug)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub warnings: Vec<String>,
    pub metrics_path: PathBuf,
    pub curve_path: PathBuf,
    pub summary_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub fn train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let split = load_split(config, None)?;
    let model = build_model(config)?;
    let mut trainer = Trainer::new(model, config.train.clone(), split)?;
    if let Some(path) = resume {
        trainer.resume(&read_checkpoint(path)?)?;
    }

    let dir = metrics_dir(config);
    create_dir(&dir)?;
    create_dir(&config.paths.checkpoint_dir)?;
    let metrics_path = dir.join("metrics.jsonl");
    let curve_path = dir.join("curve.csv");
    let summary_path = dir.join("summary.json");
    let latest = config.paths.checkpoint_dir.join("latest.ckpt");
    let final_path = config.paths.checkpoint_dir.join("final.ckpt");

    // A resumed run appends to the existing streams.
    let appending = resume.is_some() && metrics_path.exists();
    let mut metrics = open(&metrics_path, appending)?;
    let curve_file = open(&curve_path, appending)?;
    let mut curve = csv::WriterBuilder::new().has_headers(false).from_writer(curve_file);
    if !appending {
        let header = json!({ "config": config.header(), "warnings": trainer.warnings });
        writeln!(metrics, "{header}").map_err(output(&metrics_path))?;
        curve.write_record(["iter", "val_ce"])?;
        curve.flush().map_err(output(&curve_path))?;
    }

    let start = Instant::now();
    let mut last: Option<MetricsRecord> = None;
    let mut failure: Option<CliError> = None;
    let result = trainer.run(&mut |record, state| {
        if failure.is_some() {
            return;
        }
        let mut record = record.clone();
        if config.record_wall_time {
            record.wall_seconds = Some(start.elapsed().as_secs_f64());
        }
        let mut write = || -> Result<()> {
            let line = serde_json::to_string(&record)?;
            writeln!(metrics, "{line}").map_err(output(&metrics_path))?;
            metrics.flush().map_err(output(&metrics_path))?;
            curve.write_record([record.iter.to_string(), format!("{:?}", record.val_ce)])?;
            curve.flush().map_err(output(&curve_path))?;
            write_atomic(&latest, &state.checkpoint().encode())
        };
        if let Err(e) = write() {
            failure = Some(e);
        }
        last = Some(record);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            let diagnostic = json!({
                "error": e.to_string(),
                "step": trainer.step,
                "lr": trainer.schedule.lr_at(trainer.step),
                "last_record": last,
                "warnings": trainer.warnings,
            });
            let path = dir.join("diagnostic.json");
            write_atomic(&path, serde_json::to_string_pretty(&diagnostic)?.as_bytes())?;
            write_atomic(&dir.join("diagnostic.ckpt"), &trainer.checkpoint().encode())?;
            return Err(e.into());
        }
    };
    write_atomic(&final_path, &trainer.checkpoint().encode())?;
    let body = json!({ "summary": summary, "warnings": trainer.warnings });
    write_atomic(&summary_path, serde_json::to_string_pretty(&body)?.as_bytes())?;
    Ok(TrainOutcome {
        summary,
        warnings: trainer.warnings,
        metrics_path,
        curve_path,
        summary_path,
        checkpoint_path: final_path,
    })
}

fn open(path: &Path, append: bool) -> Result<File> {
    let mut opts = OpenOptions::new();
    if append {
        opts.append(true);
    } else {
        opts.write(true).create(true).truncate(true);
    }
    opts.open(path).map_err(output(path))
}

fn output(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}
