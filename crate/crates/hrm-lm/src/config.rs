//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! [model]
//! kind = hrm
//! d = 64
//! ```
//!
//! Sections are `run`, `model`, `train`, `data` and `paths`. Every key is
//! checked; anything not consumed is rejected by name.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use hrm_lm_core::baselines::{TransformerConfig, UniTfConfig};
use hrm_lm_core::data::SyntheticTask;
use hrm_lm_core::hrm::{HrmConfig, DEFAULT_GATE_ENTROPY};
use hrm_lm_core::trainer::TrainConfig;
use hrm_lm_core::{ModelConfig, ModelKind};

use crate::error::{CliError, Result};

pub const SECTIONS: [&str; 5] = ["run", "model", "train", "data", "paths"];
const DEFAULT_SEGMENT: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Bytes of `paths.corpus`.
    File,
    Synthetic { task: SyntheticTask, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub metrics_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub record_wall_time: bool,
    pub model: ModelConfig,
    pub init_std: Option<f64>,
    /// `train.seed` is the `run.seed` key.
    pub train: TrainConfig,
    pub data: DataSource,
    pub paths: Paths,
}

/// Parsed but untyped `section -> key -> value` text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut current: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(line_no, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(syntax(line_no, format!("unknown section [{name}]")));
                }
                raw.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(line_no, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(syntax(line_no, "empty key"));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| syntax(line_no, format!("key `{key}` appears before any section")))?;
            let map = raw.sections.get_mut(section).expect("section registered");
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::config(format!("{section}.{key}"), "duplicate key"));
            }
        }
        Ok(raw)
    }

    /// Applies `section.key=value`, replacing any value from the file.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(assignment, "override must look like section.key=value"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| CliError::config(path.trim(), "override key must look like section.key"))?;
        if !SECTIONS.contains(&section) {
            return Err(CliError::config(path.trim(), "unknown section"));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    fn section(&mut self, name: &'static str) -> Section {
        Section {
            name,
            map: self.sections.remove(name).unwrap_or_default(),
        }
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Syntax { line, msg: msg.into() }
}

struct Section {
    name: &'static str,
    map: BTreeMap<String, String>,
}

impl Section {
    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) if v == "none" => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::config(self.key(key), format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::config(self.key(key), "required key is missing"))
    }

    fn finish(self) -> Result<()> {
        match self.map.into_keys().next() {
            Some(k) => Err(CliError::config(format!("{}.{k}", self.name), "unknown key")),
            None => Ok(()),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(RawConfig::parse(text)?)
    }

    pub fn from_raw(mut raw: RawConfig) -> Result<Self> {
        let mut run = raw.section("run");
        let name: String = run.or("name", "run".to_string())?;
        let seed: u64 = run.or("seed", 0)?;
        let record_wall_time = run.or("record_wall_time", false)?;
        run.finish()?;

        let mut m = raw.section("model");
        let kind: ModelKind = m.req::<String>("kind")?.parse().map_err(|e: hrm_lm_core::Error| {
            CliError::config("model.kind", e.to_string())
        })?;
        let d = m.req("d")?;
        let heads = m.req("heads")?;
        let vocab = m.or("vocab", hrm_lm_core::data::BYTE_VOCAB)?;
        let seq_len = m.req("seq_len")?;
        let model = match kind {
            ModelKind::Hrm => {
                let cycles = m.req("cycles")?;
                let steps_per_cycle: usize = m.req("steps_per_cycle")?;
                ModelConfig::Hrm(HrmConfig {
                    d,
                    heads,
                    vocab,
                    seq_len,
                    cycles,
                    steps_per_cycle,
                    passes: m.or("passes", 1)?,
                    grad_window: m.or("grad_window", cycles * steps_per_cycle)?,
                    gate_entropy: m.or("gate_entropy", DEFAULT_GATE_ENTROPY)?,
                })
            }
            ModelKind::Transformer => ModelConfig::Transformer(TransformerConfig {
                d,
                heads,
                vocab,
                seq_len,
                layers: m.req("layers")?,
            }),
            ModelKind::UniTf => {
                let steps = m.req("steps")?;
                ModelConfig::UniTf(UniTfConfig {
                    d,
                    heads,
                    vocab,
                    seq_len,
                    steps,
                    grad_window: m.or("grad_window", steps)?,
                })
            }
        };
        let init_std = m.opt::<f64>("init_std")?;
        if init_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(CliError::config("model.init_std", "must be a positive number"));
        }
        m.finish()?;
        model.validate().map_err(|e| CliError::config("model", e.to_string()))?;

        let mut t = raw.section("train");
        let base = TrainConfig::default();
        let train = TrainConfig {
            batch_size: t.or("batch_size", base.batch_size)?,
            grad_accum: t.or("grad_accum", base.grad_accum)?,
            seed,
            lr_max: t.or("lr_max", base.lr_max)?,
            lr_min: t.opt("lr_min")?,
            warmup_steps: t.opt("warmup_steps")?,
            max_steps: t.or("max_steps", base.max_steps)?,
            eval_interval: t.or("eval_interval", base.eval_interval)?,
            clip_base: t.or("clip_base", base.clip_base)?,
            weight_decay: t.or("weight_decay", base.weight_decay)?,
            scale_lr_by_passes: t.or("scale_lr_by_passes", base.scale_lr_by_passes)?,
            stop_below_val_ce: t.opt("stop_below_val_ce")?,
        };
        t.finish()?;
        train.validate().map_err(|e| CliError::config("train", e.to_string()))?;

        let mut ds = raw.section("data");
        let source: String = ds.or("source", "copy".to_string())?;
        let data = match source.as_str() {
            "file" => DataSource::File,
            "copy" | "counting" | "mixed" => {
                let len = ds.or("len", 20_000)?;
                let task = match source.as_str() {
                    "copy" => SyntheticTask::Copy {
                        len,
                        period: ds.or("period", 8)?,
                        segment: ds.opt("segment")?,
                    },
                    "counting" => SyntheticTask::Counting {
                        len,
                        segment: ds.or("segment", DEFAULT_SEGMENT)?,
                    },
                    _ => SyntheticTask::Mixed {
                        len,
                        period: ds.or("period", 8)?,
                        segment: ds.or("segment", DEFAULT_SEGMENT)?,
                    },
                };
                DataSource::Synthetic {
                    task,
                    seed: ds.or("seed", 0)?,
                }
            }
            other => {
                return Err(CliError::config(
                    "data.source",
                    format!("`{other}` is not one of copy, counting, mixed, file"),
                ))
            }
        };
        ds.finish()?;

        let mut p = raw.section("paths");
        let metrics_dir: PathBuf = p.or("metrics_dir", PathBuf::from("runs").join(&name))?;
        let paths = Paths {
            corpus: p.opt("corpus")?,
            checkpoint_dir: p.or("checkpoint_dir", metrics_dir.join("checkpoints"))?,
            metrics_dir,
        };
        p.finish()?;
        if data == DataSource::File && paths.corpus.is_none() {
            return Err(CliError::config("paths.corpus", "required when data.source = file"));
        }
        if let Some(key) = raw.sections.into_keys().next() {
            return Err(CliError::config(key, "unknown section"));
        }

        Ok(RunConfig {
            name,
            record_wall_time,
            model,
            init_std,
            train,
            data,
            paths,
        })
    }

    /// Every key with its value, in file order; unset optional keys are
    /// omitted.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut out = Vec::new();
        let mut push = |s: &'static str, k: &'static str, v: String| out.push((s, k, v));
        push("run", "name", self.name.clone());
        push("run", "seed", self.train.seed.to_string());
        push("run", "record_wall_time", self.record_wall_time.to_string());

        push("model", "kind", self.model.kind().to_string());
        match &self.model {
            ModelConfig::Hrm(c) => {
                push("model", "d", c.d.to_string());
                push("model", "heads", c.heads.to_string());
                push("model", "vocab", c.vocab.to_string());
                push("model", "seq_len", c.seq_len.to_string());
                push("model", "cycles", c.cycles.to_string());
                push("model", "steps_per_cycle", c.steps_per_cycle.to_string());
                push("model", "passes", c.passes.to_string());
                push("model", "grad_window", c.grad_window.to_string());
                push("model", "gate_entropy", float(c.gate_entropy));
            }
            ModelConfig::Transformer(c) => {
                push("model", "d", c.d.to_string());
                push("model", "heads", c.heads.to_string());
                push("model", "vocab", c.vocab.to_string());
                push("model", "seq_len", c.seq_len.to_string());
                push("model", "layers", c.layers.to_string());
            }
            ModelConfig::UniTf(c) => {
                push("model", "d", c.d.to_string());
                push("model", "heads", c.heads.to_string());
                push("model", "vocab", c.vocab.to_string());
                push("model", "seq_len", c.seq_len.to_string());
                push("model", "steps", c.steps.to_string());
                push("model", "grad_window", c.grad_window.to_string());
            }
        }
        if let Some(s) = self.init_std {
            push("model", "init_std", float(s));
        }

        let t = &self.train;
        push("train", "batch_size", t.batch_size.to_string());
        push("train", "grad_accum", t.grad_accum.to_string());
        push("train", "lr_max", float(t.lr_max));
        if let Some(v) = t.lr_min {
            push("train", "lr_min", float(v));
        }
        if let Some(v) = t.warmup_steps {
            push("train", "warmup_steps", v.to_string());
        }
        push("train", "max_steps", t.max_steps.to_string());
        push("train", "eval_interval", t.eval_interval.to_string());
        push("train", "clip_base", float(t.clip_base));
        push("train", "weight_decay", float(t.weight_decay));
        push("train", "scale_lr_by_passes", t.scale_lr_by_passes.to_string());
        if let Some(v) = t.stop_below_val_ce {
            push("train", "stop_below_val_ce", float(v));
        }

        match &self.data {
            DataSource::File => push("data", "source", "file".into()),
            DataSource::Synthetic { task, seed } => {
                match *task {
                    SyntheticTask::Copy { len, period, segment } => {
                        push("data", "source", "copy".into());
                        push("data", "len", len.to_string());
                        push("data", "period", period.to_string());
                        if let Some(s) = segment {
                            push("data", "segment", s.to_string());
                        }
                    }
                    SyntheticTask::Counting { len, segment } => {
                        push("data", "source", "counting".into());
                        push("data", "len", len.to_string());
                        push("data", "segment", segment.to_string());
                    }
                    SyntheticTask::Mixed { len, period, segment } => {
                        push("data", "source", "mixed".into());
                        push("data", "len", len.to_string());
                        push("data", "period", period.to_string());
                        push("data", "segment", segment.to_string());
                    }
                }
                push("data", "seed", seed.to_string());
            }
        }

        if let Some(c) = &self.paths.corpus {
            push("paths", "corpus", c.display().to_string());
        }
        push("paths", "checkpoint_dir", self.paths.checkpoint_dir.display().to_string());
        push("paths", "metrics_dir", self.paths.metrics_dir.display().to_string());
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (s, k, v) in self.entries() {
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                section = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// `section.key -> value` for the metrics header.
    pub fn header(&self) -> serde_json::Map<String, serde_json::Value> {
        self.entries()
            .into_iter()
            .map(|(s, k, v)| (format!("{s}.{k}"), serde_json::Value::String(v)))
            .collect()
    }
}

// Shortest representation that parses back to the same bits.
fn float(x: f64) -> String {
    format!("{x:?}")
}
