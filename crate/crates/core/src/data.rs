//! Byte-level corpora and next-token sequence sampling.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BYTE_VOCAB: usize = 256;
/// Held-out sequences taken from the corpus tail.
pub const EVAL_SEQUENCES: usize = 8;

/// Generators for synthetic byte streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum SyntheticTask {
    /// One random `period`-byte pattern repeated; with `segment`, a fresh
    /// pattern is drawn every `segment` bytes.
    Copy {
        len: usize,
        period: usize,
        segment: Option<usize>,
    },
    /// Runs of `a, a+b, a+2b, …` (mod 256) with random `a` and `b`, redrawn
    /// every `segment` bytes.
    Counting { len: usize, segment: usize },
    /// Alternating copy segments (fresh pattern each) and counting segments.
    Mixed { len: usize, period: usize, segment: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    tokens: Vec<usize>,
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        Ok(Corpus {
            tokens: bytes.iter().map(|&b| b as usize).collect(),
        })
    }

    pub fn synthetic(task: &SyntheticTask, rng: &mut Rng) -> Result<Self> {
        let tokens = match *task {
            SyntheticTask::Copy { len, period, segment } => {
                check(len, period, segment.unwrap_or(len))?;
                let segment = segment.unwrap_or(len);
                let mut out = Vec::with_capacity(len);
                while out.len() < len {
                    let pattern: Vec<usize> = (0..period).map(|_| rng.below(BYTE_VOCAB)).collect();
                    (0..segment.min(len - out.len())).for_each(|i| out.push(pattern[i % period]));
                }
                out
            }
            SyntheticTask::Counting { len, segment } => {
                check(len, 1, segment)?;
                let mut out = Vec::with_capacity(len);
                while out.len() < len {
                    counting_run(rng, segment.min(len - out.len()), &mut out);
                }
                out
            }
            SyntheticTask::Mixed { len, period, segment } => {
                check(len, period, segment)?;
                let mut out = Vec::with_capacity(len);
                let mut copy = true;
                while out.len() < len {
                    let run = segment.min(len - out.len());
                    if copy {
                        let pattern: Vec<usize> = (0..period).map(|_| rng.below(BYTE_VOCAB)).collect();
                        (0..run).for_each(|i| out.push(pattern[i % period]));
                    } else {
                        counting_run(rng, run, &mut out);
                    }
                    copy = !copy;
                }
                out
            }
        };
        Ok(Corpus { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Training stream plus [`EVAL_SEQUENCES`] disjoint held-out sequences
    /// from the tail.
    pub fn split(&self, seq_len: usize) -> Result<DataSplit> {
        let window = seq_len + 1;
        let held_out = EVAL_SEQUENCES * window;
        if seq_len == 0 || self.tokens.len() < held_out + window {
            return Err(Error::Data(format!(
                "corpus of {} tokens is too short for sequence length {seq_len}: need at least {}",
                self.tokens.len(),
                held_out + window
            )));
        }
        let boundary = self.tokens.len() - held_out;
        let eval = self.tokens[boundary..]
            .chunks(window)
            .map(|w| Sequence::from_window(w))
            .collect();
        Ok(DataSplit {
            seq_len,
            train: self.tokens[..boundary].to_vec(),
            eval,
        })
    }
}

fn check(len: usize, period: usize, segment: usize) -> Result<()> {
    if len == 0 || period == 0 || segment == 0 {
        return Err(Error::Data("synthetic corpus sizes must be positive".into()));
    }
    Ok(())
}

fn counting_run(rng: &mut Rng, run: usize, out: &mut Vec<usize>) {
    let start = rng.below(BYTE_VOCAB);
    let stride = 1 + rng.below(7);
    (0..run).for_each(|i| out.push((start + i * stride) % BYTE_VOCAB));
}

/// Inputs and their next-token targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Sequence {
    /// `window` has `n + 1` tokens; targets are inputs shifted by one.
    pub fn from_window(window: &[usize]) -> Self {
        Sequence {
            inputs: window[..window.len() - 1].to_vec(),
            targets: window[1..].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub seq_len: usize,
    pub train: Vec<usize>,
    pub eval: Vec<Sequence>,
}

impl DataSplit {
    /// `batch` windows at uniform offsets of the training stream.
    pub fn sample(&self, rng: &mut Rng, batch: usize) -> Vec<Sequence> {
        let starts = self.train.len() - self.seq_len;
        (0..batch)
            .map(|_| {
                let s = rng.below(starts);
                Sequence::from_window(&self.train[s..s + self.seq_len + 1])
            })
            .collect()
    }
}
