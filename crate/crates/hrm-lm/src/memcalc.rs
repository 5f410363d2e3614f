//! `memcalc`: stored parameters and KV-cache bytes from architecture flags.

use serde::Serialize;

use hrm_lm_core::analysis::{hrm_params, kv_cache_bytes, kv_ratio, transformer_params, unitf_params, MemorySpec, ParamBreakdown};
use hrm_lm_core::ModelKind;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MemcalcArgs {
    pub kind: ModelKind,
    pub d: u64,
    pub layers: Option<u64>,
    pub steps: Option<u64>,
    pub cycles: Option<u64>,
    pub steps_per_cycle: Option<u64>,
    pub seq_len: u64,
    pub heads: u64,
    pub head_dim: Option<u64>,
    pub bytes: u64,
    pub vocab: u64,
    pub ref_layers: Option<u64>,
}

impl Default for MemcalcArgs {
    fn default() -> Self {
        MemcalcArgs {
            kind: ModelKind::Hrm,
            d: 4096,
            layers: None,
            steps: None,
            cycles: None,
            steps_per_cycle: None,
            seq_len: 1024,
            heads: 16,
            head_dim: None,
            bytes: 2,
            vocab: 50257,
            ref_layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reference {
    pub layers: u64,
    pub kv_bytes: u64,
    /// Own KV bytes over the reference's, in lowest terms.
    pub kv_ratio: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemReport {
    pub kind: ModelKind,
    pub d: u64,
    pub vocab: u64,
    /// L for the Transformer, M for the recurrent models.
    pub depth: u64,
    pub seq_len: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub bytes_per_element: u64,
    pub params: ParamBreakdown,
    pub kv_bytes: u64,
    pub reference: Option<Reference>,
}

fn depth(args: &MemcalcArgs) -> Result<u64> {
    match args.kind {
        ModelKind::Transformer => args
            .layers
            .ok_or_else(|| CliError::config("--L", "required for --kind transformer")),
        ModelKind::UniTf => args
            .steps
            .ok_or_else(|| CliError::config("--M", "required for --kind unitf")),
        ModelKind::Hrm => {
            let product = match (args.cycles, args.steps_per_cycle) {
                (Some(n), Some(t)) => Some(n * t),
                (None, None) => None,
                _ => return Err(CliError::config("--N/--T", "give both or neither")),
            };
            match (args.steps, product) {
                (Some(m), Some(p)) if m != p => {
                    Err(CliError::config("--M", format!("M = {m} disagrees with N·T = {p}")))
                }
                (Some(m), _) | (None, Some(m)) => Ok(m),
                (None, None) => Err(CliError::config("--M", "give --M or both --N and --T")),
            }
        }
    }
}

pub fn memcalc(args: &MemcalcArgs) -> Result<MemReport> {
    if args.heads == 0 {
        return Err(CliError::config("--heads", "must be positive"));
    }
    let head_dim = args.head_dim.unwrap_or(args.d / args.heads);
    let depth = depth(args)?;
    let spec = MemorySpec {
        kind: args.kind,
        depth,
        seq_len: args.seq_len,
        heads: args.heads,
        head_dim,
        d: args.d,
        bytes_per_element: args.bytes,
    };
    let kv_bytes = kv_cache_bytes(&spec).map_err(|e| CliError::config("--heads", e.to_string()))?;
    let params = match args.kind {
        ModelKind::Hrm => hrm_params(args.d, args.vocab),
        ModelKind::Transformer => transformer_params(args.d, args.vocab, depth),
        ModelKind::UniTf => unitf_params(args.d, args.vocab),
    };
    let reference = match args.ref_layers {
        None => None,
        Some(l) => {
            let ratio = kv_ratio(depth, l).map_err(|e| CliError::config("--ref-L", e.to_string()))?;
            let ref_spec = MemorySpec {
                kind: ModelKind::Transformer,
                depth: l,
                ..spec.clone()
            };
            Some(Reference {
                layers: l,
                kv_bytes: kv_cache_bytes(&ref_spec)?,
                kv_ratio: ratio.to_string(),
            })
        }
    };
    Ok(MemReport {
        kind: args.kind,
        d: args.d,
        vocab: args.vocab,
        depth,
        seq_len: args.seq_len,
        heads: args.heads,
        head_dim,
        bytes_per_element: args.bytes,
        params,
        kv_bytes,
        reference,
    })
}

pub fn render_table(r: &MemReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("kind".into(), r.kind.to_string()),
        ("d".into(), r.d.to_string()),
        ("vocab".into(), r.vocab.to_string()),
        ("depth".into(), r.depth.to_string()),
        ("seq_len".into(), r.seq_len.to_string()),
        ("heads x head_dim".into(), format!("{} x {}", r.heads, r.head_dim)),
        ("bytes/element".into(), r.bytes_per_element.to_string()),
    ];
    for (group, n) in &r.params.groups {
        rows.push((format!("params.{group}"), n.to_string()));
    }
    rows.push(("params.total".into(), r.params.total.to_string()));
    rows.push(("kv_bytes".into(), r.kv_bytes.to_string()));
    if let Some(reference) = &r.reference {
        rows.push((format!("kv_bytes (ref L={})", reference.layers), reference.kv_bytes.to_string()));
        rows.push(("kv_ratio vs ref".into(), reference.kv_ratio.clone()));
    }
    let key_w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let val_w = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<key_w$}  {v:>val_w$}\n"))
        .collect()
}
