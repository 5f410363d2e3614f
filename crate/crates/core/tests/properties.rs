use hrm_lm_core::analysis::{enumerate_params, hrm_params, kv_cache_bytes, transformer_params, unitf_params, MemorySpec};
use hrm_lm_core::baselines::{TransformerConfig, TransformerModel, UniTfConfig, UniTfModel};
use hrm_lm_core::hrm::{HrmConfig, HrmModel};
use hrm_lm_core::trainer::{clip_gradients, Schedule};
use hrm_lm_core::{Grads, ModelKind, ParamSet, Rng, Tensor};
use proptest::prelude::*;

fn hrm_config(half_d: usize, vocab: usize, n: usize, t: usize) -> HrmConfig {
    HrmConfig {
        d: 2 * half_d,
        heads: 1,
        vocab,
        seq_len: 3,
        cycles: n,
        steps_per_cycle: t,
        passes: 1,
        grad_window: 1,
        gate_entropy: 0.01,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hrm_formula_matches_stored_tensors(half_d in 1usize..5, vocab in 1usize..20, n in 1usize..4, t in 1usize..4) {
        let c = hrm_config(half_d, vocab, n, t);
        let m = HrmModel::new(c.clone(), &mut Rng::new(1), None).unwrap();
        let counted = enumerate_params(&m.params, true);
        let formula = hrm_params(c.d as u64, vocab as u64);
        prop_assert_eq!(counted.total, formula.total);
        for (stored, derived) in [("embedding", "embedding"), ("encoder", "input"), ("fast", "fast"), ("slow", "slow"), ("fusion", "output")] {
            prop_assert_eq!(counted.get(stored), formula.get(derived), "group {}", stored);
        }
        // Prototypes are stored but frozen.
        let all = enumerate_params(&m.params, false);
        prop_assert_eq!(all.get("proto"), Some(2 * c.d as u64));
    }

    #[test]
    fn baseline_formulas_match_stored_tensors(half_d in 1usize..5, vocab in 1usize..20, layers in 1usize..4) {
        let d = 2 * half_d;
        let tf = TransformerModel::new(TransformerConfig { d, heads: 1, vocab, seq_len: 3, layers }, &mut Rng::new(2), None).unwrap();
        prop_assert_eq!(enumerate_params(&tf.params, true).total, transformer_params(d as u64, vocab as u64, layers as u64).total);
        let u = UniTfModel::new(UniTfConfig { d, heads: 1, vocab, seq_len: 3, steps: layers, grad_window: 1 }, &mut Rng::new(3), None).unwrap();
        prop_assert_eq!(enumerate_params(&u.params, true).total, unitf_params(d as u64, vocab as u64).total);
    }

    #[test]
    fn kv_bytes_scale_linearly(depth in 1u64..40, n in 1u64..5000, heads in 1u64..32, head_dim in 1u64..256, bytes in 1u64..8, k in 1u64..9) {
        let spec = MemorySpec { kind: ModelKind::Hrm, depth, seq_len: n, heads, head_dim, d: heads * head_dim, bytes_per_element: bytes };
        let base = kv_cache_bytes(&spec).unwrap();
        prop_assert_eq!(kv_cache_bytes(&MemorySpec { depth: k * depth, ..spec.clone() }).unwrap(), k * base);
        prop_assert_eq!(kv_cache_bytes(&MemorySpec { seq_len: k * n, ..spec.clone() }).unwrap(), k * base);
        prop_assert_eq!(kv_cache_bytes(&MemorySpec { bytes_per_element: k * bytes, ..spec.clone() }).unwrap(), k * base);
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold(
        values in prop::collection::vec(-1e6f64..1e6, 1..40),
        split in 0usize..40,
        max_norm in 1e-6f64..1e3,
    ) {
        let split = split.min(values.len());
        let mut set = ParamSet::new();
        let mut parts = Vec::new();
        for chunk in [&values[..split], &values[split..]] {
            if !chunk.is_empty() {
                let id = set.add(&format!("p{}", parts.len()), Tensor::zeros(&[chunk.len()]), true, true);
                parts.push((id, chunk.to_vec()));
            }
        }
        let mut grads = Grads::zeros_like(&set);
        for (id, data) in parts {
            *grads.get_mut(id).unwrap() = Tensor::new(&[data.len()], data).unwrap();
        }
        let before = grads.global_norm();
        let outcome = clip_gradients(&mut grads, &set, max_norm).unwrap();
        prop_assert_eq!(outcome.norm, before);
        prop_assert!(grads.global_norm() <= max_norm + 1e-12);
        if before <= max_norm {
            prop_assert_eq!(grads.global_norm(), before);
        }
    }

    #[test]
    fn lr_is_continuous_at_the_warmup_junction(lr_max in 1e-6f64..1e-1, frac in 0.0f64..1.0, warmup in 1u64..5000, extra in 1u64..50000) {
        let s = Schedule { lr_max, lr_min: frac * lr_max, warmup_steps: warmup, max_steps: warmup + extra };
        prop_assert_eq!(s.lr_at(warmup), lr_max);
        // Neighbouring steps differ by no more than one step of either piece.
        let left = s.lr_at(warmup) - s.lr_at(warmup - 1);
        prop_assert!((left - lr_max / warmup as f64).abs() <= 1e-12);
        let right = s.lr_at(warmup) - s.lr_at(warmup + 1);
        let cosine_step = (lr_max - s.lr_min) * (1.0 - (std::f64::consts::PI / extra as f64).cos()) / 2.0;
        prop_assert!((-1e-12..=cosine_step + 1e-12).contains(&right));
    }
}
