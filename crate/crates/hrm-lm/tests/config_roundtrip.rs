use std::path::PathBuf;

use hrm_lm::config::{DataSource, Paths, RunConfig};
use hrm_lm_core::baselines::{TransformerConfig, UniTfConfig};
use hrm_lm_core::data::SyntheticTask;
use hrm_lm_core::hrm::HrmConfig;
use hrm_lm_core::trainer::TrainConfig;
use hrm_lm_core::ModelConfig;
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelConfig> {
    (0usize..3, 1usize..4, 1usize..4, 1usize..300, 1usize..64, 1usize..5, 1usize..5, 1usize..3, 0.0f64..1.0).prop_map(
        |(kind, heads, half_dim, vocab, seq_len, a, b, passes, lambda)| {
            let d = heads * 2 * half_dim;
            match kind {
                0 => ModelConfig::Hrm(HrmConfig {
                    d,
                    heads,
                    vocab,
                    seq_len,
                    cycles: a,
                    steps_per_cycle: b,
                    passes,
                    grad_window: 1 + (a * b - 1) / 2,
                    gate_entropy: lambda,
                }),
                1 => ModelConfig::Transformer(TransformerConfig {
                    d,
                    heads,
                    vocab,
                    seq_len,
                    layers: a,
                }),
                _ => ModelConfig::UniTf(UniTfConfig {
                    d,
                    heads,
                    vocab,
                    seq_len,
                    steps: a * b,
                    grad_window: b,
                }),
            }
        },
    )
}

fn train() -> impl Strategy<Value = TrainConfig> {
    (
        1usize..9,
        1usize..4,
        any::<u64>(),
        1e-6f64..1.0,
        prop::option::of(0.0f64..1e-3),
        prop::option::of(0u64..5000),
        (1u64..100_000, 1u64..1000, 1e-3f64..10.0, 0.0f64..1.0, any::<bool>(), prop::option::of(0.0f64..6.0)),
    )
        .prop_map(|(batch_size, grad_accum, seed, lr_max, lr_min, warmup_steps, rest)| TrainConfig {
            batch_size,
            grad_accum,
            seed,
            lr_max,
            lr_min,
            warmup_steps,
            max_steps: rest.0,
            eval_interval: rest.1,
            clip_base: rest.2,
            weight_decay: rest.3,
            scale_lr_by_passes: rest.4,
            stop_below_val_ce: rest.5,
        })
}

fn data() -> impl Strategy<Value = DataSource> {
    (0usize..4, 1usize..100_000, 1usize..32, prop::option::of(1usize..1000), any::<u64>()).prop_map(
        |(which, len, period, segment, seed)| {
            let task = match which {
                0 => return DataSource::File,
                1 => SyntheticTask::Copy { len, period, segment },
                2 => SyntheticTask::Counting {
                    len,
                    segment: segment.unwrap_or(7),
                },
                _ => SyntheticTask::Mixed {
                    len,
                    period,
                    segment: segment.unwrap_or(7),
                },
            };
            DataSource::Synthetic { task, seed }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_then_parse_is_identity(
        model in model(),
        train in train(),
        data in data(),
        init_std in prop::option::of(1e-4f64..1.0),
        wall in any::<bool>(),
        name in "[a-z][a-z0-9_]{0,12}",
    ) {
        let config = RunConfig {
            paths: Paths {
                corpus: (data == DataSource::File).then(|| PathBuf::from("corpus/text.bin")),
                checkpoint_dir: PathBuf::from(format!("out/{name}/ckpt")),
                metrics_dir: PathBuf::from(format!("out/{name}")),
            },
            name,
            record_wall_time: wall,
            model,
            init_std,
            train,
            data,
        };
        let text = config.to_text();
        let parsed = RunConfig::parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &config);
        prop_assert_eq!(parsed.to_text(), text);
        prop_assert_eq!(config.header().len(), config.entries().len());
    }
}
