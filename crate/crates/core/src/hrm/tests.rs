use super::*;
use crate::gradcheck::{analytic_gradients, compare_with_finite_differences, grad_check, relative_error};
use crate::params::Grads;

fn config(d: usize, n: usize, cycles: usize, t: usize, passes: usize, k: usize) -> HrmConfig {
    HrmConfig {
        d,
        heads: 2,
        vocab: 11,
        seq_len: n,
        cycles,
        steps_per_cycle: t,
        passes,
        grad_window: k,
        gate_entropy: DEFAULT_GATE_ENTROPY,
    }
}

fn model(cfg: HrmConfig, std: Option<f64>) -> HrmModel {
    HrmModel::new(cfg, &mut Rng::new(7), std).unwrap()
}

fn tokens(n: usize, vocab: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let stream: Vec<usize> = (0..=n).map(|_| rng.below(vocab)).collect();
    (stream[..n].to_vec(), stream[1..].to_vec())
}

fn forward(m: &HrmModel, x: &[usize], y: &[usize], options: &ForwardOptions<'_>) -> (f64, ForwardOutput) {
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let out = m.forward_loss(&mut tape, &bound, x, y, options).unwrap();
    (tape.value(out.loss).item(), out)
}

fn grads_of(m: &HrmModel, x: &[usize], y: &[usize], anchors: Option<&[PassAnchor]>) -> Grads {
    analytic_gradients(&m.params, &|t: &mut Tape, b: &BoundParams| {
        let options = ForwardOptions {
            anchors,
            ..Default::default()
        };
        Ok(m.forward_loss(t, b, x, y, &options)?.loss)
    })
    .unwrap()
}

fn max_rel(a: &Grads, b: &Grads) -> f64 {
    a.iter()
        .flat_map(|(id, g)| {
            let other = b.get(id).unwrap();
            g.data()
                .iter()
                .zip(other.data())
                .map(|(&p, &q)| relative_error(p, q))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[test]
fn trainable_count_matches_grouped_enumeration() {
    for d in [2usize, 4, 8] {
        let mut cfg = config(d, 4, 2, 2, 1, 4);
        cfg.heads = 1;
        let m = model(cfg, None);
        let (d, v) = (d as u64, 11u64);
        let block = 16 * d * d + 2 * d;
        let emb = v * d;
        let fast = 3 * d + 2 * (3 * d * d) + block + d * d + 1;
        let slow = 2 * d + 2 * (2 * d * d) + block + d * d + 1;
        let fusion = 3 * d + 3 * d * 3 + d * d + 1;
        assert_eq!(m.params.trainable_numel() as u64, emb + block + fast + slow + fusion);
        assert_eq!(m.params.numel() as u64, emb + block + fast + slow + fusion + 2 * d);
    }
}

#[test]
fn init_values() {
    let m = model(config(8, 6, 2, 2, 1, 4), None);
    let p = &m.params;
    assert_eq!(p.value(m.layout.fast.alpha).item(), 0.1);
    assert_eq!(p.value(m.layout.slow.alpha).item(), 0.1);
    assert_eq!(p.value(m.layout.fusion.tau).item(), 1.0);
    for id in [m.layout.proto_h, m.layout.proto_l] {
        assert!(!p.get(id).trainable);
        assert!(p.value(id).data().iter().all(|v| (-2.0..=2.0).contains(v)));
    }
    // M = 4: recurrent matrices use σ = 0.01, the embedding 0.02.
    let big = model(
        HrmConfig {
            d: 32,
            heads: 2,
            vocab: 200,
            ..config(32, 6, 2, 2, 1, 4)
        },
        None,
    );
    let sd = |id: ParamId| {
        let t = big.params.value(id);
        libm::sqrt(t.sum_squares() / t.numel() as f64)
    };
    assert!((sd(big.layout.fast.block.w1) - 0.01).abs() < 5e-4);
    assert!((sd(big.layout.encoder.w1) - 0.01).abs() < 5e-4);
    assert!((sd(big.layout.embedding) - 0.02).abs() < 1e-3);
}

// Straight-line single-position reimplementation of the Fast-module.
mod oracle {
    use alloc::vec::Vec;

    pub fn rms(v: &[f64], s: &[f64]) -> Vec<f64> {
        let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let inv = 1.0 / libm::sqrt(ms + 1e-6);
        v.iter().zip(s).map(|(x, g)| x * inv * g).collect()
    }

    pub fn vecmat(v: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
        (0..cols)
            .map(|j| v.iter().enumerate().map(|(i, x)| x * w[i * cols + j]).sum())
            .collect()
    }

    pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + libm::exp(-x))
    }

    pub struct Block<'a> {
        pub qkv: &'a [f64],
        pub o: &'a [f64],
        pub w1: &'a [f64],
        pub w2: &'a [f64],
        pub w3: &'a [f64],
        pub na: &'a [f64],
        pub nf: &'a [f64],
    }

    // One position attends only to itself, at rotation angle zero.
    pub fn block(x: &[f64], b: &Block) -> Vec<f64> {
        let d = x.len();
        let qkv = vecmat(x, b.qkv, 3 * d);
        let attn = vecmat(&qkv[2 * d..], b.o, d);
        let mid = rms(&add(x, &attn), b.na);
        let a = vecmat(&mid, b.w1, 4 * d);
        let g = vecmat(&mid, b.w2, 4 * d);
        let hidden: Vec<f64> = a.iter().zip(&g).map(|(a, g)| a * g * sigmoid(*g)).collect();
        let ffn = vecmat(&hidden, b.w3, d);
        rms(&add(&mid, &ffn), b.nf)
    }
}

fn oracle_gated(m: &HrmModel, module: &GatedModule, context: &[f64], state: &[f64]) -> Vec<f64> {
    let p = &m.params;
    let v = |id: ParamId| p.value(id).data();
    let d = state.len();
    let c = oracle::rms(context, v(module.context_norm));
    let g: Vec<f64> = oracle::vecmat(&c, v(module.gate), d).into_iter().map(oracle::sigmoid).collect();
    let u = oracle::vecmat(&c, v(module.input), d);
    let b = &module.block;
    let h = oracle::block(
        &u,
        &oracle::Block {
            qkv: v(b.w_qkv),
            o: v(b.w_o),
            w1: v(b.w1),
            w2: v(b.w2),
            w3: v(b.w3),
            na: v(b.norm_attn),
            nf: v(b.norm_ffn),
        },
    );
    let alpha = p.value(module.alpha).item();
    let inj: Vec<f64> = oracle::vecmat(&h, v(module.output), d).iter().map(|x| alpha * x).collect();
    (0..d).map(|i| g[i] * state[i] + (1.0 - g[i]) * inj[i]).collect()
}

fn single_position() -> (HrmModel, [Vec<f64>; 3]) {
    let mut cfg = config(2, 1, 1, 1, 1, 1);
    cfg.heads = 1;
    let mut m = model(cfg, Some(0.7));
    // Exercise non-trivial norm scales and α.
    let mut rng = Rng::new(3);
    for id in [m.layout.fast.context_norm, m.layout.slow.context_norm, m.layout.fast.block.norm_ffn] {
        let shape = m.params.value(id).shape().to_vec();
        *m.params.value_mut(id) = rng.normal_tensor(&shape, 1.0, 0.3);
    }
    *m.params.value_mut(m.layout.fast.alpha) = Tensor::scalar(0.37);
    let states = [
        vec![0.8, -1.3],
        vec![-0.4, 0.25],
        vec![1.1, 0.6],
    ];
    (m, states)
}

#[test]
fn fast_update_matches_straight_line_oracle() {
    let (m, [zl, zh, x]) = single_position();
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let vars: Vec<Var> = [&zl, &zh, &x]
        .iter()
        .map(|v| tape.constant(Tensor::new(&[1, 2], v.to_vec()).unwrap()))
        .collect();
    let out = m.fast_update(&mut tape, &bound, vars[0], vars[1], vars[2]).unwrap();
    let context: Vec<f64> = zl.iter().chain(&zh).chain(&x).copied().collect();
    let expected = oracle_gated(&m, &m.layout.fast, &context, &zl);
    for (a, b) in tape.value(out).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn slow_update_matches_straight_line_oracle() {
    let (m, [zl, zh, _]) = single_position();
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let h = tape.constant(Tensor::new(&[1, 2], zh.clone()).unwrap());
    let l = tape.constant(Tensor::new(&[1, 2], zl.clone()).unwrap());
    let out = m.slow_update(&mut tape, &bound, h, l).unwrap();
    let context: Vec<f64> = zh.iter().chain(&zl).copied().collect();
    let expected = oracle_gated(&m, &m.layout.slow, &context, &zh);
    for (a, b) in tape.value(out).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // H sees tokens only through z_L.
    let l2 = tape.constant(Tensor::new(&[1, 2], vec![zl[0] + 0.5, zl[1]]).unwrap());
    let out2 = m.slow_update(&mut tape, &bound, h, l2).unwrap();
    assert_ne!(tape.value(out), tape.value(out2));
}

#[test]
fn zero_alpha_is_pure_gated_decay() {
    let mut m = model(config(8, 5, 1, 1, 1, 1), Some(0.2));
    *m.params.value_mut(m.layout.fast.alpha) = Tensor::scalar(0.0);
    *m.params.value_mut(m.layout.slow.alpha) = Tensor::scalar(0.0);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let mut rng = Rng::new(5);
    let zl = tape.constant(rng.normal_tensor(&[5, 8], 0.0, 1.0));
    let zh = tape.constant(rng.normal_tensor(&[5, 8], 0.0, 1.0));
    let x = tape.constant(rng.normal_tensor(&[5, 8], 0.0, 1.0));
    for (module, context, state) in [
        (&m.layout.fast, vec![zl, zh, x], zl),
        (&m.layout.slow, vec![zh, zl], zh),
    ] {
        let step = m.gated_update(&mut tape, &bound, module, &context, state).unwrap();
        let c = tape.concat_cols(&context).unwrap();
        let c = tape.rms_norm(c, bound[module.context_norm], NORM_EPS).unwrap();
        let pre = tape.matmul(c, bound[module.gate]).unwrap();
        let g = tape.sigmoid(pre).unwrap();
        let decay = tape.mul(g, state).unwrap();
        assert_eq!(tape.value(step.state), tape.value(decay));
    }
}

#[test]
fn saturated_gate_keeps_state() {
    let mut m = model(config(8, 3, 1, 1, 1, 1), Some(0.2));
    *m.params.value_mut(m.layout.fast.gate) = Tensor::full(&[24, 8], 50.0);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let mut rng = Rng::new(9);
    let positive = |rng: &mut Rng| Tensor::from_fn(&[3, 8], |_| 0.5 + rng.uniform());
    let zl = tape.constant(positive(&mut rng));
    let zh = tape.constant(positive(&mut rng));
    let x = tape.constant(positive(&mut rng));
    let out = m.fast_update(&mut tape, &bound, zl, zh, x).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(tape.value(zl).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn forward_is_independent_of_window() {
    let x_y = tokens(6, 11, 1);
    let m_cfg = config(8, 6, 2, 3, 2, 1);
    let m = model(m_cfg.clone(), None);
    let reference = forward(&m, &x_y.0, &x_y.1, &ForwardOptions::default());
    for k in [2usize, 6] {
        let mut other = m.clone();
        other.config.grad_window = k;
        let run = forward(&other, &x_y.0, &x_y.1, &ForwardOptions::default());
        assert_eq!(run.0.to_bits(), reference.0.to_bits());
        assert_eq!(run.1.final_z_h, reference.1.final_z_h);
        assert_eq!(run.1.final_z_l, reference.1.final_z_l);
        assert_eq!(run.1.trace, reference.1.trace);
    }
}

#[test]
fn window_controls_recorded_steps() {
    let (x, y) = tokens(4, 11, 2);
    let mut m = model(config(8, 4, 4, 1, 1, 4), None);
    let count = |m: &HrmModel| {
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        m.forward_loss(&mut tape, &bound, &x, &y, &ForwardOptions::default()).unwrap();
        tape.recorded_ops()
    };
    let full = count(&m);
    m.config.grad_window = 1;
    let one = count(&m);
    m.config.grad_window = 2;
    let two = count(&m);
    // With T = 1 every step fires the Slow-module, so each costs the same.
    assert_eq!(full - one, 3 * (two - one));
}

#[test]
fn slow_module_fires_on_cycle_boundaries() {
    let (x, y) = tokens(5, 11, 3);
    let m = model(config(8, 5, 4, 3, 1, 2), None);
    let options = ForwardOptions {
        record_states: true,
        ..Default::default()
    };
    let (_, out) = forward(&m, &x, &y, &options);
    assert_eq!(out.trace.len(), 12);
    let fired: Vec<usize> = out.trace.iter().filter(|r| r.h_fired).map(|r| r.step).collect();
    assert_eq!(fired, [3, 6, 9, 12]);
    let states = out.states.unwrap();
    let mut previous = Tensor::broadcast_rows(m.params.value(m.layout.proto_h).data(), 5);
    for (i, s) in states.iter().enumerate() {
        assert_eq!(s.z_h == previous, (i + 1) % 3 != 0, "step {}", i + 1);
        previous = s.z_h.clone();
    }
}

#[test]
fn frozen_slow_module_never_fires() {
    let (x, y) = tokens(5, 11, 3);
    let m = model(config(8, 5, 2, 2, 2, 4), None);
    let options = ForwardOptions {
        freeze_slow: true,
        ..Default::default()
    };
    let (_, out) = forward(&m, &x, &y, &options);
    assert!(out.trace.iter().all(|r| !r.h_fired));
    let proto = Tensor::broadcast_rows(m.params.value(m.layout.proto_h).data(), 5);
    assert_eq!(out.final_z_h, proto);
}

#[test]
fn fusion_weights_are_distributions() {
    let (x, y) = tokens(6, 11, 4);
    let mut m = model(config(8, 6, 1, 2, 1, 2), Some(0.3));
    let weights = |m: &HrmModel| {
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let xt = m.input_encode(&mut tape, &bound, &x).unwrap();
        let (h, l) = m.initial_state(&mut tape, &bound, 6);
        let f = m.output_fusion(&mut tape, &bound, h, l, xt).unwrap();
        tape.value(f.weights).clone()
    };
    for row in weights(&m).data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().any(|w| (w - 1.0 / 3.0).abs() > 1e-3));
    }
    *m.params.value_mut(m.layout.fusion.tau) = Tensor::scalar(1e6);
    assert!(weights(&m).data().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-6));
    *m.params.value_mut(m.layout.fusion.tau) = Tensor::scalar(1.0);
    *m.params.value_mut(m.layout.fusion.gate) = Tensor::zeros(&[24, 3]);
    assert!(weights(&m).data().iter().all(|&w| w == 1.0 / 3.0));
    let _ = y;
    *m.params.value_mut(m.layout.fusion.tau) = Tensor::scalar(0.0);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let err = m.forward_loss(&mut tape, &bound, &x, &tokens(6, 11, 4).1, &ForwardOptions::default());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn near_zero_weights_predict_uniformly() {
    let (x, y) = tokens(6, 11, 5);
    let mut cfg = config(8, 6, 1, 2, 1, 2);
    cfg.gate_entropy = 0.0;
    let m = model(cfg, Some(1e-4));
    let (loss, out) = forward(&m, &x, &y, &ForwardOptions::default());
    assert!((loss - libm::log(11.0)).abs() < 1e-6);
    assert!((out.pass_ce[0] - libm::log(11.0)).abs() < 1e-6);
}

#[test]
fn loss_subtracts_entropy_bonus() {
    let (x, y) = tokens(6, 11, 6);
    let mut m = model(config(8, 6, 1, 2, 1, 2), Some(0.3));
    *m.params.value_mut(m.layout.fusion.gate) = Tensor::zeros(&[24, 3]);
    let (loss, out) = forward(&m, &x, &y, &ForwardOptions::default());
    assert_eq!(out.pass_weights[0], [1.0 / 3.0; 3]);
    let expected = out.pass_ce[0] - DEFAULT_GATE_ENTROPY * libm::log(3.0);
    assert!((loss - expected).abs() < 1e-14);
}

#[test]
fn tokens_outside_vocabulary_are_rejected() {
    let m = model(config(8, 4, 1, 2, 1, 2), None);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let err = m.input_encode(&mut tape, &bound, &[1, 11]).unwrap_err();
    assert_eq!(err, Error::Vocab { token: 11, vocab: 11 });
}

#[test]
fn encoder_is_pure() {
    let m = model(config(8, 4, 1, 2, 1, 2), None);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    let a = m.input_encode(&mut tape, &bound, &[1, 2, 3, 4]).unwrap();
    let b = m.input_encode(&mut tape, &bound, &[1, 2, 3, 4]).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert_eq!(tape.value(a).shape(), &[4, 8]);
}

#[test]
fn logits_use_the_embedding_matrix() {
    let (x, y) = tokens(4, 11, 7);
    let mut m = model(config(8, 4, 1, 2, 1, 2), Some(0.3));
    let unused = (0..11).find(|t| !x.contains(t)).unwrap();
    let logits = |m: &HrmModel| {
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let xt = m.input_encode(&mut tape, &bound, &x).unwrap();
        let (h, l) = m.initial_state(&mut tape, &bound, 4);
        let f = m.output_fusion(&mut tape, &bound, h, l, xt).unwrap();
        tape.value(f.logits).clone()
    };
    let before = logits(&m);
    let emb = m.layout.embedding;
    m.params.value_mut(emb).data_mut()[unused * 8] += 1.0;
    let after = logits(&m);
    for pos in 0..4 {
        for tok in 0..11 {
            let changed = before.get(pos, tok) != after.get(pos, tok);
            assert_eq!(changed, tok == unused);
        }
    }
    assert!(m.params.iter().all(|p| p.value.shape() != [8, 11]));
    let _ = y;
}

#[test]
fn detached_passes_contribute_independent_gradients() {
    let (x, y) = tokens(6, 11, 8);
    let m = model(config(8, 6, 2, 2, 2, 2), Some(0.3));
    let (_, out) = forward(&m, &x, &y, &ForwardOptions::default());
    let total = grads_of(&m, &x, &y, None);

    let mut single = m.clone();
    single.config.passes = 1;
    let first = grads_of(&single, &x, &y, None);
    // Pass 2 as its own run, its window starting from pass 1's detached output
    // advanced through the gradient-free warm-up.
    let second = grads_of(&single, &x, &y, Some(&out.anchors[1..]));

    let mut sum = first.clone();
    for (id, g) in second.iter() {
        sum.get_mut(id).unwrap().add_scaled(g, 1.0).unwrap();
    }
    sum.scale(0.5);
    let err = max_rel(&total, &sum);
    assert!(err < 1e-10, "{err}");
    assert!(max_rel(&first, &second) > 1e-3);
}

#[test]
fn removing_a_later_pass_leaves_earlier_gradients() {
    let (x, y) = tokens(6, 11, 9);
    let m = model(config(8, 6, 2, 2, 3, 4), Some(0.3));
    let (_, out) = forward(&m, &x, &y, &ForwardOptions::default());
    let mut two = m.clone();
    two.config.passes = 2;
    let mut one = m.clone();
    one.config.passes = 1;
    let g3 = grads_of(&m, &x, &y, None);
    let g2 = grads_of(&two, &x, &y, None);
    let third = grads_of(&one, &x, &y, Some(&out.anchors[2..]));
    // 3·g3 = 2·g2 + g(pass 3)
    let mut lhs = g3.clone();
    lhs.scale(3.0);
    let mut rhs = g2.clone();
    rhs.scale(2.0);
    for (id, g) in third.iter() {
        rhs.get_mut(id).unwrap().add_scaled(g, 1.0).unwrap();
    }
    assert!(max_rel(&lhs, &rhs) < 1e-10);
}

#[test]
fn anchored_objective_has_the_truncated_gradient() {
    let (x, y) = tokens(6, 11, 10);
    let m = model(config(8, 6, 2, 2, 2, 2), Some(0.3));
    let (loss, out) = forward(&m, &x, &y, &ForwardOptions::default());
    let anchored_options = ForwardOptions {
        anchors: Some(&out.anchors),
        ..Default::default()
    };
    let (anchored, _) = forward(&m, &x, &y, &anchored_options);
    assert_eq!(loss.to_bits(), anchored.to_bits());
    let a = grads_of(&m, &x, &y, None);
    let b = grads_of(&m, &x, &y, Some(&out.anchors));
    assert_eq!(max_rel(&a, &b), 0.0);
}

fn full_model_grad_check(std: f64, eps: f64) -> crate::gradcheck::GradCheckReport {
    let (x, y) = tokens(6, 11, 11);
    let m = model(config(8, 6, 2, 2, 2, 4), Some(std));
    let (_, out) = forward(&m, &x, &y, &ForwardOptions::default());
    let anchors = out.anchors;
    grad_check(&m.params, eps, |t, b| {
        let options = ForwardOptions {
            anchors: Some(&anchors),
            ..Default::default()
        };
        Ok(m.forward_loss(t, b, &x, &y, &options)?.loss)
    })
    .unwrap()
}

#[test]
fn full_model_gradient_check() {
    let report = full_model_grad_check(0.3, 1e-3);
    assert!(report.max_rel_err < 1e-5, "{report:?}");
    let m = model(config(8, 6, 2, 2, 2, 4), None);
    assert_eq!(report.checked, m.params.trainable_numel());
}

#[test]
fn corrupted_gradient_fails_the_check() {
    let (x, y) = tokens(6, 11, 11);
    let m = model(config(8, 6, 2, 2, 1, 4), Some(0.3));
    let loss = |t: &mut Tape, b: &BoundParams| Ok(m.forward_loss(t, b, &x, &y, &ForwardOptions::default())?.loss);
    let mut grads = analytic_gradients(&m.params, &loss).unwrap();
    grads.get_mut(m.layout.fast.alpha).unwrap().scale_in_place(1.5);
    let report = compare_with_finite_differences(&m.params, 1e-5, &grads, &loss).unwrap();
    assert!(report.max_rel_err > 0.1);
    assert_eq!(report.worst_param, "fast.alpha");
}

#[test]
fn trace_satisfies_the_stability_bound() {
    let (x, y) = tokens(6, 11, 12);
    let m = model(config(8, 6, 3, 2, 2, 3), Some(0.5));
    let trace = m.trace(&x, &y, &ForwardOptions::default()).unwrap();
    assert_eq!(trace.len(), 12);
    for r in &trace {
        assert!(r.zl_inf_after <= r.zl_inf_before.max(r.injection_inf) + 1e-12);
        assert!(r.gate_mean > 0.0 && r.gate_mean < 1.0);
    }
}

#[test]
fn sequence_longer_than_rope_table_is_rejected() {
    let m = model(config(8, 4, 1, 2, 1, 2), None);
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape);
    assert!(matches!(m.input_encode(&mut tape, &bound, &[1; 5]), Err(Error::Data(_))));
}

