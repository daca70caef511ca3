use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_sequence(cfg: &ModelConfig, s: usize, rng: &mut ChaCha8Rng) -> PatchSequence {
    let side = cfg.grid_side();
    let mut cells: Vec<usize> = (0..side * side).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    let coords = cells[..s].iter().map(|&c| (c / side, c % side)).collect();
    let patches = (0..s * cfg.patch_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    PatchSequence::new(patches, coords)
}

/// Every tensor filled with random values so no gradient path is trivially zero.
fn randomized_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = init_params(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let kinds: Vec<(String, ParamKind)> = params.named_tensors().into_iter().map(|t| (t.name, t.kind)).collect();
    for ((name, _), t) in kinds.iter().zip(params.tensors_mut()) {
        for v in t.data.iter_mut() {
            *v = if name.ends_with(".scale") {
                1.0 + rng.random_range(-0.3..0.3)
            } else {
                rng.random_range(-0.5..0.5)
            };
        }
    }
    params
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_weights_give_zero_patch_tokens() {
    let cfg = ModelConfig::tiny();
    let mut params = ModelParams::zeros(&cfg);
    params.class_token.data = (0..cfg.embed_dim).map(|i| i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = encode_input(&random_sequence(&cfg, 4, &mut rng), &params, &cfg).unwrap();
    assert_eq!(seq.len(), 5);
    assert_eq!(seq.token(0), params.class_token.data.as_slice());
    assert!(seq.tokens[cfg.embed_dim..].iter().all(|&v| v == 0.0));
}

#[test]
fn identity_embedding_on_single_pixel_patch() {
    let cfg = ModelConfig {
        input_size: 1,
        patch_size: 1,
        embed_dim: 3,
        num_heads: 1,
        depth: 1,
        mlp_dim: 3,
        num_classes: 2,
        dropout_rate: 0.0,
    };
    let mut params = ModelParams::zeros(&cfg);
    params.patch_embed_w.data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    params.pos_b.data = vec![0.5, -0.25, 1.0];
    params.pos_w.data = vec![7.0; 6];
    let input = PatchSequence::new(vec![0.2, 0.4, 0.6], vec![(0, 0)]);
    let seq = encode_input(&input, &params, &cfg).unwrap();
    // the single cell sits at normalized (0, 0), so only the bias contributes
    let expected = [0.2 + 0.5, 0.4 - 0.25, 0.6 + 1.0];
    for (a, b) in seq.token(1).iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn coordinates_are_normalized_to_unit_square() {
    assert_eq!(normalized_coord(0, 0, 8, 8), [0.0, 0.0]);
    assert_eq!(normalized_coord(7, 7, 8, 8), [1.0, 1.0]);
    assert_eq!(normalized_coord(2, 6, 5, 13), [0.5, 0.5]);
    assert_eq!(normalized_coord(0, 3, 1, 4), [0.0, 1.0]);
}

#[test]
fn base_config_sequence_shape() {
    let cfg = ModelConfig::base(10);
    let params = ModelParams::zeros(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = encode_input(&random_sequence(&cfg, 196, &mut rng), &params, &cfg).unwrap();
    assert_eq!(seq.len(), 197);
    assert_eq!(seq.dim, 768);
}

#[test]
fn encode_rejects_bad_shapes() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::zeros(&cfg);
    let short = PatchSequence::new(vec![0.0; 5], vec![(0, 0)]);
    assert!(encode_input(&short, &params, &cfg).is_err());
    let outside = PatchSequence::new(vec![0.0; 12], vec![(2, 0)]);
    assert!(encode_input(&outside, &params, &cfg).is_err());
    let empty = PatchSequence::new(vec![], vec![]);
    assert!(encode_input(&empty, &params, &cfg).is_err());
}

fn toy_block_cfg() -> ModelConfig {
    ModelConfig {
        input_size: 2,
        patch_size: 1,
        embed_dim: 2,
        num_heads: 1,
        depth: 1,
        mlp_dim: 2,
        num_classes: 2,
        dropout_rate: 0.0,
    }
}

#[test]
fn two_token_attention_hand_computed() {
    let cfg = toy_block_cfg();
    let mut block = ModelParams::zeros(&cfg).blocks.remove(0);
    block.q_w.data = vec![1.0, 0.0, 0.0, 1.0];
    block.k_w.data = vec![1.0, 0.0, 0.0, 1.0];
    block.v_w.data = vec![1.0, 2.0, 3.0, 4.0];
    block.o_w.data = vec![1.0, 0.0, 0.0, 1.0];
    let seq = TokenSequence {
        dim: 2,
        tokens: vec![1.0, 0.0, 0.0, 1.0],
        coords: vec![(0, 0)],
    };
    let out = multi_head_attention(&seq, &block, &cfg);
    // scores are diag(1/sqrt2); each token attends to itself with weight a
    let a = 1.0 / (1.0 + (-1.0 / 2f64.sqrt()).exp());
    let (v1, v2) = ([1.0, 2.0], [3.0, 4.0]);
    let expected = [
        a * v1[0] + (1.0 - a) * v2[0],
        a * v1[1] + (1.0 - a) * v2[1],
        (1.0 - a) * v1[0] + a * v2[0],
        (1.0 - a) * v1[1] + a * v2[1],
    ];
    assert!(max_abs_diff(&out.tokens, &expected) < 1e-12);
}

#[test]
fn single_token_attention_is_projected_value() {
    let cfg = ModelConfig::tiny();
    let params = randomized_params(&cfg, 4);
    let block = &params.blocks[0];
    let token: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
    let seq = TokenSequence {
        dim: 8,
        tokens: token.clone(),
        coords: vec![],
    };
    let probs = attention_probabilities(&seq, block, &cfg);
    assert!(probs.iter().all(|&p| p == 1.0));
    let out = multi_head_attention(&seq, block, &cfg);
    let mut v = block.v_b.data.clone();
    for i in 0..8 {
        for j in 0..8 {
            v[j] += token[i] * block.v_w.data[i * 8 + j];
        }
    }
    let mut o = block.o_b.data.clone();
    for i in 0..8 {
        for j in 0..8 {
            o[j] += v[i] * block.o_w.data[i * 8 + j];
        }
    }
    assert!(max_abs_diff(&out.tokens, &o) < 1e-13);
}

#[test]
fn identical_tokens_give_identical_outputs() {
    let cfg = ModelConfig::tiny();
    let params = randomized_params(&cfg, 5);
    let token: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let seq = TokenSequence {
        dim: 8,
        tokens: token.repeat(4),
        coords: vec![],
    };
    let out = transformer_block(&seq, &params.blocks[0], &cfg, Mode::Eval);
    for i in 1..4 {
        assert!(max_abs_diff(out.token(0), out.token(i)) < 1e-14);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = ModelConfig::desk(3);
    let params = randomized_params(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut seq = encode_input(&random_sequence(&cfg, 20, &mut rng), &params, &cfg).unwrap();
    for block in &params.blocks {
        let n = seq.len();
        let probs = attention_probabilities(&seq, block, &cfg);
        for row in probs.chunks_exact(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        seq = transformer_block(&seq, block, &cfg, Mode::Eval);
    }
}

#[test]
fn zero_branch_weights_make_block_identity() {
    let cfg = ModelConfig::tiny();
    let params = init_params(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = encode_input(&random_sequence(&cfg, 4, &mut rng), &params, &cfg).unwrap();
    let mut block = ModelParams::zeros(&cfg).blocks.remove(0);
    block.norm1_scale.data.fill(1.0);
    block.norm2_scale.data.fill(1.0);
    let out = transformer_block(&seq, &block, &cfg, Mode::Eval);
    assert_eq!(out.tokens, seq.tokens);
}

#[test]
fn eval_is_deterministic_and_train_applies_dropout() {
    let mut cfg = ModelConfig::tiny();
    cfg.dropout_rate = 0.5;
    let params = randomized_params(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = vec![random_sequence(&cfg, 4, &mut rng)];
    let a = forward(&batch, &params, &cfg, Mode::Eval).unwrap();
    let b = forward(&batch, &params, &cfg, Mode::Eval).unwrap();
    assert_eq!(a, b);
    let t1 = forward(&batch, &params, &cfg, Mode::Train { seed: 1 }).unwrap();
    let t1b = forward(&batch, &params, &cfg, Mode::Train { seed: 1 }).unwrap();
    let t2 = forward(&batch, &params, &cfg, Mode::Train { seed: 2 }).unwrap();
    assert_eq!(t1, t1b);
    assert_ne!(t1, a);
    assert_ne!(t1, t2);
}

#[test]
fn logits_shape_on_base_config() {
    let cfg = ModelConfig::base(5);
    let params = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch: Vec<_> = (0..2).map(|_| random_sequence(&cfg, 49, &mut rng)).collect();
    let logits = forward(&batch, &params, &cfg, Mode::Eval).unwrap();
    assert_eq!(logits.rows(), 2);
    assert_eq!(logits.num_classes, 5);
}

#[test]
fn zero_head_outputs_bias() {
    let mut cfg = ModelConfig::tiny();
    cfg.num_classes = 1;
    let mut params = randomized_params(&cfg, 10);
    params.head_w.data.fill(0.0);
    params.head_b.data = vec![0.75];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let batch: Vec<_> = (0..3).map(|_| random_sequence(&cfg, 3, &mut rng)).collect();
    let logits = forward(&batch, &params, &cfg, Mode::Eval).unwrap();
    assert!(logits.data.iter().all(|&z| z == 0.75));
}

#[test]
fn mixed_lengths_rejected() {
    let cfg = ModelConfig::tiny();
    let params = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = vec![random_sequence(&cfg, 3, &mut rng), random_sequence(&cfg, 4, &mut rng)];
    assert!(forward(&batch, &params, &cfg, Mode::Eval).is_err());
}

#[test]
fn initial_loss_is_log_num_classes() {
    let cfg = ModelConfig::desk(3);
    let params = init_params(&cfg, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<_> = (0..4).map(|_| random_sequence(&cfg, 16, &mut rng)).collect();
    let l = loss(&batch, &[0, 1, 2, 0], &params, &cfg, Mode::Eval).unwrap();
    assert!((l - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn duplicated_batch_keeps_mean_loss_and_grad() {
    let cfg = ModelConfig::tiny();
    let params = randomized_params(&cfg, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let batch: Vec<_> = (0..3).map(|_| random_sequence(&cfg, 4, &mut rng)).collect();
    let labels = [0, 2, 1];
    let (l1, g1) = loss_and_grad(&batch, &labels, &params, &cfg, Mode::Eval).unwrap();
    let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
    let (l2, g2) = loss_and_grad(&doubled, &[0, 2, 1, 0, 2, 1], &params, &cfg, Mode::Eval).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    let mut diff = g1.clone();
    diff.add_scaled(&g2, -1.0);
    assert!(diff.global_norm() < 1e-13 * g1.global_norm().max(1.0));
}

#[test]
fn label_out_of_range_rejected() {
    let cfg = ModelConfig::tiny();
    let params = init_params(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let batch = vec![random_sequence(&cfg, 4, &mut rng)];
    assert!(loss_and_grad(&batch, &[3], &params, &cfg, Mode::Eval).is_err());
    assert!(loss_and_grad(&batch, &[], &params, &cfg, Mode::Eval).is_err());
}

#[test]
fn loss_and_grad_loss_matches_forward() {
    let cfg = ModelConfig::tiny();
    let params = randomized_params(&cfg, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let batch: Vec<_> = (0..5).map(|_| random_sequence(&cfg, 4, &mut rng)).collect();
    let labels = [0, 1, 2, 1, 0];
    let (l, _) = loss_and_grad(&batch, &labels, &params, &cfg, Mode::Eval).unwrap();
    let l2 = loss(&batch, &labels, &params, &cfg, Mode::Eval).unwrap();
    assert!((l - l2).abs() < 1e-14);
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = ModelConfig::tiny();
    let params = randomized_params(&cfg, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let batch: Vec<_> = (0..2).map(|_| random_sequence(&cfg, 4, &mut rng)).collect();
    let labels = [1, 2];
    let (_, grad) = loss_and_grad(&batch, &labels, &params, &cfg, Mode::Eval).unwrap();
    let h = 1e-5;
    let names: Vec<String> = params.named_tensors().into_iter().map(|t| t.name).collect();
    let analytic: Vec<Vec<f64>> = grad.named_tensors().iter().map(|t| t.tensor.data.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..analytic[ti].len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].data[j] += delta;
                loss(&batch, &labels, &p, &cfg, Mode::Eval).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[ti][j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{name}: relative error {worst:e}");
    }
}

#[test]
fn dropout_gradients_match_finite_differences() {
    let mut cfg = ModelConfig::tiny();
    cfg.dropout_rate = 0.3;
    let params = randomized_params(&cfg, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let batch: Vec<_> = (0..2).map(|_| random_sequence(&cfg, 4, &mut rng)).collect();
    let labels = [0, 2];
    let mode = Mode::Train { seed: 99 };
    let (_, grad) = loss_and_grad(&batch, &labels, &params, &cfg, mode).unwrap();
    let h = 1e-5;
    for (ti, t) in grad.named_tensors().iter().enumerate() {
        for j in 0..t.tensor.len().min(6) {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].data[j] += delta;
                loss(&batch, &labels, &p, &cfg, mode).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = t.tensor.data[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "{}[{j}]: {a} vs {fd}", t.name);
        }
    }
}

#[test]
fn patch_order_does_not_change_eval_logits() {
    let cfg = ModelConfig::desk(3);
    let params = randomized_params(&cfg, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let seq = random_sequence(&cfg, 24, &mut rng);
    let base = forward(std::slice::from_ref(&seq), &params, &cfg, Mode::Eval).unwrap();
    let mut order: Vec<usize> = (0..24).collect();
    for _ in 0..5 {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = forward(&[seq.permuted(&order)], &params, &cfg, Mode::Eval).unwrap();
        assert!(max_abs_diff(&base.data, &permuted.data) < 1e-10);
    }
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    let logits = Logits {
        num_classes: 3,
        data: vec![1.0, 1.0, 0.0, -1.0, 2.0, 2.0],
    };
    assert_eq!(logits.argmax(), vec![0, 1]);
}

#[test]
fn cross_entropy_of_uniform_logits() {
    let (l, g) = cross_entropy(&[0.3, 0.3, 0.3, 0.3], 2);
    assert!((l - 4f64.ln()).abs() < 1e-15);
    assert!((g.iter().sum::<f64>()).abs() < 1e-15);
}
