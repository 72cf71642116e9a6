use lvp_core::codec::CodeGrid;
use lvp_core::dynamics::{
    flatten_codes, loss_targets, nll_loss, DynamicsConfig, KvCache, Rollout, Sampler, TokenSequence, Transformer,
};
use lvp_core::params::Bound;
use lvp_core::Error;
use lvp_tensor::check::check_gradients;
use lvp_tensor::{Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(action_dim: usize) -> DynamicsConfig {
    DynamicsConfig {
        layers: 2,
        heads: 2,
        width: 16,
        vocab: 11,
        context: 64,
        cond_frames: 1,
        frames: 4,
        grid_height: 2,
        grid_width: 2,
        action_dim,
    }
}

fn random_sequence(cfg: &DynamicsConfig, frames: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
    let s = cfg.tokens_per_frame();
    let grids: Vec<CodeGrid> = (0..frames)
        .map(|_| CodeGrid::new(cfg.grid_height, cfg.grid_width, (0..s).map(|_| rng.random_range(0..cfg.vocab)).collect()).unwrap())
        .collect();
    let actions = (cfg.action_dim > 0).then(|| Tensor::<f32>::uniform(&[frames, cfg.action_dim], -2.0, 2.0, rng));
    flatten_codes(&grids, cfg.cond_frames, actions.as_ref()).unwrap()
}

fn grids_of(codes: &[usize], cfg: &DynamicsConfig) -> Vec<CodeGrid> {
    codes
        .chunks(cfg.tokens_per_frame())
        .map(|c| CodeGrid::new(cfg.grid_height, cfg.grid_width, c.to_vec()).unwrap())
        .collect()
}

#[test]
fn token_counts_for_twelve_and_thirty_frame_clips() {
    let grid = |_| CodeGrid::new(16, 16, vec![0; 256]).unwrap();
    let short: Vec<CodeGrid> = (0..12).map(grid).collect();
    let seq = flatten_codes(&short, 2, None).unwrap();
    assert_eq!(seq.len(), 3072);
    assert_eq!(seq.n_targets(), 2560);
    let long: Vec<CodeGrid> = (0..30).map(grid).collect();
    assert_eq!(flatten_codes(&long, 5, None).unwrap().n_targets(), 6400);
}

proptest! {
    #[test]
    fn loss_positions_equal_future_code_count(t in 2usize..9, c_frac in 0.0f64..1.0, h in 1usize..5, w in 1usize..5, batch in 1usize..4) {
        let c = 1 + ((t - 1) as f64 * c_frac) as usize % (t - 1);
        let grids: Vec<CodeGrid> = (0..t).map(|_| CodeGrid::new(h, w, vec![0; h * w]).unwrap()).collect();
        let seq = flatten_codes(&grids, c, None).unwrap();
        prop_assert_eq!(seq.n_targets(), (t - c) * h * w);
        let seqs = vec![seq; batch];
        let (rows, targets) = loss_targets(&seqs);
        prop_assert_eq!(rows.len(), batch * (t - c) * h * w);
        prop_assert_eq!(targets.len(), rows.len());
    }
}

#[test]
fn logits_are_causal_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..50u64 {
        let cfg = small_config(if instance % 2 == 0 { 0 } else { 2 });
        let model = Transformer::new(cfg.clone(), instance).unwrap();
        let seq = random_sequence(&cfg, 4, &mut rng);
        let base = model.logits(&seq).unwrap();
        let j = rng.random_range(1..seq.len());
        let mut changed = seq.clone();
        for p in j..seq.len() {
            changed.codes[p] = rng.random_range(0..cfg.vocab);
        }
        let after = model.logits(&changed).unwrap();
        let k = cfg.vocab;
        let bits = |t: &Tensor<f32>| t.data()[..j * k].iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&base), bits(&after), "instance {instance}, j = {j}");
    }
}

#[test]
fn zero_layers_is_position_local() {
    let cfg = DynamicsConfig {
        layers: 0,
        ..small_config(0)
    };
    let model = Transformer::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = random_sequence(&cfg, 4, &mut rng);
    let base = model.logits(&seq).unwrap();
    let mut changed = seq.clone();
    changed.codes[5] = (changed.codes[5] + 1) % cfg.vocab;
    let after = model.logits(&changed).unwrap();
    let k = cfg.vocab;
    for row in 0..seq.len() {
        let same = base.data()[row * k..(row + 1) * k] == after.data()[row * k..(row + 1) * k];
        assert_eq!(same, row != 5, "row {row}");
    }
}

#[test]
fn uniform_logits_give_log_vocab() {
    let cfg = DynamicsConfig {
        vocab: 256,
        ..small_config(0)
    };
    let mut model = Transformer::new(cfg.clone(), 0).unwrap();
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    let mut named: Vec<(String, Tensor<f32>)> = model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    for (n, t) in named.iter_mut() {
        if n.starts_with("head.") {
            *t = Tensor::zeros(t.shape());
        }
    }
    assert_eq!(names.len(), named.len());
    model.params.load(named).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = random_sequence(&cfg, 4, &mut rng);
    let mut tape = Tape::<f32>::new();
    let b = model.params.bind(&mut tape, false);
    let logits = model.forward_logits(&mut tape, &b, std::slice::from_ref(&seq)).unwrap();
    let loss = nll_loss(&mut tape, logits, std::slice::from_ref(&seq)).unwrap();
    assert!((tape.value(loss).item() as f64 - 256f64.ln()).abs() < 1e-5);
}

#[test]
fn conditioning_rows_do_not_enter_the_loss() {
    let cfg = DynamicsConfig {
        cond_frames: 2,
        ..small_config(0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = random_sequence(&cfg, 4, &mut rng);
    let l = seq.len();
    let logits = Tensor::<f64>::randn(&[l, cfg.vocab], 1.0, &mut rng);
    let loss_of = |lg: Tensor<f64>| {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(lg);
        let loss = nll_loss(&mut tape, v, std::slice::from_ref(&seq)).unwrap();
        tape.value(loss).item()
    };
    let base = loss_of(logits.clone());
    let mut perturbed = logits.clone();
    // rows 0..c·S−1 predict conditioning codes; row c·S−1 predicts the first target
    let cond_rows = cfg.cond_frames * cfg.tokens_per_frame() - 1;
    for v in &mut perturbed.data_mut()[..cond_rows * cfg.vocab] {
        *v += 3.7;
    }
    assert_eq!(loss_of(perturbed), base);
    let mut target_row = logits;
    target_row.data_mut()[cond_rows * cfg.vocab] += 3.7;
    assert_ne!(loss_of(target_row), base);
}

#[test]
fn actions_are_ignored_without_action_width() {
    let cfg = small_config(0);
    let model = Transformer::new(cfg.clone(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seq = random_sequence(&cfg, 4, &mut rng);
    let mut with = seq.clone();
    with.actions = Some(vec![vec![1.0, -1.0]; 4]);
    assert_eq!(model.logits(&seq).unwrap(), model.logits(&with).unwrap());
}

#[test]
fn missing_actions_are_a_config_error() {
    let cfg = small_config(2);
    let model = Transformer::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seq = random_sequence(&cfg, 4, &mut rng);
    seq.actions = None;
    assert!(matches!(model.logits(&seq), Err(Error::Config(_))));
}

#[test]
fn overlong_sequence_is_a_capacity_error() {
    let cfg = small_config(0);
    let model = Transformer::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = random_sequence(&cfg, 17, &mut rng);
    assert!(matches!(model.logits(&seq), Err(Error::Capacity(_))));
}

#[test]
fn out_of_vocabulary_code_is_rejected() {
    let cfg = small_config(0);
    let model = Transformer::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seq = random_sequence(&cfg, 2, &mut rng);
    seq.codes[3] = cfg.vocab;
    assert!(model.logits(&seq).is_err());
}

#[test]
fn cached_steps_match_the_full_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for action_dim in [0, 2] {
        let cfg = small_config(action_dim);
        let model = Transformer::new(cfg.clone(), 4).unwrap();
        // a frame beyond the table exercises the repeated frame embedding
        let seq = random_sequence(&cfg, 6, &mut rng);
        let full = model.logits(&seq).unwrap();
        let mut cache = KvCache::new(&model);
        for (i, &code) in seq.codes.iter().enumerate() {
            let action = seq.actions.as_ref().map(|a| a[seq.frame_index[i]].as_slice());
            let row = cache.step(code, action).unwrap();
            let want = &full.data()[i * cfg.vocab..(i + 1) * cfg.vocab];
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() < 1e-4, "position {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn extended_rollout_equals_single_rollout() {
    let cfg = small_config(2);
    let model = Transformer::new(cfg.clone(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seq = random_sequence(&cfg, 1, &mut rng);
    let cond = grids_of(&seq.codes, &cfg);
    let actions: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32 * 0.1, -0.5]).collect();
    let sampler = Sampler {
        k: 5,
        temperature: 1.0,
    };

    let mut r1 = ChaCha8Rng::seed_from_u64(99);
    let mut single = Rollout::new(&model, &cond, Some(actions.clone())).unwrap();
    let once = single.extend(7, &sampler, &mut r1).unwrap();

    let mut r2 = ChaCha8Rng::seed_from_u64(99);
    let mut split = Rollout::new(&model, &cond, Some(actions)).unwrap();
    let mut twice = split.extend(3, &sampler, &mut r2).unwrap();
    twice.extend(split.extend(4, &sampler, &mut r2).unwrap());
    assert_eq!(once, twice);
}

#[test]
fn greedy_rollout_is_deterministic() {
    let cfg = small_config(0);
    let model = Transformer::new(cfg.clone(), 2).unwrap();
    let cond = grids_of(&[1, 2, 3, 4], &cfg);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Rollout::new(&model, &cond, None).unwrap().extend(5, &Sampler::greedy(), &mut rng).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_eq!(run(1), run(2));
}

#[test]
fn rollout_past_the_context_reports_the_budget() {
    let cfg = small_config(0);
    let model = Transformer::new(cfg.clone(), 2).unwrap();
    let cond = grids_of(&[1, 2, 3, 4], &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut r = Rollout::new(&model, &cond, None).unwrap();
    match r.extend(16, &Sampler::greedy(), &mut rng) {
        Err(Error::Capacity(msg)) => assert!(msg.contains("68"), "{msg}"),
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn attention_block_gradients_match_finite_differences() {
    let cfg = DynamicsConfig {
        layers: 1,
        heads: 2,
        width: 8,
        vocab: 5,
        context: 16,
        cond_frames: 1,
        frames: 3,
        grid_height: 1,
        grid_width: 2,
        action_dim: 2,
    };
    let model = Transformer::new(cfg.clone(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let seq = random_sequence(&cfg, 3, &mut rng);
    // perturb the layer-norm and bias parameters so no gradient is trivially zero
    let inputs: Vec<Tensor<f64>> = model
        .params
        .cast::<f64>()
        .tensors()
        .iter()
        .map(|t| {
            let noise = Tensor::<f64>::randn(t.shape(), 0.1, &mut rng);
            Tensor::new(t.shape(), t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap()
        })
        .collect();
    let errs = check_gradients(
        &inputs,
        |tape, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let logits = model
                .forward_logits(tape, &b, std::slice::from_ref(&seq))
                .map_err(|e| TensorError::Usage(e.to_string()))?;
            nll_loss(tape, logits, std::slice::from_ref(&seq)).map_err(|e| TensorError::Usage(e.to_string()))
        },
        1e-5,
    )
    .unwrap();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    assert!(worst < 1e-3, "{errs:?}");
}
