//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use lvp_core::codec::{
    adaptive_weight_on_tape, quantize, vqvae_loss, Codec, CodecConfig, CodeGrid, LAMBDA_MAX,
};
use lvp_core::data::{clip_seed, generate_clip, generate_dataset, Dataset, DatasetConfig, Split, SpriteWorldConfig, VideoClip};
use lvp_core::dynamics::{flatten_codes, predict_video, sample_topk, top_k_indices, DynamicsConfig, Sampler, TokenSequence, Transformer};
use lvp_core::harness::checkpoint::{load_codec, load_dynamics, save_codec, save_dynamics};
use lvp_core::harness::config::{write_toml, CodecSchedule, CodecTrainConfig, DynamicsSchedule, DynamicsTrainConfig};
use lvp_core::harness::metrics::{mae, EvalReport};
use lvp_core::harness::train_codec::train_codec;
use lvp_core::harness::train_dynamics::{nats_per_token, train_dynamics};
use lvp_core::augment::AugmentConfig;
use lvp_tensor::check::cases::{composite_build, composite_inputs, composite_kink_gap, kernel_cases};
use lvp_tensor::check::{check_gradients, DEFAULT_STEP};
use lvp_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. gradient suite

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let cases = kernel_cases();
    let mut worst = 0.0f64;
    for case in &cases {
        let w = case.worst(20).map_err(fail)?;
        ensure(w < 1e-3, format!("{} has relative error {w:.2e}", case.name))?;
        worst = worst.max(w);
    }
    let (mut checked, mut seed) = (0, 0u64);
    while checked < 20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        seed += 1;
        let inputs = composite_inputs(&mut rng);
        if composite_kink_gap(&inputs).map_err(fail)? < 10.0 * DEFAULT_STEP {
            continue;
        }
        let errs = check_gradients(&inputs, composite_build, DEFAULT_STEP).map_err(fail)?;
        let w = errs.iter().copied().fold(0.0, f64::max);
        ensure(w < 1e-3, format!("composite graph, seed {seed}: {w:.2e}"))?;
        worst = worst.max(w);
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} kernels + composite graph x 20 seeds, worst relative error {worst:.2e}",
        cases.len(),

    ))
}

// ---------------------------------------------------------------------------
// 2. quantizer oracle

fn brute_force_nearest(v: &[f32], codebook: &[f32], dim: usize) -> usize {
    let d: Vec<f64> = codebook
        .chunks(dim)
        .map(|e| v.iter().zip(e).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum())
        .collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    d.iter().position(|&x| x == min).unwrap()
}

fn quantizer_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut codes_checked = 0;
    for instance in 0..1000 {
        let k = rng.random_range(1..=256);
        let nz = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        // every other instance uses a coarse lattice so exact ties occur
        let coarse = instance % 2 == 0;
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| if coarse { rng.random_range(-2i32..=2) as f32 * 0.5 } else { rng.random_range(-3.0f32..3.0) })
                .collect()
        };
        let z = draw(nz * h * w);
        let cb = draw(k * nz);
        let mut tape = Tape::<f32>::new();
        let zv = tape.constant(Tensor::new(&[1, nz, h, w], z.clone()).map_err(fail)?);
        let cv = tape.constant(Tensor::new(&[k, nz], cb.clone()).map_err(fail)?);
        let q = quantize(&mut tape, zv, cv).map_err(fail)?;
        for p in 0..h * w {
            let v: Vec<f32> = (0..nz).map(|c| z[c * h * w + p]).collect();
            let want = brute_force_nearest(&v, &cb, nz);
            ensure(q.codes[p] == want, format!("instance {instance}, position {p}: {} vs {want}", q.codes[p]))?;
            codes_checked += 1;
        }
    }
    Ok(format!("1000 instances, {codes_checked} indices equal the exhaustive scan"))
}

// ---------------------------------------------------------------------------
// 3. gradient routing

fn tiny_codec_config() -> CodecConfig {
    CodecConfig {
        height: 8,
        width: 8,
        downsample: 2,
        widths: vec![4, 6],
        res_blocks: 1,
        codebook_size: 8,
        code_dim: 4,
        disc_widths: vec![4, 4, 4],
        perceptual_widths: vec![4],
        ..CodecConfig::default()
    }
}

fn gradient_routing() -> Verdict {
    let codec = Codec::new(tiny_codec_config(), 5).map_err(fail)?;
    let mut tape = Tape::<f64>::new();
    let b = codec.params.cast::<f64>().bind(&mut tape, true);
    let x = tape.constant(Tensor::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
    let (q, x_hat) = codec.autoencode_graph(&mut tape, &b, x).map_err(fail)?;
    let loss = vqvae_loss(&mut tape, x, x_hat, &q, codec.config.beta).map_err(fail)?;
    let names: Vec<String> = codec.params.iter().map(|(n, _)| n.to_string()).collect();

    let grads = |tape: &mut Tape<f64>, root| -> Result<Vec<Vec<f64>>, String> {
        tape.zero_grad();
        tape.backward(root).map_err(fail)?;
        Ok(b.vars().iter().map(|&v| tape.grad_tensor(v).into_data()).collect())
    };
    let zero = |g: &[f64]| g.iter().all(|&v| v == 0.0);
    let ci = names.iter().position(|n| n == "codebook").unwrap();

    let total = grads(&mut tape, loss.total)?;
    let isolated = grads(&mut tape, loss.codebook)?;
    ensure(!zero(&total[ci]), "codebook gradient vanished")?;
    ensure(total[ci] == isolated[ci], "codebook gradient of the total differs from the isolated term")?;
    for (name, g) in names.iter().zip(&isolated) {
        if name.starts_with("enc.") {
            ensure(zero(g), format!("codebook term reached {name}"))?;
        }
    }
    let recon = grads(&mut tape, loss.recon)?;
    ensure(zero(&recon[ci]), "recon term reached the codebook")?;
    let at_ze = tape.grad(q.z_e_rows).map(<[f64]>::to_vec);
    let at_zq = tape.grad(q.st_rows).map(<[f64]>::to_vec);
    ensure(at_ze.is_some() && at_ze == at_zq, "straight-through gradient is not the identity")?;
    let commit = grads(&mut tape, loss.commit)?;
    ensure(zero(&commit[ci]), "commitment term reached the codebook")?;
    Ok("codebook grad(total) == grad(codebook term); encoder untouched by it; dL/dz_e == dL/dz_q exactly".into())
}

// ---------------------------------------------------------------------------
// 4. adaptive weight

fn adaptive_weight_criterion() -> Verdict {
    let mut tape = Tape::<f64>::new();
    let last = tape.param(Tensor::randn(&[4, 3, 3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(4)));
    let sq = tape.mul(last, last).map_err(fail)?;
    let loss = tape.sum(sq);
    let equal = adaptive_weight_on_tape(&mut tape, loss, loss, last, 1e-6).map_err(fail)?;
    ensure((0.999..=1.001).contains(&equal), format!("equal gradients gave {equal}"))?;

    // perc = <u, W> with ‖u‖ = 1; the GAN term does not depend on W
    let n = tape.value(last).numel();
    let u = Tensor::full(&[4, 3, 3, 3], 1.0 / (n as f64).sqrt());
    let uv = tape.constant(u);
    let prod = tape.mul(last, uv).map_err(fail)?;
    let perc = tape.sum(prod);
    let other = tape.param(Tensor::full(&[2], 0.3));
    let gan = tape.sum(other);
    let clamped = adaptive_weight_on_tape(&mut tape, perc, gan, last, 1e-6).map_err(fail)?;
    ensure(clamped == LAMBDA_MAX && LAMBDA_MAX == 1e4, format!("zero GAN gradient gave {clamped}"))?;
    Ok(format!("equal gradients: lambda = {equal:.6}; zero GAN gradient, unit perceptual gradient: lambda = {clamped}"))
}

// ---------------------------------------------------------------------------
// 5. causality

fn causality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..50u64 {
        let cfg = DynamicsConfig {
            layers: 2,
            heads: 2,
            width: 16,
            vocab: 13,
            context: 64,
            cond_frames: 1,
            frames: 4,
            grid_height: 2,
            grid_width: 2,
            action_dim: if instance % 2 == 0 { 0 } else { 2 },
        };
        let model = Transformer::new(cfg.clone(), instance).map_err(fail)?;
        let grids: Vec<CodeGrid> = (0..4)
            .map(|_| CodeGrid::new(2, 2, (0..4).map(|_| rng.random_range(0..13)).collect()).unwrap())
            .collect();
        let actions = (cfg.action_dim > 0).then(|| Tensor::<f32>::uniform(&[4, 2], -2.0, 2.0, &mut rng));
        let seq = flatten_codes(&grids, 1, actions.as_ref()).map_err(fail)?;
        let j = rng.random_range(1..seq.len());
        let mut changed = seq.clone();
        for p in j..seq.len() {
            changed.codes[p] = rng.random_range(0..13);
        }
        let bits = |s: &TokenSequence| -> Result<Vec<u32>, String> {
            Ok(model.logits(s).map_err(fail)?.data()[..j * 13].iter().map(|v| v.to_bits()).collect())
        };
        ensure(bits(&seq)? == bits(&changed)?, format!("instance {instance}: logits before {j} changed"))?;
    }
    Ok("50 instances, logits before the perturbed position bit-identical".into())
}

// ---------------------------------------------------------------------------
// 6. token accounting

fn token_accounting() -> Verdict {
    let grids = |t: usize| (0..t).map(|_| CodeGrid::new(16, 16, vec![0; 256]).unwrap()).collect::<Vec<_>>();
    let short = flatten_codes(&grids(12), 2, None).map_err(fail)?.n_targets();
    let long = flatten_codes(&grids(30), 5, None).map_err(fail)?.n_targets();
    ensure(short == 2560 && long == 6400, format!("{short} and {long} targets"))?;
    Ok(format!("(12, 2, 16x16) -> {short}; (30, 5, 16x16) -> {long}"))
}

// ---------------------------------------------------------------------------
// 7. top-k sampler

fn truncated_probs(logits: &[f32], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    let max = logits[order[0]] as f64;
    let z: f64 = order[..k].iter().map(|&i| (logits[i] as f64 - max).exp()).sum();
    let mut p = vec![0.0; logits.len()];
    for &i in &order[..k] {
        p[i] = (logits[i] as f64 - max).exp() / z;
    }
    p
}

fn sampler() -> Verdict {
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits: Vec<f32> = (0..256).map(|_| rng.random_range(-2.0f32..2.0)).collect();

    let k = 10;
    let support = top_k_indices(&logits, k);
    let mut counts = vec![0usize; 256];
    for _ in 0..DRAWS {
        counts[sample_topk(&logits, k, 1.0, &mut rng).map_err(fail)?] += 1;
    }
    let outside: usize = (0..256).filter(|i| !support.contains(i)).map(|i| counts[i]).sum();
    ensure(outside == 0, format!("{outside} draws outside the top {k}"))?;
    let p = truncated_probs(&logits, k);
    let mut worst_z = 0.0f64;
    for &i in &support {
        let sd = (DRAWS as f64 * p[i] * (1.0 - p[i])).sqrt();
        let z = (counts[i] as f64 - DRAWS as f64 * p[i]).abs() / sd;
        ensure(z <= 3.0, format!("index {i} is {z:.2} sigma off"))?;
        worst_z = worst_z.max(z);
    }

    for trial in 0..1000 {
        let l: Vec<f32> = (0..64).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let best = l.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let arg = l.iter().position(|&v| v == best).unwrap();
        ensure(sample_topk(&l, 1, 1.0, &mut rng).map_err(fail)? == arg, format!("k = 1 missed argmax in trial {trial}"))?;
    }

    let mut full = vec![0usize; 256];
    for _ in 0..DRAWS {
        full[sample_topk(&logits, 256, 1.0, &mut rng).map_err(fail)?] += 1;
    }
    let p = truncated_probs(&logits, 256);
    let stat: f64 = full
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| (c as f64 - DRAWS as f64 * pi).powi(2) / (DRAWS as f64 * pi))
        .sum();
    let p_value = 1.0 - ChiSquared::new(255.0).map_err(fail)?.cdf(stat);
    ensure(p_value > 0.01, format!("k = K chi-square p = {p_value:.4}"))?;
    Ok(format!(
        "0 of 1e5 draws outside top-10, worst |z| = {worst_z:.2}; k=1 == argmax (1000 trials); k=K chi-square p = {p_value:.3}"
    ))
}

// ---------------------------------------------------------------------------
// 8. codec desk-scale run

fn codec_run(root: &Path) -> Verdict {
    let start = Instant::now();
    let data = root.join("data32");
    let cfg = DatasetConfig {
        seed: 0,
        n_train: 512,
        n_test: 32,
        world: SpriteWorldConfig::default(),
    };
    generate_dataset(&cfg, &data).map_err(fail)?;
    let train = CodecTrainConfig {
        data,
        seed: 0,
        codec: CodecConfig::default(),
        schedule: CodecSchedule {
            phase1_steps: 1500,
            phase2_steps: 300,
            log_every: 250,
            ..CodecSchedule::default()
        },
    };
    let run = train_codec(&train, &root.join("codec32")).map_err(fail)?;
    let elapsed = start.elapsed();
    let p1 = run.phase1_psnr.ok_or("no phase-1 PSNR")?;
    let p2 = run.final_psnr.ok_or("no final PSNR")?;
    let d_losses: Vec<f64> = run.log.iter().filter_map(|r| r.d_loss).collect();
    ensure(!d_losses.is_empty(), "phase 2 never ran")?;
    ensure(d_losses.iter().all(|d| d.is_finite()), "discriminator loss became non-finite")?;
    ensure(p1 > 25.0, format!("phase-1 held-out PSNR {p1:.2} dB"))?;
    ensure(p1 - p2 <= 1.0, format!("phase 2 degraded PSNR from {p1:.2} to {p2:.2} dB"))?;
    ensure(elapsed < Duration::from_secs(30 * 60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "phase 1 (1500 steps) {p1:.2} dB, after phase 2 (300 steps) {p2:.2} dB, last d_loss {:.3}, {:.0}s",
        d_losses.last().unwrap(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 9-11. dynamics on 16x16 sprite clips

fn small_world() -> SpriteWorldConfig {
    SpriteWorldConfig {
        height: 16,
        width: 16,
        sprite_size: 4,
        ..SpriteWorldConfig::default()
    }
}

const SMALL_SEED: u64 = 3;

struct SmallSetup {
    data: PathBuf,
    codec: PathBuf,
    /// Time spent generating the data and training the codec.
    cost: Duration,
}

fn small_setup(root: &Path) -> Result<SmallSetup, String> {
    let started = Instant::now();
    let data = root.join("data16");
    let cfg = DatasetConfig {
        seed: SMALL_SEED,
        n_train: 512,
        n_test: 32,
        world: small_world(),
    };
    generate_dataset(&cfg, &data).map_err(fail)?;
    let train = CodecTrainConfig {
        data: data.clone(),
        seed: 0,
        codec: CodecConfig {
            height: 16,
            width: 16,
            ..CodecConfig::default()
        },
        schedule: CodecSchedule {
            phase1_steps: 3000,
            phase2_steps: 0,
            log_every: 500,
            ..CodecSchedule::default()
        },
    };
    let run = train_codec(&train, &root.join("codec16")).map_err(fail)?;
    Ok(SmallSetup {
        data,
        codec: run.checkpoint,
        cost: started.elapsed(),
    })
}

/// `clips = 0` trains on the whole training split.
fn dynamics_config(setup: &SmallSetup, clips: usize, steps: usize, batch: usize, m: usize) -> DynamicsTrainConfig {
    DynamicsTrainConfig {
        data: setup.data.clone(),
        codec: setup.codec.clone(),
        seed: 0,
        model: DynamicsConfig {
            layers: 4,
            width: 64,
            grid_height: 4,
            grid_width: 4,
            ..DynamicsConfig::default()
        },
        augment: AugmentConfig {
            m,
            fill: small_world().background,
            ..AugmentConfig::default()
        },
        schedule: DynamicsSchedule {
            steps,
            batch_size: batch,
            warmup: 50,
            clips,
            stop_below: if clips > 0 { 0.005 } else { 0.0 },
            ..DynamicsSchedule::default()
        },
    }
}

fn future(clip: &VideoClip, c: usize, n: usize) -> &[f32] {
    let len = clip.frame_len();
    &clip.frames().data()[c * len..(c + n) * len]
}

fn dynamics_overfit(root: &Path, setup: &SmallSetup) -> Verdict {
    let cfg = dynamics_config(setup, 4, 3000, 4, 0);
    let run = train_dynamics(&cfg, &root.join("overfit")).map_err(fail)?;
    let clips = Dataset::load(&setup.data).map_err(fail)?.train[..4].to_vec();
    let nll = nats_per_token(&run.codec, &run.model, &clips).map_err(fail)?;
    ensure(nll < 0.01, format!("{nll:.4} nats/token after {} steps", run.steps))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for clip in &clips {
        let pred = predict_video(&run.codec, &run.model, clip, 10, &Sampler::greedy(), &mut rng).map_err(fail)?;
        worst = worst.max(mae(pred.frames().data(), future(clip, 2, 10)));
    }
    ensure(worst < 0.05, format!("greedy rollout MAE {worst:.4} on a training clip"))?;
    Ok(format!("{nll:.4} nats/token after {} steps; worst greedy future MAE {worst:.4}", run.steps))
}

fn generalization(root: &Path, setup: &SmallSetup) -> Result<(String, Transformer, Codec), String> {
    let started = Instant::now();
    let cfg = dynamics_config(setup, 0, 3000, 8, 2);
    let run = train_dynamics(&cfg, &root.join("general")).map_err(fail)?;
    let test = Dataset::load(&setup.data).map_err(fail)?.test;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut first, mut mean, mut copy) = (0.0, 0.0, 0.0);
    for clip in &test {
        let pred = predict_video(&run.codec, &run.model, clip, 10, &Sampler::greedy(), &mut rng).map_err(fail)?;
        let fl = clip.frame_len();
        let truth = future(clip, 2, 10);
        first += mae(&pred.frames().data()[..fl], &truth[..fl]);
        mean += mae(pred.frames().data(), truth);
        let last = clip.frame(1);
        copy += truth.chunks(fl).map(|f| mae(f, last)).sum::<f64>() / 10.0;
    }
    let n = test.len() as f64;
    let (first, mean, copy) = (first / n, mean / n, copy / n);
    let elapsed = setup.cost + started.elapsed();
    let line = format!(
        "32 held-out clips: first-frame MAE {first:.4}, 10-frame MAE {mean:.4} vs copy-last {copy:.4}; {:.0} min total",
        elapsed.as_secs_f64() / 60.0
    );
    ensure(first < 0.1, format!("first-frame MAE {first:.4} ({line})"))?;
    ensure(mean < copy, format!("does not beat copy-last ({line})"))?;
    ensure(elapsed < Duration::from_secs(2 * 3600), format!("took {elapsed:?}"))?;
    Ok((line, run.model, run.codec))
}

fn extrapolation(model: &Transformer, codec: &Codec) -> Verdict {
    let world = SpriteWorldConfig {
        frames: 27,
        ..small_world()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut per_frame = vec![0.0; 25];
    let clips = 8;
    for i in 0..clips {
        let clip = generate_clip(&world, clip_seed(SMALL_SEED, Split::Test, i).map_err(fail)?).map_err(fail)?;
        let pred = predict_video(codec, model, &clip, 25, &Sampler::greedy(), &mut rng).map_err(fail)?;
        ensure(pred.len() == 25, format!("rollout returned {} frames", pred.len()))?;
        let fl = clip.frame_len();
        let truth = future(&clip, 2, 25);
        for (t, slot) in per_frame.iter_mut().enumerate() {
            *slot += mae(pred.frame(t), &truth[t * fl..(t + 1) * fl]) / clips as f64;
        }
    }
    ensure(per_frame.iter().all(|v| v.is_finite()), "non-finite frame error")?;
    let curve: Vec<String> = per_frame.iter().step_by(4).map(|v| format!("{v:.3}")).collect();
    Ok(format!(
        "trained on 10 future frames, rolled out 25 on {clips} clips; MAE every 4th frame: {}",
        curve.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// 12-13. command line

fn lvp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("lvp runs")
}

fn lvp_ok(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = lvp(dir, args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("lvp {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Tiny configurations written into `dir`, referring to paths relative to it.
fn write_tiny_configs(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(fail)?;
    let data = DatasetConfig {
        seed: 2,
        n_train: 6,
        n_test: 2,
        world: SpriteWorldConfig {
            height: 16,
            width: 16,
            frames: 6,
            sprites: 2,
            sprite_size: 4,
            ..SpriteWorldConfig::default()
        },
    };
    write_toml(&data, &dir.join("data.toml")).map_err(fail)?;
    let codec = CodecTrainConfig {
        data: "data".into(),
        seed: 1,
        codec: CodecConfig {
            height: 16,
            width: 16,
            widths: vec![4, 4, 4],
            res_blocks: 0,
            code_dim: 4,
            disc_widths: vec![4, 4, 4],
            perceptual_widths: vec![4],
            ..CodecConfig::default()
        },
        schedule: CodecSchedule {
            phase1_steps: 60,
            phase2_steps: 2,
            batch_size: 4,
            log_every: 2,
            eval_frames: 4,
            ..CodecSchedule::default()
        },
    };
    write_toml(&codec, &dir.join("codec.toml")).map_err(fail)?;
    let dynamics = DynamicsTrainConfig {
        data: "data".into(),
        codec: "codec/codec.ckpt".into(),
        seed: 1,
        model: DynamicsConfig {
            layers: 1,
            heads: 2,
            width: 16,
            context: 96,
            frames: 6,
            grid_height: 4,
            grid_width: 4,
            ..DynamicsConfig::default()
        },
        augment: AugmentConfig::default(),
        schedule: DynamicsSchedule {
            steps: 2,
            batch_size: 2,
            warmup: 1,
            log_every: 1,
            ..DynamicsSchedule::default()
        },
    };
    write_toml(&dynamics, &dir.join("dynamics.toml")).map_err(fail)
}

fn ablation(root: &Path) -> Verdict {
    let dir = root.join("ablation");
    write_tiny_configs(&dir)?;
    lvp_ok(&dir, &["gen-data", "--config", "data.toml", "--out", "data"])?;
    lvp_ok(&dir, &["train-codec", "--config", "codec.toml", "--out", "codec"])?;
    let mut reports = BTreeMap::new();
    for layers in [6, 12] {
        for m in [0, 2, 4, 8] {
            let model = format!("dyn_l{layers}_m{m}");
            let (l, a) = (layers.to_string(), m.to_string());
            lvp_ok(&dir, &["train-dynamics", "--config", "dynamics.toml", "--out", &model, "--layers", &l, "--aug-m", &a])?;
            for k in ["256", "100", "10"] {
                let pred = format!("pred_l{layers}_m{m}_k{k}");
                let ckpt = format!("{model}/dynamics.ckpt");
                lvp_ok(
                    &dir,
                    &["predict", "--dynamics", &ckpt, "--codec", "codec/codec.ckpt", "--data", "data", "--future-steps", "4", "--k", k, "--seed", "3", "--out", &pred],
                )?;
                lvp_ok(&dir, &["eval", "--pred", &pred])?;
                let bytes = fs::read(dir.join(&pred).join("eval.json")).map_err(fail)?;
                let report: EvalReport = serde_json::from_slice(&bytes).map_err(fail)?;
                ensure(report.k == Some(k.parse().unwrap()), format!("{pred} records k = {:?}", report.k))?;
                reports.insert(pred, (bytes, report.mae.to_bits()));
            }
        }
    }
    let files: HashSet<&Vec<u8>> = reports.values().map(|(b, _)| b).collect();
    let scores: HashSet<u64> = reports.values().map(|(_, m)| *m).collect();
    ensure(reports.len() == 24, format!("{} reports", reports.len()))?;
    ensure(files.len() == 24, format!("only {} distinct report files of 24", files.len()))?;
    ensure(scores.len() == 24, format!("only {} distinct MAE scores of 24", scores.len()))?;
    Ok("k in {K=256, 100, 10} x layers in {6, 12} x m in {0, 2, 4, 8}: 24 distinct EvalReports (and scores) via the CLI".into())
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.insert(path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    write_tiny_configs(dir)?;
    let steps: [&[&str]; 6] = [
        &["gen-data", "--config", "data.toml", "--out", "data"],
        &["train-codec", "--config", "codec.toml", "--out", "codec"],
        &["train-dynamics", "--config", "dynamics.toml", "--out", "dyn"],
        &["predict", "--dynamics", "dyn/dynamics.ckpt", "--codec", "codec/codec.ckpt", "--data", "data", "--future-steps", "4", "--samples", "3", "--seed", "9", "--out", "pred"],
        &["eval", "--pred", "pred", "--codec", "codec/codec.ckpt", "--dynamics", "dyn/dynamics.ckpt"],
        &["stats", "--codec", "codec/codec.ckpt", "--data", "data", "--out", "stats.json"],
    ];
    steps.iter().map(|args| lvp_ok(dir, args).map(|o| o.stdout)).collect()
}

fn determinism(root: &Path) -> Verdict {
    let (a, b) = (root.join("run_a"), root.join("run_b"));
    let out_a = pipeline(&a)?;
    let out_b = pipeline(&b)?;
    ensure(out_a == out_b, "command output differs between runs")?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(ta.keys().eq(tb.keys()), "runs wrote different files")?;
    for (path, bytes) in &ta {
        ensure(&tb[path] == bytes, format!("{} differs between runs", path.display()))?;
    }

    let (codec, _) = load_codec(&a.join("codec/codec.ckpt")).map_err(fail)?;
    save_codec(&codec, &a.join("codec_again.ckpt")).map_err(fail)?;
    ensure(
        fs::read(a.join("codec_again.ckpt")).map_err(fail)? == ta[Path::new("codec/codec.ckpt")],
        "codec checkpoint changes on save -> load -> save",
    )?;
    let (model, codec_hash, _) = load_dynamics(&a.join("dyn/dynamics.ckpt")).map_err(fail)?;
    save_dynamics(&model, &codec_hash, &a.join("dyn_again.ckpt")).map_err(fail)?;
    ensure(
        fs::read(a.join("dyn_again.ckpt")).map_err(fail)? == ta[Path::new("dyn/dynamics.ckpt")],
        "dynamics checkpoint changes on save -> load -> save",
    )?;

    lvp_ok(&a, &["train-codec", "--config", "codec.toml", "--out", "codec_other", "--seed", "77"])?;
    let refused = lvp(
        &a,
        &["predict", "--dynamics", "dyn/dynamics.ckpt", "--codec", "codec_other/codec.ckpt", "--data", "data", "--future-steps", "4", "--out", "pred_refused"],
    );
    ensure(refused.status.code() == Some(4), format!("mismatched pair exited with {:?}", refused.status.code()))?;
    ensure(!a.join("pred_refused").exists(), "refused prediction left output behind")?;
    Ok(format!(
        "{} files byte-identical across two runs of all 6 commands; checkpoints round-trip; mismatched codec refused with exit 4",
        ta.len()
    ))
}

// ---------------------------------------------------------------------------

fn report(n: usize, name: &str, f: &mut dyn FnMut() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    match &verdict {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
        Err(why) => println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.1}s]"),
    }
    verdict.is_ok()
}

/// Criteria named in `LVP_ACCEPTANCE` (comma separated), or all of them.
fn selection() -> Option<Vec<usize>> {
    let raw = std::env::var("LVP_ACCEPTANCE").ok()?;
    Some(raw.split(',').filter_map(|n| n.trim().parse().ok()).collect())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let only = selection();
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut passed = Vec::new();
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(n) {
            passed.push(report(n, name, f));
        }
    };
    run(1, "gradient suite", &mut gradient_suite);
    run(2, "quantizer oracle", &mut quantizer_oracle);
    run(3, "gradient routing", &mut gradient_routing);
    run(4, "adaptive GAN weight", &mut adaptive_weight_criterion);
    run(5, "causality", &mut causality);
    run(6, "token accounting", &mut token_accounting);
    run(7, "top-k sampler", &mut sampler);
    run(12, "ablation harness", &mut || ablation(root));
    run(13, "determinism and serialization", &mut || determinism(root));
    run(8, "codec desk-scale run", &mut || codec_run(root));

    if wanted(9) || wanted(10) || wanted(11) {
        match small_setup(root) {
            Ok(setup) => {
                run(9, "dynamics overfit", &mut || dynamics_overfit(root, &setup));
                let mut trained = None;
                run(10, "end-to-end generalization", &mut || {
                    let (line, model, codec) = generalization(root, &setup)?;
                    trained = Some((model, codec));
                    Ok(line)
                });
                run(11, "extrapolation", &mut || match &trained {
                    Some((model, codec)) => extrapolation(model, codec),
                    None => Err("no trained model from criterion 10".into()),
                });
            }
            Err(e) => {
                for (n, name) in [(9, "dynamics overfit"), (10, "end-to-end generalization"), (11, "extrapolation")] {
                    run(n, name, &mut || Err(format!("setup failed: {e}")));
                }
            }
        }
    }

    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed", passed.len() - failed, passed.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
