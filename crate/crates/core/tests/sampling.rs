use lvp_core::data::VideoClip;
use lvp_core::dynamics::pixel::{pixel_factorization_oracle, sequence_log_likelihood, PixelModel};
use lvp_core::dynamics::{sample_topk, top_k_indices};
use lvp_core::Error;
use lvp_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

const DRAWS: usize = 100_000;

/// Renormalised softmax over the `k` largest logits, computed from a full
/// sort; zero elsewhere.
fn truncated_probs(logits: &[f32], k: usize, temperature: f64) -> Vec<f64> {
    let mut sorted: Vec<(usize, f32)> = logits.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let kept = &sorted[..k];
    let max = kept[0].1 as f64;
    let z: f64 = kept.iter().map(|(_, l)| ((*l as f64 - max) / temperature).exp()).sum();
    let mut p = vec![0.0; logits.len()];
    for (i, l) in kept {
        p[*i] = ((*l as f64 - max) / temperature).exp() / z;
    }
    p
}

fn histogram(logits: &[f32], k: usize, temperature: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; logits.len()];
    for _ in 0..DRAWS {
        counts[sample_topk(logits, k, temperature, &mut rng).unwrap()] += 1;
    }
    counts
}

fn random_logits(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect()
}

#[test]
fn truncated_sampling_stays_in_support_and_within_three_sigma() {
    for (k, temperature, seed) in [(5, 1.0, 1), (10, 0.7, 2), (3, 1.5, 3)] {
        let logits = random_logits(32, seed);
        let counts = histogram(&logits, k, temperature, seed + 100);
        let p = truncated_probs(&logits, k, temperature);
        let support = top_k_indices(&logits, k);
        for (i, &c) in counts.iter().enumerate() {
            if !support.contains(&i) {
                assert_eq!(c, 0, "index {i} outside the top {k}");
                continue;
            }
            let mean = DRAWS as f64 * p[i];
            let sd = (DRAWS as f64 * p[i] * (1.0 - p[i])).sqrt();
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "k {k} index {i}: {c} vs {mean:.1} ± {sd:.1}");
        }
    }
}

#[test]
fn full_k_matches_the_unrestricted_categorical() {
    let logits = random_logits(16, 9);
    let counts = histogram(&logits, logits.len(), 1.0, 10);
    let p = truncated_probs(&logits, logits.len(), 1.0);
    let stat: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&c, &pi)| {
            let e = DRAWS as f64 * pi;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((logits.len() - 1) as f64).unwrap();
    let p_value = 1.0 - dist.cdf(stat);
    assert!(p_value > 0.01, "chi-square {stat}, p {p_value}");
}

#[test]
fn kth_place_ties_admit_the_lower_index() {
    let logits = [0.0f32, 1.0, 0.5, 0.5, 0.5];
    assert_eq!(top_k_indices(&logits, 2), vec![1, 2]);
    let counts = histogram(&logits, 2, 1.0, 4);
    assert_eq!(counts[0] + counts[3] + counts[4], 0);
}

proptest! {
    #[test]
    fn k_one_is_argmax(logits in proptest::collection::vec(-10.0f32..10.0, 1..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let best = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let first = logits.iter().position(|&v| v == best).unwrap();
        prop_assert_eq!(sample_topk(&logits, 1, 1.0, &mut rng).unwrap(), first);
    }

    #[test]
    fn vanishing_temperature_is_argmax_for_every_k(
        logits in proptest::collection::vec(-10.0f32..10.0, 2..40),
        k_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut sorted = logits.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-3);
        let k = 1 + ((logits.len() - 1) as f64 * k_frac) as usize;
        let first = logits.iter().position(|&v| v == sorted[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(sample_topk(&logits, k, 1e-9, &mut rng).unwrap(), first);
    }
}

fn tiny_clip(t: usize, h: usize, w: usize, values: &[f32]) -> VideoClip {
    VideoClip::new(Tensor::new(&[t, 1, h, w], values.to_vec()).unwrap(), None).unwrap()
}

/// Level `l` of 4 as a pixel value in [−1, 1].
fn level(l: usize) -> f32 {
    -1.0 + 2.0 * l as f32 / 3.0
}

#[test]
fn pixel_bookkeeping_and_uniform_likelihood() {
    let clip = tiny_clip(2, 2, 2, &[level(0), level(1), level(2), level(3), level(3), level(2), level(1), level(0)]);
    let r = pixel_factorization_oracle(&clip, 1, 4, PixelModel::Uniform).unwrap();
    assert_eq!((r.n_pixels, r.n_cond, r.factors), (8, 4, 4));
    assert!((r.log_likelihood + 4.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn oversized_pixel_instances_are_capacity_errors() {
    let big = tiny_clip(4, 2, 2, &[0.0; 16]);
    assert!(matches!(pixel_factorization_oracle(&big, 1, 4, PixelModel::Uniform), Err(Error::Capacity(_))));
    let wide = tiny_clip(1, 2, 5, &[0.0; 10]);
    assert!(matches!(pixel_factorization_oracle(&wide, 0, 4, PixelModel::Uniform), Err(Error::Capacity(_))));
    let small = tiny_clip(1, 2, 2, &[0.0; 4]);
    assert!(matches!(pixel_factorization_oracle(&small, 0, 5, PixelModel::Uniform), Err(Error::Capacity(_))));
}

/// Joint probability of a whole sequence under the counting model, in the
/// closed Pólya-urn form Π_v Γ(n_v + α)/Γ(α) · Γ(Lα)/Γ(N + Lα).
fn polya_log_joint(values: &[usize], levels: usize, alpha: f64) -> f64 {
    let mut counts = vec![0usize; levels];
    for &v in values {
        counts[v] += 1;
    }
    let la = levels as f64 * alpha;
    counts.iter().map(|&n| ln_gamma(n as f64 + alpha) - ln_gamma(alpha)).sum::<f64>() + ln_gamma(la)
        - ln_gamma(values.len() as f64 + la)
}

#[test]
fn chain_rule_agrees_with_the_enumerated_joint() {
    let model = PixelModel::Counting { alpha: 0.5 };
    let prefix = [2usize, 0, 2, 3];
    let mut total = 0.0;
    // every completion of four target positions over four levels
    for code in 0..256usize {
        let tail: Vec<usize> = (0..4).map(|i| (code >> (2 * i)) & 3).collect();
        let seq: Vec<usize> = prefix.iter().chain(&tail).copied().collect();
        let chain = sequence_log_likelihood(&seq, prefix.len(), 4, model);
        let joint = polya_log_joint(&seq, 4, 0.5) - polya_log_joint(&prefix, 4, 0.5);
        assert!((chain - joint).abs() < 1e-10, "completion {tail:?}: {chain} vs {joint}");
        total += chain.exp();
    }
    assert!((total - 1.0).abs() < 1e-12, "conditionals sum to {total}");
}
