//! Checks shared by the gradient tests and the acceptance suite.

#![allow(dead_code)]

use ccat::instances::{make_first_type, make_second_type, TrainingInstance};
use ccat::model::{batch_loss, forward, loss_and_gradients, ModelConfig, ModelParams};
use ccat::reference::NextDigits;
use ccat::vocab::{encode, Token, TokenId, VOCAB_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn probe_batch() -> Vec<TrainingInstance> {
    vec![
        make_first_type(6, 9),
        make_first_type(1, 2),
        make_second_type(11, NextDigits::Two(7, 1)),
        make_second_type(14, NextDigits::One(6)),
        make_second_type(18, NextDigits::Two(9, 8)),
    ]
}

#[derive(Debug)]
pub struct GradientProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares analytic gradients with central differences at `probes` random
/// coordinates of a freshly initialized model.
pub fn probe_gradients(config: ModelConfig, seed: u64, probes: usize) -> Vec<GradientProbe> {
    let params = ModelParams::<f64>::init(config, seed);
    let batch = probe_batch();
    let (_, grads) = loss_and_gradients(&params, &batch, None).unwrap();

    let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..probes)
        .map(|_| {
            let which = rng.random_range(0..sizes.len());
            let index = rng.random_range(0..sizes[which]);
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.named_mut()[which].1.data[index] += delta;
                batch_loss(&p, &batch).unwrap()
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let analytic = grads.named()[which].1.data[index];
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            GradientProbe {
                name: params.named()[which].0.clone(),
                index,
                analytic,
                numeric,
                relative_error: (analytic - numeric).abs() / scale,
            }
        })
        .collect()
}

fn random_prefix(rng: &mut impl Rng, len: usize) -> Vec<TokenId> {
    let mut p = vec![Token::START];
    p.extend((1..len).map(|_| rng.random_range(0..VOCAB_SIZE as TokenId)));
    p
}

/// Perturbs prefix token `k` and reports any earlier output position whose
/// logits moved.
pub fn causal_violations(trials: u64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for trial in 0..trials {
        let params = ModelParams::<f64>::init(ModelConfig::default(), trial);
        let input: Vec<TokenId> = (0..5).map(|_| rng.random_range(0..14)).collect();
        let prefix = random_prefix(&mut rng, 3);
        let base = forward(&params, &input, &prefix, None).unwrap();
        for k in 1..3 {
            let mut changed = prefix.clone();
            changed[k] = (changed[k] + rng.random_range(1..14)) % 14;
            let out = forward(&params, &input, &changed, None).unwrap();
            for pos in 0..k {
                if out[pos] != base[pos] {
                    bad.push(format!("trial {trial}: position {pos} saw prefix token {k}"));
                }
            }
        }
    }
    bad
}

/// Reports trials where the first output's logits depend on the
/// teacher-forced target tokens.
pub fn first_output_violations(trials: u64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = encode("15C29").unwrap();
    let mut bad = Vec::new();
    for trial in 0..trials {
        let params = ModelParams::<f64>::init(ModelConfig::default(), 1000 + trial);
        let a = forward(&params, &input, &random_prefix(&mut rng, 3), None).unwrap();
        let b = forward(&params, &input, &random_prefix(&mut rng, 3), None).unwrap();
        let c = forward(&params, &input, &[Token::START], None).unwrap();
        if a[0] != b[0] || a[0] != c[0] {
            bad.push(format!("trial {trial}"));
        }
    }
    bad
}
