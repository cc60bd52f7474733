//! Training instances of the two types, random batches, and the finite
//! stage-input space used for exhaustive evaluation.

use std::fmt;

use rand::Rng;

use crate::reference::{NextDigits, StageInput, StageTarget};
use crate::vocab::{self, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstanceKind {
    /// Two single digits in, their sum out.
    FirstType,
    /// Previous stage sum, `C`, next digits in; the carried sum out.
    SecondType,
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceKind::FirstType => "first",
            InstanceKind::SecondType => "second",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingInstance {
    pub input: TokenSeq,
    pub target: TokenSeq,
    pub kind: InstanceKind,
}

impl TrainingInstance {
    fn from_stage(input: StageInput) -> Self {
        let kind = match input {
            StageInput::First { .. } => InstanceKind::FirstType,
            StageInput::Continuation { .. } => InstanceKind::SecondType,
        };
        let enc = |s: String| vocab::encode(&s).expect("stage text is in vocabulary");
        TrainingInstance {
            input: vocab::pad_input(&enc(input.text())).expect("stage input fits"),
            target: vocab::pad_target(&enc(input.target().text())).expect("stage target fits"),
            kind,
        }
    }

    /// `INPUT<TAB>TARGET<TAB>KIND`, with the start token escaped.
    pub fn dump_line(&self) -> String {
        let text = |s: &TokenSeq| vocab::escape(&vocab::decode(s).expect("valid ids"));
        format!("{}\t{}\t{}", text(&self.input), text(&self.target), self.kind)
    }
}

/// Where second-type instances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecondTypeSampling {
    /// The second stage of adding the low two-digit windows of two longer
    /// numbers: every digit uniform in 0..=9, so a `0` tens digit can occur.
    /// One operand is a single digit with the same odds as for integers in
    /// 0..=99, i.e. 18 times in 99.
    #[default]
    DigitWindows,
    /// The second stage of `a + b` for integers `a, b` in 0..=99 with at least
    /// one of them two digits long. A tens digit is never `0`.
    TwoDigitNumbers,
    /// Previous sum uniform in 0..=19 and a uniform continuation.
    UniformStageSpace,
}

impl std::str::FromStr for SecondTypeSampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "windows" => Ok(SecondTypeSampling::DigitWindows),
            "numbers" => Ok(SecondTypeSampling::TwoDigitNumbers),
            "uniform" => Ok(SecondTypeSampling::UniformStageSpace),
            _ => Err(format!("unknown sampling {s:?}; expected windows, numbers or uniform")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    /// Probability that a sampled instance is of the second type.
    pub second_type_fraction: f64,
    pub rng_seed: u64,
    pub second_type_sampling: SecondTypeSampling,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            second_type_fraction: 0.5,
            rng_seed: 0,
            second_type_sampling: SecondTypeSampling::default(),
        }
    }
}

pub fn make_first_type(d1: u8, d2: u8) -> TrainingInstance {
    assert!(d1 < 10 && d2 < 10, "digits must be in 0..=9");
    TrainingInstance::from_stage(StageInput::First { d1, d2 })
}

pub fn make_second_type(prev_sum: u8, next: NextDigits) -> TrainingInstance {
    assert!(prev_sum <= 19, "previous stage sum must be in 0..=19");
    TrainingInstance::from_stage(StageInput::Continuation { prev_sum, next })
}

/// The second stage of the two-digit addition `a + b`.
///
/// At least one of `a`, `b` must have two digits.
pub fn second_type_from_operands(a: u8, b: u8) -> TrainingInstance {
    assert!(a < 100 && b < 100 && a.max(b) >= 10);
    let next = match (a >= 10, b >= 10) {
        (true, true) => NextDigits::Two(a / 10, b / 10),
        (true, false) => NextDigits::One(a / 10),
        (false, true) => NextDigits::One(b / 10),
        (false, false) => unreachable!(),
    };
    make_second_type(a % 10 + b % 10, next)
}

fn random_next<R: Rng + ?Sized>(rng: &mut R) -> NextDigits {
    // 100 two-digit continuations and 10 one-digit ones.
    let k = rng.random_range(0..110u8);
    if k < 100 {
        NextDigits::Two(k / 10, k % 10)
    } else {
        NextDigits::One(k - 100)
    }
}

pub fn sample_instance<R: Rng + ?Sized>(mix: &MixConfig, rng: &mut R) -> TrainingInstance {
    if rng.random::<f64>() >= mix.second_type_fraction {
        return make_first_type(rng.random_range(0..10), rng.random_range(0..10));
    }
    match mix.second_type_sampling {
        SecondTypeSampling::UniformStageSpace => {
            make_second_type(rng.random_range(0..=19), random_next(rng))
        }
        SecondTypeSampling::DigitWindows => {
            let prev_sum = rng.random_range(0..10u8) + rng.random_range(0..10u8);
            let next = if rng.random_range(0..99u8) < 81 {
                NextDigits::Two(rng.random_range(0..10), rng.random_range(0..10))
            } else {
                NextDigits::One(rng.random_range(0..10))
            };
            make_second_type(prev_sum, next)
        }
        SecondTypeSampling::TwoDigitNumbers => loop {
            let a = rng.random_range(0..100u8);
            let b = rng.random_range(0..100u8);
            if a.max(b) >= 10 {
                return second_type_from_operands(a, b);
            }
        },
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    mix: &MixConfig,
    n: usize,
    rng: &mut R,
) -> Vec<TrainingInstance> {
    (0..n).map(|_| sample_instance(mix, rng)).collect()
}

/// One enumerated stage input with its exact target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageCase {
    pub input: StageInput,
    pub target: StageTarget,
}

/// Every first-type input plus every continuation with previous sum in
/// `0..=max_prev_sum`, each with its exact target.
///
/// 18 covers everything two-digit training can produce; 19 adds the inputs
/// that only occur inside longer additions.
pub fn enumerate_stage_space(max_prev_sum: u8) -> Vec<StageCase> {
    assert!(max_prev_sum <= 19);
    let mut inputs = Vec::with_capacity(100 + 110 * (max_prev_sum as usize + 1));
    for d1 in 0..10 {
        for d2 in 0..10 {
            inputs.push(StageInput::First { d1, d2 });
        }
    }
    for prev_sum in 0..=max_prev_sum {
        for d1 in 0..10 {
            for d2 in 0..10 {
                inputs.push(StageInput::Continuation {
                    prev_sum,
                    next: NextDigits::Two(d1, d2),
                });
            }
        }
        for d in 0..10 {
            inputs.push(StageInput::Continuation {
                prev_sum,
                next: NextDigits::One(d),
            });
        }
    }
    inputs
        .into_iter()
        .map(|input| StageCase {
            input,
            target: input.target(),
        })
        .collect()
}
