//! Staged right-to-left generation: one model call per place value, each
//! stage's output feeding the next stage's input, and collation of the
//! outputs into the final sum.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, Real};
use crate::reference::{
    add_digit_strings, collate, continuation_text, DigitString, NextDigits, StageInput,
};
use crate::vocab::{self, Token, TokenId};

pub use crate::reference::GenerationTrace;

/// What one stage generated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StageOutput {
    /// Generated symbols before the stop token (all of them if none was produced).
    pub text: String,
    /// Whether `S` was produced within the output budget.
    pub terminated: bool,
}

impl StageOutput {
    pub fn is_well_formed(&self) -> bool {
        self.terminated
            && (1..=2).contains(&self.text.len())
            && self.text.bytes().all(|b| b.is_ascii_digit())
    }

    /// The generated symbols as they appear in a trace, `S` included.
    pub fn raw(&self) -> String {
        if self.terminated {
            format!("{}S", self.text)
        } else {
            self.text.clone()
        }
    }
}

/// Anything that can answer one stage input.
pub trait StageModel {
    /// Decodes one stage without judging the result.
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput>;

    /// Decodes one stage and rejects outputs that are not one or two digits
    /// followed by `S`.
    fn generate_stage(&self, input_text: &str) -> Result<StageOutput> {
        let out = self.decode_stage(input_text)?;
        if out.is_well_formed() {
            Ok(out)
        } else {
            Err(Error::MalformedOutput {
                input: input_text.to_string(),
                output: out.raw(),
                partial: Box::default(),
            })
        }
    }
}

impl<M: StageModel + ?Sized> StageModel for &M {
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput> {
        (**self).decode_stage(input_text)
    }
}

impl<M: StageModel + ?Sized> StageModel for Box<M> {
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput> {
        (**self).decode_stage(input_text)
    }
}

fn argmax<T: Real>(row: &[T]) -> TokenId {
    // Strict comparison keeps the lowest id on ties.
    let mut best = 0;
    for (i, &z) in row.iter().enumerate() {
        if z > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Greedy decoding with dropout off.
impl<T: Real> StageModel for ModelParams<T> {
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput> {
        let input = vocab::pad_input(&vocab::encode(input_text)?)?;
        let mut prefix = vec![Token::START];
        let mut text = String::new();
        for _ in 0..self.config.output_len {
            let logits = forward(self, &input, &prefix, None)?;
            let next = argmax(logits.last().expect("non-empty prefix"));
            if next == Token::STOP {
                return Ok(StageOutput {
                    text,
                    terminated: true,
                });
            }
            text.push(Token::from_id(next)?.symbol());
            prefix.push(next);
        }
        Ok(StageOutput {
            text,
            terminated: false,
        })
    }
}

/// Parses a stage input text back into its structured form.
pub fn parse_stage_input(text: &str) -> Option<StageInput> {
    let digit = |b: u8| b.is_ascii_digit().then(|| b - b'0');
    let bytes = text.as_bytes();
    match text.find('C') {
        None => match bytes {
            [a, b] => Some(StageInput::First {
                d1: digit(*a)?,
                d2: digit(*b)?,
            }),
            _ => None,
        },
        Some(pos) => {
            let prev = &text[..pos];
            if !(1..=2).contains(&prev.len()) || !prev.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let prev_sum: u8 = prev.parse().ok()?;
            let next = match &bytes[pos + 1..] {
                [a] => NextDigits::One(digit(*a)?),
                [a, b] => NextDigits::Two(digit(*a)?, digit(*b)?),
                _ => return None,
            };
            // The carry is read from the digit count, so "05" means a carry.
            let prev_sum = if prev.len() == 2 { prev_sum.max(10) } else { prev_sum };
            (prev_sum <= 19).then_some(StageInput::Continuation { prev_sum, next })
        }
    }
}

/// Exact-arithmetic stand-in for a trained model. Answers every well-formed
/// stage input with its true target.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactStages;

impl StageModel for ExactStages {
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput> {
        Ok(match parse_stage_input(input_text) {
            Some(input) => StageOutput {
                text: input.target().digits_text(),
                terminated: true,
            },
            None => StageOutput {
                text: String::new(),
                terminated: false,
            },
        })
    }
}

/// Memoizes an inner model's stage outputs by input text.
///
/// Stage inputs come from a small finite set, so long additions hit the
/// cache almost every time. Only valid for deterministic inner models.
#[derive(Debug, Default)]
pub struct CachedStages<M> {
    inner: M,
    cache: Mutex<HashMap<String, StageOutput>>,
}

impl<M: StageModel> CachedStages<M> {
    pub fn new(inner: M) -> Self {
        CachedStages {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: StageModel> StageModel for CachedStages<M> {
    fn decode_stage(&self, input_text: &str) -> Result<StageOutput> {
        if let Some(hit) = self.cache.lock().unwrap().get(input_text) {
            return Ok(hit.clone());
        }
        let out = self.inner.decode_stage(input_text)?;
        self.cache
            .lock()
            .unwrap()
            .insert(input_text.to_string(), out.clone());
        Ok(out)
    }
}

/// Adds `a + b` one place value at a time, least significant first.
///
/// Each continuation input is the previous stage's generated digits, `C`,
/// and the next operand digits; the model's own output carries the carry.
pub fn add_with_model<M: StageModel + ?Sized>(
    model: &M,
    a: &DigitString,
    b: &DigitString,
) -> Result<(DigitString, GenerationTrace)> {
    let stages = a.len().max(b.len());
    let mut trace = GenerationTrace {
        stages: Vec::with_capacity(stages),
        final_answer: None,
    };
    let mut outputs: Vec<String> = Vec::with_capacity(stages);
    for k in 0..stages {
        let input = match outputs.last() {
            None => StageInput::First {
                d1: a.place(0).unwrap(),
                d2: b.place(0).unwrap(),
            }
            .text(),
            Some(prev) => continuation_text(prev, NextDigits::at_place(a, b, k).unwrap()),
        };
        let out = model.decode_stage(&input)?;
        trace.stages.push((input.clone(), out.raw()));
        if !out.is_well_formed() {
            return Err(Error::MalformedOutput {
                input,
                output: out.raw(),
                partial: Box::new(trace),
            });
        }
        outputs.push(out.text);
    }
    let answer = collate(&outputs)?;
    trace.final_answer = Some(answer.clone());
    Ok((answer, trace))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub predicted: Option<DigitString>,
    pub expected: DigitString,
    pub matched: bool,
    /// Why no prediction was produced, if it was not.
    pub diagnostic: Option<String>,
}

/// Runs the staged model addition and checks it against school addition.
pub fn verify_addition<M: StageModel + ?Sized>(
    model: &M,
    a: &DigitString,
    b: &DigitString,
) -> VerificationReport {
    let expected = add_digit_strings(a, b);
    match add_with_model(model, a, b) {
        Ok((predicted, _)) => VerificationReport {
            matched: predicted == expected,
            predicted: Some(predicted),
            expected,
            diagnostic: None,
        },
        Err(e) => VerificationReport {
            predicted: None,
            expected,
            matched: false,
            diagnostic: Some(e.to_string()),
        },
    }
}
