//! Exact, model-free addition: the school algorithm, the right-to-left stage
//! decomposition the model is trained on, and the collation rule that turns
//! stage outputs back into a sum.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A non-negative integer as most-significant-first decimal digits.
///
/// No leading zeros except for the value zero itself.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DigitString {
    digits: Vec<u8>,
}

impl DigitString {
    pub fn zero() -> Self {
        DigitString { digits: vec![0] }
    }

    /// Builds from most-significant-first digits, validating the invariants.
    pub fn from_digits(digits: Vec<u8>) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidDigits {
            text: digits
                .iter()
                .map(|&d| if d < 10 { (b'0' + d) as char } else { '?' })
                .collect(),
            reason: reason.to_string(),
        };
        if digits.is_empty() {
            return Err(invalid("empty"));
        }
        if digits.iter().any(|&d| d > 9) {
            return Err(invalid("digit out of range"));
        }
        if digits.len() > 1 && digits[0] == 0 {
            return Err(invalid("leading zero"));
        }
        Ok(DigitString { digits })
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Digit at place value `10^k`, if the number has that many digits.
    pub fn place(&self, k: usize) -> Option<u8> {
        (k < self.digits.len()).then(|| self.digits[self.digits.len() - 1 - k])
    }
}

impl FromStr for DigitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(bad) = s.chars().find(|c| !c.is_ascii_digit()) {
            return Err(Error::InvalidDigits {
                text: s.to_string(),
                reason: format!("invalid character {bad:?}"),
            });
        }
        DigitString::from_digits(s.bytes().map(|b| b - b'0').collect()).map_err(|e| match e {
            Error::InvalidDigits { reason, .. } => Error::InvalidDigits {
                text: s.to_string(),
                reason,
            },
            e => e,
        })
    }
}

impl fmt::Display for DigitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.digits.iter().map(|&d| (b'0' + d) as char).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for DigitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DigitString({self})")
    }
}

/// School addition, right to left with carry.
pub fn add_digit_strings(a: &DigitString, b: &DigitString) -> DigitString {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n + 1);
    let mut carry = 0u8;
    for k in 0..n {
        let s = a.place(k).unwrap_or(0) + b.place(k).unwrap_or(0) + carry;
        out.push(s % 10);
        carry = s / 10;
    }
    if carry > 0 {
        out.push(carry);
    }
    out.reverse();
    DigitString { digits: out }
}

/// The one or two operand digits consumed by a continuation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NextDigits {
    One(u8),
    Two(u8, u8),
}

impl NextDigits {
    pub fn sum(self) -> u8 {
        match self {
            NextDigits::One(d) => d,
            NextDigits::Two(d1, d2) => d1 + d2,
        }
    }

    fn push_text(self, out: &mut String) {
        match self {
            NextDigits::One(d) => out.push((b'0' + d) as char),
            NextDigits::Two(d1, d2) => {
                out.push((b'0' + d1) as char);
                out.push((b'0' + d2) as char);
            }
        }
    }

    /// Digits of `a` and `b` at place `k`, `a` first, skipping exhausted operands.
    pub fn at_place(a: &DigitString, b: &DigitString, k: usize) -> Option<NextDigits> {
        match (a.place(k), b.place(k)) {
            (Some(x), Some(y)) => Some(NextDigits::Two(x, y)),
            (Some(x), None) | (None, Some(x)) => Some(NextDigits::One(x)),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageInput {
    First { d1: u8, d2: u8 },
    Continuation { prev_sum: u8, next: NextDigits },
}

impl StageInput {
    /// Whether the carry from the previous stage is set, i.e. two digits precede `C`.
    pub fn carry_in(self) -> bool {
        match self {
            StageInput::First { .. } => false,
            StageInput::Continuation { prev_sum, .. } => prev_sum >= 10,
        }
    }

    /// The exact target for this input.
    pub fn target(self) -> StageTarget {
        let sum_value = match self {
            StageInput::First { d1, d2 } => d1 + d2,
            StageInput::Continuation { next, .. } => next.sum() + u8::from(self.carry_in()),
        };
        StageTarget { sum_value }
    }

    pub fn text(self) -> String {
        let mut s = String::with_capacity(5);
        match self {
            StageInput::First { d1, d2 } => {
                s.push((b'0' + d1) as char);
                s.push((b'0' + d2) as char);
            }
            StageInput::Continuation { prev_sum, next } => {
                s.push_str(&prev_sum.to_string());
                s.push('C');
                next.push_text(&mut s);
            }
        }
        s
    }
}

/// Continuation input built from a previous stage's raw output text.
///
/// Used by generation, where the previous output comes from the model and
/// may be anything it produced.
pub fn continuation_text(prev_output: &str, next: NextDigits) -> String {
    let mut s = String::with_capacity(5);
    s.push_str(prev_output);
    s.push('C');
    next.push_text(&mut s);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageTarget {
    pub sum_value: u8,
}

impl StageTarget {
    /// Sum digits without the stop token.
    pub fn digits_text(self) -> String {
        self.sum_value.to_string()
    }

    pub fn text(self) -> String {
        format!("{}S", self.sum_value)
    }
}

/// Splits `a + b` into one stage per place value, least significant first.
pub fn decompose_stages(a: &DigitString, b: &DigitString) -> Vec<(StageInput, StageTarget)> {
    let n = a.len().max(b.len());
    let mut stages = Vec::with_capacity(n);
    let mut prev: Option<StageTarget> = None;
    for k in 0..n {
        let input = match prev {
            None => StageInput::First {
                d1: a.place(0).unwrap(),
                d2: b.place(0).unwrap(),
            },
            Some(t) => StageInput::Continuation {
                prev_sum: t.sum_value,
                next: NextDigits::at_place(a, b, k).expect("k < max len"),
            },
        };
        let target = input.target();
        stages.push((input, target));
        prev = Some(target);
    }
    stages
}

/// Assembles the answer: every digit of the last stage output, then the last
/// digit of each earlier output from last to first.
pub fn collate<S: AsRef<str>>(stage_outputs: &[S]) -> Result<DigitString> {
    let (last, earlier) = stage_outputs.split_last().ok_or(Error::EmptyStageList)?;
    let mut digits = Vec::with_capacity(stage_outputs.len() + 1);
    let check = |s: &str| -> Result<Vec<u8>> {
        if (1..=2).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(s.bytes().map(|b| b - b'0').collect())
        } else {
            Err(Error::BadStageOutput(s.to_string()))
        }
    };
    digits.extend(check(last.as_ref())?);
    for out in earlier.iter().rev() {
        let d = check(out.as_ref())?;
        digits.push(*d.last().unwrap());
    }
    DigitString::from_digits(digits)
}

/// Ordered `(input, output)` pairs of one staged addition, outputs including
/// the terminating `S`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationTrace {
    pub stages: Vec<(String, String)>,
    pub final_answer: Option<DigitString>,
}

impl GenerationTrace {
    /// The exact trace `decompose_stages` + `collate` produce.
    pub fn exact(a: &DigitString, b: &DigitString) -> Self {
        let stages: Vec<_> = decompose_stages(a, b)
            .into_iter()
            .map(|(i, t)| (i.text(), t.text()))
            .collect();
        let outs: Vec<&str> = stages.iter().map(|(_, o)| o.trim_end_matches('S')).collect();
        let final_answer = Some(collate(&outs).expect("exact stages always collate"));
        GenerationTrace {
            stages,
            final_answer,
        }
    }

    /// Renders in the box format `k) INPUT: .. OUTPUTS: ..S`, then the answer.
    pub fn render(&self) -> String {
        let width = self.stages.iter().map(|(i, _)| i.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, (input, output)) in self.stages.iter().enumerate() {
            s.push_str(&format!(
                "{}) INPUT: {:<width$} OUTPUTS: {}\n",
                k + 1,
                input,
                output,
            ));
        }
        if let Some(ans) = &self.final_answer {
            s.push_str(&format!("Final answer: {ans}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(s: &str) -> DigitString {
        s.parse().unwrap()
    }

    fn stage_texts(a: &str, b: &str) -> Vec<(String, String)> {
        decompose_stages(&ds(a), &ds(b))
            .into_iter()
            .map(|(i, t)| (i.text(), t.text()))
            .collect()
    }

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn parses_and_rejects() {
        assert_eq!(ds("0").to_string(), "0");
        assert_eq!(ds("120").digits(), &[1, 2, 0]);
        assert!("".parse::<DigitString>().is_err());
        assert!("012".parse::<DigitString>().is_err());
        let err = "12x".parse::<DigitString>().unwrap_err().to_string();
        assert!(err.contains("'x'"), "{err}");
    }

    #[test]
    fn adds() {
        assert_eq!(add_digit_strings(&ds("1"), &ds("2")), ds("3"));
        assert_eq!(add_digit_strings(&ds("99"), &ds("89")), ds("188"));
        assert_eq!(add_digit_strings(&ds("0"), &ds("0")), ds("0"));
        assert_eq!(
            add_digit_strings(
                &ds("89675627969177656514819490691831725109908874980671"),
                &ds("32029996942446258125998499183326035828805968783222"),
            ),
            ds("121705624911623914640817989875157760938714843763893")
        );
    }

    #[test]
    fn decomposes_worked_examples() {
        assert_eq!(
            stage_texts("65785", "8765"),
            pairs(&[
                ("55", "10S"),
                ("10C86", "15S"),
                ("15C77", "15S"),
                ("15C58", "14S"),
                ("14C6", "7S"),
            ])
        );
        assert_eq!(
            stage_texts("9582", "9261"),
            pairs(&[("21", "3S"), ("3C86", "14S"), ("14C52", "8S"), ("8C99", "18S")])
        );
        assert_eq!(stage_texts("7", "2"), pairs(&[("72", "9S")]));
        assert_eq!(
            stage_texts("100", "1"),
            pairs(&[("01", "1S"), ("1C0", "0S"), ("0C1", "1S")])
        );
        // Final carry is absorbed by the last stage, no extra stage.
        assert_eq!(
            stage_texts("99", "1"),
            pairs(&[("91", "10S"), ("10C9", "10S")])
        );
    }

    #[test]
    fn collates() {
        assert_eq!(collate(&["10", "15", "15", "14", "7"]).unwrap(), ds("74550"));
        assert_eq!(collate(&["10", "15", "15", "14", "17"]).unwrap(), ds("174550"));
        assert_eq!(collate(&["3", "14", "8", "18"]).unwrap(), ds("18843"));
        assert_eq!(collate(&["0"]).unwrap(), ds("0"));
        assert_eq!(collate(&["0", "0", "10"]).unwrap(), ds("1000"));
        assert_eq!(
            add_digit_strings(&ds("100"), &ds("900")),
            ds("1000"),
        );
    }

    #[test]
    fn collate_errors() {
        assert!(matches!(collate::<&str>(&[]), Err(Error::EmptyStageList)));
        assert!(matches!(collate(&["123"]), Err(Error::BadStageOutput(_))));
        assert!(matches!(collate(&["1x"]), Err(Error::BadStageOutput(_))));
        assert!(matches!(collate(&[""]), Err(Error::BadStageOutput(_))));
        // A leading zero can only come from a broken stage sequence.
        assert!(matches!(collate(&["5", "0"]), Err(Error::InvalidDigits { .. })));
    }

    #[test]
    fn carry_signal_matches_digit_count() {
        for prev_sum in 0..=19u8 {
            let input = StageInput::Continuation {
                prev_sum,
                next: NextDigits::Two(4, 5),
            };
            let before_c = input.text().find('C').unwrap();
            assert_eq!(before_c == 2, input.carry_in());
            assert_eq!(input.target().sum_value, 9 + u8::from(prev_sum >= 10));
        }
    }

    #[test]
    fn exact_trace_renders_box() {
        let t = GenerationTrace::exact(&ds("9582"), &ds("9261"));
        assert_eq!(
            t.render(),
            "1) INPUT: 21    OUTPUTS: 3S\n\
             2) INPUT: 3C86  OUTPUTS: 14S\n\
             3) INPUT: 14C52 OUTPUTS: 8S\n\
             4) INPUT: 8C99  OUTPUTS: 18S\n\
             Final answer: 18843\n"
        );
    }
}
