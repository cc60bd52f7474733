//! Seeded large-scale checks of staged model addition against school
//! addition, aggregated per operand-length bucket.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::generate::{verify_addition, StageModel};
use crate::reference::{add_digit_strings, collate, decompose_stages, DigitString};

/// Uniform random digits with a nonzero leading digit; a single digit may be 0.
pub fn random_operand<R: Rng + ?Sized>(length: usize, rng: &mut R) -> DigitString {
    assert!(length >= 1);
    let mut digits = Vec::with_capacity(length);
    digits.push(if length == 1 {
        rng.random_range(0..10)
    } else {
        rng.random_range(1..10)
    });
    digits.extend((1..length).map(|_| rng.random_range(0..10u8)));
    DigitString::from_digits(digits).expect("no leading zero by construction")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DigitLengths {
    /// Uniform over `min..=max`.
    Range { min: usize, max: usize },
    /// Cycle through these lengths in order.
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSpec {
    pub num_cases: usize,
    pub lengths: DigitLengths,
    pub seed: u64,
    /// Draw the second operand's length independently instead of sharing the first's.
    pub mixed_lengths: bool,
}

impl EvalSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_cases == 0 {
            return Err("need at least one case".into());
        }
        match &self.lengths {
            DigitLengths::Range { min, max } if *min == 0 || min > max => {
                Err(format!("bad digit range {min}..={max}"))
            }
            DigitLengths::Fixed(v) if v.is_empty() || v.contains(&0) => {
                Err("fixed lengths must be non-empty and positive".into())
            }
            _ => Ok(()),
        }
    }

    fn draw_length(&self, case: usize, rng: &mut ChaCha8Rng) -> usize {
        match &self.lengths {
            DigitLengths::Range { min, max } => rng.random_range(*min..=*max),
            DigitLengths::Fixed(v) => v[case % v.len()],
        }
    }

    /// Lower bound of the report bucket holding `len`.
    fn bucket_of(&self, len: usize) -> usize {
        match &self.lengths {
            DigitLengths::Fixed(_) => len,
            DigitLengths::Range { min, max } => {
                let width = (max - min + 1).div_ceil(10);
                min + (len - min) / width * width
            }
        }
    }

    /// The operand pairs this spec tests, in case order.
    pub fn operands(&self) -> impl Iterator<Item = (DigitString, DigitString)> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.num_cases).map(move |case| {
            let la = self.draw_length(case, &mut rng);
            let lb = if self.mixed_lengths {
                self.draw_length(case, &mut rng)
            } else {
                la
            };
            let a = random_operand(la, &mut rng);
            let b = random_operand(lb, &mut rng);
            (a, b)
        })
    }
}

/// Outcome of one addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub index: usize,
    pub a: DigitString,
    pub b: DigitString,
    pub predicted: Option<DigitString>,
    pub expected: DigitString,
    pub matched: bool,
    pub diagnostic: Option<String>,
}

impl CaseResult {
    pub fn length(&self) -> usize {
        self.a.len().max(self.b.len())
    }

    /// Tab-separated `length a b predicted expected match`; an unparseable
    /// prediction is written as `-`.
    pub fn record_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.length(),
            self.a,
            self.b,
            self.predicted.as_ref().map_or("-".to_string(), |p| p.to_string()),
            self.expected,
            self.matched
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bucket {
    pub cases: usize,
    pub matches: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> f64 {
        self.matches as f64 / self.cases as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Keyed by the bucket's lowest operand length.
    pub buckets: BTreeMap<usize, Bucket>,
    pub failures: Vec<CaseResult>,
    pub wall_time: Duration,
}

impl EvalReport {
    pub fn cases(&self) -> usize {
        self.buckets.values().map(|b| b.cases).sum()
    }

    pub fn matches(&self) -> usize {
        self.buckets.values().map(|b| b.matches).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.matches() as f64 / self.cases() as f64
    }
}

/// Runs every case of `spec`, handing each result to `on_case` in case order.
pub fn run_eval_with<M: StageModel + ?Sized>(
    spec: &EvalSpec,
    model: &M,
    mut on_case: impl FnMut(&CaseResult),
) -> EvalReport {
    let start = Instant::now();
    let mut buckets: BTreeMap<usize, Bucket> = BTreeMap::new();
    let mut failures = Vec::new();
    for (index, (a, b)) in spec.operands().enumerate() {
        let report = verify_addition(model, &a, &b);
        let result = CaseResult {
            index,
            a,
            b,
            predicted: report.predicted,
            expected: report.expected,
            matched: report.matched,
            diagnostic: report.diagnostic,
        };
        on_case(&result);
        let bucket = buckets.entry(spec.bucket_of(result.length())).or_default();
        bucket.cases += 1;
        if result.matched {
            bucket.matches += 1;
        } else {
            failures.push(result);
        }
    }
    EvalReport {
        buckets,
        failures,
        wall_time: start.elapsed(),
    }
}

pub fn run_eval<M: StageModel + ?Sized>(spec: &EvalSpec, model: &M) -> EvalReport {
    run_eval_with(spec, model, |_| {})
}

pub fn report_render(report: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:>8} {:>8} {:>8} {:>9}", "length", "cases", "matches", "accuracy").unwrap();
    for (len, b) in &report.buckets {
        writeln!(s, "{:>8} {:>8} {:>8} {:>9.3}", len, b.cases, b.matches, b.accuracy()).unwrap();
    }
    writeln!(
        s,
        "{:>8} {:>8} {:>8} {:>9.3}",
        "total",
        report.cases(),
        report.matches(),
        report.accuracy()
    )
    .unwrap();
    writeln!(s, "wall time: {:.3}s", report.wall_time.as_secs_f64()).unwrap();
    for f in &report.failures {
        writeln!(s, "FAILURE case {} (length {})", f.index, f.length()).unwrap();
        writeln!(s, "  a         = {}", f.a).unwrap();
        writeln!(s, "  b         = {}", f.b).unwrap();
        match &f.predicted {
            Some(p) => writeln!(s, "  predicted = {p}").unwrap(),
            None => writeln!(s, "  predicted = (none)").unwrap(),
        }
        writeln!(s, "  expected  = {}", f.expected).unwrap();
        if let Some(d) = &f.diagnostic {
            writeln!(s, "  error     = {d}").unwrap();
        }
    }
    s
}

/// Result of the model-free protocol self-test.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleCheck {
    pub pairs_checked: usize,
    pub failures: Vec<(DigitString, DigitString)>,
}

fn protocol_holds(a: &DigitString, b: &DigitString) -> bool {
    let stages = decompose_stages(a, b);
    let outputs: Vec<String> = stages.iter().map(|(_, t)| t.digits_text()).collect();
    stages.len() == a.len().max(b.len())
        && collate(&outputs).is_ok_and(|sum| sum == add_digit_strings(a, b))
}

/// Checks that collating the exact stage targets reproduces school addition:
/// every ordered pair below `exhaustive_upto`, then `random_pairs` pairs with
/// operand lengths uniform in `1..=max_digits`.
pub fn oracle_check(exhaustive_upto: u64, random_pairs: usize, max_digits: usize, seed: u64) -> OracleCheck {
    let mut check = OracleCheck::default();
    let numbers: Vec<DigitString> = (0..exhaustive_upto)
        .map(|n| n.to_string().parse().expect("decimal rendering is valid"))
        .collect();
    for a in &numbers {
        for b in &numbers {
            check.pairs_checked += 1;
            if !protocol_holds(a, b) {
                check.failures.push((a.clone(), b.clone()));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_pairs {
        let la = rng.random_range(1..=max_digits.max(1));
        let lb = rng.random_range(1..=max_digits.max(1));
        let a = random_operand(la, &mut rng);
        let b = random_operand(lb, &mut rng);
        check.pairs_checked += 1;
        if !protocol_holds(&a, &b) {
            check.failures.push((a, b));
        }
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::generate::{ExactStages, StageOutput};

    fn spec(num_cases: usize, min: usize, max: usize, seed: u64) -> EvalSpec {
        EvalSpec {
            num_cases,
            lengths: DigitLengths::Range { min, max },
            seed,
            mixed_lengths: false,
        }
    }

    #[test]
    fn operand_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(random_operand(1, &mut rng).digits()[0] < 10);
            let x = random_operand(50, &mut rng);
            assert_eq!(x.len(), 50);
            assert_ne!(x.digits()[0], 0);
        }
    }

    #[test]
    fn leading_digit_is_uniform() {
        // Each count within 5 sigma of 10^4/9.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[random_operand(5, &mut rng).digits()[0] as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let p: f64 = 1.0 / 9.0;
        let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - 10_000.0 * p).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn exact_stub_is_perfect_and_deterministic() {
        let s = spec(200, 1, 60, 9);
        let a = run_eval(&s, &ExactStages);
        assert_eq!(a.accuracy(), 1.0);
        assert_eq!(a.cases(), 200);
        assert_eq!(a.buckets.len(), 10);
        let b = run_eval(&s, &ExactStages);
        assert_eq!(a.buckets, b.buckets);
        let ops1: Vec<_> = s.operands().collect();
        let ops2: Vec<_> = s.operands().collect();
        assert_eq!(ops1, ops2);
    }

    #[test]
    fn mixed_lengths_differ() {
        let s = EvalSpec {
            mixed_lengths: true,
            ..spec(50, 1, 30, 3)
        };
        assert!(s.operands().any(|(a, b)| a.len() != b.len()));
        assert_eq!(run_eval(&s, &ExactStages).accuracy(), 1.0);
    }

    struct OffByOneAtTop;

    impl StageModel for OffByOneAtTop {
        fn decode_stage(&self, input: &str) -> Result<StageOutput> {
            let mut out = ExactStages.decode_stage(input)?;
            if input.starts_with("7C") {
                out.text = "3".into();
            }
            Ok(out)
        }
    }

    #[test]
    fn failures_are_recorded_and_rendered() {
        let s = EvalSpec {
            num_cases: 40,
            lengths: DigitLengths::Fixed(vec![3, 4]),
            seed: 4,
            mixed_lengths: false,
        };
        let report = run_eval(&s, &OffByOneAtTop);
        assert_eq!(report.matches() + report.failures.len(), report.cases());
        assert!(!report.failures.is_empty());
        let text = report_render(&report);
        let f = &report.failures[0];
        assert!(text.contains(&format!("a         = {}", f.a)));
        assert!(text.contains(&format!("expected  = {}", f.expected)));
        assert_eq!(report.buckets.keys().copied().collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn all_pass_render_is_compact() {
        let report = run_eval(&spec(300, 1, 100, 5), &ExactStages);
        let text = report_render(&report);
        assert_eq!(text.lines().count(), 1 + report.buckets.len() + 2);
        assert!(text.lines().skip(1).take(report.buckets.len()).all(|l| l.ends_with("1.000")));
    }

    #[test]
    fn small_oracle_check_passes() {
        let c = oracle_check(30, 200, 80, 1);
        assert_eq!(c.pairs_checked, 900 + 200);
        assert!(c.failures.is_empty());
    }

    #[test]
    fn record_lines() {
        let mut lines = Vec::new();
        run_eval_with(&spec(3, 2, 2, 1), &ExactStages, |c| lines.push(c.record_line()));
        assert_eq!(lines.len(), 3);
        let cols: Vec<&str> = lines[0].split('\t').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[0], "2");
        assert_eq!(cols[3], cols[4]);
        assert_eq!(cols[5], "true");
    }
}
