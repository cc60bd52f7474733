use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ccat::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use ccat::eval::{oracle_check, report_render, run_eval_with, DigitLengths, EvalSpec};
use ccat::generate::{add_with_model, CachedStages, ExactStages, StageModel};
use ccat::instances::{enumerate_stage_space, sample_batch, MixConfig, SecondTypeSampling};
use ccat::model::ModelConfig;
use ccat::optim::{evaluate_stage_accuracy, train, OptimConfig};
use ccat::{add_digit_strings, DigitString, Error};

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "ccat", version, about = "Train and run a transformer that adds integers of any length")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_digits(s: &str) -> Result<DigitString, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(clap::Args)]
struct ModelSource {
    /// Checkpoint to load.
    #[arg(long, required_unless_present = "exact")]
    ckpt: Option<PathBuf>,
    /// Use exact arithmetic for every stage instead of a model.
    #[arg(long)]
    exact: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        steps: u64,
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0.01)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0.5)]
        second_type_frac: f64,
        #[arg(long, default_value_t = 500)]
        eval_every: u64,
        /// Second-type source: windows (two-digit windows of longer numbers),
        /// numbers (integers 0..=99 only) or uniform (whole stage space, previous sum 19 included).
        #[arg(long, default_value = "windows")]
        second_type_sampling: SecondTypeSampling,
        /// Also write the training log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Add two numbers stage by stage with the model.
    Add {
        #[command(flatten)]
        model: ModelSource,
        #[arg(long, value_parser = parse_digits, allow_hyphen_values = true)]
        a: DigitString,
        #[arg(long, value_parser = parse_digits, allow_hyphen_values = true)]
        b: DigitString,
        /// Print every stage input and output.
        #[arg(long)]
        trace: bool,
    },
    /// Check model additions of random operands against school addition.
    Eval {
        #[command(flatten)]
        model: ModelSource,
        #[arg(long)]
        cases: usize,
        #[arg(long)]
        min_digits: usize,
        #[arg(long)]
        max_digits: usize,
        #[arg(long)]
        seed: u64,
        /// Draw each operand's length independently.
        #[arg(long)]
        mixed_lengths: bool,
        /// Memoize stage outputs by input text (identical results, much faster).
        #[arg(long)]
        cache: bool,
        /// Write one tab-separated record per case here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode every possible stage input and report exact-match accuracy.
    StageEval {
        #[command(flatten)]
        model: ModelSource,
        /// Also test inputs with previous sum 19, which two-digit training never produces.
        #[arg(long)]
        include_19: bool,
    },
    /// Model-free check that collating exact stage targets equals school addition.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        exhaustive_upto: u64,
        #[arg(long, default_value_t = 10_000)]
        random_pairs: usize,
        #[arg(long, default_value_t = 2000)]
        max_digits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print sampled training instances as INPUT<TAB>TARGET<TAB>KIND.
    DumpInstances {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        second_type_frac: f64,
        #[arg(long, default_value = "windows")]
        second_type_sampling: SecondTypeSampling,
    },
}

fn load_model(src: &ModelSource) -> Result<Box<dyn StageModel>, Error> {
    if src.exact {
        return Ok(Box::new(ExactStages));
    }
    let path = src.ckpt.as_ref().expect("clap requires --ckpt without --exact");
    Ok(Box::new(load_checkpoint(path)?.params))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train {
            out,
            seed,
            steps,
            batch_size,
            lr,
            weight_decay,
            second_type_frac,
            eval_every,
            second_type_sampling,
            log,
        } => {
            if !(0.0..=1.0).contains(&second_type_frac) || batch_size == 0 || lr <= 0.0 {
                eprintln!("error: --second-type-frac must be in [0, 1]; --batch-size and --lr positive");
                return Ok(ExitCode::from(EXIT_USAGE));
            }
            let optim = OptimConfig {
                learning_rate: lr,
                weight_decay,
                batch_size,
                max_steps: steps,
                eval_every,
                seed,
                ..OptimConfig::default()
            };
            let mix = MixConfig {
                second_type_fraction: second_type_frac,
                rng_seed: seed,
                second_type_sampling,
            };
            let mut log_file = log.map(File::create).transpose()?.map(BufWriter::new);
            let start = Instant::now();
            let outcome = train(ModelConfig::default(), &optim, &mix, |r| {
                let line = r.log_line();
                println!("{line} elapsed={:.1}s", start.elapsed().as_secs_f64());
                if let Some(f) = log_file.as_mut() {
                    let _ = writeln!(f, "{line}");
                    let _ = f.flush();
                }
            })?;
            let steps_done = outcome.log.last().map_or(0, |r| r.step);
            save_checkpoint(
                &out,
                &Checkpoint {
                    params: outcome.params,
                    meta: CheckpointMeta {
                        seed,
                        steps: steps_done,
                        stage_accuracy: outcome.final_stage_accuracy,
                    },
                    optim: Some(outcome.state),
                },
            )?;
            if outcome.converged {
                println!("converged after {steps_done} steps; wrote {}", out.display());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "did not converge within {steps_done} steps (stage accuracy {:.6}); wrote {}",
                    outcome.final_stage_accuracy,
                    out.display()
                );
                Ok(ExitCode::from(EXIT_MISMATCH))
            }
        }
        Command::Add { model, a, b, trace } => {
            let m = load_model(&model)?;
            let expected = add_digit_strings(&a, &b);
            let (predicted, tr) = match add_with_model(&*m, &a, &b) {
                Ok(r) => r,
                Err(Error::MalformedOutput { input, output, partial }) => {
                    if trace {
                        print!("{}", partial.render());
                    }
                    eprintln!("model produced malformed output {output:?} for stage input {input:?}");
                    eprintln!("expected {expected}");
                    return Ok(ExitCode::from(EXIT_MISMATCH));
                }
                Err(e) => return Err(e),
            };
            if trace {
                println!("Autoregressive generation to compute: {a}+{b}");
                print!("{}", tr.render());
            } else {
                println!("{predicted}");
            }
            if predicted == expected {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("MISMATCH: predicted {predicted}, expected {expected}");
                Ok(ExitCode::from(EXIT_MISMATCH))
            }
        }
        Command::Eval {
            model,
            cases,
            min_digits,
            max_digits,
            seed,
            mixed_lengths,
            cache,
            report,
        } => {
            let spec = EvalSpec {
                num_cases: cases,
                lengths: DigitLengths::Range {
                    min: min_digits,
                    max: max_digits,
                },
                seed,
                mixed_lengths,
            };
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(EXIT_USAGE));
            }
            let m = load_model(&model)?;
            let m: Box<dyn StageModel> = if cache {
                Box::new(CachedStages::new(m))
            } else {
                m
            };
            let mut records = report.map(File::create).transpose()?.map(BufWriter::new);
            let rep = run_eval_with(&spec, &*m, |c| {
                if let Some(f) = records.as_mut() {
                    let _ = writeln!(f, "{}", c.record_line());
                }
            });
            if let Some(mut f) = records {
                f.flush()?;
            }
            print!("{}", report_render(&rep));
            Ok(if rep.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISMATCH)
            })
        }
        Command::StageEval { model, include_19 } => {
            let m = load_model(&model)?;
            let space = enumerate_stage_space(if include_19 { 19 } else { 18 });
            let acc = evaluate_stage_accuracy(&*m, &space)?;
            println!(
                "stage accuracy {:.6} ({}/{})",
                acc.accuracy(),
                acc.correct,
                acc.total
            );
            if include_19 {
                let unseen = space.iter().filter(|c| c.input.text().starts_with("19C")).count();
                let unseen_fail = acc.failures.iter().filter(|f| f.input.starts_with("19C")).count();
                println!(
                    "previous-sum-19 inputs: {}/{unseen}",
                    unseen - unseen_fail
                );
            }
            for f in &acc.failures {
                println!("FAIL input={} expected={} got={:?}", f.input, f.expected, f.got);
            }
            Ok(if acc.is_perfect() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISMATCH)
            })
        }
        Command::OracleCheck {
            exhaustive_upto,
            random_pairs,
            max_digits,
            seed,
        } => {
            let start = Instant::now();
            let check = oracle_check(exhaustive_upto, random_pairs, max_digits, seed);
            println!(
                "checked {} pairs in {:.2}s, {} failures",
                check.pairs_checked,
                start.elapsed().as_secs_f64(),
                check.failures.len()
            );
            for (a, b) in check.failures.iter().take(20) {
                println!("FAIL a={a} b={b}");
            }
            Ok(if check.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISMATCH)
            })
        }
        Command::DumpInstances {
            count,
            seed,
            second_type_frac,
            second_type_sampling,
        } => {
            let mix = MixConfig {
                second_type_fraction: second_type_frac,
                rng_seed: seed,
                second_type_sampling,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for inst in sample_batch(&mix, count, &mut rng) {
                println!("{}", inst.dump_line());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_MISMATCH)
        }
    }
}
