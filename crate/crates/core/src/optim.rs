//! Adam with decoupled weight decay, the training loop, and exhaustive
//! stage-space evaluation used as the stopping rule.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generate::StageModel;
use crate::instances::{enumerate_stage_space, sample_batch, MixConfig, StageCase, TrainingInstance};
use crate::model::{is_norm_param, loss_and_gradients, ModelConfig, ModelParams, Real};

/// Consecutive perfect evaluations required to stop.
pub const CONVERGED_EVALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 5e-4,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 512,
            max_steps: 200_000,
            eval_every: 500,
            seed: 0,
        }
    }
}

/// Adam moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub first_moment: ModelParams<T>,
    pub second_moment: ModelParams<T>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        OptimState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam step from precomputed gradients. Weight decay shrinks every
/// non-normalization parameter by `lr * decay` before the Adam delta.
pub fn apply_gradients<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut OptimState<T>,
    grads: &ModelParams<T>,
    cfg: &OptimConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let lr = T::lit(cfg.learning_rate);
    let decay = T::lit(1.0 - cfg.learning_rate * cfg.weight_decay);
    let (b1, b2) = (T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2));
    let correct1 = T::one() - b1.powi(t);
    let correct2 = T::one() - b2.powi(t);
    let eps = T::lit(cfg.adam_eps);

    let moments = state
        .first_moment
        .named_mut()
        .into_iter()
        .zip(state.second_moment.named_mut());
    for (((name, p), (_, g)), ((_, m), (_, v))) in
        params.named_mut().into_iter().zip(grads.named()).zip(moments)
    {
        let decays = !is_norm_param(&name) && cfg.weight_decay != 0.0;
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
            v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
            if decays {
                p.data[i] *= decay;
            }
            let m_hat = m.data[i] / correct1;
            let v_hat = v.data[i] / correct2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Computes gradients on `batch` with dropout and applies one Adam step.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut OptimState<T>,
    batch: &[TrainingInstance],
    cfg: &OptimConfig,
    dropout_rng: &mut dyn RngCore,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(params, batch, Some(dropout_rng)).map_err(|e| match e {
        Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step: state.step + 1 },
        e => e,
    })?;
    apply_gradients(params, state, &grads, cfg);
    Ok(loss.to_f64().unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFailure {
    pub input: String,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageAccuracy {
    pub correct: usize,
    pub total: usize,
    pub failures: Vec<StageFailure>,
}

impl StageAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.correct as f64 / self.total as f64
    }

    pub fn is_perfect(&self) -> bool {
        self.correct == self.total
    }
}

/// Decodes every enumerated input and compares the `S`-terminated output
/// with its exact target.
pub fn evaluate_stage_accuracy<M: StageModel + ?Sized>(
    model: &M,
    space: &[StageCase],
) -> Result<StageAccuracy> {
    let mut failures = Vec::new();
    for case in space {
        let input = case.input.text();
        let got = model.decode_stage(&input)?.raw();
        let expected = case.target.text();
        if got != expected {
            failures.push(StageFailure {
                input,
                expected,
                got,
            });
        }
    }
    Ok(StageAccuracy {
        correct: space.len() - failures.len(),
        total: space.len(),
        failures,
    })
}

/// One periodic evaluation during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub stage_accuracy: f64,
    pub failures: usize,
}

impl EvalRecord {
    pub fn log_line(&self) -> String {
        format!(
            "step={} loss={:.6} stage_acc={:.6} fails={}",
            self.step, self.loss, self.stage_accuracy, self.failures
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub state: OptimState<f32>,
    pub log: Vec<EvalRecord>,
    /// Perfect stage accuracy on `CONVERGED_EVALS` consecutive evaluations.
    pub converged: bool,
    pub final_stage_accuracy: f64,
}

/// Samples batches and takes Adam steps until the whole training-reachable
/// stage space is decoded perfectly several evaluations in a row, or the
/// step budget runs out. `on_eval` sees every log record as it is produced.
pub fn train(
    model_config: ModelConfig,
    optim: &OptimConfig,
    mix: &MixConfig,
    mut on_eval: impl FnMut(&EvalRecord),
) -> Result<TrainOutcome> {
    model_config.validate().map_err(Error::ShapeMismatch)?;
    let mut params = ModelParams::<f32>::init(model_config, optim.seed);
    let mut state = OptimState::new(&params);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(mix.rng_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(optim.seed);
    dropout_rng.set_stream(1);
    let space = enumerate_stage_space(18);
    let eval_every = optim.eval_every.max(1);

    let mut log: Vec<EvalRecord> = Vec::new();
    let mut streak = 0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut evaluate = |params: &ModelParams<f32>, step: u64, loss_sum: f64, loss_count: u64| {
        let acc = evaluate_stage_accuracy(params, &space)?;
        let record = EvalRecord {
            step,
            loss: if loss_count == 0 { f64::NAN } else { loss_sum / loss_count as f64 },
            stage_accuracy: acc.accuracy(),
            failures: acc.failures.len(),
        };
        on_eval(&record);
        Ok::<_, Error>((record, acc.is_perfect()))
    };

    let mut step = 0;
    while step < optim.max_steps {
        let batch = sample_batch(mix, optim.batch_size, &mut sample_rng);
        loss_sum += train_step(&mut params, &mut state, &batch, optim, &mut dropout_rng)?;
        loss_count += 1;
        step += 1;
        if step % eval_every == 0 {
            let (record, perfect) = evaluate(&params, step, loss_sum, loss_count)?;
            log.push(record);
            loss_sum = 0.0;
            loss_count = 0;
            streak = if perfect { streak + 1 } else { 0 };
            if streak >= CONVERGED_EVALS {
                break;
            }
        }
    }
    if log.last().is_none_or(|r| r.step != step) {
        let (record, perfect) = evaluate(&params, step, loss_sum, loss_count)?;
        log.push(record);
        streak = if perfect { streak + 1 } else { 0 };
    }
    let final_stage_accuracy = log.last().unwrap().stage_accuracy;
    Ok(TrainOutcome {
        params,
        state,
        log,
        converged: streak >= CONVERGED_EVALS,
        final_stage_accuracy,
    })
}
