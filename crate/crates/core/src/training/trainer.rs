use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::{frame_loss_on_tape, loss, Labels, LossWeights};
use super::metrics::{mean_abs, rms, tail_metrics, TailMetrics};
use super::optimizer::Adam;
use crate::autodiff::{Tape, Tensor};
use crate::backbone::{is_projection, GatingMode, ModelState, ParamVars};
use crate::error::{invalid, Error, Result};
use crate::structure::AtomicConfiguration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate decays exponentially to `learning_rate · lr_final_fraction`
    /// at the last step; 1 keeps it constant.
    pub lr_final_fraction: f64,
    pub seed: u64,
    /// Validation every this many steps, plus once before the first step
    /// and after the last.
    pub eval_every: usize,
    /// Overrides for the model's ablation switches; `None` keeps the model's.
    pub positional_encoding: Option<bool>,
    pub learnable_projections: Option<bool>,
    pub gating: Option<GatingMode>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-2,
            lr_final_fraction: 0.1,
            seed: 0,
            eval_every: 100,
            positional_encoding: None,
            learnable_projections: None,
            gating: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(invalid("batch size and evaluation interval must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_final_fraction > 0.0) {
            return Err(invalid("learning rate and its final fraction must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.learning_rate;
        }
        self.learning_rate * self.lr_final_fraction.powf(step as f64 / (self.steps - 1) as f64)
    }

    /// Applies the ablation overrides to a copy of `model`.
    pub fn configure(&self, model: &ModelState) -> Result<ModelState> {
        let mut m = model.clone();
        if let Some(pe) = self.positional_encoding {
            m.config.attention.positional_encoding = pe;
        }
        if let Some(l) = self.learnable_projections {
            m.config.attention.learnable_projections = l;
        }
        if let Some(g) = self.gating {
            m.config.gating = g;
        }
        m.check()?;
        Ok(m)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Errors of a model on a set of labelled frames. Force statistics are
/// over individual Cartesian components, energy statistics over frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub energy_mae: f64,
    pub energy_rmse: f64,
    pub force_mae: f64,
    pub force_rmse: f64,
    pub energy_tail: TailMetrics,
    pub force_tail: TailMetrics,
}

impl EvalMetrics {
    pub fn records(&self, step: usize, split: &str) -> Vec<LogRecord> {
        let rec = |metric: &str, value: f64| LogRecord {
            step,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        };
        vec![
            rec("loss", self.loss),
            rec("energy_mae", self.energy_mae),
            rec("energy_rmse", self.energy_rmse),
            rec("force_mae", self.force_mae),
            rec("force_rmse", self.force_rmse),
        ]
    }
}

/// Predictions for every frame, in order.
pub fn predict_all(model: &ModelState, frames: &[AtomicConfiguration]) -> Result<Vec<Labels>> {
    frames
        .par_iter()
        .map(|f| {
            let p = model.predict(&f.species, &f.positions)?;
            Ok(Labels {
                energy: p.energy,
                forces: p.forces,
            })
        })
        .collect()
}

pub fn evaluate(model: &ModelState, frames: &[AtomicConfiguration], w: LossWeights) -> Result<EvalMetrics> {
    if frames.is_empty() {
        return Err(invalid("cannot evaluate on an empty set"));
    }
    let pred = predict_all(model, frames)?;
    let target: Vec<Labels> = frames.iter().map(Labels::of).collect::<Result<_>>()?;
    metrics_from(&pred, &target, w)
}

pub fn metrics_from(pred: &[Labels], target: &[Labels], w: LossWeights) -> Result<EvalMetrics> {
    let l = loss(pred, target, w)?;
    let de: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p.energy - t.energy).collect();
    let df: Vec<f64> = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.forces.iter().zip(&t.forces).flat_map(|(a, b)| (a - b).iter().copied().collect::<Vec<_>>()))
        .collect();
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
    Ok(EvalMetrics {
        loss: l,
        energy_mae: mean_abs(&de),
        energy_rmse: rms(&de),
        force_mae: mean_abs(&df),
        force_rmse: rms(&df),
        energy_tail: tail_metrics(&abs(&de))?,
        force_tail: tail_metrics(&abs(&df))?,
    })
}

/// Loss value and parameter gradients (in [`crate::backbone::ModelParams::named`]
/// order, `None` for frozen parameters) over a batch. Each frame is
/// evaluated on its own tape, possibly in parallel; contributions are
/// summed in batch order so the result does not depend on the thread count.
pub fn batch_gradients(
    model: &ModelState,
    batch: &[&AtomicConfiguration],
    w: LossWeights,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let frozen = !model.config.attention.learnable_projections;
    let track = |name: &str| !(frozen && is_projection(name));
    let components: usize = batch.iter().map(|f| 3 * f.len()).sum();
    let per_frame: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|frame| {
            let tape = Tape::new();
            let vars = ParamVars::place(&tape, &model.params, track);
            let l = frame_loss_on_tape(model, &vars, frame, w, batch.len(), components)?;
            let leaves: Vec<_> = vars.named().into_iter().filter(|(n, _)| track(n)).map(|(_, v)| v).collect();
            let grads = tape.grad(l, &leaves)?;
            Ok((l.item(), grads))
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for (l, g) in per_frame {
        total += l;
        sum = Some(match sum {
            None => g,
            Some(acc) => acc.iter().zip(&g).map(|(a, b)| a.zip_map(b, |x, y| x + y)).collect(),
        });
    }
    let mut tracked = sum.unwrap_or_default().into_iter();
    let grads = names
        .iter()
        .map(|n| if track(n) { tracked.next() } else { None })
        .collect();
    Ok((total, grads))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub state: ModelState,
    pub log: Vec<LogRecord>,
    /// Validation metrics of the model before any step.
    pub initial: EvalMetrics,
    pub last: EvalMetrics,
}

/// Adam on the configured loss. Deterministic for a given seed; batches
/// walk through seeded shuffles of the training split. A non-finite loss
/// or gradient aborts with [`Error::Diverged`] carrying the last good
/// parameters.
pub fn train(dataset: &Dataset, model: &ModelState, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(dataset, model, cfg, |_| {})
}

/// As [`train`], calling `on_record` for each log line as it is produced.
pub fn train_with(
    dataset: &Dataset,
    model: &ModelState,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() {
        return Err(invalid("training needs non-empty train and validation splits"));
    }
    let mut state = cfg.configure(model)?;
    let mut log = Vec::new();
    let mut emit = |records: Vec<LogRecord>, log: &mut Vec<LogRecord>| {
        for r in records {
            on_record(&r);
            log.push(r);
        }
    };
    let initial = evaluate(&state, &dataset.valid, cfg.weights)?;
    emit(initial.records(0, "valid"), &mut log);
    let mut last = initial;

    let shapes: Vec<(usize, usize)> = state.params.named().iter().map(|(_, t)| t.shape()).collect();
    let mut opt = Adam::new(&shapes);
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut window_loss = 0.0;
    let mut window_len = 0usize;
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(dataset.train.len()) {
            if cursor == order.len() {
                order = (0..dataset.train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&dataset.train[order[cursor]]);
            cursor += 1;
        }
        let diverged = |message: String, state: &ModelState| Error::Diverged {
            step,
            message,
            last_good: Box::new(state.clone()),
        };
        let (l, grads) = match batch_gradients(&state, &batch, cfg.weights) {
            Ok(x) => x,
            Err(e @ (Error::NumericalOverflow(_) | Error::DegenerateGeometry(_))) => {
                return Err(diverged(e.to_string(), &state))
            }
            Err(e) => return Err(e),
        };
        if !l.is_finite() {
            return Err(diverged(format!("loss is {l}"), &state));
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(diverged("gradient is not finite".into(), &state));
        }
        let mut next = state.clone();
        {
            let mut params: Vec<&mut Tensor> = next.params.named_mut().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut params, &grads, cfg.learning_rate_at(step - 1));
        }
        if !next.params.is_finite() {
            return Err(diverged("parameters became non-finite".into(), &state));
        }
        state = next;
        window_loss += l;
        window_len += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            emit(
                vec![LogRecord {
                    step,
                    split: "train".into(),
                    metric: "loss".into(),
                    value: window_loss / window_len as f64,
                }],
                &mut log,
            );
            window_loss = 0.0;
            window_len = 0;
            last = evaluate(&state, &dataset.valid, cfg.weights)?;
            emit(last.records(step, "valid"), &mut log);
        }
    }
    Ok(TrainReport { state, log, initial, last })
}

/// Log lines as JSON, one per line.
pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("log records serialise") + "\n")
        .collect()
}

/// Values of `metric` on `split`, in step order.
pub fn series(log: &[LogRecord], split: &str, metric: &str) -> Vec<(usize, f64)> {
    log.iter()
        .filter(|r| r.split == split && r.metric == metric)
        .map(|r| (r.step, r.value))
        .collect()
}
