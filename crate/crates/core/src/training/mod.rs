//! Balance-weighted loss, the epoch loop with early stopping and F1-based
//! model selection, repeated runs, weight grid search and fine-tuning.

mod optim;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Var};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::labels::{one_hot_rows, JointLabelSpace};
use crate::metrics::{joint_eval, macro_f1, MetricsReport};
use crate::models::{GsmoConfig, HeadKind, ModelParams, Outputs, ParamGroup, Predictor};

pub use optim::{AdamConfig, Optimizer, OptimizerKind};

/// Loss weights for the stage-1 / stage-2 plant and disease terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceWeights {
    pub beta1: f32,
    pub beta2: f32,
    pub delta1: f32,
    pub delta2: f32,
}

impl Default for BalanceWeights {
    fn default() -> Self {
        Self::PAPER
    }
}

impl BalanceWeights {
    pub const PAPER: BalanceWeights = BalanceWeights::new(0.1, 0.4, 0.1, 0.5);
    pub const UNWEIGHTED: BalanceWeights = BalanceWeights::new(1.0, 1.0, 1.0, 1.0);

    pub const fn new(beta1: f32, beta2: f32, delta1: f32, delta2: f32) -> Self {
        BalanceWeights {
            beta1,
            beta2,
            delta1,
            delta2,
        }
    }

    pub fn as_array(&self) -> [f32; 4] {
        [self.beta1, self.beta2, self.delta1, self.delta2]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "balance weights must be finite and >= 0, got {a:?}"
            )));
        }
        if a.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument(
                "at least one balance weight must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Parse `β₁,β₂,δ₁,δ₂`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f32> = s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::InvalidArgument(format!("weight {x:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let [b1, b2, d1, d2] = v[..] else {
            return Err(Error::InvalidArgument(format!(
                "expected 4 comma-separated weights (beta1,beta2,delta1,delta2), got {s:?}"
            )));
        };
        let w = BalanceWeights::new(b1, b2, d1, d2);
        w.validate()?;
        Ok(w)
    }
}

/// One-hot targets for a batch. Both stages share the same ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTargets {
    pub p1: crate::Tensor,
    pub p2: crate::Tensor,
    pub d1: crate::Tensor,
    pub d2: crate::Tensor,
    pub joint: crate::Tensor,
}

impl TrainTargets {
    pub fn new(plant: &[usize], disease: &[usize], spaces: &JointLabelSpace) -> Result<Self> {
        let p = one_hot_rows(plant, spaces.plant().len())?;
        let d = one_hot_rows(disease, spaces.disease().len())?;
        let joint: Vec<usize> = plant
            .iter()
            .zip(disease)
            .map(|(&a, &b)| {
                spaces.join(a, b)?.ok_or_else(|| {
                    Error::Label(format!("pair ({a}, {b}) is not in the joint space"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainTargets {
            p1: p.clone(),
            p2: p,
            d1: d.clone(),
            d2: d,
            joint: one_hot_rows(&joint, spaces.len())?,
        })
    }
}

/// Record the training loss for `outputs` on `tape`.
///
/// For the stacked model this is
/// `((β₁·L(P₁,p_temp) + β₂·L(P₂,p2)) + δ₁·L(D₁,d_temp)) + δ₂·L(D₂,d2)`;
/// the two-branch model uses `L(P,p) + L(D,d)` and single heads their one
/// cross-entropy. Weights only affect the stacked model.
pub fn total_loss(
    tape: &mut Tape,
    outputs: &Outputs,
    targets: &TrainTargets,
    weights: &BalanceWeights,
) -> Result<Var> {
    match *outputs {
        Outputs::Plant(p) => tape.cross_entropy(p, &targets.p1),
        Outputs::Disease(d) => tape.cross_entropy(d, &targets.d1),
        Outputs::Joint(j) => tape.cross_entropy(j, &targets.joint),
        Outputs::MultiOutput { plant, disease } => {
            let lp = tape.cross_entropy(plant, &targets.p1)?;
            let ld = tape.cross_entropy(disease, &targets.d1)?;
            tape.add(lp, ld)
        }
        Outputs::Gsmo {
            p_temp,
            d_temp,
            p2,
            d2,
        } => {
            let l1 = tape.cross_entropy(p_temp, &targets.p1)?;
            let l2 = tape.cross_entropy(p2, &targets.p2)?;
            let l3 = tape.cross_entropy(d_temp, &targets.d1)?;
            let l4 = tape.cross_entropy(d2, &targets.d2)?;
            let t1 = tape.scale(l1, weights.beta1);
            let t2 = tape.scale(l2, weights.beta2);
            let t3 = tape.scale(l3, weights.delta1);
            let t4 = tape.scale(l4, weights.delta2);
            let s = tape.add(t1, t2)?;
            let s = tape.add(s, t3)?;
            tape.add(s, t4)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub repeats: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 300,
            patience: 50,
            seed: 0,
            repeats: 10,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    fn optimizer(&self, model: &ModelParams) -> Optimizer {
        Optimizer::new(self.optimizer, self.learning_rate, self.adam, model)
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One pass over `indices` in seeded batches; returns the sample-weighted mean loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut ModelParams,
    optimizer: &mut Optimizer,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    weights: &BalanceWeights,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (b, batch) in data.batches(indices, batch_size, seed)?.enumerate() {
        let batch = batch?;
        let targets = TrainTargets::new(&batch.plant, &batch.disease, data.spaces())?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch.images, Mode::Train)?;
        let loss = total_loss(&mut tape, &pass.outputs, &targets, weights)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, batch: b });
        }
        let grads = tape.backward(loss)?;
        optimizer.step(model, &grads);
        model.apply_bn_updates(pass.bn_updates);
        total += value as f64 * batch.indices.len() as f64;
        count += batch.indices.len();
    }
    Ok(total / count as f64)
}

/// Eval-mode loss and decoded predictions over `indices` (in order).
pub fn evaluate_model(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    weights: &BalanceWeights,
) -> Result<(f64, Vec<(Option<usize>, Option<usize>)>)> {
    let mut total = 0.0f64;
    let mut preds = Vec::with_capacity(indices.len());
    for batch in data.ordered_batches(indices, batch_size) {
        let batch = batch?;
        let targets = TrainTargets::new(&batch.plant, &batch.disease, data.spaces())?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &batch.images, Mode::Eval)?;
        let loss = total_loss(&mut tape, &pass.outputs, &targets, weights)?;
        total += tape.value(loss).item()? as f64 * batch.indices.len() as f64;
        preds.extend(model.decode(&pass.outputs.probabilities(&tape))?);
    }
    Ok((total / indices.len().max(1) as f64, preds))
}

/// Selection score: macro-F1 of the joint target for joint models, of the
/// model's own target for single models.
pub fn selection_f1(
    model: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    preds: &[(Option<usize>, Option<usize>)],
) -> Result<f64> {
    let plant: Vec<usize> = indices.iter().map(|&i| data.plant_labels()[i]).collect();
    let disease: Vec<usize> = indices.iter().map(|&i| data.disease_labels()[i]).collect();
    let spaces = model.spaces();
    match model.kind() {
        HeadKind::SinglePlant => {
            let p: Vec<usize> = preds.iter().map(|x| x.0.unwrap()).collect();
            macro_f1(&plant, &p, spaces.plant().len())
        }
        HeadKind::SingleDisease => {
            let d: Vec<usize> = preds.iter().map(|x| x.1.unwrap()).collect();
            macro_f1(&disease, &d, spaces.disease().len())
        }
        _ => {
            let truth: Vec<(usize, usize)> = plant.into_iter().zip(disease).collect();
            let pred: Vec<(usize, usize)> =
                preds.iter().map(|x| (x.0.unwrap(), x.1.unwrap())).collect();
            Ok(joint_eval(&truth, &pred, spaces)?.both.f1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

/// Test hooks for exercising the stopping rule.
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Replace the measured validation loss of an epoch (the measured one is passed in).
    pub val_loss_override: Option<&'a (dyn Fn(usize, f64) -> f64 + Sync)>,
    /// Stop as soon as validation F1 reaches this value.
    pub stop_at_val_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the selected model; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub best: ModelParams,
}

impl FitOutcome {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    /// First epoch whose validation F1 reached `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.history
            .iter()
            .find(|r| r.val_f1 >= target)
            .map(|r| r.epoch)
    }
}

/// Minimum decrease for a validation loss to count as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Train `model` until validation loss stalls for `patience` epochs or
/// `max_epochs` is reached; return the epoch with the best validation F1
/// (ties: lower validation loss, then earlier epoch).
pub fn fit(
    mut model: ModelParams,
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
    options: &FitOptions,
) -> Result<FitOutcome> {
    config.validate()?;
    weights.validate()?;
    if split.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Dataset(
            "validation split is empty; early stopping needs validation data".into(),
        ));
    }
    let mut optimizer = config.optimizer(&model);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_key: Option<(f64, f64, usize)> = None;
    let mut best_loss = f64::INFINITY;
    let mut last_improve = 0;
    for epoch in 1..=config.max_epochs {
        let train_loss = train_epoch(
            &mut model,
            &mut optimizer,
            data,
            &split.train,
            config.batch_size,
            weights,
            epoch_seed(config.seed, epoch),
            epoch,
        )?;
        let (mut val_loss, preds) =
            evaluate_model(&model, data, &split.val, config.batch_size, weights)?;
        if let Some(f) = options.val_loss_override {
            val_loss = f(epoch, val_loss);
        }
        let val_f1 = selection_f1(&model, data, &split.val, &preds)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1,
        });
        let better = match best_key {
            None => true,
            Some((f1, loss, _)) => val_f1 > f1 || (val_f1 == f1 && val_loss < loss),
        };
        if better {
            best_key = Some((val_f1, val_loss, epoch));
            best = model.clone();
        }
        if val_loss < best_loss - IMPROVEMENT_EPS {
            best_loss = val_loss;
            last_improve = epoch;
        }
        if options.stop_at_val_f1.is_some_and(|t| val_f1 >= t) {
            break;
        }
        if epoch - last_improve >= config.patience {
            break;
        }
    }
    Ok(FitOutcome {
        history,
        best_epoch: best_key.map(|k| k.2),
        best,
    })
}

/// The four modelling approaches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    MultiModel,
    Powerset,
    MultiOutput,
    Gsmo,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::MultiModel,
        Approach::Powerset,
        Approach::MultiOutput,
        Approach::Gsmo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::MultiModel => "multi_model",
            Approach::Powerset => "powerset",
            Approach::MultiOutput => "multi_output",
            Approach::Gsmo => "gsmo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown approach {s:?}")))
    }

    pub fn head_kinds(self) -> &'static [HeadKind] {
        match self {
            Approach::MultiModel => &[HeadKind::SinglePlant, HeadKind::SingleDisease],
            Approach::Powerset => &[HeadKind::Powerset],
            Approach::MultiOutput => &[HeadKind::MultiOutput],
            Approach::Gsmo => &[HeadKind::Gsmo],
        }
    }
}

/// Fresh model(s) for `approach`. The k-th model of an approach uses seed `seed + k`
/// mixed with a fixed odd constant so the two single models differ.
pub fn init_models(
    approach: Approach,
    model: &GsmoConfig,
    spaces: &JointLabelSpace,
    seed: u64,
) -> Result<Vec<ModelParams>> {
    approach
        .head_kinds()
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            ModelParams::init(
                kind,
                model,
                spaces,
                seed ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
            )
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub approach: Approach,
    /// Set for the stacked model only.
    pub weights: Option<BalanceWeights>,
    pub seed: u64,
    /// One history per trained model (two for multi-model).
    pub histories: Vec<Vec<EpochRecord>>,
    pub best_epochs: Vec<Option<usize>>,
    pub test: MetricsReport,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub models: Vec<ModelParams>,
}

impl RunResult {
    /// Epochs trained (the longer of the two for multi-model).
    pub fn epochs(&self) -> usize {
        self.histories.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Predictor::new(self.models.clone())
    }
}

/// Evaluate a predictor on `indices`.
pub fn evaluate(
    predictor: &Predictor,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(indices.len());
    for batch in data.ordered_batches(indices, batch_size) {
        preds.extend(predictor.predict(&batch?.images)?);
    }
    let truth: Vec<(usize, usize)> = indices
        .iter()
        .map(|&i| (data.plant_labels()[i], data.disease_labels()[i]))
        .collect();
    joint_eval(&truth, &preds, predictor.spaces())
}

/// Fit every model of an approach from the given initial parameters and test
/// the selected result.
pub fn fit_models(
    approach: Approach,
    initial: Vec<ModelParams>,
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
    options: &FitOptions,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut histories = Vec::new();
    let mut best_epochs = Vec::new();
    let mut models = Vec::new();
    for m in initial {
        let out = fit(m, config, weights, data, split, options)?;
        histories.push(out.history);
        best_epochs.push(out.best_epoch);
        models.push(out.best);
    }
    let predictor = Predictor::new(models.clone())?;
    let test = if split.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    } else {
        evaluate(&predictor, data, &split.test, config.batch_size)?
    };
    Ok(RunResult {
        approach,
        weights: (approach == Approach::Gsmo).then_some(*weights),
        seed: config.seed,
        histories,
        best_epochs,
        test,
        wall_time_secs: start.elapsed().as_secs_f64(),
        models,
    })
}

/// Initialize and fit one run of `approach` with `config.seed`.
pub fn run_approach(
    approach: Approach,
    model: &GsmoConfig,
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
) -> Result<RunResult> {
    let initial = init_models(approach, model, data.spaces(), config.seed)?;
    fit_models(
        approach,
        initial,
        config,
        weights,
        data,
        split,
        &FitOptions::default(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }
}

/// The nine headline metrics of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Headline<T> {
    pub plant_acc: T,
    pub plant_f1: T,
    pub plant_fpr: T,
    pub dis_acc: T,
    pub dis_f1: T,
    pub dis_fpr: T,
    pub both_acc: T,
    pub both_f1: T,
    pub both_fpr: T,
}

impl Headline<f64> {
    pub fn from_report(r: &MetricsReport) -> Self {
        Headline {
            plant_acc: r.plant.accuracy,
            plant_f1: r.plant.f1,
            plant_fpr: r.plant.fpr,
            dis_acc: r.disease.accuracy,
            dis_f1: r.disease.f1,
            dis_fpr: r.disease.fpr,
            both_acc: r.both.accuracy,
            both_f1: r.both.f1,
            both_fpr: r.both.fpr,
        }
    }

    pub fn values(&self) -> [f64; 9] {
        [
            self.plant_acc,
            self.plant_f1,
            self.plant_fpr,
            self.dis_acc,
            self.dis_f1,
            self.dis_fpr,
            self.both_acc,
            self.both_f1,
            self.both_fpr,
        ]
    }
}

impl Headline<Summary> {
    pub fn aggregate(runs: &[Headline<f64>]) -> Self {
        let col =
            |f: fn(&Headline<f64>) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Headline {
            plant_acc: col(|h| h.plant_acc),
            plant_f1: col(|h| h.plant_f1),
            plant_fpr: col(|h| h.plant_fpr),
            dis_acc: col(|h| h.dis_acc),
            dis_f1: col(|h| h.dis_f1),
            dis_fpr: col(|h| h.dis_fpr),
            both_acc: col(|h| h.both_acc),
            both_f1: col(|h| h.both_f1),
            both_fpr: col(|h| h.both_fpr),
        }
    }

    pub fn means(&self) -> Headline<f64> {
        let m = |s: Summary| s.mean;
        Headline {
            plant_acc: m(self.plant_acc),
            plant_f1: m(self.plant_f1),
            plant_fpr: m(self.plant_fpr),
            dis_acc: m(self.dis_acc),
            dis_f1: m(self.dis_f1),
            dis_fpr: m(self.dis_fpr),
            both_acc: m(self.both_acc),
            both_f1: m(self.both_f1),
            both_fpr: m(self.both_fpr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
    /// `(epoch, batch)` when the run stopped on a non-finite loss.
    pub divergence: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepeatReport {
    pub approach: Approach,
    pub weights: Option<BalanceWeights>,
    /// Completed runs in seed order.
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Headline<Summary>,
    pub epochs: Summary,
}

/// Fit with seeds `seed, seed+1, …, seed+repeats-1` and aggregate the test metrics.
/// Failed runs are reported alongside the aggregate of the completed ones.
pub fn run_repeats(
    approach: Approach,
    model: &GsmoConfig,
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
) -> Result<RepeatReport> {
    let init = |seed| init_models(approach, model, data.spaces(), seed);
    run_repeats_from(approach, &init, config, weights, data, split)
}

/// [`run_repeats`] with a custom per-seed initializer (e.g. transfer from a checkpoint).
pub fn run_repeats_from(
    approach: Approach,
    init: &(dyn Fn(u64) -> Result<Vec<ModelParams>> + Sync),
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
) -> Result<RepeatReport> {
    if config.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    config.validate()?;
    weights.validate()?;
    let outcomes: Vec<(u64, Result<RunResult>)> = (0..config.repeats as u64)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r);
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            let run = init(seed).and_then(|initial| {
                fit_models(
                    approach,
                    initial,
                    &cfg,
                    weights,
                    data,
                    split,
                    &FitOptions::default(),
                )
            });
            (seed, run)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(RunFailure {
                seed,
                error: e.to_string(),
                divergence: match e {
                    Error::Divergence { epoch, batch } => Some((epoch, batch)),
                    _ => None,
                },
            }),
        }
    }
    Ok(aggregate_runs(
        approach,
        (approach == Approach::Gsmo).then_some(*weights),
        runs,
        failures,
    ))
}

pub fn aggregate_runs(
    approach: Approach,
    weights: Option<BalanceWeights>,
    runs: Vec<RunResult>,
    failures: Vec<RunFailure>,
) -> RepeatReport {
    let heads: Vec<Headline<f64>> = runs
        .iter()
        .map(|r| Headline::from_report(&r.test))
        .collect();
    let epochs: Vec<f64> = runs.iter().map(|r| r.epochs() as f64).collect();
    RepeatReport {
        approach,
        weights,
        aggregate: Headline::aggregate(&heads),
        epochs: Summary::of(&epochs),
        runs,
        failures,
    }
}

/// Every tuple of `values` over the four axes, in lexicographic order
/// `(β₁, β₂, δ₁, δ₂)`; tuples with all weights zero are skipped.
pub fn coarse_grid(values: &[f32]) -> Vec<BalanceWeights> {
    let mut out = Vec::new();
    for &b1 in values {
        for &b2 in values {
            for &d1 in values {
                for &d2 in values {
                    let w = BalanceWeights::new(b1, b2, d1, d2);
                    if w.validate().is_ok() {
                        out.push(w);
                    }
                }
            }
        }
    }
    out
}

/// `center ± k·step` per axis, for narrowing around a coarse optimum.
pub fn fine_grid(center: &BalanceWeights, step: f32, radius: usize) -> Vec<BalanceWeights> {
    let axis = |c: f32| -> Vec<f32> {
        let r = radius as i32;
        (-r..=r)
            .map(|k| c + k as f32 * step)
            .filter(|v| *v >= 0.0)
            .collect()
    };
    let [a, b, c, d] = center.as_array().map(axis);
    let mut out = Vec::new();
    for &b1 in &a {
        for &b2 in &b {
            for &d1 in &c {
                for &d2 in &d {
                    let w = BalanceWeights::new(b1, b2, d1, d2);
                    if w.validate().is_ok() {
                        out.push(w);
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRow {
    /// Position in the input grid.
    pub index: usize,
    pub weights: BalanceWeights,
    pub val_both_f1: f64,
    pub val_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub test: Headline<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridTable {
    /// Ranked by validation joint macro-F1, ties by lexicographic weight order.
    pub rows: Vec<GridRow>,
    pub best: BalanceWeights,
}

fn lex_cmp(a: &BalanceWeights, b: &BalanceWeights) -> std::cmp::Ordering {
    a.as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// One single-seed stacked-model fit per weight tuple.
pub fn grid_search_weights(
    grid: &[BalanceWeights],
    model: &GsmoConfig,
    config: &TrainConfig,
    data: &Dataset,
    split: &Split,
) -> Result<GridTable> {
    if grid.is_empty() {
        return Err(Error::Config("weight grid is empty".into()));
    }
    let rows: Vec<GridRow> = grid
        .par_iter()
        .enumerate()
        .map(|(index, w)| {
            let initial = init_models(Approach::Gsmo, model, data.spaces(), config.seed)?;
            let run = fit_models(
                Approach::Gsmo,
                initial,
                config,
                w,
                data,
                split,
                &FitOptions::default(),
            )?;
            let hist = &run.histories[0];
            let best = run.best_epochs[0].map(|e| hist[e - 1]);
            Ok(GridRow {
                index,
                weights: *w,
                val_both_f1: best.map_or(0.0, |r| r.val_f1),
                val_loss: best.map_or(f64::NAN, |r| r.val_loss),
                best_epoch: run.best_epochs[0],
                epochs: run.epochs(),
                test: Headline::from_report(&run.test),
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = rows;
    rows.sort_by(|a, b| {
        b.val_both_f1
            .total_cmp(&a.val_both_f1)
            .then_with(|| lex_cmp(&a.weights, &b.weights))
    });
    let best = rows[0].weights;
    Ok(GridTable { rows, best })
}

/// Start `kind` from `source` for the listed groups (the rest fresh from
/// `config.seed`), freeze `freeze`, then fit.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    source: &ModelParams,
    load: &[ParamGroup],
    freeze: &[ParamGroup],
    kind: HeadKind,
    model: &GsmoConfig,
    config: &TrainConfig,
    weights: &BalanceWeights,
    data: &Dataset,
    split: &Split,
    options: &FitOptions,
) -> Result<FitOutcome> {
    let init = transfer_init(
        source,
        load,
        freeze,
        kind,
        model,
        data.spaces(),
        config.seed,
    )?;
    fit(init, config, weights, data, split, options)
}

/// The initial parameters used by [`fine_tune`].
pub fn transfer_init(
    source: &ModelParams,
    load: &[ParamGroup],
    freeze: &[ParamGroup],
    kind: HeadKind,
    model: &GsmoConfig,
    spaces: &JointLabelSpace,
    seed: u64,
) -> Result<ModelParams> {
    let mut init = ModelParams::init(kind, model, spaces, seed)?;
    init.load_groups_from(source, load)?;
    init.set_trainable(freeze, false);
    Ok(init)
}
