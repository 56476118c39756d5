use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::model::{prepare, DataShape, Model, PreparedTrial};
use super::trainer::{check_data, train_prepared};
use super::{derive_seed, StdDivisor, TrainConfig, TrainError};
use crate::io::RawTrialSet;
use crate::random::rng;

const FOLD_STREAM: u64 = 4;

/// Wall-clock seconds per inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                samples,
                mean: 0.0,
                median: 0.0,
                max: 0.0,
            };
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            mean: samples.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    /// Indices into the evaluated set.
    pub test_indices: Vec<usize>,
    /// Indices into the training set the fold's model was fitted on.
    pub train_indices: Vec<usize>,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean: f64,
    pub std: f64,
    pub std_divisor: StdDivisor,
    /// `confusion[true][predicted]`, pooled over folds.
    pub confusion: Vec<Vec<usize>>,
    /// Pooled accuracy, `trace / total` of the confusion matrix.
    pub accuracy: f64,
    pub parameter_count: usize,
    pub latency: LatencyStats,
}

fn mean_std(values: &[f64], divisor: StdDivisor) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match divisor {
        StdDivisor::Population => n,
        StdDivisor::Sample => n - 1.0,
    };
    let std = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    (mean, std)
}

impl EvalReport {
    fn assemble(
        folds: Vec<FoldReport>,
        labels: &[usize],
        classes: usize,
        divisor: StdDivisor,
        parameter_count: usize,
        latency: Vec<f64>,
    ) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for fold in &folds {
            for (&i, &p) in fold.test_indices.iter().zip(&fold.predictions) {
                confusion[labels[i]][p] += 1;
            }
        }
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean, std) = mean_std(&accs, divisor);
        Self {
            folds,
            mean,
            std,
            std_divisor: divisor,
            confusion,
            accuracy: correct as f64 / total.max(1) as f64,
            parameter_count,
            latency: LatencyStats::from_samples(latency),
        }
    }

    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// `section,key,value` lines. Timing varies between runs, so it is only
    /// written when asked for; everything else is a function of config and data.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let mut out = String::from("section,key,value\n");
        let convention = match self.std_divisor {
            StdDivisor::Population => "population-over-folds",
            StdDivisor::Sample => "sample-over-folds",
        };
        let _ = writeln!(out, "summary,folds,{}", self.folds.len());
        let _ = writeln!(out, "summary,mean_accuracy,{}", self.mean);
        let _ = writeln!(out, "summary,std_accuracy,{}", self.std);
        let _ = writeln!(out, "summary,std_convention,{convention}");
        let _ = writeln!(out, "summary,pooled_accuracy,{}", self.accuracy);
        let _ = writeln!(out, "summary,parameter_count,{}", self.parameter_count);
        for (k, fold) in self.folds.iter().enumerate() {
            let _ = writeln!(out, "fold_accuracy,{k},{}", fold.accuracy);
        }
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                let _ = writeln!(out, "confusion,{t}_{p},{count}");
            }
        }
        let mut predictions: Vec<(usize, usize)> = self
            .folds
            .iter()
            .flat_map(|f| f.test_indices.iter().copied().zip(f.predictions.iter().copied()))
            .collect();
        predictions.sort_unstable();
        for (i, p) in predictions {
            let _ = writeln!(out, "prediction,{i},{p}");
        }
        if include_timing {
            let _ = writeln!(out, "latency,mean_s,{}", self.latency.mean);
            let _ = writeln!(out, "latency,median_s,{}", self.latency.median);
            let _ = writeln!(out, "latency,max_s,{}", self.latency.max);
        }
        out
    }
}

/// Test indices per fold. Each class is shuffled on its own, then its trials
/// are dealt round-robin with a counter shared across classes, so fold sizes
/// differ by at most one and every class is spread evenly.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if folds < 2 {
        return Err(TrainError::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    if let Some((c, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < folds) {
        return Err(TrainError::InsufficientData(format!(
            "class {c} has {} trials, fewer than {folds} folds",
            members.len()
        )));
    }
    let mut r = rng(derive_seed(seed, FOLD_STREAM));
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut r);
        for &i in members.iter() {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// Timed full-pipeline predictions for `indices` of `trials`.
fn timed_predictions(
    model: &Model,
    trials: &RawTrialSet,
    indices: &[usize],
) -> Result<(Vec<usize>, Vec<f64>), TrainError> {
    let bank = model.filter_bank()?;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut latency = Vec::with_capacity(indices.len());
    for &i in indices {
        let start = Instant::now();
        predictions.push(model.predict_one(&bank, &trials.trials()[i].data)?);
        latency.push(start.elapsed().as_secs_f64());
    }
    Ok((predictions, latency))
}

fn accuracy(predictions: &[usize], labels: &[usize], indices: &[usize]) -> f64 {
    let correct = predictions
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == labels[i])
        .count();
    correct as f64 / indices.len().max(1) as f64
}

/// Stratified k-fold cross-validation. Channel selection and every learned
/// parameter are fitted on the training folds only.
pub fn evaluate_cv(config: &TrainConfig, trials: &RawTrialSet, folds: usize) -> Result<EvalReport, TrainError> {
    check_data(config, trials)?;
    let labels = trials.labels();
    let assignment = stratified_folds(&labels, folds, config.seed)?;
    let shape = DataShape::of(config, trials);
    let prepared = prepare(config, trials)?;

    let mut reports = Vec::with_capacity(folds);
    let mut latency = Vec::new();
    let mut parameter_count = 0;
    for test in assignment {
        let mut is_test = vec![false; trials.len()];
        for &i in &test {
            is_test[i] = true;
        }
        let train_indices: Vec<usize> = (0..trials.len()).filter(|&i| !is_test[i]).collect();
        let train_data: Vec<PreparedTrial> = train_indices.iter().map(|&i| prepared[i].clone()).collect();
        let (model, _) = train_prepared(config, shape, &train_data)?;
        parameter_count = model.num_parameters();
        let (predictions, times) = timed_predictions(&model, trials, &test)?;
        latency.extend(times);
        reports.push(FoldReport {
            accuracy: accuracy(&predictions, &labels, &test),
            test_indices: test,
            train_indices,
            predictions,
        });
    }
    Ok(EvalReport::assemble(
        reports,
        &labels,
        trials.n_classes(),
        config.std_divisor,
        parameter_count,
        latency,
    ))
}

fn check_schema(a: &RawTrialSet, b: &RawTrialSet) -> Result<(), TrainError> {
    let checks = [
        ("channels", a.channels() as f64, b.channels() as f64),
        ("classes", a.n_classes() as f64, b.n_classes() as f64),
        (
            "samples per trial",
            a.samples_per_trial() as f64,
            b.samples_per_trial() as f64,
        ),
        ("sample rate", a.sample_rate_hz() as f64, b.sample_rate_hz() as f64),
    ];
    for (name, x, y) in checks {
        if x != y {
            return Err(TrainError::SchemaMismatch(format!("{name}: {x} vs {y}")));
        }
    }
    Ok(())
}

/// Trains on `train_set` and reports on `eval_set`; the report has one fold.
pub fn evaluate_holdout(
    config: &TrainConfig,
    train_set: &RawTrialSet,
    eval_set: &RawTrialSet,
) -> Result<(EvalReport, Model), TrainError> {
    check_schema(train_set, eval_set)?;
    check_data(config, train_set)?;
    if eval_set.is_empty() {
        return Err(TrainError::InsufficientData("empty evaluation set".into()));
    }
    let prepared = prepare(config, train_set)?;
    let (model, _) = train_prepared(config, DataShape::of(config, train_set), &prepared)?;
    let test: Vec<usize> = (0..eval_set.len()).collect();
    let labels = eval_set.labels();
    let (predictions, latency) = timed_predictions(&model, eval_set, &test)?;
    let fold = FoldReport {
        accuracy: accuracy(&predictions, &labels, &test),
        train_indices: (0..train_set.len()).collect(),
        test_indices: test,
        predictions,
    };
    let report = EvalReport::assemble(
        vec![fold],
        &labels,
        eval_set.n_classes(),
        config.std_divisor,
        model.num_parameters(),
        latency,
    );
    Ok((report, model))
}

/// Per-trial wall-clock of the full pipeline, `repetitions` passes over
/// `trials`.
pub fn bench_inference(model: &Model, trials: &RawTrialSet, repetitions: usize) -> Result<LatencyStats, TrainError> {
    if repetitions == 0 {
        return Err(TrainError::InvalidConfig("repetitions must be at least 1".into()));
    }
    if trials.channels() != model.shape.channels || trials.samples_per_trial() != model.shape.samples_per_trial {
        return Err(TrainError::SchemaMismatch(format!(
            "model expects {}x{} trials, data has {}x{}",
            model.shape.channels,
            model.shape.samples_per_trial,
            trials.channels(),
            trials.samples_per_trial()
        )));
    }
    let indices: Vec<usize> = (0..trials.len()).collect();
    let mut samples = Vec::with_capacity(repetitions * trials.len());
    for _ in 0..repetitions {
        samples.extend(timed_predictions(model, trials, &indices)?.1);
    }
    Ok(LatencyStats::from_samples(samples))
}
