//! Training loop with the reference protocol (Adam, batch size 32, initial
//! learning rate 1e-4, 100 epochs by default), evaluation metrics, and the
//! activation/pooling comparison harness.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{zero_grads, Graph};
use crate::layers::{ActivationKind, ForwardMode, PoolVariant};
use crate::models::{Model, ModelSpec};
use crate::optim::{adam_step, AdamParams, AdamState};
use crate::scalar::Scalar;
use crate::tensor::RealTensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    fn adam_params(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train", "epochs must be >= 1"));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid("train", "learning_rate must be >= 0"));
        }
        Ok(())
    }
}

/// One epoch of metrics. `wall_time_s` is excluded from serialized output so
/// metric files stay byte-identical under a fixed seed.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<usize>>,
}

pub struct TrainOutcome<P: Scalar> {
    pub records: Vec<MetricsRecord>,
    pub adam: AdamState<P>,
}

fn derive_epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn argmax_rows<P: Scalar>(logits: &RealTensor<P>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn validate_dataset<P: Scalar>(op: &'static str, set: &Dataset<P>, classes: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid(op, "dataset is empty"));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            op,
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    Ok(())
}

/// Run `epochs x batches` of forward/backward/Adam. Deterministic under
/// `config.seed`: shuffling is reseeded per epoch and nothing else draws
/// randomness. Emits one record per epoch.
pub fn train<P: Scalar>(
    model: &Model<P>,
    train_set: &Dataset<P>,
    test_set: &Dataset<P>,
    config: &TrainConfig,
) -> Result<TrainOutcome<P>> {
    config.validate()?;
    validate_dataset("train", train_set, model.spec.num_classes)?;
    validate_dataset("train", test_set, model.spec.num_classes)?;

    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let hp = config.adam_params();
    let mut records = Vec::with_capacity(config.epochs);
    let started = Instant::now();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_epoch_seed(config.seed, epoch));
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let (batch, labels) = train_set.batch(chunk)?;
            let mut g = Graph::new();
            let logits = model.forward(&mut g, &batch, ForwardMode::Train { update_running: true })?;
            let loss = g.softmax_cross_entropy(logits, Arc::new(labels.clone()))?;
            let loss_value = g.value(loss).item()?.to_f64();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss_value * chunk.len() as f64;
            let predictions = argmax_rows(g.value(logits));
            correct += predictions
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            g.backward(loss)?;
            adam_step(&params, &mut adam, &hp)?;
            zero_grads(&params);
        }
        let eval = evaluate(model, test_set)?;
        records.push(MetricsRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy: eval.accuracy,
            per_class_accuracy: eval.per_class_accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        records,
        adam,
    })
}

/// Accuracy, per-class accuracy, and the confusion matrix, in eval mode
/// (batch norm uses running statistics).
pub fn evaluate<P: Scalar>(model: &Model<P>, dataset: &Dataset<P>) -> Result<EvalReport> {
    validate_dataset("evaluate", dataset, model.spec.num_classes)?;
    let k = model.spec.num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(64) {
        let (batch, labels) = dataset.batch(chunk)?;
        let mut g = Graph::new();
        let logits = model.forward(&mut g, &batch, ForwardMode::Eval)?;
        for (pred, label) in argmax_rows(g.value(logits)).into_iter().zip(labels) {
            confusion[label][pred] += 1;
        }
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = (0..k)
        .map(|c| {
            let total: usize = confusion[c].iter().sum();
            if total == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / dataset.len() as f64,
        per_class_accuracy: per_class,
        confusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareAxis {
    Activation,
    Pooling,
}

impl CompareAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(CompareAxis::Activation),
            "pooling" => Ok(CompareAxis::Pooling),
            other => Err(Error::invalid(
                "compare",
                format!("unknown axis '{other}' (activation|pooling)"),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub variant: String,
    pub mean: f64,
    pub std_dev: f64,
    pub runs: Vec<VariantRun>,
}

/// Train one model per variant per repeat (seeds are paired across variants)
/// and report mean and standard deviation of final test accuracy, sorted
/// descending by mean. Independent runs execute in parallel.
pub fn compare_variants<P: Scalar>(
    base: &ModelSpec,
    axis: CompareAxis,
    train_set: &Dataset<P>,
    test_set: &Dataset<P>,
    config: &TrainConfig,
    repeats: usize,
) -> Result<Vec<VariantResult>> {
    if repeats == 0 {
        return Err(Error::invalid("compare", "repeats must be >= 1"));
    }
    let variants: Vec<(String, ModelSpec)> = match axis {
        CompareAxis::Activation => ActivationKind::ALL
            .iter()
            .map(|&a| (a.name().to_string(), base.with_activation(a)))
            .collect(),
        CompareAxis::Pooling => PoolVariant::ALL
            .iter()
            .map(|&v| (v.name().to_string(), base.with_pool_variant(v)))
            .collect(),
    };
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..repeats).map(move |r| (v, r)))
        .collect();
    let outcomes: Vec<Result<(usize, usize, f64)>> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let seed = config.seed.wrapping_add(7919 * r as u64);
            let spec = variants[v].1.clone();
            let model: Model<P> = Model::build(spec, seed)?;
            let run_config = TrainConfig {
                seed,
                ..config.clone()
            };
            let outcome = train(&model, train_set, test_set, &run_config)?;
            let accuracy = outcome
                .records
                .last()
                .map(|rec| rec.test_accuracy)
                .unwrap_or(0.0);
            Ok((v, r, accuracy))
        })
        .collect();

    let mut per_variant: Vec<Vec<VariantRun>> = vec![Vec::new(); variants.len()];
    for outcome in outcomes {
        let (v, r, accuracy) = outcome?;
        per_variant[v].push(VariantRun {
            seed: config.seed.wrapping_add(7919 * r as u64),
            accuracy,
        });
    }
    let mut results: Vec<VariantResult> = variants
        .iter()
        .zip(per_variant)
        .map(|((name, _), mut runs)| {
            runs.sort_by_key(|r| r.seed);
            let n = runs.len() as f64;
            let mean = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
            let std_dev = if runs.len() > 1 {
                (runs.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            VariantResult {
                variant: name.clone(),
                mean,
                std_dev,
                runs,
            }
        })
        .collect();
    results.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.variant.cmp(&b.variant))
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cvnet5_spec;
    use crate::tensor::ComplexTensor;
    use rand::Rng;

    /// Tiny in-memory phase dataset: class-specific phase ramps plus speckle.
    fn toy_dataset(samples_per_class: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let freqs = [(2u32, 5u32), (5, 2), (4, 4)];
        let size = 32usize;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for class in 0..3 {
            for _ in 0..samples_per_class {
                let (k, l) = freqs[class];
                let mut re = Vec::with_capacity(size * size);
                let mut im = Vec::with_capacity(size * size);
                for u in 0..size {
                    for v in 0..size {
                        let m: f64 = (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
                        let theta = (k as f64 * u as f64 + l as f64 * v as f64) / size as f64;
                        re.push(m * theta.cos());
                        im.push(m * theta.sin());
                    }
                }
                images.push(ComplexTensor::from_planes(vec![1, size, size], re, im).unwrap());
                labels.push(class);
            }
        }
        Dataset::new(images, labels, 3).unwrap()
    }

    fn micro_model(seed: u64) -> Model<f64> {
        Model::build(
            cvnet5_spec(
                3,
                ActivationKind::CRelu,
                PoolVariant::Area,
                1.0 / 16.0,
                32,
            ),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn epoch_zero_loss_is_near_ln_k() {
        let train_set = toy_dataset(4, 1);
        let test_set = toy_dataset(2, 2);
        let model = micro_model(3);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-4,
            seed: 4,
            ..Default::default()
        };
        let outcome = train(&model, &train_set, &test_set, &config).unwrap();
        let ln3 = 3.0f64.ln();
        let loss = outcome.records[0].train_loss;
        assert!(
            (loss - ln3).abs() / ln3 < 0.2,
            "epoch-0 loss {loss} vs ln 3 = {ln3}"
        );
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let train_set = toy_dataset(3, 5);
        let test_set = toy_dataset(2, 6);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 7,
            ..Default::default()
        };
        let run = || {
            let model = micro_model(7);
            let outcome = train(&model, &train_set, &test_set, &config).unwrap();
            outcome
                .records
                .iter()
                .map(|r| (r.train_loss.to_bits(), r.test_accuracy.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bit_identical() {
        let train_set = toy_dataset(2, 8);
        let test_set = toy_dataset(1, 9);
        let model = micro_model(11);
        let before: Vec<Vec<u64>> = model
            .parameters()
            .iter()
            .map(|p| {
                p.plane_tensor(0)
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 3,
            learning_rate: 0.0,
            seed: 12,
            ..Default::default()
        };
        train(&model, &train_set, &test_set, &config).unwrap();
        let after: Vec<Vec<u64>> = model
            .parameters()
            .iter()
            .map(|p| {
                p.plane_tensor(0)
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_dataset_rejected_before_training() {
        let empty = Dataset::<f64>::new(Vec::new(), Vec::new(), 3).unwrap();
        let test_set = toy_dataset(1, 1);
        let model = micro_model(0);
        assert!(train(&model, &empty, &test_set, &TrainConfig::default()).is_err());
    }

    #[test]
    fn confusion_matrix_rows_sum_to_class_counts() {
        let dataset = toy_dataset(5, 21);
        let model = micro_model(22);
        let report = evaluate(&model, &dataset).unwrap();
        for row in &report.confusion {
            assert_eq!(row.iter().sum::<usize>(), 5);
        }
        assert!((0.0..=1.0).contains(&report.accuracy));
        // accuracy = trace / total
        let trace: usize = (0..3).map(|c| report.confusion[c][c]).sum();
        assert!((report.accuracy - trace as f64 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn compare_reports_mean_of_runs() {
        let train_set = toy_dataset(2, 31);
        let test_set = toy_dataset(1, 32);
        let base = cvnet5_spec(
            3,
            ActivationKind::CRelu,
            PoolVariant::Area,
            1.0 / 16.0,
            32,
        );
        let config = TrainConfig {
            epochs: 1,
            batch_size: 3,
            learning_rate: 1e-3,
            seed: 5,
            ..Default::default()
        };
        let results =
            compare_variants(&base, CompareAxis::Pooling, &train_set, &test_set, &config, 3)
                .unwrap();
        assert_eq!(results.len(), 3);
        for r in &results {
            assert_eq!(r.runs.len(), 3);
            let mean = r.runs.iter().map(|x| x.accuracy).sum::<f64>() / 3.0;
            assert!((r.mean - mean).abs() < 1e-12);
        }
        // sorted descending
        assert!(results.windows(2).all(|w| w[0].mean >= w[1].mean));

        // repeats = 1 with a fixed seed is deterministic
        let once = compare_variants(
            &base,
            CompareAxis::Pooling,
            &train_set,
            &test_set,
            &config,
            1,
        )
        .unwrap();
        let twice = compare_variants(
            &base,
            CompareAxis::Pooling,
            &train_set,
            &test_set,
            &config,
            1,
        )
        .unwrap();
        let accs = |rs: &[VariantResult]| {
            rs.iter()
                .map(|r| (r.variant.clone(), r.mean.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(accs(&once), accs(&twice));
    }
}
