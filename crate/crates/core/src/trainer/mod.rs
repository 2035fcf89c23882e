//! Training loop, evaluation and checkpoint persistence.
//!
//! Training takes one optimizer step per video at full temporal resolution.
//! All randomness (epoch order, dropout) comes from one generator seeded by
//! [`TrainConfig::seed`], so a run is reproducible bit for bit.

pub mod adam;
pub mod checkpoint;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, VideoSample};
use crate::error::{Error, Result};
use crate::loss::{total_loss_with_grad, LossConfig};
use crate::metrics::{aggregate, video_stats, EvalReport};
use crate::model::Model;

pub use adam::{adam_step, adam_step_model, AdamParams, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
    pub seed: u64,
    pub shuffle: bool,
    /// Split evaluated after every epoch, if any.
    pub eval_split: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.0005,
            loss: LossConfig::default(),
            seed: 1,
            shuffle: true,
            eval_split: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's videos.
    pub loss: f64,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub optimizer: OptimizerState<f32>,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

pub fn fit(
    model: &mut Model<f32>,
    bundle: &DatasetBundle,
    split: &str,
    cfg: &TrainConfig,
) -> Result<History> {
    fit_with(model, bundle, split, cfg, |_| {})
}

/// As [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with(
    model: &mut Model<f32>,
    bundle: &DatasetBundle,
    split: &str,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    let videos = bundle.split(split)?;
    if videos.is_empty() {
        return Err(Error::Empty("training split has no videos"));
    }
    check_compatible(model, bundle)?;
    let hp = AdamParams::with_lr(cfg.learning_rate);
    let mut state = OptimizerState::for_model(model);
    let mut grads = model.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<&VideoSample> = videos;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for sample in &order {
            grads.zero();
            let trace = model.forward_trace(&sample.features, true, &mut rng)?;
            let (loss, g_logits) = total_loss_with_grad(&trace.outputs, &sample.labels, &cfg.loss)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    video: sample.id.clone(),
                    loss: loss.total,
                });
            }
            model.backward(&trace, &g_logits, &mut grads)?;
            adam_step_model(model, &grads, &mut state, &hp)?;
            sum += loss.total;
        }
        let eval = match &cfg.eval_split {
            Some(name) => Some(evaluate(model, bundle, name, &HashSet::new(), 1)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            loss: sum / order.len() as f64,
            eval,
        };
        on_epoch(&record);
        epochs.push(record);
    }
    Ok(History {
        epochs,
        optimizer: state,
    })
}

fn check_compatible(model: &Model<f32>, bundle: &DatasetBundle) -> Result<()> {
    if model.config.num_classes != bundle.num_classes() {
        return Err(Error::ClassMismatch {
            model: model.config.num_classes,
            dataset: bundle.num_classes(),
        });
    }
    if let Some(s) = bundle.samples.first() {
        if s.features.channels() != model.config.input_dim {
            return Err(Error::Video {
                video: s.id.clone(),
                detail: format!(
                    "{}-dimensional features, model expects {}",
                    s.features.channels(),
                    model.config.input_dim
                ),
            });
        }
    }
    Ok(())
}

/// Final-stage predictions for each video, optionally on `jobs` threads.
/// Results are returned in input order regardless of `jobs`.
pub fn predict_all(model: &Model<f32>, videos: &[&VideoSample], jobs: usize) -> Result<Vec<Vec<usize>>> {
    let jobs = jobs.clamp(1, videos.len().max(1));
    if jobs == 1 {
        return videos.iter().map(|v| model.predict_labels(&v.features)).collect();
    }
    let chunk = videos.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = videos
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|v| model.predict_labels(&v.features))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(videos.len());
        for h in handles {
            out.extend(h.join().expect("prediction thread panicked")?);
        }
        Ok(out)
    })
}

/// Runs the model over a split (dropout off) and scores it.
pub fn evaluate(
    model: &Model<f32>,
    bundle: &DatasetBundle,
    split: &str,
    background: &HashSet<usize>,
    jobs: usize,
) -> Result<EvalReport> {
    let videos = bundle.split(split)?;
    if videos.is_empty() {
        return Err(Error::Empty("evaluation split has no videos"));
    }
    check_compatible(model, bundle)?;
    let preds = predict_all(model, &videos, jobs)?;
    let stats = videos
        .iter()
        .zip(&preds)
        .map(|(v, p)| video_stats(p, &v.labels, background))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::{build_model, ModelConfig, Variant};

    fn tiny_bundle(videos: usize, noise: f64) -> DatasetBundle {
        generate_synthetic(&SyntheticSpec {
            num_videos: videos,
            num_classes: 3,
            feature_dim: 4,
            min_segment: 6,
            max_segment: 12,
            mean_segments: 4,
            noise,
            prototype_norm: 1.0,
            no_self_transitions: true,
            seed: 5,
        })
        .unwrap()
    }

    fn tiny_model(seed: u64) -> Model<f32> {
        let cfg = ModelConfig {
            filters: 8,
            num_stages: 2,
            layers_per_stage: 3,
            ..ModelConfig::new(Variant::MsTcn, 4, 3)
        };
        build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let bundle = tiny_bundle(4, 0.3);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut a = tiny_model(1);
        let mut b = tiny_model(1);
        let ha = fit(&mut a, &bundle, "train", &cfg).unwrap();
        let hb = fit(&mut b, &bundle, "train", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(a.count_parameters(), tiny_model(1).count_parameters());
    }

    #[test]
    fn empty_split_and_bad_config() {
        let mut bundle = tiny_bundle(3, 0.3);
        bundle.splits.insert("none".into(), vec![]);
        let mut m = tiny_model(1);
        assert!(matches!(
            fit(&mut m, &bundle, "none", &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(fit(&mut m, &bundle, "train", &cfg).is_err());
    }

    #[test]
    fn class_count_mismatch_is_reported() {
        let bundle = tiny_bundle(3, 0.3);
        let cfg = ModelConfig {
            filters: 4,
            layers_per_stage: 2,
            ..ModelConfig::new(Variant::SsTcn, 4, 5)
        };
        let m: Model<f32> = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = evaluate(&m, &bundle, "test", &HashSet::new(), 1).unwrap_err();
        assert!(err.to_string().contains("classes"));
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let bundle = tiny_bundle(6, 0.3);
        let m = Model::<f32>::zeros(&tiny_model(0).config).unwrap();
        let r = evaluate(&m, &bundle, "train", &HashSet::new(), 1).unwrap();
        let videos = bundle.split("train").unwrap();
        let frames: usize = videos.iter().map(|v| v.len()).sum();
        let zeros: usize = videos.iter().map(|v| v.labels.iter().filter(|&&l| l == 0).count()).sum();
        assert!((r.acc - 100.0 * zeros as f64 / frames as f64).abs() < 1e-9);
    }

    #[test]
    fn parallel_evaluation_matches_serial() {
        let bundle = tiny_bundle(7, 0.5);
        let m = tiny_model(3);
        let a = evaluate(&m, &bundle, "train", &HashSet::new(), 1).unwrap();
        let b = evaluate(&m, &bundle, "train", &HashSet::new(), 3).unwrap();
        assert_eq!(a, b);
        for v in [a.acc, a.edit, a.f1_10, a.f1_25, a.f1_50] {
            assert!((0.0..=100.0).contains(&v));
        }
        assert!(a.f1_50 <= a.f1_25 && a.f1_25 <= a.f1_10);
    }
}
