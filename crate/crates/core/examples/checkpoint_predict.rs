//! Trains a small model briefly, saves a checkpoint, reloads it and labels
//! one held-out video.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempseg::data::{generate_synthetic, SyntheticSpec};
use tempseg::metrics::timeline;
use tempseg::model::{build_model, ModelConfig, Variant};
use tempseg::trainer::{evaluate, fit, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};

fn main() -> tempseg::Result<()> {
    let bundle = generate_synthetic(&SyntheticSpec {
        num_videos: 10,
        num_classes: 4,
        feature_dim: 8,
        min_segment: 20,
        max_segment: 50,
        mean_segments: 6,
        noise: 0.3,
        prototype_norm: 1.0,
        no_self_transitions: true,
        seed: 7,
    })?;
    let cfg = ModelConfig {
        filters: 16,
        num_stages: 2,
        layers_per_stage: 6,
        ..ModelConfig::new(Variant::MsTcn, 8, 4)
    };
    let mut model = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
    let train = TrainConfig {
        epochs: 15,
        learning_rate: 0.005,
        seed: 3,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &bundle, "train", &train)?;
    println!("final training loss {:.4}", history.final_loss().unwrap_or(f64::NAN));

    let path = std::env::temp_dir().join("tempseg-example.ckpt");
    save_checkpoint(
        &path,
        &Checkpoint {
            model,
            optimizer: Some(history.optimizer),
            seed: train.seed,
            epoch: train.epochs,
        },
    )?;
    let restored = load_checkpoint(&path)?;
    print!("{}", evaluate(&restored.model, &bundle, "test", &HashSet::new(), 1)?.to_table());

    let video = bundle.split("test")?[0];
    let pred = restored.model.predict_labels(&video.features)?;
    println!("{}", video.id);
    println!("  pred {}", timeline(&pred, 60));
    println!("  gt   {}", timeline(&video.labels, 60));
    Ok(())
}
