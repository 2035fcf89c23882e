//! Trains one architecture on the standard synthetic benchmark and scores it
//! on the held-out split.
//!
//! `cargo run --release --example train_and_evaluate -- [arch] [epochs] [lambda]`

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempseg::data::{generate_synthetic, standard_benchmark_spec};
use tempseg::metrics::labels_to_segments;
use tempseg::model::{build_model, ModelConfig, Variant};
use tempseg::trainer::{evaluate, fit_with, predict_all, TrainConfig};
use tempseg::LossConfig;

fn main() -> tempseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map(|s| s.parse()).transpose()?.unwrap_or(Variant::MsTcn);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lambda = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.15);

    let bundle = generate_synthetic(&standard_benchmark_spec())?;
    if let Some(m) = &bundle.manifest {
        println!(
            "{} frames, nearest-prototype accuracy {:.1}%",
            m.total_frames, m.nearest_prototype_acc
        );
    }
    let cfg = ModelConfig::new(variant, 32, bundle.num_classes());
    let mut model = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("{} with {} parameters", variant.name(), model.count_parameters());

    let train = TrainConfig {
        epochs,
        loss: LossConfig {
            lambda,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let start = Instant::now();
    fit_with(&mut model, &bundle, "train", &train, |r| {
        println!("epoch {:>3}  loss {:.4}  ({:.0?})", r.epoch, r.loss, start.elapsed());
    })?;

    let report = evaluate(&model, &bundle, "test", &HashSet::new(), 1)?;
    print!("{}", report.to_table());
    let videos = bundle.split("test")?;
    let preds = predict_all(&model, &videos, 1)?;
    let mut pred_segs = 0;
    let mut gt_segs = 0;
    for (v, p) in videos.iter().zip(&preds) {
        pred_segs += labels_to_segments(p)?.len();
        gt_segs += labels_to_segments(&v.labels)?.len();
    }
    println!(
        "segments per video: predicted {:.1}, ground truth {:.1}",
        pred_segs as f64 / videos.len() as f64,
        gt_segs as f64 / videos.len() as f64
    );
    Ok(())
}
