//! Generates the standard synthetic benchmark, writes it to disk and reads
//! one split back.
//!
//! `cargo run --release --example synthetic_dataset -- [dir]`

use tempseg::data::{generate_synthetic, load_dataset, save_dataset, standard_benchmark_spec};
use tempseg::metrics::{labels_to_segments, timeline};

fn main() -> tempseg::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tempseg-synthetic"));
    let spec = standard_benchmark_spec();
    let bundle = generate_synthetic(&spec)?;
    save_dataset(&dir, &bundle)?;
    println!("wrote {} videos to {}", bundle.samples.len(), dir.display());

    let test = load_dataset(&dir, "test")?;
    let videos = test.split("test")?;
    println!("classes: {}", test.classes.join(", "));
    for v in videos {
        println!(
            "{:<10} {:>5} frames {:>3} segments  {}",
            v.id,
            v.len(),
            labels_to_segments(&v.labels)?.len(),
            timeline(&v.labels, 40)
        );
    }
    if let Some(m) = &test.manifest {
        println!("nearest-prototype frame accuracy {:.1}%", m.nearest_prototype_acc);
    }
    Ok(())
}
