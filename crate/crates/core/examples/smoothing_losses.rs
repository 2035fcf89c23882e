//! Cross-entropy and the two smoothing penalties on a clean prediction and
//! on the same prediction with a few flickering frames.

use tempseg::loss::{cross_entropy, kl_smoothing, t_mse};
use tempseg::tensor::channel_softmax;
use tempseg::Tensor;

fn prediction(labels: &[usize], classes: usize) -> Tensor<f64> {
    let mut z = Tensor::zeros(classes, labels.len());
    for (t, &l) in labels.iter().enumerate() {
        z.set(l, t, 4.0);
    }
    channel_softmax(&z)
}

fn main() -> tempseg::Result<()> {
    let gt: Vec<usize> = (0..60).map(|t| t / 20).collect();
    let mut flicker = gt.clone();
    for t in [5, 6, 31, 44, 50] {
        flicker[t] = (flicker[t] + 1) % 3;
    }
    println!("{:<10} {:>8} {:>8} {:>8}", "", "CE", "T-MSE", "KL");
    for (name, labels) in [("clean", &gt), ("flicker", &flicker)] {
        let p = prediction(labels, 3);
        println!(
            "{name:<10} {:>8.4} {:>8.4} {:>8.4}",
            cross_entropy(&p, &gt)?,
            t_mse(&p, 4.0).value,
            kl_smoothing(&p).value
        );
    }
    Ok(())
}
