//! Frame accuracy, segmental edit score and overlap F1 on a hand-made
//! prediction that over-segments one action.

use std::collections::HashSet;

use tempseg::metrics::{evaluate_set, labels_to_segments, segmental_edit_score, timeline};

fn run(spec: &[(usize, usize)]) -> Vec<usize> {
    spec.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect()
}

fn main() -> tempseg::Result<()> {
    let gt = run(&[(0, 30), (1, 40), (2, 30)]);
    let pred = run(&[(0, 28), (1, 15), (2, 3), (1, 24), (2, 30)]);

    println!("gt   {}", timeline(&gt, 50));
    println!("pred {}", timeline(&pred, 50));
    let (p, g) = (labels_to_segments(&pred)?, labels_to_segments(&gt)?);
    println!("{} predicted segments against {}", p.len(), g.len());
    println!("edit score {:.1}", segmental_edit_score(&p, &g)?);

    let report = evaluate_set(&[(pred.clone(), gt.clone())], &HashSet::new())?;
    print!("{}", report.to_table());

    // Dropping class 0 as background removes it from Edit and F1 only.
    let bg = evaluate_set(&[(pred, gt)], &HashSet::from([0]))?;
    println!("\nwith class 0 as background");
    print!("{}", bg.to_table());
    Ok(())
}
