//! Reference implementations written straight from the metric definitions,
//! shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng;
use tempseg::Segment;

/// Random segment list: `n` segments with no repeated neighbours, lengths in
/// `1..=max_len`, covering `[0, T)` from frame 0.
pub fn random_segments<R: Rng>(rng: &mut R, n: usize, classes: usize, max_len: usize) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(n);
    let mut start = 0;
    for _ in 0..n {
        let class = loop {
            let c = rng.random_range(0..classes);
            if out.last().is_none_or(|s| s.class != c) {
                break c;
            }
        };
        let len = rng.random_range(1..=max_len);
        out.push(Segment {
            class,
            start,
            end: start + len - 1,
        });
        start += len;
    }
    out
}

/// As [`random_segments`] with a segment count drawn from `1..=max_n`.
pub fn random_segments_upto<R: Rng>(rng: &mut R, max_n: usize, classes: usize, max_len: usize) -> Vec<Segment> {
    let n = rng.random_range(1..=max_n);
    random_segments(rng, n, classes, max_len)
}

/// Full dynamic-programming table, rows over `a`, columns over `b`.
pub fn edit_distance_table(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn edit_score_oracle(pred: &[Segment], gt: &[Segment]) -> f64 {
    let a: Vec<usize> = pred.iter().map(|s| s.class).collect();
    let b: Vec<usize> = gt.iter().map(|s| s.class).collect();
    let longest = a.len().max(b.len());
    100.0 * (1.0 - edit_distance_table(&a, &b) as f64 / longest as f64)
}

/// IoU by counting frames of the two intervals.
fn frame_iou(a: &Segment, b: &Segment) -> f64 {
    let lo = a.start.min(b.start);
    let hi = a.end.max(b.end);
    let (mut inter, mut union) = (0usize, 0usize);
    for t in lo..=hi {
        let in_a = (a.start..=a.end).contains(&t);
        let in_b = (b.start..=b.end).contains(&t);
        inter += usize::from(in_a && in_b);
        union += usize::from(in_a || in_b);
    }
    inter as f64 / union as f64
}

/// `(tp, fp, fn)` by the greedy prediction-order matching rule.
pub fn f1_counts_oracle(pred: &[Segment], gt: &[Segment], k: f64) -> (usize, usize, usize) {
    let mut consumed: Vec<usize> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for p in pred {
        // Highest IoU among unconsumed same-class segments; lowest index on ties.
        let candidates: Vec<(usize, f64)> = gt
            .iter()
            .enumerate()
            .filter(|(j, g)| g.class == p.class && !consumed.contains(j))
            .map(|(j, g)| (j, frame_iou(p, g)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (j, iou) in candidates {
            match best {
                Some((_, b)) if b >= iou => {}
                _ => best = Some((j, iou)),
            }
        }
        match best {
            Some((j, iou)) if iou >= k => {
                consumed.push(j);
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp, gt.len() - consumed.len())
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

pub fn f1_oracle(pred: &[Segment], gt: &[Segment], k: f64) -> f64 {
    let (tp, fp, fn_) = f1_counts_oracle(pred, gt, k);
    f1_from_counts(tp, fp, fn_)
}
