//! Frame accuracy, segmental edit score and segmental F1@k.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IoU thresholds reported by [`evaluate_set`].
pub const F1_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

/// One maximal run of a label; `end` is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Intersection over union of the two frame intervals.
    pub fn iou(&self, other: &Segment) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        let inter = if hi >= lo { hi - lo + 1 } else { 0 };
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

pub type SegmentList = Vec<Segment>;

pub fn labels_to_segments(labels: &[usize]) -> Result<SegmentList> {
    let (&first, _) = labels
        .split_first()
        .ok_or(Error::Empty("label sequence"))?;
    let mut segments = vec![Segment {
        class: first,
        start: 0,
        end: 0,
    }];
    for (t, &l) in labels.iter().enumerate().skip(1) {
        let last = segments.last_mut().expect("nonempty");
        if l == last.class {
            last.end = t;
        } else {
            segments.push(Segment {
                class: l,
                start: t,
                end: t,
            });
        }
    }
    Ok(segments)
}

/// Expands segments back into a per-frame label sequence.
pub fn segments_to_labels(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.class, s.len()))
        .collect()
}

pub fn frame_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim("frame_accuracy", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::Empty("frame_accuracy on zero frames"));
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Unit-cost Levenshtein distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn edit_score_unchecked(pred: &[Segment], gt: &[Segment]) -> f64 {
    let longest = pred.len().max(gt.len());
    if longest == 0 {
        return 100.0;
    }
    let p: Vec<usize> = pred.iter().map(|s| s.class).collect();
    let g: Vec<usize> = gt.iter().map(|s| s.class).collect();
    100.0 * (1.0 - levenshtein(&p, &g) as f64 / longest as f64)
}

/// `100 · (1 − lev(pred classes, gt classes) / max(|pred|, |gt|))`;
/// durations are ignored.
pub fn segmental_edit_score(pred: &[Segment], gt: &[Segment]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("segmental_edit_score needs segments"));
    }
    Ok(edit_score_unchecked(pred, gt))
}

/// True positive, false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn f1(&self) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        if precision + recall == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * precision * recall / (precision + recall)
        }
    }

    fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Greedy one-to-one matching in prediction order: each predicted segment
/// takes the unmatched same-class ground-truth segment of highest IoU and
/// counts as a hit when that IoU reaches `threshold`.
pub fn overlap_counts(pred: &[Segment], gt: &[Segment], threshold: f64) -> MatchCounts {
    let mut used = vec![false; gt.len()];
    let mut counts = MatchCounts::default();
    for p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] || g.class != p.class {
                continue;
            }
            let iou = p.iou(g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= threshold => {
                used[j] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = used.iter().filter(|&&u| !u).count();
    counts
}

pub fn overlap_f1(pred: &[Segment], gt: &[Segment], threshold: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("overlap_f1 needs segments"));
    }
    Ok(overlap_counts(pred, gt, threshold).f1())
}

/// Acc, Edit and F1@{10,25,50}, all in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
    pub n_videos: usize,
    pub n_frames: usize,
}

impl EvalReport {
    pub fn f1(&self) -> [f64; 3] {
        [self.f1_10, self.f1_25, self.f1_50]
    }

    pub fn to_kv(&self) -> String {
        format!(
            "acc = {}\nedit = {}\nf1_10 = {}\nf1_25 = {}\nf1_50 = {}\nn_videos = {}\nn_frames = {}\n",
            self.acc, self.edit, self.f1_10, self.f1_25, self.f1_50, self.n_videos, self.n_frames
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>7} {:>7} {:>7} {:>7} {:>7}   videos  frames",
            "F1@10", "F1@25", "F1@50", "Edit", "Acc"
        );
        let _ = writeln!(
            s,
            "{:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}   {:>6}  {:>6}",
            self.f1_10, self.f1_25, self.f1_50, self.edit, self.acc, self.n_videos, self.n_frames
        );
        s
    }
}

/// Per-video sufficient statistics; merging these in any fixed order gives
/// the set-level report.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VideoStats {
    pub frames: usize,
    pub correct: usize,
    pub edit: f64,
    pub counts: [MatchCounts; 3],
}

pub fn video_stats(pred: &[usize], gt: &[usize], background: &HashSet<usize>) -> Result<VideoStats> {
    if pred.len() != gt.len() {
        return Err(Error::dim("evaluate_set", gt.len(), pred.len()));
    }
    let keep = |s: &Segment| !background.contains(&s.class);
    let p: Vec<Segment> = labels_to_segments(pred)?.into_iter().filter(keep).collect();
    let g: Vec<Segment> = labels_to_segments(gt)?.into_iter().filter(keep).collect();
    let mut counts = [MatchCounts::default(); 3];
    for (c, &k) in counts.iter_mut().zip(&F1_THRESHOLDS) {
        *c = overlap_counts(&p, &g, k);
    }
    Ok(VideoStats {
        frames: gt.len(),
        correct: pred.iter().zip(gt).filter(|(a, b)| a == b).count(),
        edit: edit_score_unchecked(&p, &g),
        counts,
    })
}

/// Accuracy pooled over frames, Edit averaged per video, F1 from TP/FP/FN
/// pooled over videos.
pub fn aggregate(stats: &[VideoStats]) -> Result<EvalReport> {
    if stats.is_empty() {
        return Err(Error::Empty("evaluate_set on zero videos"));
    }
    let frames: usize = stats.iter().map(|s| s.frames).sum();
    let correct: usize = stats.iter().map(|s| s.correct).sum();
    let edit = stats.iter().map(|s| s.edit).sum::<f64>() / stats.len() as f64;
    let mut pooled = [MatchCounts::default(); 3];
    for s in stats {
        for (acc, c) in pooled.iter_mut().zip(s.counts) {
            acc.add(c);
        }
    }
    Ok(EvalReport {
        acc: 100.0 * ratio(correct, frames),
        edit,
        f1_10: pooled[0].f1(),
        f1_25: pooled[1].f1(),
        f1_50: pooled[2].f1(),
        n_videos: stats.len(),
        n_frames: frames,
    })
}

pub fn evaluate_set(pairs: &[(Vec<usize>, Vec<usize>)], background: &HashSet<usize>) -> Result<EvalReport> {
    let stats = pairs
        .iter()
        .map(|(p, g)| video_stats(p, g, background))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&stats)
}

/// Text strip of at most `width` characters, one glyph per class, sampling
/// the sequence at even frame intervals.
pub fn timeline(labels: &[usize], width: usize) -> String {
    const GLYPHS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    if labels.is_empty() || width == 0 {
        return String::new();
    }
    let width = width.min(labels.len());
    (0..width)
        .map(|i| {
            let t = i * labels.len() / width;
            GLYPHS[labels[t] % GLYPHS.len()] as char
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(class: usize, start: usize, end: usize) -> Segment {
        Segment { class, start, end }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&[0, 1, 1, 0], &[0, 1, 0, 1]).unwrap(), 50.0);
        assert!(frame_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn segments() {
        assert_eq!(labels_to_segments(&[0, 0, 1]).unwrap(), vec![seg(0, 0, 1), seg(1, 2, 2)]);
        assert_eq!(labels_to_segments(&[0]).unwrap(), vec![seg(0, 0, 0)]);
        assert!(labels_to_segments(&[]).is_err());
    }

    #[test]
    fn edit_cases() {
        let a = vec![seg(0, 0, 4), seg(1, 5, 9)];
        assert_eq!(segmental_edit_score(&a, &a).unwrap(), 100.0);
        assert_eq!(segmental_edit_score(&[seg(0, 0, 9)], &a).unwrap(), 50.0);
        assert!(segmental_edit_score(&[], &a).is_err());
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn f1_cases() {
        let gt = vec![seg(0, 0, 99), seg(1, 100, 199)];
        for k in F1_THRESHOLDS {
            assert_eq!(overlap_f1(&gt, &gt, k).unwrap(), 100.0);
        }
        let pred = vec![seg(0, 0, 199)];
        for k in F1_THRESHOLDS {
            let counts = overlap_counts(&pred, &gt, k);
            assert_eq!(counts, MatchCounts { tp: 1, fp: 0, fn_: 1 });
            assert!((overlap_f1(&pred, &gt, k).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_truth_is_consumed_once() {
        let gt = vec![seg(0, 0, 9)];
        let pred = vec![seg(0, 0, 4), seg(1, 5, 5), seg(0, 6, 9)];
        let c = overlap_counts(&pred, &gt, 0.1);
        assert_eq!(c, MatchCounts { tp: 1, fp: 2, fn_: 0 });
    }

    #[test]
    fn f1_zero_when_nothing_matches() {
        let c = overlap_counts(&[seg(1, 0, 9)], &[seg(0, 0, 9)], 0.1);
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn evaluate_single_perfect_video() {
        let gt = vec![0, 0, 1, 1, 1, 2];
        let r = evaluate_set(&[(gt.clone(), gt)], &HashSet::new()).unwrap();
        assert_eq!((r.acc, r.edit, r.f1_10, r.f1_25, r.f1_50), (100.0, 100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn evaluate_two_videos_aggregation() {
        let perfect = (vec![0; 30], vec![0; 30]);
        let wrong = (vec![1; 10], vec![2; 10]);
        let r = evaluate_set(&[perfect, wrong], &HashSet::new()).unwrap();
        assert!((r.acc - 75.0).abs() < 1e-12);
        assert_eq!(r.edit, 50.0);
        assert_eq!(r.n_frames, 40);
        // pooled: tp 1, fp 1, fn 1
        assert!((r.f1_10 - 50.0).abs() < 1e-12);
    }

    #[test]
    fn background_is_dropped_from_segment_metrics_only() {
        let gt = vec![9, 9, 0, 0, 9, 1, 1];
        let pred = vec![0, 0, 0, 0, 1, 1, 1];
        let bg: HashSet<usize> = [9].into_iter().collect();
        let r = evaluate_set(&[(pred, gt)], &bg).unwrap();
        assert!((r.acc - 100.0 * 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.edit, 100.0);
    }

    #[test]
    fn timeline_strip() {
        assert_eq!(timeline(&[0, 0, 1, 1, 2, 2], 3), "ABC");
        assert_eq!(timeline(&[0, 1], 10), "AB");
    }
}
