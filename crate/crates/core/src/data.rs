//! Dataset layout on disk, the binary feature format, temporal
//! downsampling and the seeded synthetic generator.
//!
//! ```text
//! root/
//!   mapping.txt            "index name" per line, indices 0..C−1
//!   features/<id>.mstf     binary feature matrix (see save_features)
//!   groundTruth/<id>.txt   one class name per frame
//!   splits/<name>.bundle   one video id per line
//!   manifest.toml          synthetic sets only
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"MSTF";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER: usize = 4 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl VideoSample {
    pub fn new(id: impl Into<String>, features: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if features.time() != labels.len() {
            return Err(Error::Video {
                video: id,
                detail: format!(
                    "{} feature frames but {} labels",
                    features.time(),
                    labels.len()
                ),
            });
        }
        Ok(VideoSample {
            id,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    /// Class names by index.
    pub classes: Vec<String>,
    pub samples: Vec<VideoSample>,
    pub splits: BTreeMap<String, Vec<String>>,
    pub manifest: Option<SyntheticManifest>,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sample(&self, id: &str) -> Option<&VideoSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of a named split, in split order.
    pub fn split(&self, name: &str) -> Result<Vec<&VideoSample>> {
        let ids = self
            .splits
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split `{name}`")))?;
        ids.iter()
            .map(|id| {
                self.sample(id).ok_or_else(|| Error::Video {
                    video: id.clone(),
                    detail: format!("listed in split `{name}` but not loaded"),
                })
            })
            .collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.features.time() != s.labels.len() {
                return Err(Error::Video {
                    video: s.id.clone(),
                    detail: "feature/label length mismatch".into(),
                });
            }
            if let Some(&l) = s.labels.iter().find(|&&l| l >= self.classes.len()) {
                return Err(Error::Video {
                    video: s.id.clone(),
                    detail: format!("label {l} has no class mapping"),
                });
            }
        }
        for name in self.splits.keys() {
            self.split(name)?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Encodes a tensor: magic `MSTF`, u32 version, u32 channels, u64 time,
/// then channel-major little-endian f32 values.
pub fn encode_features(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER + 4 * tensor.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.time() as u64).to_le_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "MSTF",
        });
    }
    if bytes.len() < FEATURE_HEADER {
        return Err(truncated(format!("{} header bytes", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let channels = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let time = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let expected = channels
        .checked_mul(time)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: format!("implausible shape {channels}×{time}"),
        })?;
    let payload = &bytes[FEATURE_HEADER..];
    if payload.len() < expected {
        return Err(truncated(format!(
            "expected {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", payload.len() - expected),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::from_vec(channels, time, data)
}

pub fn save_features(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    write(path.as_ref(), &encode_features(tensor))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_features(&read(path)?, path)
}

/// Parses `mapping.txt`: `index name` per line, indices contiguous from 0.
pub fn read_mapping(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut classes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {detail}", n + 1),
        };
        let (idx, name) = line
            .trim()
            .split_once(char::is_whitespace)
            .ok_or_else(|| bad("expected `index name`".into()))?;
        let idx: usize = idx.parse().map_err(|_| bad(format!("bad index `{idx}`")))?;
        if idx != classes.len() {
            return Err(bad(format!("index {idx} out of order, expected {}", classes.len())));
        }
        classes.push(name.trim().to_string());
    }
    if classes.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "no classes".into(),
        });
    }
    Ok(classes)
}

pub fn write_mapping(path: impl AsRef<Path>, classes: &[String]) -> Result<()> {
    let text: String = classes
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i} {c}\n"))
        .collect();
    write(path.as_ref(), text.as_bytes())
}

/// Reads a ground-truth file and maps names to indices.
pub fn read_labels(path: impl AsRef<Path>, classes: &[String], video: &str) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let name = line.trim();
            classes.iter().position(|c| c == name).ok_or_else(|| Error::Video {
                video: video.to_string(),
                detail: format!("{}:{}: unknown class `{name}`", path.display(), n + 1),
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize], classes: &[String]) -> Result<()> {
    let mut text = String::new();
    for &l in labels {
        let name = classes.get(l).ok_or(Error::LabelOutOfRange {
            label: l,
            frame: 0,
            classes: classes.len(),
        })?;
        text.push_str(name);
        text.push('\n');
    }
    write(path.as_ref(), text.as_bytes())
}

fn read_split(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn feature_path(root: &Path, id: &str) -> PathBuf {
    root.join("features").join(format!("{id}.mstf"))
}

pub fn label_path(root: &Path, id: &str) -> PathBuf {
    root.join("groundTruth").join(format!("{id}.txt"))
}

pub fn split_path(root: &Path, name: &str) -> PathBuf {
    root.join("splits").join(format!("{name}.bundle"))
}

/// Loads the class mapping and every video of one split.
pub fn load_dataset(root: impl AsRef<Path>, split: &str) -> Result<DatasetBundle> {
    let root = root.as_ref();
    let classes = read_mapping(root.join("mapping.txt"))?;
    let ids = read_split(&split_path(root, split))?;
    let mut samples = Vec::with_capacity(ids.len());
    for id in &ids {
        let features = load_features(feature_path(root, id))?;
        let labels = read_labels(label_path(root, id), &classes, id)?;
        samples.push(VideoSample::new(id.clone(), features, labels)?);
    }
    let manifest_path = root.join("manifest.toml");
    let manifest = if manifest_path.exists() {
        let text = read_text(&manifest_path)?;
        Some(toml::from_str(&text).map_err(|e| Error::Format {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?)
    } else {
        None
    };
    let mut splits = BTreeMap::new();
    splits.insert(split.to_string(), ids);
    Ok(DatasetBundle {
        classes,
        samples,
        splits,
        manifest,
    })
}

/// Writes a bundle in the layout [`load_dataset`] reads.
pub fn save_dataset(root: impl AsRef<Path>, bundle: &DatasetBundle) -> Result<()> {
    let root = root.as_ref();
    bundle.validate()?;
    write_mapping(root.join("mapping.txt"), &bundle.classes)?;
    for s in &bundle.samples {
        save_features(feature_path(root, &s.id), &s.features)?;
        write_labels(label_path(root, &s.id), &s.labels, &bundle.classes)?;
    }
    for (name, ids) in &bundle.splits {
        let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
        write(&split_path(root, name), text.as_bytes())?;
    }
    if let Some(m) = &bundle.manifest {
        let text = toml::to_string(m).map_err(|e| Error::Format {
            path: root.join("manifest.toml"),
            detail: e.to_string(),
        })?;
        write(&root.join("manifest.toml"), text.as_bytes())?;
    }
    Ok(())
}

/// Keeps frames `0, factor, 2·factor, …` of features and labels.
pub fn temporal_downsample(sample: &VideoSample, factor: usize) -> Result<VideoSample> {
    if factor < 1 {
        return Err(Error::Domain("downsampling factor must be at least 1".into()));
    }
    let keep: Vec<usize> = (0..sample.len()).step_by(factor).collect();
    Ok(VideoSample {
        id: sample.id.clone(),
        features: sample.features.select_time(&keep),
        labels: keep.iter().map(|&t| sample.labels[t]).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    /// Segment counts are drawn uniformly within ±25% of this.
    pub mean_segments: usize,
    /// Standard deviation of the per-entry Gaussian feature noise.
    pub noise: f64,
    /// Euclidean norm of every class prototype.
    pub prototype_norm: f64,
    /// Forbid consecutive segments of the same class.
    pub no_self_transitions: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.num_videos < 1 {
            return bad("need at least one video");
        }
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be positive");
        }
        if self.min_segment < 1 || self.min_segment > self.max_segment {
            return bad("need 1 ≤ min_segment ≤ max_segment");
        }
        if self.mean_segments < 1 {
            return bad("mean_segments must be positive");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be a finite non-negative value");
        }
        if !(self.prototype_norm > 0.0) || !self.prototype_norm.is_finite() {
            return bad("prototype_norm must be a finite positive value");
        }
        Ok(())
    }

    fn segment_count_range(&self) -> (usize, usize) {
        let m = self.mean_segments as f64;
        let lo = (0.75 * m).round().max(1.0) as usize;
        let hi = (1.25 * m).round().max(lo as f64) as usize;
        (lo, hi)
    }
}

/// The 30/8-video, 8-class benchmark used by the trend experiments.
pub fn standard_benchmark_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_videos: 38,
        num_classes: 8,
        feature_dim: 32,
        min_segment: 30,
        max_segment: 120,
        mean_segments: 13,
        noise: 0.6,
        prototype_norm: 0.3,
        no_self_transitions: true,
        seed: 1,
    }
}

/// Generation record stored alongside a synthetic set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSpec,
    /// Frame accuracy (%) of labelling each frame with its nearest class
    /// prototype; a proxy for the best frame-wise accuracy available.
    pub nearest_prototype_acc: f64,
    pub total_frames: usize,
}

/// Gaussian class prototypes rescaled to norm `scale`, one row per class.
fn draw_prototypes<R: Rng>(classes: usize, dim: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| scale * x / norm).collect()
        })
        .collect()
}

fn nearest_prototype(prototypes: &[Vec<f64>], features: &Tensor<f32>, t: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, proto) in prototypes.iter().enumerate() {
        let d: f64 = proto
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let diff = features.get(i, t) as f64 - p;
                diff * diff
            })
            .sum();
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Seeded synthetic segmentation set: uniform non-self class transitions,
/// uniform segment lengths, features = class prototype + Gaussian noise.
/// The first 80% of videos form split `train`, the rest `test`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = draw_prototypes(spec.num_classes, spec.feature_dim, spec.prototype_norm, &mut rng);
    let (lo, hi) = spec.segment_count_range();
    let mut samples = Vec::with_capacity(spec.num_videos);
    let mut hits = 0usize;
    let mut total = 0usize;
    for v in 0..spec.num_videos {
        let n_segments = rng.random_range(lo..=hi);
        let mut labels = Vec::new();
        let mut prev: Option<usize> = None;
        for _ in 0..n_segments {
            let class = match prev {
                Some(p) if spec.no_self_transitions => {
                    let c = rng.random_range(0..spec.num_classes - 1);
                    if c >= p {
                        c + 1
                    } else {
                        c
                    }
                }
                _ => rng.random_range(0..spec.num_classes),
            };
            let length = rng.random_range(spec.min_segment..=spec.max_segment);
            labels.extend(std::iter::repeat_n(class, length));
            prev = Some(class);
        }
        let time = labels.len();
        let mut features = Tensor::<f32>::zeros(spec.feature_dim, time);
        for (t, &class) in labels.iter().enumerate() {
            for (d, &p) in prototypes[class].iter().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                features.set(d, t, (p + spec.noise * noise) as f32);
            }
        }
        hits += (0..time)
            .filter(|&t| nearest_prototype(&prototypes, &features, t) == labels[t])
            .count();
        total += time;
        samples.push(VideoSample::new(format!("video_{v:03}"), features, labels)?);
    }
    let n_train = if spec.num_videos >= 2 {
        ((spec.num_videos * 4) / 5).clamp(1, spec.num_videos - 1)
    } else {
        1
    };
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), ids[..n_train].to_vec());
    splits.insert("test".to_string(), ids[n_train..].to_vec());
    Ok(DatasetBundle {
        classes: (0..spec.num_classes).map(|c| format!("action_{c}")).collect(),
        samples,
        splits,
        manifest: Some(SyntheticManifest {
            spec: spec.clone(),
            nearest_prototype_acc: 100.0 * hits as f64 / total as f64,
            total_frames: total,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::labels_to_segments;

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_videos: 5,
            num_classes: 4,
            feature_dim: 6,
            min_segment: 5,
            max_segment: 12,
            mean_segments: 4,
            noise: 0.3,
            prototype_norm: 1.0,
            no_self_transitions: true,
            seed,
        }
    }

    #[test]
    fn feature_round_trip_is_bitwise() {
        let t = Tensor::from_vec(3, 5, (0..15).map(|i| i as f32 * 0.37 - 2.0).collect()).unwrap();
        let bytes = encode_features(&t);
        assert_eq!(&bytes[..4], b"MSTF");
        let back = decode_features(&bytes, Path::new("x")).unwrap();
        assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn feature_format_errors_are_distinct() {
        let t = Tensor::<f32>::filled(2, 3, 1.0);
        let good = encode_features(&t);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_features(&bad_magic, Path::new("f")), Err(Error::BadMagic { .. })));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            decode_features(&bad_version, Path::new("f")),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        assert!(matches!(
            decode_features(&good[..good.len() - 1], Path::new("f")),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode_features(&good[..10], Path::new("f")), Err(Error::Truncated { .. })));
    }

    #[test]
    fn downsample_cases() {
        let feats = Tensor::from_vec(1, 10, (0..10).map(|i| i as f32).collect()).unwrap();
        let s = VideoSample::new("v", feats, (0..10).map(|i| i % 3).collect()).unwrap();
        assert_eq!(temporal_downsample(&s, 1).unwrap(), s);
        let d = temporal_downsample(&s, 2).unwrap();
        assert_eq!(d.features.data(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(d.labels, vec![0, 2, 1, 0, 2]);
        assert!(temporal_downsample(&s, 0).is_err());
    }

    #[test]
    fn downsample_composes() {
        let bundle = generate_synthetic(&small_spec(3)).unwrap();
        let s = &bundle.samples[0];
        for (a, b) in [(2, 3), (3, 2), (4, 1), (2, 5)] {
            let direct = temporal_downsample(s, a * b).unwrap();
            let twice = temporal_downsample(&temporal_downsample(s, a).unwrap(), b).unwrap();
            assert_eq!(direct, twice);
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_well_formed() {
        let spec = small_spec(9);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        for s in &a.samples {
            let segs = labels_to_segments(&s.labels).unwrap();
            for w in segs.windows(2) {
                assert_ne!(w[0].class, w[1].class);
            }
            for seg in &segs {
                assert!((5..=12).contains(&seg.len()));
            }
            assert!((3..=5).contains(&segs.len()));
            assert_eq!(s.features.shape(), (6, s.labels.len()));
        }
        assert_eq!(a.splits["train"].len(), 4);
        assert_eq!(a.splits["test"].len(), 1);
    }

    #[test]
    fn noiseless_set_is_prototype_separable() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small_spec(2)
        };
        let bundle = generate_synthetic(&spec).unwrap();
        assert_eq!(bundle.manifest.unwrap().nearest_prototype_acc, 100.0);
    }

    #[test]
    fn benchmark_split_sizes() {
        let spec = SyntheticSpec {
            feature_dim: 2,
            ..standard_benchmark_spec()
        };
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(b.splits["train"].len(), 30);
        assert_eq!(b.splits["test"].len(), 8);
    }

    #[test]
    fn infeasible_specs() {
        let mut s = small_spec(1);
        s.min_segment = 20;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small_spec(1);
        s.num_classes = 1;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small_spec(1);
        s.noise = -1.0;
        assert!(generate_synthetic(&s).is_err());
    }
}
