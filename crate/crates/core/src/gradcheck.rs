//! Finite-difference verification of every backward rule.
//!
//! Each check builds a small random instance in double precision, evaluates
//! the analytic gradient in the precision under test, and compares it with
//! central differences computed in double precision. Losses that stop the
//! gradient at the previous frame are differenced against a surrogate that
//! holds those frames fixed at their unperturbed values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{classification_head, DilatedResidualLayerParams, DualDilatedLayerParams, HeadParams, Layer};
use crate::loss::{total_loss_with_grad, LossConfig, Smoothing};
use crate::model::{build_model, Model, ModelConfig, StageOutputs, Variant};
use crate::tensor::{
    channel_log_softmax, channel_log_softmax_backward, channel_softmax, channel_softmax_backward,
    conv1d_backward, conv1d_forward, dropout, relu, relu_backward, ConvParams, Precision, Scalar,
    Tensor, PROB_FLOOR,
};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Every registered primitive, in report order.
pub const PRIMITIVES: &[&str] = &[
    "conv1d",
    "relu",
    "softmax",
    "log_softmax",
    "softmax_xent",
    "dropout",
    "dilated_residual",
    "dual_dilated",
    "head",
    "t_mse",
    "kl",
    "model",
];

/// Pass threshold for `primitive`.
pub fn tolerance(primitive: &str) -> f64 {
    match primitive {
        "model" => 1e-3,
        _ => 1e-4,
    }
}

/// Fraction of the largest numeric gradient entry below which differences
/// are measured against that floor rather than the entry itself. Entries
/// far smaller than the gradient's scale carry mostly rounding noise, and
/// more of it when the analytic side runs in single precision.
pub fn scale_floor(precision: Precision) -> f64 {
    match precision {
        Precision::Single => 1e-2,
        Precision::Double => 1e-3,
    }
}

/// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor · max_j |n_j|, 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom_floor = (floor * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(denom_floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub primitive: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn finite_difference_check(primitive: &str, seed: u64, epsilon: f64) -> Result<f64> {
    finite_difference_check_in(primitive, seed, epsilon, Precision::Double)
}

/// As [`finite_difference_check`] with the analytic side evaluated in the
/// given precision.
pub fn finite_difference_check_in(
    primitive: &str,
    seed: u64,
    epsilon: f64,
    precision: Precision,
) -> Result<f64> {
    match precision {
        Precision::Single => check::<f32>(primitive, seed, epsilon, scale_floor(precision)),
        Precision::Double => check::<f64>(primitive, seed, epsilon, scale_floor(precision)),
    }
}

pub fn run_suite(seed: u64, precision: Precision) -> Result<Vec<CheckResult>> {
    PRIMITIVES
        .iter()
        .map(|&p| {
            let err = finite_difference_check_in(p, seed, DEFAULT_EPSILON, precision)?;
            let tol = tolerance(p);
            Ok(CheckResult {
                primitive: p.to_string(),
                max_rel_error: err,
                tolerance: tol,
                passed: err < tol,
            })
        })
        .collect()
}

fn check<S: Scalar>(primitive: &str, seed: u64, eps: f64, floor: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, n) = match primitive {
        "conv1d" => conv_check::<S>(&mut rng, eps)?,
        "relu" => relu_check::<S>(&mut rng, eps),
        "softmax" => softmax_check::<S>(&mut rng, eps, false),
        "log_softmax" => softmax_check::<S>(&mut rng, eps, true),
        "softmax_xent" => loss_check::<S>(&mut rng, eps, Smoothing::None)?,
        "dropout" => dropout_check::<S>(&mut rng, eps),
        "dilated_residual" => layer_check::<S>(&mut rng, eps, false)?,
        "dual_dilated" => layer_check::<S>(&mut rng, eps, true)?,
        "head" => head_check::<S>(&mut rng, eps)?,
        "t_mse" => loss_check::<S>(&mut rng, eps, Smoothing::Tmse)?,
        "kl" => loss_check::<S>(&mut rng, eps, Smoothing::Kl)?,
        "model" => model_check::<S>(&mut rng, eps)?,
        other => return Err(Error::UnknownPrimitive(other.to_string())),
    };
    Ok(max_relative_error(&a, &n, floor))
}

fn random_tensor<R: Rng>(rng: &mut R, c: usize, t: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(c, t, (0..c * t).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("shape")
}

fn to_f64<S: Scalar>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to each coordinate of `x`.
fn central_diff(x: &mut [f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(x);
            x[i] = orig - eps;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Flat view over several convolutions: weights then bias of each.
fn conv_flat(convs: &[&ConvParams<f64>]) -> Vec<f64> {
    convs
        .iter()
        .flat_map(|c| c.weights.iter().chain(&c.bias).copied())
        .collect()
}

fn conv_unflat(convs: &mut [&mut ConvParams<f64>], flat: &[f64]) {
    let mut it = flat.iter().copied();
    for c in convs.iter_mut() {
        for w in c.weights.iter_mut().chain(c.bias.iter_mut()) {
            *w = it.next().expect("flat length");
        }
    }
}

fn conv_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (cin, cout, t) = (3, 4, 13);
    let mut p = ConvParams::<f64>::init_uniform(3, cin, cout, 2, rng);
    let x = random_tensor(rng, cin, t, 1.0);
    let g = random_tensor(rng, cout, t, 1.0);

    let (gi, gw, gb) = conv1d_backward(&x.cast::<S>(), &p.cast::<S>(), &g.cast::<S>())?;
    let mut analytic = to_f64(gi.data());
    analytic.extend(to_f64(&gw));
    analytic.extend(to_f64(&gb));

    let mut xs = x.data().to_vec();
    let mut numeric = central_diff(&mut xs, eps, |v| {
        let xi = Tensor::from_vec(cin, t, v.to_vec()).expect("shape");
        dot(&conv1d_forward(&xi, &p).expect("conv"), &g)
    });
    let mut flat = conv_flat(&[&p]);
    numeric.extend(central_diff(&mut flat, eps, |v| {
        conv_unflat(&mut [&mut p], v);
        dot(&conv1d_forward(&x, &p).expect("conv"), &g)
    }));
    Ok((analytic, numeric))
}

fn relu_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64) -> (Vec<f64>, Vec<f64>) {
    // Keep inputs at least 0.1 away from the kink.
    let data = (0..40)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::from_vec(4, 10, data).expect("shape");
    let g = random_tensor(rng, 4, 10, 1.0);
    let analytic = to_f64(relu_backward(&x.cast::<S>(), &g.cast::<S>()).data());
    let mut xs = x.data().to_vec();
    let numeric = central_diff(&mut xs, eps, |v| {
        dot(&relu(&Tensor::from_vec(4, 10, v.to_vec()).expect("shape")), &g)
    });
    (analytic, numeric)
}

fn softmax_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64, log: bool) -> (Vec<f64>, Vec<f64>) {
    let (c, t) = (5, 8);
    let z = random_tensor(rng, c, t, 3.0);
    let g = random_tensor(rng, c, t, 1.0);
    let zs = z.cast::<S>();
    let probs = channel_softmax(&zs);
    let analytic = if log {
        channel_log_softmax_backward(&probs, &channel_log_softmax(&zs), &g.cast::<S>())
    } else {
        channel_softmax_backward(&probs, &g.cast::<S>())
    };
    let mut xs = z.data().to_vec();
    let numeric = central_diff(&mut xs, eps, |v| {
        let zi = Tensor::from_vec(c, t, v.to_vec()).expect("shape");
        let out = if log {
            channel_log_softmax(&zi)
        } else {
            channel_softmax(&zi)
        };
        dot(&out, &g)
    });
    (to_f64(analytic.data()), numeric)
}

fn dropout_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let x = random_tensor(rng, 4, 12, 1.0);
    let g = random_tensor(rng, 4, 12, 1.0);
    let mask_seed: u64 = rng.random();
    let (_, mask) = dropout(
        &x.cast::<S>(),
        0.5,
        true,
        &mut ChaCha8Rng::seed_from_u64(mask_seed),
    );
    let analytic = to_f64(mask.expect("training mask").backward(&g.cast::<S>()).data());
    let mut xs = x.data().to_vec();
    let numeric = central_diff(&mut xs, eps, |v| {
        let xi = Tensor::from_vec(4, 12, v.to_vec()).expect("shape");
        let (y, _) = dropout(&xi, 0.5, true, &mut ChaCha8Rng::seed_from_u64(mask_seed));
        dot(&y, &g)
    });
    (analytic, numeric)
}

fn layer_convs_mut(layer: &mut Layer<f64>) -> Vec<&mut ConvParams<f64>> {
    layer.convs_mut()
}

fn layer_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64, dual: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, t) = (3, 16);
    let mut layer = if dual {
        Layer::Dual(DualDilatedLayerParams::<f64>::init(d, 2, 4, 0.0, rng))
    } else {
        Layer::Residual(DilatedResidualLayerParams::<f64>::init(d, 2, 0.0, rng))
    };
    let x = random_tensor(rng, d, t, 1.0);
    let g = random_tensor(rng, d, t, 1.0);
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);

    let ls = layer.cast::<S>();
    let (_, cache) = ls.forward(&x.cast::<S>(), false, &mut no_rng)?;
    let mut grads = ls.zeros_like();
    let gi = ls.backward(&cache, &g.cast::<S>(), &mut grads)?;
    let mut analytic = to_f64(gi.data());
    for (_, c) in grads.convs() {
        analytic.extend(to_f64(&c.weights));
        analytic.extend(to_f64(&c.bias));
    }

    let eval = |layer: &Layer<f64>, x: &Tensor<f64>| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        dot(&layer.forward(x, false, &mut r).expect("layer").0, &g)
    };
    let mut xs = x.data().to_vec();
    let mut numeric = central_diff(&mut xs, eps, |v| {
        eval(&layer, &Tensor::from_vec(d, t, v.to_vec()).expect("shape"))
    });
    let mut flat = conv_flat(&layer.convs().into_iter().map(|(_, c)| c).collect::<Vec<_>>());
    numeric.extend(central_diff(&mut flat, eps, |v| {
        conv_unflat(&mut layer_convs_mut(&mut layer), v);
        eval(&layer, &x)
    }));
    Ok((analytic, numeric))
}

fn head_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, c, t) = (4, 3, 9);
    let mut head = HeadParams::<f64>::init(d, c, rng);
    let x = random_tensor(rng, d, t, 1.0);
    let g = random_tensor(rng, c, t, 1.0);

    let hs = HeadParams {
        proj: head.proj.cast::<S>(),
    };
    let (_, probs) = classification_head(&x.cast::<S>(), &hs)?;
    let g_logits = channel_softmax_backward(&probs, &g.cast::<S>());
    let (gi, gw, gb) = conv1d_backward(&x.cast::<S>(), &hs.proj, &g_logits)?;
    let mut analytic = to_f64(gi.data());
    analytic.extend(to_f64(&gw));
    analytic.extend(to_f64(&gb));

    let mut xs = x.data().to_vec();
    let mut numeric = central_diff(&mut xs, eps, |v| {
        let xi = Tensor::from_vec(d, t, v.to_vec()).expect("shape");
        dot(&classification_head(&xi, &head).expect("head").1, &g)
    });
    let mut flat = conv_flat(&[&head.proj]);
    numeric.extend(central_diff(&mut flat, eps, |v| {
        conv_unflat(&mut [&mut head.proj], v);
        dot(&classification_head(&x, &head).expect("head").1, &g)
    }));
    Ok((analytic, numeric))
}

/// Loss of one stage's logits with every previous-frame term frozen to
/// `frozen_logp` / `frozen_probs`. Coded directly from the loss definitions.
fn frozen_stage_loss(
    logits: &Tensor<f64>,
    frozen_logp: &Tensor<f64>,
    frozen_probs: &Tensor<f64>,
    labels: &[usize],
    cfg: &LossConfig,
) -> f64 {
    let (c, t) = logits.shape();
    let floor = PROB_FLOOR.ln();
    let logp = |ch: usize, step: usize| -> f64 {
        let col: Vec<f64> = (0..c).map(|k| logits.get(k, step)).collect();
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        (logits.get(ch, step) - lse).max(floor)
    };
    let mut cls = 0.0;
    for (step, &l) in labels.iter().enumerate() {
        cls -= logp(l, step);
    }
    cls /= t as f64;
    let mut smooth = 0.0;
    for step in 1..t {
        for ch in 0..c {
            let cur = logp(ch, step);
            let prev = frozen_logp.get(ch, step - 1);
            smooth += match cfg.smoothing {
                Smoothing::Tmse => (cur - prev).abs().min(cfg.tau).powi(2) / (t * c) as f64,
                Smoothing::Kl => frozen_probs.get(ch, step - 1) * (prev - cur) / t as f64,
                Smoothing::None => 0.0,
            };
        }
    }
    cls + cfg.lambda * smooth
}

fn frozen_total(outputs: &StageOutputs<f64>, frozen: &StageOutputs<f64>, labels: &[usize], cfg: &LossConfig) -> f64 {
    outputs
        .logits
        .iter()
        .zip(frozen.logits.iter().zip(&frozen.probs))
        .map(|(z, (fz, fp))| frozen_stage_loss(z, &channel_log_softmax(fz), fp, labels, cfg))
        .sum()
}

fn loss_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64, smoothing: Smoothing) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, t) = (4, 12);
    // Mostly smooth logits with occasional jumps, so both sides of the
    // truncation threshold are exercised. Logits stay within ±6, which keeps
    // every probability well above the floor.
    let z = loop {
        let mut z = Tensor::<f64>::zeros(c, t);
        for ch in 0..c {
            let mut v: f64 = rng.random_range(-1.0..1.0);
            for step in 0..t {
                v += if rng.random_range(0.0..1.0) < 0.15 {
                    rng.random_range(-9.0..9.0)
                } else {
                    rng.random_range(-0.8..0.8)
                };
                v = v.clamp(-6.0, 6.0);
                z.set(ch, step, v);
            }
        }
        // Resample if any log-probability step sits on the truncation kink.
        let lp = channel_log_softmax(&z);
        let near_kink = (0..c).any(|ch| {
            (1..t).any(|step| ((lp.get(ch, step) - lp.get(ch, step - 1)).abs() - 4.0).abs() < 1e-3)
        });
        if !near_kink {
            break z;
        }
    };
    let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..c)).collect();
    let cfg = LossConfig {
        lambda: if smoothing == Smoothing::None { 0.0 } else { 0.7 },
        tau: 4.0,
        smoothing,
    };
    let outputs_of = |z: &Tensor<f64>| StageOutputs {
        probs: vec![channel_softmax(z)],
        logits: vec![z.clone()],
    };

    let zs = z.cast::<S>();
    let out_s = StageOutputs {
        probs: vec![channel_softmax(&zs)],
        logits: vec![zs],
    };
    let (_, g) = total_loss_with_grad(&out_s, &labels, &cfg)?;
    let analytic = to_f64(g[0].data());

    let frozen = outputs_of(&z);
    let mut xs = z.data().to_vec();
    let numeric = central_diff(&mut xs, eps, |v| {
        let zi = Tensor::from_vec(c, t, v.to_vec()).expect("shape");
        frozen_total(&outputs_of(&zi), &frozen, &labels, &cfg)
    });
    Ok((analytic, numeric))
}

/// End-to-end total-loss gradient of a 4-stage MS-TCN (D=8, C=4, T=64) on
/// a 1% sample of its parameters.
fn model_check<S: Scalar>(rng: &mut ChaCha8Rng, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d_in, classes, t) = (6, 4, 64);
    let cfg = ModelConfig {
        filters: 8,
        dropout: 0.0,
        ..ModelConfig::new(Variant::MsTcn, d_in, classes)
    };
    let mut model: Model<f64> = build_model(&cfg, rng)?;
    let x = random_tensor(rng, d_in, t, 1.0);
    let labels: Vec<usize> = (0..t).map(|step| (step / 10 + step % 3 / 2) % classes).collect();
    let loss_cfg = LossConfig::default();

    let ms = model.cast::<S>();
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    let trace = ms.forward_trace(&x.cast::<S>(), false, &mut no_rng)?;
    let (_, g_logits) = total_loss_with_grad(&trace.outputs, &labels, &loss_cfg)?;
    let mut grads = ms.zero_grads();
    ms.backward(&trace, &g_logits, &mut grads)?;
    let all: Vec<f64> = grads
        .convs()
        .into_iter()
        .flat_map(|c| to_f64(&c.weights).into_iter().chain(to_f64(&c.bias)))
        .collect();

    let total = all.len();
    let samples = total.div_ceil(100).max(1);
    let picks: Vec<usize> = (0..samples).map(|_| rng.random_range(0..total)).collect();
    let analytic = picks.iter().map(|&i| all[i]).collect();

    let frozen = model.forward(&x, false, &mut no_rng)?;
    let mut flat = conv_flat(&model.named_convs().into_iter().map(|(_, c)| c).collect::<Vec<_>>());
    let numeric = picks
        .iter()
        .map(|&i| {
            let orig = flat[i];
            let mut at = |v: f64| {
                flat[i] = v;
                conv_unflat(&mut model.convs_mut(), &flat);
                let out = model.forward(&x, false, &mut no_rng).expect("forward");
                frozen_total(&out, &frozen, &labels, &loss_cfg)
            };
            let up = at(orig + eps);
            let down = at(orig - eps);
            at(orig);
            (up - down) / (2.0 * eps)
        })
        .collect();
    Ok((analytic, numeric))
}
