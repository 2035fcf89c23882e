use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelGrads};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        Self::with_lr(0.0005)
    }
}

/// First and second moment accumulators, one buffer per parameter slice.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S = f32> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn for_shapes(lengths: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = lengths
            .into_iter()
            .map(|n| (vec![S::zero(); n], vec![S::zero(); n]))
            .unzip();
        OptimizerState { step: 0, m, v }
    }

    pub fn for_model(model: &Model<S>) -> Self {
        Self::for_shapes(model_slice_lengths(model))
    }
}

/// Parameter slices of a model in a fixed order: weights then bias of each
/// convolution, in [`Model::named_convs`] order.
pub fn model_slice_lengths<S: Scalar>(model: &Model<S>) -> Vec<usize> {
    model
        .named_convs()
        .into_iter()
        .flat_map(|(_, c)| [c.weights.len(), c.bias.len()])
        .collect()
}

/// One bias-corrected Adam update, in place:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `θ ← θ − lr · m̂ / (√v̂ + ε)` with `m̂ = m/(1−β1^t)`, `v̂ = v/(1−β2^t)`.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut [S]],
    grads: &[&[S]],
    state: &mut OptimizerState<S>,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adam_step", params.len(), grads.len()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::dim("adam_step slice", p.len(), g.len()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i].as_f64();
            let mi = hp.beta1 * m[i].as_f64() + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * v[i].as_f64() + (1.0 - hp.beta2) * gi * gi;
            m[i] = S::of(mi);
            v[i] = S::of(vi);
            let update = hp.lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
            p[i] = S::of(p[i].as_f64() - update);
        }
    }
    Ok(())
}

/// Applies [`adam_step`] to every parameter of `model`.
pub fn adam_step_model<S: Scalar>(
    model: &mut Model<S>,
    grads: &ModelGrads<S>,
    state: &mut OptimizerState<S>,
    hp: &AdamParams,
) -> Result<()> {
    let grad_convs = grads.convs();
    let grad_slices: Vec<&[S]> = grad_convs
        .iter()
        .flat_map(|c| [c.weights.as_slice(), c.bias.as_slice()])
        .collect();
    let mut param_slices: Vec<&mut [S]> = model
        .convs_mut()
        .into_iter()
        .flat_map(|c| [c.weights.as_mut_slice(), c.bias.as_mut_slice()])
        .collect();
    adam_step(&mut param_slices, &grad_slices, state, hp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut st = OptimizerState::<f64>::for_shapes([3]);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &AdamParams::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![0.0f64; 4];
        let g = vec![3.0, -0.5, 1e-3, -20.0];
        let mut st = OptimizerState::<f64>::for_shapes([4]);
        let hp = AdamParams::with_lr(0.01);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &hp).unwrap();
        for (x, gi) in p.iter().zip(&g) {
            assert!((x + 0.01 * gi.signum()).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.5f32, 1.5];
        let g = vec![1.0f32, -1.0];
        let mut st = OptimizerState::<f32>::for_shapes([2]);
        for _ in 0..5 {
            adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &AdamParams::with_lr(0.0)).unwrap();
        }
        assert_eq!(p, vec![0.5, 1.5]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0f64; 2];
        let g = vec![0.0f64; 3];
        let mut st = OptimizerState::<f64>::for_shapes([2]);
        assert!(adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &AdamParams::default()).is_err());
    }
}
