//! Dense channel-major tensors and the per-primitive forward/backward rules
//! the network is assembled from.
//!
//! A [`Tensor`] is a `channels × time` matrix stored row by row, so each
//! channel is one contiguous time series. Convolutions are evaluated as one
//! strided GEMM per kernel tap over the valid time window, which keeps the
//! zero padding implicit.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are floored at this value before any logarithm.
pub const PROB_FLOOR: f64 = 1e-8;

/// Real scalar type the network runs in: `f32` for training and inference,
/// `f64` for finite-difference checks.
pub trait Scalar:
    Float + Default + Debug + Display + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C += A · B` on strided views; see [`gemm_acc`].
    ///
    /// # Safety
    /// Every strided element addressed through `a`, `b` and `c` must be in
    /// bounds and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc);
    }
}

/// A strided matrix view into a flat slice.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C[m×n] += A[m×k] · B[k×n]`, all three given as strided views.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    av: View,
    b: &[S],
    bv: View,
    c: &mut [S],
    cv: View,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(av.last(m, k) < a.len());
    assert!(bv.last(k, n) < b.len());
    assert!(cv.last(m, n) < c.len());
    // SAFETY: the asserts above bound every addressed element; `c` is a
    // unique borrow so it cannot alias `a` or `b`.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Dense `channels × time` array, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    channels: usize,
    time: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(channels: usize, time: usize) -> Self {
        Self::filled(channels, time, S::zero())
    }

    pub fn filled(channels: usize, time: usize, value: S) -> Self {
        Tensor {
            channels,
            time,
            data: vec![value; channels * time],
        }
    }

    pub fn from_vec(channels: usize, time: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * time {
            return Err(Error::dim(
                "Tensor::from_vec",
                format!("{} elements ({channels}×{time})", channels * time),
                data.len(),
            ));
        }
        Ok(Tensor {
            channels,
            time,
            data,
        })
    }

    /// Builds a tensor from one row per channel.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let channels = rows.len();
        let time = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(channels * time);
        for row in rows {
            if row.len() != time {
                return Err(Error::dim("Tensor::from_rows", time, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            channels,
            time,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.time)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> S {
        self.data[c * self.time + t]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: S) {
        self.data[c * self.time + t] = v;
    }

    pub fn row(&self, c: usize) -> &[S] {
        &self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [S] {
        &mut self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn column(&self, t: usize) -> Vec<S> {
        (0..self.channels).map(|c| self.get(c, t)).collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            channels: self.channels,
            time: self.time,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<S>) -> Result<Self> {
        if self.time != other.time {
            return Err(Error::dim("concat_channels", self.time, other.time));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            channels: self.channels + other.channels,
            time: self.time,
            data,
        })
    }

    /// Splits the channel axis at `at`.
    pub fn split_channels(&self, at: usize) -> (Self, Self) {
        assert!(at <= self.channels);
        let (a, b) = self.data.split_at(at * self.time);
        (
            Tensor {
                channels: at,
                time: self.time,
                data: a.to_vec(),
            },
            Tensor {
                channels: self.channels - at,
                time: self.time,
                data: b.to_vec(),
            },
        )
    }

    /// Keeps the time steps listed in `indices`, in order.
    pub fn select_time(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.channels * indices.len());
        for c in 0..self.channels {
            let row = self.row(c);
            data.extend(indices.iter().map(|&t| row[t]));
        }
        Tensor {
            channels: self.channels,
            time: indices.len(),
            data,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            channels: self.channels,
            time: self.time,
            data: self.data.iter().map(|&x| T::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Weights and bias of one 1-D convolution.
///
/// `weights` is laid out `kernel × in_channels × out_channels`, so the tap
/// `k` connecting input channel `i` to output channel `o` sits at
/// `(k * in_channels + i) * out_channels + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<S = f32> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// Gradient accumulator mirroring a [`ConvParams`] (same shapes, same layout).
pub type GradBuffer<S = f32> = ConvParams<S>;

impl<S: Scalar> ConvParams<S> {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvParams {
            kernel,
            in_channels,
            out_channels,
            dilation,
            weights: vec![S::zero(); kernel * in_channels * out_channels],
            bias: vec![S::zero(); out_channels],
        }
    }

    pub fn new(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        weights: Vec<S>,
        bias: Vec<S>,
    ) -> Result<Self> {
        let p = ConvParams {
            kernel,
            in_channels,
            out_channels,
            dilation,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    /// Fan-in scaled uniform initialization, bound `1/√(kernel·in_channels)`
    /// for both weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((kernel * in_channels) as f64).sqrt();
        let mut draw = || S::of(rng.random_range(-bound..bound));
        let weights = (0..kernel * in_channels * out_channels)
            .map(|_| draw())
            .collect();
        let bias = (0..out_channels).map(|_| draw()).collect();
        ConvParams {
            kernel,
            in_channels,
            out_channels,
            dilation,
            weights,
            bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kernel, self.in_channels, self.out_channels, self.dilation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Domain("dilation must be at least 1".into()));
        }
        let expected = self.kernel * self.in_channels * self.out_channels;
        if self.weights.len() != expected {
            return Err(Error::dim("ConvParams", expected, self.weights.len()));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::dim("ConvParams bias", self.out_channels, self.bias.len()));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    pub fn weight(&self, k: usize, c_in: usize, c_out: usize) -> S {
        self.weights[(k * self.in_channels + c_in) * self.out_channels + c_out]
    }

    pub fn cast<T: Scalar>(&self) -> ConvParams<T> {
        ConvParams {
            kernel: self.kernel,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            dilation: self.dilation,
            weights: self.weights.iter().map(|&x| T::of(x.as_f64())).collect(),
            bias: self.bias.iter().map(|&x| T::of(x.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ConvParams<S>) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    /// Time offset of tap `k` and the range of output steps it touches.
    fn tap_window(&self, k: usize, time: usize) -> Option<(isize, usize, usize)> {
        let half = (self.kernel / 2) as isize;
        let offset = (k as isize - half) * self.dilation as isize;
        let lo = (-offset).max(0) as usize;
        let hi = (time as isize - offset).min(time as isize);
        if hi <= lo as isize {
            return None;
        }
        Some((offset, lo, hi as usize))
    }
}

fn check_conv_input<S: Scalar>(op: &'static str, input: &Tensor<S>, p: &ConvParams<S>) -> Result<()> {
    p.validate()?;
    if input.channels() != p.in_channels {
        return Err(Error::dim(
            op,
            format!("{} input channels", p.in_channels),
            input.channels(),
        ));
    }
    Ok(())
}

/// Same-length dilated convolution with symmetric zero padding:
/// `out[o, t] = bias[o] + Σ_{k,i} w[k,i,o] · in[i, t + (k − K/2)·dilation]`.
pub fn conv1d_forward<S: Scalar>(input: &Tensor<S>, p: &ConvParams<S>) -> Result<Tensor<S>> {
    check_conv_input("conv1d_forward", input, p)?;
    let time = input.time();
    let mut out = Tensor::zeros(p.out_channels, time);
    for (o, &b) in p.bias.iter().enumerate() {
        out.row_mut(o).fill(b);
    }
    let tap_size = p.in_channels * p.out_channels;
    for k in 0..p.kernel {
        let Some((offset, lo, hi)) = p.tap_window(k, time) else {
            continue;
        };
        gemm_acc(
            p.out_channels,
            p.in_channels,
            hi - lo,
            &p.weights,
            View {
                offset: k * tap_size,
                rs: 1,
                cs: p.out_channels,
            },
            input.data(),
            View {
                offset: (lo as isize + offset) as usize,
                rs: time,
                cs: 1,
            },
            out.data_mut(),
            View {
                offset: lo,
                rs: time,
                cs: 1,
            },
        );
    }
    Ok(out)
}

/// Backward pass of [`conv1d_forward`] that accumulates the parameter
/// gradients into `grads` and returns the input gradient.
pub fn conv1d_backward_into<S: Scalar>(
    input: &Tensor<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor<S>,
    grads: &mut GradBuffer<S>,
) -> Result<Tensor<S>> {
    check_conv_input("conv1d_backward", input, p)?;
    if grad_out.shape() != (p.out_channels, input.time()) {
        return Err(Error::dim(
            "conv1d_backward",
            format!("{}×{}", p.out_channels, input.time()),
            format!("{}×{}", grad_out.channels(), grad_out.time()),
        ));
    }
    if grads.weights.len() != p.weights.len() || grads.bias.len() != p.bias.len() {
        return Err(Error::dim(
            "conv1d_backward grads",
            p.weights.len(),
            grads.weights.len(),
        ));
    }
    let time = input.time();
    let tap_size = p.in_channels * p.out_channels;
    let mut grad_in = Tensor::zeros(p.in_channels, time);
    for k in 0..p.kernel {
        let Some((offset, lo, hi)) = p.tap_window(k, time) else {
            continue;
        };
        let n = hi - lo;
        let shifted = (lo as isize + offset) as usize;
        // grad_in[:, window + offset] += W_kᵀ · grad_out[:, window]
        gemm_acc(
            p.in_channels,
            p.out_channels,
            n,
            &p.weights,
            View {
                offset: k * tap_size,
                rs: p.out_channels,
                cs: 1,
            },
            grad_out.data(),
            View {
                offset: lo,
                rs: time,
                cs: 1,
            },
            grad_in.data_mut(),
            View {
                offset: shifted,
                rs: time,
                cs: 1,
            },
        );
        // grad W_k += grad_out[:, window] · in[:, window + offset]ᵀ
        gemm_acc(
            p.out_channels,
            n,
            p.in_channels,
            grad_out.data(),
            View {
                offset: lo,
                rs: time,
                cs: 1,
            },
            input.data(),
            View {
                offset: shifted,
                rs: 1,
                cs: time,
            },
            &mut grads.weights,
            View {
                offset: k * tap_size,
                rs: 1,
                cs: p.out_channels,
            },
        );
    }
    for (o, gb) in grads.bias.iter_mut().enumerate() {
        *gb += grad_out.row(o).iter().copied().sum::<S>();
    }
    Ok(grad_in)
}

/// Gradients of `Σ grad_out ⊙ conv1d_forward(input, p)` with respect to the
/// input, the weights and the bias.
pub fn conv1d_backward<S: Scalar>(
    input: &Tensor<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>, Vec<S>)> {
    let mut grads = p.zeros_like();
    let grad_in = conv1d_backward_into(input, p, grad_out, &mut grads)?;
    Ok((grad_in, grads.weights, grads.bias))
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|x| x.max(S::zero()))
}

/// Passes `grad_out` where the forward input was positive.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(input.shape(), grad_out.shape());
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor {
        channels: input.channels,
        time: input.time,
        data,
    }
}

/// Softmax over the channel axis, independently for every time step.
pub fn channel_softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let (c, t) = logits.shape();
    let mut out = Tensor::zeros(c, t);
    let mut col = vec![S::zero(); c];
    for step in 0..t {
        let mut max = S::neg_infinity();
        for (ch, v) in col.iter_mut().enumerate() {
            *v = logits.get(ch, step);
            max = max.max(*v);
        }
        let mut sum = S::zero();
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for (ch, v) in col.iter().enumerate() {
            out.set(ch, step, *v / sum);
        }
    }
    out
}

/// Log-softmax over channels, floored at `ln(PROB_FLOOR)` so it never
/// returns −∞ on finite logits.
pub fn channel_log_softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let (c, t) = logits.shape();
    let floor = S::of(PROB_FLOOR.ln());
    let mut out = Tensor::zeros(c, t);
    for step in 0..t {
        let max = (0..c)
            .map(|ch| logits.get(ch, step))
            .fold(S::neg_infinity(), S::max);
        let lse = (0..c)
            .map(|ch| (logits.get(ch, step) - max).exp())
            .sum::<S>()
            .ln()
            + max;
        for ch in 0..c {
            out.set(ch, step, (logits.get(ch, step) - lse).max(floor));
        }
    }
    out
}

/// Gradient through [`channel_softmax`]: `g_z = p ⊙ (g − Σ_c p_c g_c)`.
pub fn channel_softmax_backward<S: Scalar>(probs: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(probs.shape(), grad_out.shape());
    let (c, t) = probs.shape();
    let mut out = Tensor::zeros(c, t);
    for step in 0..t {
        let dot = (0..c)
            .map(|ch| probs.get(ch, step) * grad_out.get(ch, step))
            .sum::<S>();
        for ch in 0..c {
            let p = probs.get(ch, step);
            out.set(ch, step, p * (grad_out.get(ch, step) - dot));
        }
    }
    out
}

/// Gradient through [`channel_log_softmax`]: `g_z = g − p Σ_c g_c`, with
/// `g` zeroed wherever the floor was active.
pub fn channel_log_softmax_backward<S: Scalar>(
    probs: &Tensor<S>,
    log_probs: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    assert_eq!(probs.shape(), grad_out.shape());
    assert_eq!(log_probs.shape(), grad_out.shape());
    let floor = S::of(PROB_FLOOR.ln());
    let (c, t) = probs.shape();
    let mut out = Tensor::zeros(c, t);
    let mut g = vec![S::zero(); c];
    for step in 0..t {
        let mut total = S::zero();
        for (ch, gv) in g.iter_mut().enumerate() {
            *gv = if log_probs.get(ch, step) > floor {
                grad_out.get(ch, step)
            } else {
                S::zero()
            };
            total += *gv;
        }
        for (ch, gv) in g.iter().enumerate() {
            out.set(ch, step, *gv - probs.get(ch, step) * total);
        }
    }
    out
}

/// Survivor scales of one inverted-dropout draw (`0` or `1/(1−rate)`).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<S = f32> {
    scale: Vec<S>,
}

impl<S: Scalar> DropoutMask<S> {
    pub fn backward(&self, grad_out: &Tensor<S>) -> Tensor<S> {
        let mut g = grad_out.clone();
        for (x, &s) in g.data.iter_mut().zip(&self.scale) {
            *x *= s;
        }
        g
    }

    pub fn kept(&self) -> usize {
        self.scale.iter().filter(|&&s| s != S::zero()).count()
    }
}

/// Inverted dropout. Returns the mask only when it is not the identity.
pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    input: &Tensor<S>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> (Tensor<S>, Option<DropoutMask<S>>) {
    if !training || rate <= 0.0 {
        return (input.clone(), None);
    }
    let keep = S::of(1.0 / (1.0 - rate));
    let scale: Vec<S> = (0..input.data.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                S::zero()
            } else {
                keep
            }
        })
        .collect();
    let mut out = input.clone();
    for (x, &s) in out.data.iter_mut().zip(&scale) {
        *x *= s;
    }
    (out, Some(DropoutMask { scale }))
}

/// Numeric precision selector, used where callers pick at runtime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Single,
    Double,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_1ch(weights: [f64; 3], dilation: usize) -> ConvParams<f64> {
        ConvParams::new(3, 1, 1, dilation, weights.to_vec(), vec![0.0]).unwrap()
    }

    fn seq123() -> Tensor<f64> {
        Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let out = conv1d_forward(&seq123(), &conv_1ch([0.0, 1.0, 0.0], 1)).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn left_tap_reads_zero_padding() {
        let out = conv1d_forward(&seq123(), &conv_1ch([1.0, 0.0, 0.0], 1)).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 2.0]);
        let out = conv1d_forward(&seq123(), &conv_1ch([1.0, 0.0, 0.0], 2)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dilation_beyond_length_keeps_centre_tap() {
        let out = conv1d_forward(&seq123(), &conv_1ch([5.0, 1.0, 7.0], 1024)).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let p = ConvParams::<f64>::zeros(3, 2, 1, 1);
        let err = conv1d_forward(&seq123(), &p).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn zero_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ConvParams::<f64>::init_uniform(3, 4, 5, 2, &mut rng);
        let x = Tensor::filled(4, 9, 0.3);
        let (gi, gw, gb) = conv1d_backward(&x, &p, &Tensor::zeros(5, 9)).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_backward_passes_gradient() {
        let g = Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let (gi, _, _) = conv1d_backward(&seq123(), &conv_1ch([0.0, 1.0, 0.0], 1), &g).unwrap();
        assert_eq!(gi, g);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(1, 3, vec![0.1, 4.0, 2.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let g = Tensor::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_analytic_columns() {
        let logits = Tensor::from_rows(&[vec![0.0, 2f64.ln()], vec![0.0, 0.0]]).unwrap();
        let p = channel_softmax(&logits);
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(1, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_is_floored() {
        let logits = Tensor::from_rows(&[vec![0.0f64], vec![-1000.0]]).unwrap();
        let lp = channel_log_softmax(&logits);
        assert!(lp.is_finite());
        assert!((lp.get(1, 0) - PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::filled(3, 7, 1.5);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).0, x);
        assert!(dropout(&x, 0.5, false, &mut rng).1.is_none());
    }

    #[test]
    fn dropout_backward_reuses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::filled(4, 50, 1.0);
        let (y, mask) = dropout(&x, 0.5, true, &mut rng);
        let mask = mask.unwrap();
        assert_eq!(mask.backward(&x), y);
        for &v in y.data() {
            assert!(v == 0.0 || v == 2.0);
        }
    }

    #[test]
    fn dropout_preserves_mean_over_seeds() {
        let x = Tensor::<f64>::from_vec(
            16,
            512,
            (0..16 * 512).map(|i| 1.0 + (i % 7) as f64 * 0.25).collect(),
        )
        .unwrap();
        let input_mean = x.data().iter().sum::<f64>() / x.data().len() as f64;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, _) = dropout(&x, 0.5, true, &mut rng);
            let mean = y.data().iter().sum::<f64>() / y.data().len() as f64;
            assert!(
                (mean - input_mean).abs() / input_mean < 0.05,
                "seed {seed}: {mean} vs {input_mean}"
            );
        }
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f32>::filled(2, 3, 1.0);
        let b = Tensor::<f32>::filled(1, 3, 2.0);
        let cat = a.concat_channels(&b).unwrap();
        assert_eq!(cat.shape(), (3, 3));
        let (x, y) = cat.split_channels(2);
        assert_eq!((x, y), (a, b));
    }
}
