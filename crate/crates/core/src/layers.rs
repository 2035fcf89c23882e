//! The two residual layer types a stage is built from, the classification
//! head, and the receptive-field formula.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    channel_softmax, conv1d_backward_into, conv1d_forward, dropout, relu, relu_backward, ConvParams,
    DropoutMask, Scalar, Tensor,
};

/// Receptive field in frames after `layer` dilated residual layers with
/// kernel 3 and doubling dilations: `2^(layer+1) − 1`.
pub fn receptive_field(layer: usize) -> Result<u64> {
    if layer < 1 {
        return Err(Error::Domain("layer index must be at least 1".into()));
    }
    if layer > 62 {
        return Err(Error::Domain(format!("layer index {layer} overflows u64")));
    }
    Ok((1u64 << (layer + 1)) - 1)
}

/// Dilation of the residual layer at 1-based `layer`: `2^(layer−1)`,
/// restarting from 1 every `cycle` layers.
pub fn residual_dilation(layer: usize, cycle: usize) -> usize {
    debug_assert!(layer >= 1 && cycle >= 1);
    1 << ((layer - 1) % cycle)
}

/// Branch dilations of the dual dilated layer at 1-based `layer` in a stack
/// of `depth` layers: `(2^(layer−1), 2^(depth−layer))`.
pub fn dual_dilations(layer: usize, depth: usize) -> (usize, usize) {
    debug_assert!(layer >= 1 && layer <= depth);
    (1 << (layer - 1), 1 << (depth - layer))
}

/// `H_l = H_{l−1} + dropout(W ∗ ReLU(W_d ∗ H_{l−1} + b_d) + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedResidualLayerParams<S = f32> {
    pub dilated: ConvParams<S>,
    pub pointwise: ConvParams<S>,
    pub dropout_rate: f64,
}

/// Two dilated branches, concatenated, rectified and fused by a 1×1 conv.
#[derive(Clone, Debug, PartialEq)]
pub struct DualDilatedLayerParams<S = f32> {
    pub branch1: ConvParams<S>,
    pub branch2: ConvParams<S>,
    pub fuse: ConvParams<S>,
    pub dropout_rate: f64,
}

/// 1×1 projection from feature maps to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<S = f32> {
    pub proj: ConvParams<S>,
}

pub struct ResidualCache<S> {
    input: Tensor<S>,
    pre_act: Tensor<S>,
    act: Tensor<S>,
    mask: Option<DropoutMask<S>>,
}

pub struct DualCache<S> {
    input: Tensor<S>,
    concat: Tensor<S>,
    act: Tensor<S>,
    mask: Option<DropoutMask<S>>,
}

fn check_channels<S: Scalar>(op: &'static str, input: &Tensor<S>, d: usize) -> Result<()> {
    if input.channels() != d {
        return Err(Error::dim(op, format!("{d} channels"), input.channels()));
    }
    Ok(())
}

impl<S: Scalar> DilatedResidualLayerParams<S> {
    pub fn init<R: Rng + ?Sized>(d: usize, dilation: usize, dropout_rate: f64, rng: &mut R) -> Self {
        DilatedResidualLayerParams {
            dilated: ConvParams::init_uniform(3, d, d, dilation, rng),
            pointwise: ConvParams::init_uniform(1, d, d, 1, rng),
            dropout_rate,
        }
    }

    pub fn zeros(d: usize, dilation: usize, dropout_rate: f64) -> Self {
        DilatedResidualLayerParams {
            dilated: ConvParams::zeros(3, d, d, dilation),
            pointwise: ConvParams::zeros(1, d, d, 1),
            dropout_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.dilated.in_channels
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<S>, ResidualCache<S>)> {
        check_channels("dilated_residual_forward", input, self.channels())?;
        let pre_act = conv1d_forward(input, &self.dilated)?;
        let act = relu(&pre_act);
        let mixed = conv1d_forward(&act, &self.pointwise)?;
        let (dropped, mask) = dropout(&mixed, self.dropout_rate, training, rng);
        let mut out = input.clone();
        out.add_assign(&dropped);
        Ok((
            out,
            ResidualCache {
                input: input.clone(),
                pre_act,
                act,
                mask,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        cache: &ResidualCache<S>,
        grad_out: &Tensor<S>,
        grads: &mut Self,
    ) -> Result<Tensor<S>> {
        let g_mixed = match &cache.mask {
            Some(mask) => mask.backward(grad_out),
            None => grad_out.clone(),
        };
        let g_act = conv1d_backward_into(&cache.act, &self.pointwise, &g_mixed, &mut grads.pointwise)?;
        let g_pre = relu_backward(&cache.pre_act, &g_act);
        let mut g_in = conv1d_backward_into(&cache.input, &self.dilated, &g_pre, &mut grads.dilated)?;
        g_in.add_assign(grad_out);
        Ok(g_in)
    }

    pub fn num_parameters(&self) -> usize {
        self.dilated.num_parameters() + self.pointwise.num_parameters()
    }
}

pub fn dilated_residual_forward<S: Scalar, R: Rng + ?Sized>(
    input: &Tensor<S>,
    p: &DilatedResidualLayerParams<S>,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<S>> {
    p.forward(input, training, rng).map(|(out, _)| out)
}

impl<S: Scalar> DualDilatedLayerParams<S> {
    /// Layer `layer` (1-based) of a `depth`-layer generation stage.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        layer: usize,
        depth: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Self {
        let (d1, d2) = dual_dilations(layer, depth);
        DualDilatedLayerParams {
            branch1: ConvParams::init_uniform(3, d, d, d1, rng),
            branch2: ConvParams::init_uniform(3, d, d, d2, rng),
            fuse: ConvParams::init_uniform(1, 2 * d, d, 1, rng),
            dropout_rate,
        }
    }

    pub fn zeros(d: usize, dilations: (usize, usize), dropout_rate: f64) -> Self {
        DualDilatedLayerParams {
            branch1: ConvParams::zeros(3, d, d, dilations.0),
            branch2: ConvParams::zeros(3, d, d, dilations.1),
            fuse: ConvParams::zeros(1, 2 * d, d, 1),
            dropout_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.branch1.in_channels
    }

    pub fn dilations(&self) -> (usize, usize) {
        (self.branch1.dilation, self.branch2.dilation)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<S>, DualCache<S>)> {
        check_channels("dual_dilated_forward", input, self.channels())?;
        let b1 = conv1d_forward(input, &self.branch1)?;
        let b2 = conv1d_forward(input, &self.branch2)?;
        let concat = b1.concat_channels(&b2)?;
        let act = relu(&concat);
        let fused = conv1d_forward(&act, &self.fuse)?;
        let (dropped, mask) = dropout(&fused, self.dropout_rate, training, rng);
        let mut out = input.clone();
        out.add_assign(&dropped);
        Ok((
            out,
            DualCache {
                input: input.clone(),
                concat,
                act,
                mask,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &DualCache<S>,
        grad_out: &Tensor<S>,
        grads: &mut Self,
    ) -> Result<Tensor<S>> {
        let g_fused = match &cache.mask {
            Some(mask) => mask.backward(grad_out),
            None => grad_out.clone(),
        };
        let g_act = conv1d_backward_into(&cache.act, &self.fuse, &g_fused, &mut grads.fuse)?;
        let g_concat = relu_backward(&cache.concat, &g_act);
        let (g1, g2) = g_concat.split_channels(self.channels());
        let mut g_in = grad_out.clone();
        g_in.add_assign(&conv1d_backward_into(&cache.input, &self.branch1, &g1, &mut grads.branch1)?);
        g_in.add_assign(&conv1d_backward_into(&cache.input, &self.branch2, &g2, &mut grads.branch2)?);
        Ok(g_in)
    }

    pub fn num_parameters(&self) -> usize {
        self.branch1.num_parameters() + self.branch2.num_parameters() + self.fuse.num_parameters()
    }
}

pub fn dual_dilated_forward<S: Scalar, R: Rng + ?Sized>(
    input: &Tensor<S>,
    p: &DualDilatedLayerParams<S>,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<S>> {
    p.forward(input, training, rng).map(|(out, _)| out)
}

impl<S: Scalar> HeadParams<S> {
    pub fn init<R: Rng + ?Sized>(d: usize, classes: usize, rng: &mut R) -> Self {
        HeadParams {
            proj: ConvParams::init_uniform(1, d, classes, 1, rng),
        }
    }

    pub fn zeros(d: usize, classes: usize) -> Self {
        HeadParams {
            proj: ConvParams::zeros(1, d, classes, 1),
        }
    }
}

/// Returns `(logits, probs)` for the final feature maps of a stage.
pub fn classification_head<S: Scalar>(
    features: &Tensor<S>,
    p: &HeadParams<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    check_channels("classification_head", features, p.proj.in_channels)?;
    let logits = conv1d_forward(features, &p.proj)?;
    let probs = channel_softmax(&logits);
    Ok((logits, probs))
}

/// A residual layer of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<S = f32> {
    Residual(DilatedResidualLayerParams<S>),
    Dual(DualDilatedLayerParams<S>),
}

pub enum LayerCache<S> {
    Residual(ResidualCache<S>),
    Dual(DualCache<S>),
}

impl<S: Scalar> Layer<S> {
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<S>, LayerCache<S>)> {
        match self {
            Layer::Residual(p) => p
                .forward(input, training, rng)
                .map(|(o, c)| (o, LayerCache::Residual(c))),
            Layer::Dual(p) => p
                .forward(input, training, rng)
                .map(|(o, c)| (o, LayerCache::Dual(c))),
        }
    }

    pub fn backward(
        &self,
        cache: &LayerCache<S>,
        grad_out: &Tensor<S>,
        grads: &mut Self,
    ) -> Result<Tensor<S>> {
        match (self, cache, grads) {
            (Layer::Residual(p), LayerCache::Residual(c), Layer::Residual(g)) => {
                p.backward(c, grad_out, g)
            }
            (Layer::Dual(p), LayerCache::Dual(c), Layer::Dual(g)) => p.backward(c, grad_out, g),
            _ => Err(Error::dim("Layer::backward", "matching layer kinds", "mixed")),
        }
    }

    pub fn convs(&self) -> Vec<(&'static str, &ConvParams<S>)> {
        match self {
            Layer::Residual(p) => vec![("dilated", &p.dilated), ("pointwise", &p.pointwise)],
            Layer::Dual(p) => vec![
                ("branch1", &p.branch1),
                ("branch2", &p.branch2),
                ("fuse", &p.fuse),
            ],
        }
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<S>> {
        match self {
            Layer::Residual(p) => vec![&mut p.dilated, &mut p.pointwise],
            Layer::Dual(p) => vec![&mut p.branch1, &mut p.branch2, &mut p.fuse],
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match self {
            Layer::Residual(p) => p.dropout_rate,
            Layer::Dual(p) => p.dropout_rate,
        }
    }

    pub fn num_parameters(&self) -> usize {
        match self {
            Layer::Residual(p) => p.num_parameters(),
            Layer::Dual(p) => p.num_parameters(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Layer::Residual(p) => Layer::Residual(DilatedResidualLayerParams {
                dilated: p.dilated.zeros_like(),
                pointwise: p.pointwise.zeros_like(),
                dropout_rate: p.dropout_rate,
            }),
            Layer::Dual(p) => Layer::Dual(DualDilatedLayerParams {
                branch1: p.branch1.zeros_like(),
                branch2: p.branch2.zeros_like(),
                fuse: p.fuse.zeros_like(),
                dropout_rate: p.dropout_rate,
            }),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Layer<T> {
        match self {
            Layer::Residual(p) => Layer::Residual(DilatedResidualLayerParams {
                dilated: p.dilated.cast(),
                pointwise: p.pointwise.cast(),
                dropout_rate: p.dropout_rate,
            }),
            Layer::Dual(p) => Layer::Dual(DualDilatedLayerParams {
                branch1: p.branch1.cast(),
                branch2: p.branch2.cast(),
                fuse: p.fuse.cast(),
                dropout_rate: p.dropout_rate,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn random_input(d: usize, t: usize, seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..d * t).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(d, t, data).unwrap()
    }

    #[test]
    fn receptive_field_values() {
        assert_eq!(receptive_field(1).unwrap(), 3);
        assert_eq!(receptive_field(2).unwrap(), 7);
        assert_eq!(receptive_field(10).unwrap(), 2047);
        assert!(receptive_field(0).is_err());
        for l in 2..=20 {
            assert_eq!(
                receptive_field(l).unwrap(),
                2 * receptive_field(l - 1).unwrap() + 1
            );
        }
    }

    #[test]
    fn dilation_sequences() {
        let seq: Vec<_> = (1..=10).map(|l| residual_dilation(l, 10)).collect();
        assert_eq!(seq, vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512]);
        assert_eq!(residual_dilation(11, 10), 1);
        assert_eq!(residual_dilation(48, 10), 128);
        assert_eq!(dual_dilations(1, 11), (1, 1024));
        assert_eq!(dual_dilations(11, 11), (1024, 1));
        assert_eq!(dual_dilations(4, 10), (8, 64));
    }

    #[test]
    fn zero_layers_are_identity() {
        let x = random_input(6, 40, 1);
        let res = DilatedResidualLayerParams::<f64>::zeros(6, 4, 0.5);
        assert_eq!(dilated_residual_forward(&x, &res, true, &mut rng()).unwrap(), x);
        let dual = DualDilatedLayerParams::<f64>::zeros(6, (2, 16), 0.5);
        assert_eq!(dual_dilated_forward(&x, &dual, true, &mut rng()).unwrap(), x);
    }

    #[test]
    fn shape_is_preserved() {
        let mut r = rng();
        let x = Tensor::<f32>::filled(64, 1000, 0.1);
        let res = DilatedResidualLayerParams::<f32>::init(64, 512, 0.5, &mut r);
        assert_eq!(res.forward(&x, true, &mut r).unwrap().0.shape(), (64, 1000));
        let dual = DualDilatedLayerParams::<f32>::init(64, 3, 11, 0.5, &mut r);
        assert_eq!(dual.forward(&x, false, &mut r).unwrap().0.shape(), (64, 1000));
    }

    #[test]
    fn residual_hand_case() {
        // D=1, T=4, dilation 1: dilated weights (1, 2, −1), bias −1; pointwise 3, bias 0.5.
        let p = DilatedResidualLayerParams {
            dilated: ConvParams::new(3, 1, 1, 1, vec![1.0, 2.0, -1.0], vec![-1.0]).unwrap(),
            pointwise: ConvParams::new(1, 1, 1, 1, vec![3.0], vec![0.5]).unwrap(),
            dropout_rate: 0.5,
        };
        let x = Tensor::from_vec(1, 4, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        // pre = [2·1 −(−2) −1, 1 + 2·(−2) − 3 − 1, −2 + 6 − 0.5 − 1, 3 + 1 − 1]
        //     = [3, −7, 2.5, 3] → relu [3, 0, 2.5, 3] → ×3 + 0.5 = [9.5, 0.5, 8, 9.5]
        let out = dilated_residual_forward(&x, &p, false, &mut rng()).unwrap();
        assert_eq!(out.data(), &[10.5, -1.5, 11.0, 10.0]);
    }

    #[test]
    fn dual_hand_case() {
        // D=1, T=4; branch1 dilation 1 weights (0, 1, 1), branch2 dilation 2
        // weights (1, 0, 0) bias 1; fuse weights (2, −1), bias 0.
        let p = DualDilatedLayerParams {
            branch1: ConvParams::new(3, 1, 1, 1, vec![0.0, 1.0, 1.0], vec![0.0]).unwrap(),
            branch2: ConvParams::new(3, 1, 1, 2, vec![1.0, 0.0, 0.0], vec![1.0]).unwrap(),
            fuse: ConvParams::new(1, 2, 1, 1, vec![2.0, -1.0], vec![0.0]).unwrap(),
            dropout_rate: 0.5,
        };
        let x = Tensor::from_vec(1, 4, vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        // b1 = [x0+x1, x1+x2, x2+x3, x3] = [−1, 1, −1, −4] → relu [0, 1, 0, 0]
        // b2 = [1, 1, 1+x0, 1+x1] = [1, 1, 2, −1] → relu [1, 1, 2, 0]
        // fused = 2·r1 − r2 = [−1, 1, −2, 0]
        let out = dual_dilated_forward(&x, &p, false, &mut rng()).unwrap();
        assert_eq!(out.data(), &[0.0, -1.0, 1.0, -4.0]);
    }

    #[test]
    fn dual_reduces_to_residual_with_identity_fuse() {
        let d = 3;
        let mut r = rng();
        let res = DilatedResidualLayerParams::<f64>::init(d, 4, 0.0, &mut r);
        let mut fuse = ConvParams::zeros(1, 2 * d, d, 1);
        // fuse = [pointwise | 0]
        for i in 0..d {
            for o in 0..d {
                fuse.weights[i * d + o] = res.pointwise.weight(0, i, o);
            }
        }
        fuse.bias = res.pointwise.bias.clone();
        let mut branch2 = res.dilated.clone();
        branch2.weights.iter_mut().for_each(|w| *w *= 0.3);
        let dual = DualDilatedLayerParams {
            branch1: res.dilated.clone(),
            branch2,
            fuse,
            dropout_rate: 0.0,
        };
        let x = random_input(d, 30, 9);
        let a = dilated_residual_forward(&x, &res, false, &mut r).unwrap();
        let b = dual_dilated_forward(&x, &dual, false, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_outputs() {
        let x = random_input(4, 10, 2);
        let zero = HeadParams::<f64>::zeros(4, 5);
        let (_, probs) = classification_head(&x, &zero).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-12));

        let mut bias_only = HeadParams::<f64>::zeros(4, 2);
        bias_only.proj.bias = vec![2f64.ln(), 0.0];
        let (_, probs) = classification_head(&x, &bias_only).unwrap();
        for t in 0..10 {
            assert!((probs.get(0, t) - 2.0 / 3.0).abs() < 1e-12);
            assert!((probs.get(1, t) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn head_columns_sum_to_one() {
        let mut r = rng();
        let x = random_input(8, 25, 4);
        let head = HeadParams::<f64>::init(8, 6, &mut r);
        let (_, probs) = classification_head(&x, &head).unwrap();
        for t in 0..25 {
            let s: f64 = probs.column(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
