//! Multi-stage model assembly: SS-TCN, MS-TCN, MS-TCN++ and MS-TCN++ with
//! one parameter set shared by all refinement stages.
//!
//! A model is a list of distinct [`Stage`] parameter sets plus a schedule
//! saying which set runs at each pass. Sharing is then just a schedule that
//! repeats an index, and gradients from every pass that uses a set
//! accumulate into the same buffer.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    classification_head, dual_dilations, residual_dilation, DilatedResidualLayerParams,
    DualDilatedLayerParams, HeadParams, Layer, LayerCache,
};
use crate::tensor::{
    channel_softmax_backward, conv1d_backward_into, conv1d_forward, ConvParams, Scalar, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// A single MS-TCN stage.
    #[serde(rename = "sstcn")]
    SsTcn,
    #[serde(rename = "mstcn")]
    MsTcn,
    /// Dual-dilated generation stage followed by residual refinement stages.
    #[serde(rename = "mstcn++")]
    MsTcnPp,
    /// As [`Variant::MsTcnPp`] with all refinement stages sharing parameters.
    #[serde(rename = "mstcn++sh")]
    MsTcnPpShared,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SsTcn => "sstcn",
            Variant::MsTcn => "mstcn",
            Variant::MsTcnPp => "mstcn++",
            Variant::MsTcnPpShared => "mstcn++sh",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sstcn" | "ss-tcn" => Ok(Variant::SsTcn),
            "mstcn" | "ms-tcn" => Ok(Variant::MsTcn),
            "mstcn++" | "mstcnpp" | "ms-tcn++" => Ok(Variant::MsTcnPp),
            "mstcn++sh" | "mstcnpp_shared" | "mstcn++(sh)" => Ok(Variant::MsTcnPpShared),
            other => Err(Error::InvalidConfig(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub num_classes: usize,
    pub filters: usize,
    /// Stage count for MS-TCN.
    pub num_stages: usize,
    /// Refinement stage count for MS-TCN++.
    pub num_refinements: usize,
    pub layers_per_stage: usize,
    pub layers_generation: usize,
    pub layers_refinement: usize,
    pub dropout: f64,
    /// Residual-layer dilation exponents restart after this many layers.
    pub dilation_cycle: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            input_dim,
            num_classes,
            filters: 64,
            num_stages: 4,
            num_refinements: 3,
            layers_per_stage: 10,
            layers_generation: 11,
            layers_refinement: 10,
            dropout: 0.5,
            dilation_cycle: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.input_dim < 1 {
            return bad("input_dim must be at least 1");
        }
        if self.filters < 1 {
            return bad("filters must be at least 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.layers_per_stage < 1 || self.layers_generation < 1 || self.layers_refinement < 1 {
            return bad("layer counts must be at least 1");
        }
        if self.layers_generation > 30 {
            return bad("layers_generation above 30 overflows the dual dilation exponent");
        }
        if self.dilation_cycle < 1 || self.dilation_cycle > 30 {
            return bad("dilation_cycle must be in 1..=30");
        }
        if self.variant == Variant::MsTcn && self.num_stages < 1 {
            return bad("num_stages must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Number of stage passes in a forward run.
    pub fn total_stages(&self) -> usize {
        match self.variant {
            Variant::SsTcn => 1,
            Variant::MsTcn => self.num_stages,
            Variant::MsTcnPp | Variant::MsTcnPpShared => 1 + self.num_refinements,
        }
    }

    /// Which parameter set runs at each pass.
    pub fn schedule(&self) -> Vec<usize> {
        match self.variant {
            Variant::MsTcnPpShared if self.num_refinements > 0 => std::iter::once(0)
                .chain(std::iter::repeat_n(1, self.num_refinements))
                .collect(),
            _ => (0..self.total_stages()).collect(),
        }
    }

    fn stage_layout(&self, set: usize) -> StageLayout {
        let in_dim = if set == 0 { self.input_dim } else { self.num_classes };
        match self.variant {
            Variant::SsTcn | Variant::MsTcn => StageLayout {
                in_dim,
                kind: LayerKind::Residual,
                layers: self.layers_per_stage,
            },
            Variant::MsTcnPp | Variant::MsTcnPpShared if set == 0 => StageLayout {
                in_dim,
                kind: LayerKind::Dual,
                layers: self.layers_generation,
            },
            _ => StageLayout {
                in_dim,
                kind: LayerKind::Residual,
                layers: self.layers_refinement,
            },
        }
    }

    fn num_param_sets(&self) -> usize {
        self.schedule().iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Residual,
    Dual,
}

struct StageLayout {
    in_dim: usize,
    kind: LayerKind,
    layers: usize,
}

/// One single-stage TCN: 1×1 input conv, residual layers, classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<S = f32> {
    pub input: ConvParams<S>,
    pub layers: Vec<Layer<S>>,
    pub head: HeadParams<S>,
}

impl<S: Scalar> Stage<S> {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, layout: &StageLayout, rng: &mut R) -> Self {
        let d = cfg.filters;
        let input = ConvParams::init_uniform(1, layout.in_dim, d, 1, rng);
        let layers = (1..=layout.layers)
            .map(|l| match layout.kind {
                LayerKind::Residual => Layer::Residual(DilatedResidualLayerParams::init(
                    d,
                    residual_dilation(l, cfg.dilation_cycle),
                    cfg.dropout,
                    rng,
                )),
                LayerKind::Dual => Layer::Dual(DualDilatedLayerParams::init(
                    d,
                    l,
                    layout.layers,
                    cfg.dropout,
                    rng,
                )),
            })
            .collect();
        let head = HeadParams::init(d, cfg.num_classes, rng);
        Stage {
            input,
            layers,
            head,
        }
    }

    fn zeros(cfg: &ModelConfig, layout: &StageLayout) -> Self {
        let d = cfg.filters;
        let layers = (1..=layout.layers)
            .map(|l| match layout.kind {
                LayerKind::Residual => Layer::Residual(DilatedResidualLayerParams::zeros(
                    d,
                    residual_dilation(l, cfg.dilation_cycle),
                    cfg.dropout,
                )),
                LayerKind::Dual => Layer::Dual(DualDilatedLayerParams::zeros(
                    d,
                    dual_dilations(l, layout.layers),
                    cfg.dropout,
                )),
            })
            .collect();
        Stage {
            input: ConvParams::zeros(1, layout.in_dim, d, 1),
            layers,
            head: HeadParams::zeros(d, cfg.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Stage {
            input: self.input.zeros_like(),
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            head: HeadParams {
                proj: self.head.proj.zeros_like(),
            },
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.input.num_parameters()
            + self.layers.iter().map(Layer::num_parameters).sum::<usize>()
            + self.head.proj.num_parameters()
    }

    /// Named convolutions in a fixed traversal order.
    pub fn convs(&self) -> Vec<(String, &ConvParams<S>)> {
        let mut out = vec![("input".to_string(), &self.input)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, conv) in layer.convs() {
                out.push((format!("layer{}.{name}", i + 1), conv));
            }
        }
        out.push(("head".to_string(), &self.head.proj));
        out
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<S>> {
        let mut out = vec![&mut self.input];
        for layer in &mut self.layers {
            out.extend(layer.convs_mut());
        }
        out.push(&mut self.head.proj);
        out
    }

    pub fn cast<T: Scalar>(&self) -> Stage<T> {
        Stage {
            input: self.input.cast(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            head: HeadParams {
                proj: self.head.proj.cast(),
            },
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor<S>, Tensor<S>, StageCache<S>)> {
        let mut h = conv1d_forward(input, &self.input)?;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, training, rng)?;
            layer_caches.push(cache);
            h = next;
        }
        let (logits, probs) = classification_head(&h, &self.head)?;
        Ok((
            logits,
            probs,
            StageCache {
                input: input.clone(),
                layers: layer_caches,
                features: h,
            },
        ))
    }

    /// Backpropagates a logit gradient; returns the stage-input gradient.
    pub fn backward(
        &self,
        cache: &StageCache<S>,
        grad_logits: &Tensor<S>,
        grads: &mut Stage<S>,
    ) -> Result<Tensor<S>> {
        let mut g = conv1d_backward_into(&cache.features, &self.head.proj, grad_logits, &mut grads.head.proj)?;
        for ((layer, lc), lg) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = layer.backward(lc, &g, lg)?;
        }
        conv1d_backward_into(&cache.input, &self.input, &g, &mut grads.input)
    }
}

pub struct StageCache<S> {
    input: Tensor<S>,
    layers: Vec<LayerCache<S>>,
    features: Tensor<S>,
}

/// Per-stage probabilities `Y^1 … Y^S` and the logits they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs<S = f32> {
    pub probs: Vec<Tensor<S>>,
    pub logits: Vec<Tensor<S>>,
}

impl<S: Scalar> StageOutputs<S> {
    pub fn final_probs(&self) -> &Tensor<S> {
        self.probs.last().expect("at least one stage")
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Everything a backward pass needs from the forward pass.
pub struct ForwardTrace<S> {
    pub outputs: StageOutputs<S>,
    caches: Vec<StageCache<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S = f32> {
    pub config: ModelConfig,
    /// Distinct parameter sets.
    pub stages: Vec<Stage<S>>,
    /// Parameter-set index for each pass.
    pub schedule: Vec<usize>,
}

/// Gradient buffers mirroring a model's distinct parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<S = f32> {
    pub stages: Vec<Stage<S>>,
}

impl<S: Scalar> ModelGrads<S> {
    pub fn convs(&self) -> Vec<&ConvParams<S>> {
        self.stages
            .iter()
            .flat_map(|s| s.convs().into_iter().map(|(_, c)| c))
            .collect()
    }

    pub fn zero(&mut self) {
        for stage in &mut self.stages {
            for conv in stage.convs_mut() {
                conv.weights.iter_mut().for_each(|w| *w = S::zero());
                conv.bias.iter_mut().for_each(|w| *w = S::zero());
            }
        }
    }
}

pub fn build_model<S: Scalar, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Model<S>> {
    config.validate()?;
    let stages = (0..config.num_param_sets())
        .map(|set| Stage::build(config, &config.stage_layout(set), rng))
        .collect();
    Ok(Model {
        config: config.clone(),
        stages,
        schedule: config.schedule(),
    })
}

impl<S: Scalar> Model<S> {
    /// Model with every weight and bias set to zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let stages = (0..config.num_param_sets())
            .map(|set| Stage::zeros(config, &config.stage_layout(set)))
            .collect();
        Ok(Model {
            config: config.clone(),
            stages,
            schedule: config.schedule(),
        })
    }

    pub fn zero_grads(&self) -> ModelGrads<S> {
        ModelGrads {
            stages: self.stages.iter().map(Stage::zeros_like).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            stages: self.stages.iter().map(Stage::cast).collect(),
            schedule: self.schedule.clone(),
        }
    }

    /// Exact scalar parameter count; shared sets are counted once.
    pub fn count_parameters(&self) -> usize {
        self.stages.iter().map(Stage::num_parameters).sum()
    }

    /// Named convolutions, e.g. `stage1.layer3.dilated`.
    pub fn named_convs(&self) -> Vec<(String, &ConvParams<S>)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (name, conv) in stage.convs() {
                out.push((format!("stage{i}.{name}"), conv));
            }
        }
        out
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<S>> {
        self.stages.iter_mut().flat_map(Stage::convs_mut).collect()
    }

    pub fn forward_trace<R: Rng + ?Sized>(
        &self,
        features: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardTrace<S>> {
        if features.channels() != self.config.input_dim {
            return Err(Error::dim(
                "forward",
                format!("{} feature channels", self.config.input_dim),
                features.channels(),
            ));
        }
        if features.time() == 0 {
            return Err(Error::Empty("feature sequence has no frames"));
        }
        let mut probs = Vec::with_capacity(self.schedule.len());
        let mut logits = Vec::with_capacity(self.schedule.len());
        let mut caches = Vec::with_capacity(self.schedule.len());
        for (pass, &set) in self.schedule.iter().enumerate() {
            let input = if pass == 0 { features } else { &probs[pass - 1] };
            let (z, p, cache) = self.stages[set].forward(input, training, rng)?;
            logits.push(z);
            probs.push(p);
            caches.push(cache);
        }
        Ok(ForwardTrace {
            outputs: StageOutputs { probs, logits },
            caches,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        features: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<StageOutputs<S>> {
        self.forward_trace(features, training, rng).map(|t| t.outputs)
    }

    /// Accumulates parameter gradients for per-pass logit gradients
    /// `grad_logits[s]`. Each stage's input gradient flows back through the
    /// previous stage's softmax.
    pub fn backward(
        &self,
        trace: &ForwardTrace<S>,
        grad_logits: &[Tensor<S>],
        grads: &mut ModelGrads<S>,
    ) -> Result<()> {
        if grad_logits.len() != self.schedule.len() {
            return Err(Error::dim("Model::backward", self.schedule.len(), grad_logits.len()));
        }
        let mut carried: Option<Tensor<S>> = None;
        for pass in (0..self.schedule.len()).rev() {
            let set = self.schedule[pass];
            let mut g = grad_logits[pass].clone();
            if let Some(g_probs) = carried.take() {
                g.add_assign(&channel_softmax_backward(&trace.outputs.probs[pass], &g_probs));
            }
            let g_in = self.stages[set].backward(&trace.caches[pass], &g, &mut grads.stages[set])?;
            if pass > 0 {
                carried = Some(g_in);
            }
        }
        Ok(())
    }

    /// Argmax of the final stage per frame, lowest class index on ties.
    pub fn predict_labels(&self, features: &Tensor<S>) -> Result<Vec<usize>> {
        // evaluation mode draws nothing from the generator
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(features, false, &mut rng)?;
        Ok(argmax_labels(out.final_probs()))
    }
}

/// Per-frame argmax over channels; ties go to the lowest index.
pub fn argmax_labels<S: Scalar>(probs: &Tensor<S>) -> Vec<usize> {
    (0..probs.time())
        .map(|t| {
            let mut best = 0;
            let mut best_v = probs.get(0, t);
            for c in 1..probs.channels() {
                let v = probs.get(c, t);
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Parameter count implied by a config without allocating the model.
pub fn count_parameters_for(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let d = config.filters;
    let conv = |k: usize, i: usize, o: usize| k * i * o + o;
    let mut total = 0;
    for set in 0..config.num_param_sets() {
        let layout = config.stage_layout(set);
        let per_layer = match layout.kind {
            LayerKind::Residual => conv(3, d, d) + conv(1, d, d),
            LayerKind::Dual => 2 * conv(3, d, d) + conv(1, 2 * d, d),
        };
        total += conv(1, layout.in_dim, d) + layout.layers * per_layer + conv(1, d, config.num_classes);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: usize,
    pub kind: String,
    pub dilations: Vec<usize>,
    /// Frames visible to one output of this layer within its stage.
    pub receptive_field: u64,
    pub cumulative_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: usize,
    pub parameter_set: usize,
    pub shared: bool,
    pub input_dim: usize,
    pub rows: Vec<LayerRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchitectureReport {
    pub variant: Variant,
    pub total_parameters: usize,
    pub stages: Vec<StageReport>,
}

/// Per-stage table of layer types, dilations, receptive fields and running
/// parameter totals. Shared passes add no parameters.
pub fn architecture_report(config: &ModelConfig) -> Result<ArchitectureReport> {
    config.validate()?;
    let d = config.filters;
    let conv = |k: usize, i: usize, o: usize| k * i * o + o;
    let schedule = config.schedule();
    let mut seen = vec![false; config.num_param_sets()];
    let mut cumulative = 0usize;
    let mut stages = Vec::new();
    for (pass, &set) in schedule.iter().enumerate() {
        let shared = seen[set];
        seen[set] = true;
        let layout = config.stage_layout(set);
        let add = |n: usize| if shared { 0 } else { n };
        cumulative += add(conv(1, layout.in_dim, d));
        let mut field: u64 = 1;
        let mut rows = Vec::with_capacity(layout.layers);
        for l in 1..=layout.layers {
            let (kind, dilations, params) = match layout.kind {
                LayerKind::Residual => (
                    "dilated-residual",
                    vec![residual_dilation(l, config.dilation_cycle)],
                    conv(3, d, d) + conv(1, d, d),
                ),
                LayerKind::Dual => {
                    let (a, b) = dual_dilations(l, layout.layers);
                    ("dual-dilated", vec![a, b], 2 * conv(3, d, d) + conv(1, 2 * d, d))
                }
            };
            field += 2 * *dilations.iter().max().expect("nonempty") as u64;
            cumulative += add(params);
            rows.push(LayerRow {
                layer: l,
                kind: kind.to_string(),
                dilations,
                receptive_field: field,
                cumulative_params: cumulative,
            });
        }
        cumulative += add(conv(1, d, config.num_classes));
        if let Some(last) = rows.last_mut() {
            last.cumulative_params = cumulative;
        }
        stages.push(StageReport {
            stage: pass + 1,
            parameter_set: set,
            shared,
            input_dim: layout.in_dim,
            rows,
        });
    }
    Ok(ArchitectureReport {
        variant: config.variant,
        total_parameters: cumulative,
        stages,
    })
}

impl ArchitectureReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "architecture {}  parameters {}",
            self.variant.name(),
            group_thousands(self.total_parameters)
        );
        for st in &self.stages {
            let _ = writeln!(
                s,
                "\nstage {} (parameter set {}{}, input dim {})",
                st.stage,
                st.parameter_set,
                if st.shared { ", shared" } else { "" },
                st.input_dim
            );
            let _ = writeln!(
                s,
                "{:>5}  {:<16}  {:>12}  {:>10}  {:>12}",
                "layer", "type", "dilation", "receptive", "cum. params"
            );
            for r in &st.rows {
                let dil = r
                    .dilations
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(
                    s,
                    "{:>5}  {:<16}  {:>12}  {:>10}  {:>12}",
                    r.layer,
                    r.kind,
                    dil,
                    r.receptive_field,
                    group_thousands(r.cumulative_params)
                );
            }
        }
        s
    }

    /// Flat `key = value` document.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = \"{}\"", self.variant.name());
        let _ = writeln!(s, "parameters = {}", self.total_parameters);
        let _ = writeln!(s, "stages = {}", self.stages.len());
        for st in &self.stages {
            let p = format!("stage{}", st.stage);
            let _ = writeln!(s, "{p}.parameter_set = {}", st.parameter_set);
            let _ = writeln!(s, "{p}.shared = {}", st.shared);
            for r in &st.rows {
                let dil = r
                    .dilations
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(s, "{p}.layer{}.type = \"{}\"", r.layer, r.kind);
                let _ = writeln!(s, "{p}.layer{}.dilation = [{dil}]", r.layer);
                let _ = writeln!(s, "{p}.layer{}.receptive_field = {}", r.layer, r.receptive_field);
                let _ = writeln!(s, "{p}.layer{}.cumulative_params = {}", r.layer, r.cumulative_params);
            }
        }
        s
    }
}

pub(crate) fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::receptive_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_dims(variant: Variant) -> ModelConfig {
        ModelConfig::new(variant, 2048, 19)
    }

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig {
            filters: 6,
            layers_per_stage: 4,
            layers_generation: 5,
            layers_refinement: 3,
            ..ModelConfig::new(variant, 5, 3)
        }
    }

    #[test]
    fn closed_form_parameter_counts() {
        // Stage 1: 2048·64+64 input, 10·(3·64·64+64 + 64·64+64) layers, 64·19+19 head.
        let stage1 = 131_136 + 165_120 + 1_235;
        let refinement = 1_280 + 165_120 + 1_235;
        assert_eq!(stage1 + 3 * refinement, 800_396);
        let generation = 131_136 + 11 * (2 * 12_352 + 8_256) + 1_235;
        assert_eq!(generation, 494_931);
        assert_eq!(generation + 3 * refinement, 997_836);
        assert_eq!(generation + refinement, 662_566);

        assert_eq!(count_parameters_for(&paper_dims(Variant::MsTcn)).unwrap(), 800_396);
        assert_eq!(count_parameters_for(&paper_dims(Variant::MsTcnPp)).unwrap(), 997_836);
        assert_eq!(
            count_parameters_for(&paper_dims(Variant::MsTcnPpShared)).unwrap(),
            662_566
        );
    }

    #[test]
    fn built_models_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for v in [Variant::SsTcn, Variant::MsTcn, Variant::MsTcnPp, Variant::MsTcnPpShared] {
            let m: Model<f32> = build_model(&paper_dims(v), &mut rng).unwrap();
            assert_eq!(m.count_parameters(), count_parameters_for(&m.config).unwrap(), "{v:?}");
        }
    }

    #[test]
    fn shared_variant_has_one_refinement_set() {
        let m: Model<f32> =
            build_model(&small(Variant::MsTcnPpShared), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.stages.len(), 2);
        assert_eq!(m.schedule, vec![0, 1, 1, 1]);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::new(Variant::MsTcn, 32, 8);
        let a: Model<f32> = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b: Model<f32> = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(Variant::MsTcn);
        cfg.num_classes = 1;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = small(Variant::MsTcn);
        cfg.filters = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small(Variant::MsTcnPp);
        cfg.layers_refinement = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_inputs_are_probabilities() {
        let m: Model<f32> =
            build_model(&small(Variant::MsTcnPp), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.stages[0].input.in_channels, 5);
        for s in &m.stages[1..] {
            assert_eq!(s.input.in_channels, 3);
        }
    }

    #[test]
    fn forward_shapes_and_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in [Variant::SsTcn, Variant::MsTcn, Variant::MsTcnPp, Variant::MsTcnPpShared] {
            let cfg = small(v);
            let m: Model<f64> = build_model(&cfg, &mut rng).unwrap();
            for t in [1, 2, 17] {
                let x = Tensor::filled(5, t, 0.3);
                let out = m.forward(&x, true, &mut rng).unwrap();
                assert_eq!(out.len(), cfg.total_stages());
                for p in &out.probs {
                    assert_eq!(p.shape(), (3, t));
                    for step in 0..t {
                        let col = p.column(step);
                        assert!(col.iter().all(|&x| x >= 0.0));
                        assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::<f64>::zeros(&small(Variant::MsTcn)).unwrap();
        let x = Tensor::filled(5, 9, 1.0);
        let out = m.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in &out.probs {
            assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
        assert_eq!(m.predict_labels(&x).unwrap(), vec![0; 9]);
    }

    #[test]
    fn forward_matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Model<f64> = build_model(&small(Variant::MsTcn), &mut rng).unwrap();
        let x = Tensor::from_vec(5, 32, (0..160).map(|i| ((i * 37) % 11) as f64 / 11.0).collect())
            .unwrap();
        let out = m.forward(&x, false, &mut rng).unwrap();
        let mut input = x.clone();
        for (s, stage) in m.stages.iter().enumerate() {
            let mut h = conv1d_forward(&input, &stage.input).unwrap();
            for layer in &stage.layers {
                let Layer::Residual(p) = layer else { panic!() };
                h = crate::layers::dilated_residual_forward(&h, p, false, &mut rng).unwrap();
            }
            let (_, probs) = classification_head(&h, &stage.head).unwrap();
            assert_eq!(probs, out.probs[s]);
            input = probs;
        }
    }

    #[test]
    fn shared_equals_unshared_with_copied_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shared: Model<f64> = build_model(&small(Variant::MsTcnPpShared), &mut rng).unwrap();
        let mut unshared: Model<f64> = build_model(&small(Variant::MsTcnPp), &mut rng).unwrap();
        unshared.stages[0] = shared.stages[0].clone();
        for s in 1..unshared.stages.len() {
            unshared.stages[s] = shared.stages[1].clone();
        }
        let x = Tensor::filled(5, 20, 0.7);
        let a = shared.forward(&x, false, &mut rng).unwrap();
        let b = unshared.forward(&x, false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = Tensor::from_rows(&[vec![0.1f64, 0.5], vec![0.7, 0.5], vec![0.2, 0.0]]).unwrap();
        assert_eq!(argmax_labels(&p), vec![1, 0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = Model::<f32>::zeros(&small(Variant::MsTcn)).unwrap();
        let err = m.forward(&Tensor::zeros(4, 3), false, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn report_dilations_and_fields() {
        let r = architecture_report(&ModelConfig::new(Variant::MsTcn, 2048, 19)).unwrap();
        assert_eq!(r.total_parameters, 800_396);
        assert_eq!(r.stages.len(), 4);
        for st in &r.stages {
            assert_eq!(st.rows.len(), 10);
            let dil: Vec<_> = st.rows.iter().map(|r| r.dilations[0]).collect();
            assert_eq!(dil, vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512]);
            for row in &st.rows {
                assert_eq!(row.receptive_field, receptive_field(row.layer).unwrap());
            }
        }
        assert_eq!(r.stages[0].rows[9].receptive_field, 2047);
        assert_eq!(r.stages[3].rows[9].cumulative_params, 800_396);

        let pp = architecture_report(&ModelConfig::new(Variant::MsTcnPp, 2048, 19)).unwrap();
        let gen = &pp.stages[0];
        assert_eq!(gen.rows.len(), 11);
        for row in &gen.rows {
            assert_eq!(row.dilations, vec![1 << (row.layer - 1), 1 << (11 - row.layer)]);
        }
        let sh = architecture_report(&ModelConfig::new(Variant::MsTcnPpShared, 2048, 19)).unwrap();
        assert_eq!(sh.total_parameters, 662_566);
        assert!(sh.stages[2].shared && sh.stages[3].shared && !sh.stages[1].shared);
    }

    #[test]
    fn deep_single_stage_cycles_dilations() {
        let cfg = ModelConfig {
            layers_per_stage: 48,
            ..ModelConfig::new(Variant::SsTcn, 2048, 19)
        };
        let r = architecture_report(&cfg).unwrap();
        let dil: Vec<_> = r.stages[0].rows.iter().map(|r| r.dilations[0]).collect();
        assert_eq!(dil[9], 512);
        assert_eq!(dil[10], 1);
        assert_eq!(dil[47], 128);
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(800_396), "800,396");
        assert_eq!(group_thousands(12), "12");
        assert_eq!(group_thousands(1_000), "1,000");
    }
}
