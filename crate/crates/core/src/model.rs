//! Feature extractor, generator and domain discriminator.
//!
//! Layer schedules:
//!
//! | network | layer | in → out | kernel / stride | activation |
//! |---|---|---|---|---|
//! | feature | conv1 | 30×20×4 → 15×10×8 | 3×3 / 2 | ReLU |
//! | feature | conv2 | 15×10×8 → 15×10×8 | 1×1 / 1 | ReLU |
//! | feature | conv3 | 15×10×8 → 8×5×32 | 3×3 / 2 | ReLU |
//! | feature | conv4 | 8×5×32 → 8×5×32 | 1×1 / 1 | ReLU |
//! | feature | conv5 | 8×5×32 → 4×3×128 | 3×3 / 2 | ReLU |
//! | feature | conv6 | 4×3×128 → 4×3×128 | 1×1 / 1 | ReLU |
//! | feature | SE | 4×3×128 → 4×3×128 | | |
//! | generator | fc | 1536 → 8×10×128 | | ReLU |
//! | generator | conv1..7 | see [`GENERATOR_LAYERS`] | stride 1 | LReLU, sigmoid after conv7 |
//! | discriminator | fc1..4 | 1536 → 1024 → 1024 → 128 → K | | LReLU, softmax |
//!
//! Generator layers whose input and output spatial sizes differ upsample
//! with nearest-neighbour interpolation before convolving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::tensor::{fmt_shape, Real, Tensor};

pub const CSI_SHAPE: [usize; 3] = [30, 20, 4];
pub const FEATURE_SHAPE: [usize; 3] = [4, 3, 128];
pub const FEATURE_LEN: usize = 4 * 3 * 128;
pub const IMAGE_SHAPE: [usize; 3] = [120, 160, 1];
pub const IMAGE_PIXELS: usize = 120 * 160;

/// One convolution row: kernel size, stride, output spatial size, output
/// channels.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub out_hw: (usize, usize),
    pub out_channels: usize,
}

const fn conv(kernel: usize, stride: usize, out_hw: (usize, usize), out_channels: usize) -> ConvLayer {
    ConvLayer {
        kernel,
        stride,
        out_hw,
        out_channels,
    }
}

pub const FEATURE_LAYERS: [ConvLayer; 6] = [
    conv(3, 2, (15, 10), 8),
    conv(1, 1, (15, 10), 8),
    conv(3, 2, (8, 5), 32),
    conv(1, 1, (8, 5), 32),
    conv(3, 2, (4, 3), 128),
    conv(1, 1, (4, 3), 128),
];

/// Spatial size the generator's fully connected layer reshapes to.
pub const GENERATOR_SEED_SHAPE: [usize; 3] = [8, 10, 128];

pub const GENERATOR_LAYERS: [ConvLayer; 7] = [
    conv(1, 1, (15, 20), 64),
    conv(1, 1, (15, 20), 64),
    conv(3, 1, (30, 40), 32),
    conv(3, 1, (30, 40), 32),
    conv(3, 1, (60, 80), 8),
    conv(3, 1, (60, 80), 8),
    conv(3, 1, (120, 160), 1),
];

pub const DISCRIMINATOR_HIDDEN: [usize; 3] = [1024, 1024, 128];

/// Hyperparameters that shape the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of source domains the discriminator separates.
    pub domains: usize,
    /// Squeeze-and-excitation reduction ratio.
    pub se_ratio: usize,
    /// Negative slope of the generator and discriminator leaky ReLUs.
    pub lrelu_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            domains: 4,
            se_ratio: 16,
            lrelu_alpha: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let channels = FEATURE_SHAPE[2];
        if self.se_ratio == 0 || !channels.is_multiple_of(self.se_ratio) {
            return Err(Error::Config(format!(
                "SE ratio {} must divide {channels}",
                self.se_ratio
            )));
        }
        if self.domains < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {}", self.domains)));
        }
        if !(self.lrelu_alpha > 0.0 && self.lrelu_alpha < 1.0) {
            return Err(Error::Config(format!("LReLU slope {} outside (0,1)", self.lrelu_alpha)));
        }
        Ok(())
    }

    fn lrelu(&self) -> Activation {
        Activation::LeakyRelu(self.lrelu_alpha)
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// An ordered set of parameters owned by one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    fn push(&mut self, name: String, value: Tensor<T>) {
        self.params.push(Param { name, value });
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Registers every tensor as a borrowed trainable leaf.
    pub fn register<'a>(&'a self, graph: &mut Graph<'a, T>) -> Vec<NodeId> {
        self.params.iter().map(|p| graph.param(&p.value)).collect()
    }
}

/// Parameters of all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub feature: ParamSet<T>,
    pub generator: ParamSet<T>,
    pub discriminator: ParamSet<T>,
}

/// Which network a parameter belongs to, by name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Feature,
    Generator,
    Discriminator,
}

impl Network {
    pub const ALL: [Network; 3] = [Network::Feature, Network::Generator, Network::Discriminator];

    pub fn prefix(self) -> &'static str {
        match self {
            Network::Feature => "feature",
            Network::Generator => "generator",
            Network::Discriminator => "discriminator",
        }
    }
}

/// Expected `(name, shape)` of every parameter, in storage order.
pub fn param_layout(config: &ModelConfig) -> Vec<(Network, String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut cin = CSI_SHAPE[2];
    for (i, l) in FEATURE_LAYERS.iter().enumerate() {
        let name = format!("feature.conv{}", i + 1);
        out.push((
            Network::Feature,
            format!("{name}.kernel"),
            vec![l.kernel, l.kernel, cin, l.out_channels],
        ));
        out.push((Network::Feature, format!("{name}.bias"), vec![l.out_channels]));
        cin = l.out_channels;
    }
    let c = FEATURE_SHAPE[2];
    let hidden = c / config.se_ratio;
    out.push((Network::Feature, "feature.se.squeeze.weights".into(), vec![c, hidden]));
    out.push((Network::Feature, "feature.se.squeeze.bias".into(), vec![hidden]));
    out.push((Network::Feature, "feature.se.expand.weights".into(), vec![hidden, c]));
    out.push((Network::Feature, "feature.se.expand.bias".into(), vec![c]));

    let seed_len: usize = GENERATOR_SEED_SHAPE.iter().product();
    out.push((
        Network::Generator,
        "generator.fc.weights".into(),
        vec![FEATURE_LEN, seed_len],
    ));
    out.push((Network::Generator, "generator.fc.bias".into(), vec![seed_len]));
    let mut cin = GENERATOR_SEED_SHAPE[2];
    for (i, l) in GENERATOR_LAYERS.iter().enumerate() {
        let name = format!("generator.conv{}", i + 1);
        out.push((
            Network::Generator,
            format!("{name}.kernel"),
            vec![l.kernel, l.kernel, cin, l.out_channels],
        ));
        out.push((Network::Generator, format!("{name}.bias"), vec![l.out_channels]));
        cin = l.out_channels;
    }

    let mut n = FEATURE_LEN;
    let widths = DISCRIMINATOR_HIDDEN.iter().copied().chain([config.domains]);
    for (i, m) in widths.enumerate() {
        let name = format!("discriminator.fc{}", i + 1);
        out.push((Network::Discriminator, format!("{name}.weights"), vec![n, m]));
        out.push((Network::Discriminator, format!("{name}.bias"), vec![m]));
        n = m;
    }
    out
}

/// Gain of the initializer's variance for a weight tensor: 2 for layers
/// feeding (leaky) ReLUs, 1 for layers feeding a sigmoid or softmax.
fn init_gain(name: &str) -> f64 {
    let last_disc = format!("discriminator.fc{}.weights", DISCRIMINATOR_HIDDEN.len() + 1);
    let last_gen = format!("generator.conv{}.kernel", GENERATOR_LAYERS.len());
    if name == last_disc || name == last_gen || name == "feature.se.expand.weights" {
        1.0
    } else {
        2.0
    }
}

fn fan_in(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

impl<T: Real> ModelParams<T> {
    /// Zero-mean Gaussian weights with variance `gain/fan_in`, zero biases.
    /// Deterministic per seed.
    pub fn init(seed: u64, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |name, shape| {
            if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let std = (init_gain(name) / fan_in(shape) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| T::from_f64(normal.sample(&mut rng)))
            }
        }))
    }

    /// All-zero parameters.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, |_, shape| Tensor::zeros(shape)))
    }

    fn build(config: &ModelConfig, mut make: impl FnMut(&str, &[usize]) -> Tensor<T>) -> Self {
        let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
        for (net, name, shape) in param_layout(config) {
            let t = make(&name, &shape);
            sets[net as usize].push(name, t);
        }
        let [feature, generator, discriminator] = sets;
        ModelParams {
            config: config.clone(),
            feature,
            generator,
            discriminator,
        }
    }

    /// Rebuilds parameters from named tensors, checking every name and shape
    /// against the layout for `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(config);
        if named.len() != layout.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
        for ((net, name, shape), (got_name, t)) in layout.into_iter().zip(named) {
            if name != got_name {
                return Err(Error::Format(format!("expected parameter {name}, found {got_name}")));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(name, fmt_shape(&shape), fmt_shape(t.shape())));
            }
            sets[net as usize].push(name, t);
        }
        let [feature, generator, discriminator] = sets;
        Ok(ModelParams {
            config: config.clone(),
            feature,
            generator,
            discriminator,
        })
    }

    pub fn set(&self, net: Network) -> &ParamSet<T> {
        match net {
            Network::Feature => &self.feature,
            Network::Generator => &self.generator,
            Network::Discriminator => &self.discriminator,
        }
    }

    pub fn set_mut(&mut self, net: Network) -> &mut ParamSet<T> {
        match net {
            Network::Feature => &mut self.feature,
            Network::Generator => &mut self.generator,
            Network::Discriminator => &mut self.discriminator,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.feature
            .iter()
            .chain(self.generator.iter())
            .chain(self.discriminator.iter())
    }

    pub fn scalar_count(&self) -> usize {
        self.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            feature: self.feature.cast(),
            generator: self.generator.cast(),
            discriminator: self.discriminator.cast(),
        }
    }
}

/// Graph node ids of each network's parameters, in [`ParamSet`] order.
pub struct ParamNodes {
    pub feature: Vec<NodeId>,
    pub generator: Vec<NodeId>,
    pub discriminator: Vec<NodeId>,
}

impl ParamNodes {
    pub fn register<'a, T: Real>(graph: &mut Graph<'a, T>, params: &'a ModelParams<T>) -> Self {
        ParamNodes {
            feature: params.feature.register(graph),
            generator: params.generator.register(graph),
            discriminator: params.discriminator.register(graph),
        }
    }

    pub fn get(&self, net: Network) -> &[NodeId] {
        match net {
            Network::Feature => &self.feature,
            Network::Generator => &self.generator,
            Network::Discriminator => &self.discriminator,
        }
    }
}

/// Optional record of `(layer name, per-sample output shape)` pairs.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

fn trace<T: Real>(graph: &Graph<'_, T>, trace: &mut Option<&mut ShapeTrace>, name: &str, node: NodeId) {
    if let Some(t) = trace {
        t.push((name.to_string(), graph.value(node).shape()[1..].to_vec()));
    }
}

fn check_batch_shape<T: Real>(what: &str, t: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if t.rank() != expected.len() + 1 || &t.shape()[1..] != expected {
        return Err(Error::shape(
            what,
            format!("N×{}", fmt_shape(expected)),
            fmt_shape(t.shape()),
        ));
    }
    Ok(())
}

/// Squeeze-and-excitation: gates each channel of `u` by
/// `sigmoid(expand(relu(squeeze(mean(u)))))`.
pub fn se_block<T: Real>(graph: &mut Graph<'_, T>, u: NodeId, se: &[NodeId]) -> Result<NodeId> {
    let pooled = graph.global_avg_pool(u)?;
    let squeezed = graph.dense(pooled, se[0], se[1])?;
    let squeezed = graph.activation(squeezed, Activation::Relu);
    let gate = graph.dense(squeezed, se[2], se[3])?;
    let gate = graph.activation(gate, Activation::Sigmoid);
    graph.scale_channels(u, gate)
}

/// `N×30×20×4 -> N×4×3×128`.
pub fn feature_extractor<T: Real>(
    graph: &mut Graph<'_, T>,
    x: NodeId,
    nodes: &[NodeId],
    mut shapes: Option<&mut ShapeTrace>,
) -> Result<NodeId> {
    check_batch_shape("feature extractor input", graph.value(x), &CSI_SHAPE)?;
    let mut h = x;
    for (i, l) in FEATURE_LAYERS.iter().enumerate() {
        h = graph.conv2d(h, nodes[2 * i], nodes[2 * i + 1], (l.stride, l.stride))?;
        h = graph.activation(h, Activation::Relu);
        trace(graph, &mut shapes, &format!("feature.conv{}", i + 1), h);
    }
    let z = se_block(graph, h, &nodes[2 * FEATURE_LAYERS.len()..])?;
    trace(graph, &mut shapes, "feature.se", z);
    Ok(z)
}

/// `N×4×3×128 -> N×120×160×1`, values in (0, 1).
pub fn generator<T: Real>(
    graph: &mut Graph<'_, T>,
    z: NodeId,
    nodes: &[NodeId],
    config: &ModelConfig,
    mut shapes: Option<&mut ShapeTrace>,
) -> Result<NodeId> {
    check_batch_shape("generator input", graph.value(z), &FEATURE_SHAPE)?;
    let n = graph.value(z).shape()[0];
    let mut h = graph.dense(z, nodes[0], nodes[1])?;
    h = graph.activation(h, Activation::Relu);
    h = graph.reshape(
        h,
        &[
            n,
            GENERATOR_SEED_SHAPE[0],
            GENERATOR_SEED_SHAPE[1],
            GENERATOR_SEED_SHAPE[2],
        ],
    )?;
    trace(graph, &mut shapes, "generator.fc", h);
    let last = GENERATOR_LAYERS.len() - 1;
    for (i, l) in GENERATOR_LAYERS.iter().enumerate() {
        let s = graph.value(h).shape();
        if (s[1], s[2]) != l.out_hw {
            h = graph.resize_nearest(h, l.out_hw)?;
        }
        h = graph.conv2d(h, nodes[2 + 2 * i], nodes[3 + 2 * i], (l.stride, l.stride))?;
        h = if i == last {
            graph.activation(h, Activation::Sigmoid)
        } else {
            graph.activation(h, config.lrelu())
        };
        trace(graph, &mut shapes, &format!("generator.conv{}", i + 1), h);
    }
    Ok(h)
}

/// `N×4×3×128 -> N×K` domain probabilities.
pub fn discriminator<T: Real>(
    graph: &mut Graph<'_, T>,
    z: NodeId,
    nodes: &[NodeId],
    config: &ModelConfig,
    mut shapes: Option<&mut ShapeTrace>,
) -> Result<NodeId> {
    check_batch_shape("discriminator input", graph.value(z), &FEATURE_SHAPE)?;
    let mut h = z;
    let layers = DISCRIMINATOR_HIDDEN.len() + 1;
    for i in 0..layers {
        h = graph.dense(h, nodes[2 * i], nodes[2 * i + 1])?;
        h = if i + 1 == layers {
            graph.softmax(h)
        } else {
            graph.activation(h, config.lrelu())
        };
        trace(graph, &mut shapes, &format!("discriminator.fc{}", i + 1), h);
    }
    Ok(h)
}

/// Node ids produced by a full forward pass.
pub struct Forward {
    pub params: ParamNodes,
    pub x: NodeId,
    pub z: NodeId,
    pub y: NodeId,
    pub d: NodeId,
}

/// Runs all three networks on a batch `x` of CSI images.
pub fn forward<'a, T: Real>(
    graph: &mut Graph<'a, T>,
    params: &'a ModelParams<T>,
    x: Tensor<T>,
    mut shapes: Option<&mut ShapeTrace>,
) -> Result<Forward> {
    check_batch_shape("feature extractor input", &x, &CSI_SHAPE)?;
    let nodes = ParamNodes::register(graph, params);
    let x = graph.input(x);
    let z = feature_extractor(graph, x, &nodes.feature, shapes.as_deref_mut())?;
    let y = generator(graph, z, &nodes.generator, &params.config, shapes.as_deref_mut())?;
    let d = discriminator(graph, z, &nodes.discriminator, &params.config, shapes)?;
    Ok(Forward {
        params: nodes,
        x,
        z,
        y,
        d,
    })
}

/// Adds a batch axis to a single sample if it lacks one.
fn batched<T: Real>(t: &Tensor<T>, sample: &[usize]) -> Tensor<T> {
    if t.shape() == sample {
        let mut shape = vec![1];
        shape.extend_from_slice(sample);
        t.clone().reshape(&shape).expect("same element count")
    } else {
        t.clone()
    }
}

fn unbatched<T: Real>(t: Tensor<T>, was_single: bool) -> Tensor<T> {
    if was_single {
        let shape = t.shape()[1..].to_vec();
        t.reshape(&shape).expect("leading axis is 1")
    } else {
        t
    }
}

/// Inference-only feature extraction for one sample (`30×20×4`) or a batch.
pub fn extract_features<T: Real>(x: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let single = x.shape() == CSI_SHAPE;
    let mut g = Graph::new();
    let nodes = params.feature.register(&mut g);
    let xid = g.input(batched(x, &CSI_SHAPE));
    let z = feature_extractor(&mut g, xid, &nodes, None)?;
    Ok(unbatched(g.value(z).clone(), single))
}

/// Inference-only skeleton construction from features.
pub fn generate<T: Real>(z: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let single = z.shape() == FEATURE_SHAPE;
    let mut g = Graph::new();
    let nodes = params.generator.register(&mut g);
    let zid = g.input(batched(z, &FEATURE_SHAPE));
    let y = generator(&mut g, zid, &nodes, &params.config, None)?;
    Ok(unbatched(g.value(y).clone(), single))
}

/// Inference-only domain probabilities from features.
pub fn discriminate<T: Real>(z: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let single = z.shape() == FEATURE_SHAPE;
    let mut g = Graph::new();
    let nodes = params.discriminator.register(&mut g);
    let zid = g.input(batched(z, &FEATURE_SHAPE));
    let d = discriminator(&mut g, zid, &nodes, &params.config, None)?;
    Ok(unbatched(g.value(d).clone(), single))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_shapes(config: &ModelConfig) -> ShapeTrace {
        let params = ModelParams::<f32>::zeros(config).unwrap();
        let mut g = Graph::new();
        let mut trace = ShapeTrace::new();
        forward(&mut g, &params, Tensor::zeros(&[2, 30, 20, 4]), Some(&mut trace)).unwrap();
        trace
    }

    #[test]
    fn every_layer_has_its_tabulated_shape() {
        let expected: Vec<(&str, Vec<usize>)> = vec![
            ("feature.conv1", vec![15, 10, 8]),
            ("feature.conv2", vec![15, 10, 8]),
            ("feature.conv3", vec![8, 5, 32]),
            ("feature.conv4", vec![8, 5, 32]),
            ("feature.conv5", vec![4, 3, 128]),
            ("feature.conv6", vec![4, 3, 128]),
            ("feature.se", vec![4, 3, 128]),
            ("generator.fc", vec![8, 10, 128]),
            ("generator.conv1", vec![15, 20, 64]),
            ("generator.conv2", vec![15, 20, 64]),
            ("generator.conv3", vec![30, 40, 32]),
            ("generator.conv4", vec![30, 40, 32]),
            ("generator.conv5", vec![60, 80, 8]),
            ("generator.conv6", vec![60, 80, 8]),
            ("generator.conv7", vec![120, 160, 1]),
            ("discriminator.fc1", vec![1024]),
            ("discriminator.fc2", vec![1024]),
            ("discriminator.fc3", vec![128]),
            ("discriminator.fc4", vec![4]),
        ];
        let got = trace_shapes(&ModelConfig::default());
        let got: Vec<(&str, Vec<usize>)> = got.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn domain_count_sets_discriminator_width() {
        let config = ModelConfig {
            domains: 7,
            ..ModelConfig::default()
        };
        assert_eq!(trace_shapes(&config).last().unwrap().1, [7]);
    }

    #[test]
    fn zero_parameters_give_neutral_outputs() {
        let params = ModelParams::<f64>::zeros(&ModelConfig::default()).unwrap();
        let x = Tensor::from_fn(&[30, 20, 4], |i| (i % 11) as f64 - 5.0);
        let z = extract_features(&x, &params).unwrap();
        assert_eq!(z.shape(), FEATURE_SHAPE);
        let y = generate(&z, &params).unwrap();
        assert_eq!(y.shape(), IMAGE_SHAPE);
        assert!(y.data().iter().all(|&v| v == 0.5));
        let d = discriminate(&z, &params).unwrap();
        assert_eq!(d.shape(), [4]);
        assert!(d.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn se_gate_scales_channels() {
        let config = ModelConfig::default();
        let mut params = ModelParams::<f64>::zeros(&config).unwrap();
        let u = Tensor::from_fn(&[1, 4, 3, 128], |i| 1.0 + (i % 5) as f64);
        let run = |params: &ModelParams<f64>| {
            let mut g = Graph::new();
            let nodes = params.feature.register(&mut g);
            let uid = g.input(u.clone());
            let out = se_block(&mut g, uid, &nodes[2 * FEATURE_LAYERS.len()..]).unwrap();
            g.value(out).clone()
        };
        let half = run(&params);
        for (o, i) in half.data().iter().zip(u.data()) {
            assert!((o - 0.5 * i).abs() < 1e-12);
        }
        let bias = params
            .feature
            .iter_mut()
            .find(|p| p.name == "feature.se.expand.bias")
            .unwrap();
        bias.value = Tensor::full(bias.value.shape(), 50.0);
        let open = run(&params);
        for (o, i) in open.data().iter().zip(u.data()) {
            assert!((o - i).abs() < 1e-12 * i.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let params = ModelParams::<f32>::zeros(&ModelConfig::default()).unwrap();
        let err = extract_features(&Tensor::zeros(&[2, 20, 30, 4]), &params).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("N×30×20×4") && msg.contains("2×20×30×4"), "{msg}");
    }

    #[test]
    fn init_is_seeded_with_fan_in_variance() {
        let config = ModelConfig::default();
        let a = ModelParams::<f64>::init(3, &config).unwrap();
        assert_eq!(a, ModelParams::init(3, &config).unwrap());
        assert_ne!(a, ModelParams::init(4, &config).unwrap());
        for name in [
            "generator.fc.weights",
            "discriminator.fc1.weights",
            "generator.conv3.kernel",
        ] {
            let w = a.iter().find(|p| p.name == name).unwrap();
            let fan: usize = w.value.shape()[..w.value.rank() - 1].iter().product();
            let n = w.value.len() as f64;
            let mean = w.value.data().iter().sum::<f64>() / n;
            let var = w.value.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let expected = 2.0 / fan as f64;
            assert!((var / expected - 1.0).abs() < 0.2, "{name}: {var} vs {expected}");
        }
        assert!(a
            .iter()
            .filter(|p| p.name.ends_with(".bias"))
            .all(|p| p.value.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn named_round_trip_and_mismatch() {
        let config = ModelConfig::default();
        let p = ModelParams::<f32>::init(1, &config).unwrap();
        let named: Vec<_> = p.iter().map(|q| (q.name.clone(), q.value.clone())).collect();
        assert_eq!(ModelParams::from_named(&config, named.clone()).unwrap(), p);
        let mut bad = named;
        bad[0].1 = Tensor::zeros(&[3, 3, 4, 9]);
        let err = ModelParams::from_named(&config, bad).unwrap_err().to_string();
        assert!(err.contains("feature.conv1.kernel"), "{err}");
    }
}
