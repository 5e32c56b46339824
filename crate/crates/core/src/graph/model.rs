//! A [`ModelSpec`] bound to named weights.
//!
//! Weight names are `<network>.<layer_index>.<role>`. A layer's body conv
//! and (for HC/GH) gate conv each store one of
//!
//! * `body_w` / `gate_w`: plain kernel `[C_out, C_in, K]`
//! * `body_v` + `body_g` / `gate_v` + `gate_g`: weight-normalized direction and scale
//! * `body_dw` + `body_pw` / `gate_dw` + `gate_pw`: depthwise `[C_in, K]` and pointwise `[C_out, C_in]`
//!
//! plus a bias `body_b` / `gate_b`. Embedding layers store `embedding`.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{read_container, write_container, Container};
use crate::error::{Error, Result};
use crate::gating::GatedConvLayer;
use crate::graph::spec::{Activation, LayerKind, LayerSpec, ModelSpec, Network};
use crate::nn::{weight_norm_apply, ConvKernel, ConvWeights, SeparableWeights, WeightNormParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConvPart {
    Body,
    Gate,
}

impl ConvPart {
    pub fn prefix(self) -> &'static str {
        match self {
            ConvPart::Body => "body",
            ConvPart::Gate => "gate",
        }
    }
}

pub fn weight_name(net: Network, index: usize, role: &str) -> String {
    format!("{}.{index}.{role}", net.name())
}

pub fn conv_role(part: ConvPart, suffix: &str) -> String {
    format!("{}_{suffix}", part.prefix())
}

/// `(C_out, C_in, K)` of one conv of a layer.
pub fn conv_dims(layer: &LayerSpec, part: ConvPart) -> (usize, usize, usize) {
    let out = match part {
        ConvPart::Body => layer.out_ch,
        ConvPart::Gate => layer.gate_channels().expect("layer has no gate"),
    };
    (out, layer.in_ch, layer.kernel)
}

pub fn conv_parts(layer: &LayerSpec) -> &'static [ConvPart] {
    match layer.kind {
        LayerKind::Embedding => &[],
        k if k.has_gate() => &[ConvPart::Body, ConvPart::Gate],
        _ => &[ConvPart::Body],
    }
}

/// Expected `(role, shape)` pairs of a layer.
pub fn expected_weights(spec: &ModelSpec, layer: &LayerSpec) -> Vec<(String, Vec<usize>)> {
    if layer.kind == LayerKind::Embedding {
        return vec![("embedding".into(), vec![spec.vocab, layer.out_ch])];
    }
    let mut out = Vec::new();
    for &part in conv_parts(layer) {
        let (co, ci, k) = conv_dims(layer, part);
        if layer.separable {
            out.push((conv_role(part, "dw"), vec![ci, k]));
            out.push((conv_role(part, "pw"), vec![co, ci]));
        } else if layer.weight_norm {
            out.push((conv_role(part, "v"), vec![co, ci, k]));
            out.push((conv_role(part, "g"), vec![co]));
        } else {
            out.push((conv_role(part, "w"), vec![co, ci, k]));
        }
        out.push((conv_role(part, "b"), vec![co]));
    }
    out
}

/// Deterministic uniform sampler over ChaCha8 seeded from a `u64`.
///
/// Each draw takes the top 53 bits of one `next_u64` as a fraction in
/// `[0, 1)` and maps it affinely onto `[-s, s)`.
pub struct UniformInit {
    rng: ChaCha8Rng,
}

impl UniformInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn symmetric(&mut self, s: f64) -> f64 {
        s * (2.0 * self.unit() - 1.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n - 1)
    }

    pub fn tensor<T: Scalar>(&mut self, shape: &[usize], s: f64) -> Tensor<T> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = T::lit(self.symmetric(s));
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    weights: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, weights: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let m = Self { spec, weights };
        m.validate()?;
        Ok(m)
    }

    /// Seeded random weights: every conv tensor and bias is drawn from
    /// `uniform(-s, s)` with `s = 1/sqrt(C_in*K)`; weight-norm scales are
    /// set to the direction norms so the effective kernel equals `v`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = UniformInit::new(seed);
        let mut weights = BTreeMap::new();
        for net in Network::ALL {
            for (i, layer) in spec.layers(net).iter().enumerate() {
                if layer.kind == LayerKind::Embedding {
                    weights.insert(
                        weight_name(net, i, "embedding"),
                        rng.tensor(&[spec.vocab, layer.out_ch], 1.0),
                    );
                    continue;
                }
                for &part in conv_parts(layer) {
                    let (co, ci, k) = conv_dims(layer, part);
                    let s = 1.0 / ((ci * k) as f64).sqrt();
                    let name = |suffix: &str| weight_name(net, i, &conv_role(part, suffix));
                    if layer.separable {
                        weights.insert(name("dw"), rng.tensor(&[ci, k], 1.0 / (k as f64).sqrt()));
                        weights.insert(name("pw"), rng.tensor(&[co, ci], 1.0 / (ci as f64).sqrt()));
                    } else if layer.weight_norm {
                        let v: Tensor<T> = rng.tensor(&[co, ci, k], s);
                        let g = (0..co)
                            .map(|c| v.row(c).iter().map(|&x| x * x).sum::<T>().sqrt())
                            .collect();
                        weights.insert(name("g"), Tensor::new(vec![co], g)?);
                        weights.insert(name("v"), v);
                    } else {
                        weights.insert(name("w"), rng.tensor(&[co, ci, k], s));
                    }
                    weights.insert(name("b"), rng.tensor(&[co], s));
                }
            }
        }
        Self::new(spec, weights)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelSpec, BTreeMap<String, Tensor<T>>) {
        (self.spec, self.weights)
    }

    pub fn weight(&self, name: &str) -> Result<&Tensor<T>> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Checks the spec and that exactly the expected tensors are present
    /// with spec-consistent shapes.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let mut expected = 0usize;
        for net in Network::ALL {
            for (i, layer) in self.spec.layers(net).iter().enumerate() {
                for (role, shape) in expected_weights(&self.spec, layer) {
                    let name = weight_name(net, i, &role);
                    let t = self.weight(&name)?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "{name}: expected {shape:?}, found {:?}",
                            t.shape()
                        )));
                    }
                    expected += 1;
                }
            }
        }
        if expected != self.weights.len() {
            let unexpected: Vec<&String> = self
                .weights
                .keys()
                .filter(|k| !self.is_expected(k))
                .collect();
            return Err(Error::InvalidSpec(format!(
                "unexpected weights {unexpected:?}"
            )));
        }
        Ok(())
    }

    fn is_expected(&self, name: &str) -> bool {
        Network::ALL.iter().any(|&net| {
            self.spec.layers(net).iter().enumerate().any(|(i, l)| {
                expected_weights(&self.spec, l)
                    .iter()
                    .any(|(role, _)| weight_name(net, i, role) == name)
            })
        })
    }

    /// Effective kernel of one conv, with weight norm applied.
    pub fn conv_kernel(&self, net: Network, index: usize, part: ConvPart) -> Result<ConvKernel<T>> {
        let layer = &self.spec.layers(net)[index];
        let get = |suffix: &str| self.weight(&weight_name(net, index, &conv_role(part, suffix)));
        let b = get("b")?.clone();
        if layer.separable {
            return Ok(ConvKernel::Separable(SeparableWeights::new(
                get("dw")?.clone(),
                get("pw")?.clone(),
                b,
                layer.dilation,
                layer.padding,
            )?));
        }
        let w = if layer.weight_norm {
            weight_norm_apply(&WeightNormParams {
                v: get("v")?.clone(),
                g: get("g")?.clone(),
            })?
        } else {
            get("w")?.clone()
        };
        Ok(ConvKernel::Full(ConvWeights::new(
            w,
            b,
            layer.dilation,
            layer.padding,
        )?))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            weights: self
                .weights
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn prepare(&self) -> Result<InferenceModel<T>> {
        InferenceModel::new(self)
    }

    pub fn to_container(&self) -> (Vec<(String, Tensor<f32>)>, BTreeMap<String, String>) {
        let entries = self
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), v.cast::<f32>()))
            .collect();
        let mut meta = BTreeMap::new();
        meta.insert("spec".to_string(), self.spec.to_json());
        (entries, meta)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let spec_json = c
            .meta
            .get("spec")
            .ok_or_else(|| Error::InvalidSpec("container has no `spec` meta entry".into()))?;
        let spec = ModelSpec::from_json(spec_json)?;
        let weights = c
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.cast()))
            .collect();
        Self::new(spec, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (entries, meta) = self.to_container();
        write_container(path, &entries, &meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }
}

/// One layer with effective kernels materialized.
#[derive(Debug, Clone)]
pub enum PreparedLayer<T> {
    Embedding(Tensor<T>),
    Conv {
        kernel: ConvKernel<T>,
        activation: Activation,
    },
    Gated(GatedConvLayer<T>),
}

impl<T: Scalar> PreparedLayer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            PreparedLayer::Embedding(_) => Err(Error::InvalidArgument(
                "embedding layers take ids, not feature maps".into(),
            )),
            PreparedLayer::Conv { kernel, activation } => {
                let y = kernel.forward(x)?;
                Ok(match activation {
                    Activation::None => y,
                    Activation::Relu => crate::nn::relu(&y),
                })
            }
            PreparedLayer::Gated(g) => g.forward(x),
        }
    }
}

/// A model with weight norm folded into plain kernels, ready for forward
/// passes.
#[derive(Debug, Clone)]
pub struct InferenceModel<T> {
    pub spec: ModelSpec,
    pub text_encoder: Vec<PreparedLayer<T>>,
    pub audio_encoder: Vec<PreparedLayer<T>>,
    pub audio_decoder: Vec<PreparedLayer<T>>,
}

impl<T: Scalar> InferenceModel<T> {
    fn new(model: &Model<T>) -> Result<Self> {
        let build = |net: Network| -> Result<Vec<PreparedLayer<T>>> {
            model
                .spec
                .layers(net)
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    Ok(match l.kind {
                        LayerKind::Embedding => PreparedLayer::Embedding(
                            model.weight(&weight_name(net, i, "embedding"))?.clone(),
                        ),
                        LayerKind::Conv => PreparedLayer::Conv {
                            kernel: model.conv_kernel(net, i, ConvPart::Body)?,
                            activation: l.activation,
                        },
                        kind => {
                            let body = model.conv_kernel(net, i, ConvPart::Body)?;
                            let gate = if kind.has_gate() {
                                Some(model.conv_kernel(net, i, ConvPart::Gate)?)
                            } else {
                                None
                            };
                            PreparedLayer::Gated(GatedConvLayer::new(
                                body,
                                gate,
                                l.group,
                                kind.block_kind().unwrap(),
                            )?)
                        }
                    })
                })
                .collect()
        };
        Ok(Self {
            spec: model.spec.clone(),
            text_encoder: build(Network::TextEncoder)?,
            audio_encoder: build(Network::AudioEncoder)?,
            audio_decoder: build(Network::AudioDecoder)?,
        })
    }

    pub fn layers(&self, net: Network) -> &[PreparedLayer<T>] {
        match net {
            Network::TextEncoder => &self.text_encoder,
            Network::AudioEncoder => &self.audio_encoder,
            Network::AudioDecoder => &self.audio_decoder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::spec::{builtin_spec, Builtin};

    #[test]
    fn init_is_deterministic_and_valid() {
        let a = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 7).unwrap();
        let b = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 7).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 8).unwrap();
        assert_ne!(a, c);
        assert!(a.weights().contains_key("audio_encoder.1.gate_v"));
        assert_eq!(
            a.weight("audio_encoder.1.gate_v").unwrap().shape(),
            &[32, 64, 3]
        );
    }

    #[test]
    fn missing_weight_detected() {
        let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 1).unwrap();
        let (spec, mut w) = m.into_parts();
        w.remove("audio_decoder.0.body_b");
        assert!(matches!(Model::new(spec, w), Err(Error::MissingWeight(_))));
    }

    #[test]
    fn container_roundtrip() {
        let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 3).unwrap();
        let (entries, meta) = m.to_container();
        let bytes = crate::container::encode(&entries, &meta).unwrap();
        let back =
            Model::<f32>::from_container(&crate::container::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn uniform_draws_stay_in_range() {
        let mut r = UniformInit::new(0);
        for _ in 0..1000 {
            let v = r.symmetric(0.5);
            assert!((-0.5..0.5).contains(&v));
        }
    }
}
