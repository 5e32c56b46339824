//! Declarative architecture descriptions.
//!
//! Layer notation follows the `KIND-IN-OUT` convention, e.g. `C-80-64`
//! (plain conv), `HC-256-256` (highway conv), `GH-64-64` (group highway
//! conv) and `RC-128-128` (residual conv).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::BlockKind;
use crate::nn::Padding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    Conv,
    HighwayConv,
    GroupHighwayConv,
    ResidualConv,
}

impl LayerKind {
    pub fn is_gated(self) -> bool {
        matches!(
            self,
            LayerKind::HighwayConv | LayerKind::GroupHighwayConv | LayerKind::ResidualConv
        )
    }

    pub fn has_gate(self) -> bool {
        matches!(self, LayerKind::HighwayConv | LayerKind::GroupHighwayConv)
    }

    pub fn block_kind(self) -> Option<BlockKind> {
        match self {
            LayerKind::HighwayConv => Some(BlockKind::Highway),
            LayerKind::GroupHighwayConv => Some(BlockKind::GroupHighway),
            LayerKind::ResidualConv => Some(BlockKind::Residual),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            LayerKind::Embedding => "E",
            LayerKind::Conv => "C",
            LayerKind::HighwayConv => "HC",
            LayerKind::GroupHighwayConv => "GH",
            LayerKind::ResidualConv => "RC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

fn one() -> usize {
    1
}

fn same() -> Padding {
    Padding::Same
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default = "same")]
    pub padding: Padding,
    /// Channels sharing one gate value; 1 for everything but `GH`.
    #[serde(default = "one")]
    pub group: usize,
    #[serde(default)]
    pub weight_norm: bool,
    #[serde(default)]
    pub activation: Activation,
    /// Depthwise separable parameterization of the conv(s) in this layer.
    #[serde(default)]
    pub separable: bool,
}

impl LayerSpec {
    fn base(kind: LayerKind, in_ch: usize, out_ch: usize, kernel: usize, padding: Padding) -> Self {
        Self {
            kind,
            in_ch,
            out_ch,
            kernel,
            dilation: 1,
            padding,
            group: 1,
            weight_norm: false,
            activation: Activation::None,
            separable: false,
        }
    }

    pub fn embedding(vocab: usize, dim: usize) -> Self {
        Self::base(LayerKind::Embedding, vocab, dim, 1, Padding::Same)
    }

    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, padding: Padding) -> Self {
        Self::base(LayerKind::Conv, in_ch, out_ch, kernel, padding)
    }

    pub fn highway(ch: usize, kernel: usize, dilation: usize, padding: Padding) -> Self {
        Self {
            dilation,
            ..Self::base(LayerKind::HighwayConv, ch, ch, kernel, padding)
        }
    }

    pub fn group_highway(
        ch: usize,
        kernel: usize,
        dilation: usize,
        group: usize,
        padding: Padding,
    ) -> Self {
        Self {
            dilation,
            group,
            ..Self::base(LayerKind::GroupHighwayConv, ch, ch, kernel, padding)
        }
    }

    pub fn residual(ch: usize, kernel: usize, dilation: usize, padding: Padding) -> Self {
        Self {
            dilation,
            ..Self::base(LayerKind::ResidualConv, ch, ch, kernel, padding)
        }
    }

    pub fn relu(mut self) -> Self {
        self.activation = Activation::Relu;
        self
    }

    /// Output channels of the gate conv, if the layer has one.
    pub fn gate_channels(&self) -> Option<usize> {
        self.kind.has_gate().then(|| self.out_ch / self.group)
    }

    fn validate(&self, where_: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(format!("{where_}: {m}")));
        if self.in_ch == 0 || self.out_ch == 0 || self.kernel == 0 || self.dilation == 0 {
            return bad("zero-sized dimension".into());
        }
        if self.kind == LayerKind::Embedding {
            return Ok(());
        }
        if self.padding == Padding::Same && self.kernel % 2 == 0 {
            return bad(format!(
                "same padding needs an odd kernel, got {}",
                self.kernel
            ));
        }
        if self.kind.is_gated() {
            if self.in_ch != self.out_ch {
                return bad(format!("{} requires in_ch == out_ch", self.kind.tag()));
            }
            if self.activation != Activation::None {
                return bad("gated layers take no extra activation".into());
            }
        }
        match self.kind {
            LayerKind::GroupHighwayConv => {
                if self.group == 0 || self.out_ch % self.group != 0 {
                    return bad(format!(
                        "{} channels not divisible by group {}",
                        self.out_ch, self.group
                    ));
                }
            }
            _ if self.group != 1 => return bad("group != 1 outside GH layers".into()),
            _ => {}
        }
        if self.separable && self.weight_norm {
            return bad("weight norm is not supported on separable convs".into());
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.kind.tag(), self.in_ch, self.out_ch)?;
        if self.kind != LayerKind::Embedding {
            write!(f, " k{} d{}", self.kernel, self.dilation)?;
        }
        if self.kind == LayerKind::GroupHighwayConv {
            write!(f, " g{}", self.group)?;
        }
        if self.separable {
            write!(f, " sep")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingSpec {
    pub base: f64,
    pub alpha_text: f64,
    pub alpha_audio: f64,
}

impl Default for PositionalEncodingSpec {
    fn default() -> Self {
        Self {
            base: 10000.0,
            alpha_text: 1.0,
            alpha_audio: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    TextEncoder,
    AudioEncoder,
    AudioDecoder,
}

impl Network {
    pub const ALL: [Network; 3] = [
        Network::TextEncoder,
        Network::AudioEncoder,
        Network::AudioDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Network::TextEncoder => "text_encoder",
            Network::AudioEncoder => "audio_encoder",
            Network::AudioDecoder => "audio_decoder",
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub vocab: usize,
    pub d_text: usize,
    /// Key/query width shared by the text keys and the audio encoder output.
    pub d_audio: usize,
    /// Value width; defaults to `d_audio`. Differs only after pruning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_value: Option<usize>,
    #[serde(default = "default_mels")]
    pub n_mels: usize,
    #[serde(default)]
    pub pe: PositionalEncodingSpec,
    /// Attention score multiplier; `1/sqrt(d_audio)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_scale: Option<f64>,
    pub text_encoder: Vec<LayerSpec>,
    pub audio_encoder: Vec<LayerSpec>,
    pub audio_decoder: Vec<LayerSpec>,
}

fn default_mels() -> usize {
    80
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    DcttsBaseline,
    FastDctts,
    /// The baseline with every multi-tap conv made depthwise separable.
    DcttsSeparable,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [
        Builtin::DcttsBaseline,
        Builtin::FastDctts,
        Builtin::DcttsSeparable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::DcttsBaseline => "dctts_baseline",
            Builtin::FastDctts => "fast_dctts",
            Builtin::DcttsSeparable => "dctts_separable",
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Character inventory of the builtin models: pad, end-of-sentence, space,
/// lowercase letters and `'.?`.
pub const VOCAB: &str = "PE abcdefghijklmnopqrstuvwxyz'.?";

/// Maps text onto builtin vocabulary ids, dropping unknown characters and
/// appending the end-of-sentence marker.
pub fn text_to_ids(text: &str) -> Vec<usize> {
    let mut ids: Vec<usize> = text
        .to_lowercase()
        .chars()
        .filter_map(|c| VOCAB.chars().skip(2).position(|v| v == c).map(|p| p + 2))
        .collect();
    ids.push(1);
    ids
}

const DILATIONS: [usize; 4] = [1, 3, 9, 27];

fn cycle(n: usize) -> impl Iterator<Item = usize> {
    DILATIONS.iter().copied().cycle().take(n)
}

fn with_weight_norm(mut layers: Vec<LayerSpec>) -> Vec<LayerSpec> {
    for l in &mut layers {
        if l.kind != LayerKind::Embedding {
            l.weight_norm = true;
        }
    }
    layers
}

fn dctts_baseline() -> ModelSpec {
    use Padding::{Causal, Same};
    let (e, d) = (128, 256);
    let t = 2 * d;
    let mut text = vec![
        LayerSpec::embedding(VOCAB.len(), e),
        LayerSpec::conv(e, t, 1, Same).relu(),
        LayerSpec::conv(t, t, 1, Same),
    ];
    text.extend(cycle(8).map(|dl| LayerSpec::highway(t, 3, dl, Same)));
    text.extend((0..2).map(|_| LayerSpec::highway(t, 3, 1, Same)));
    text.extend((0..2).map(|_| LayerSpec::highway(t, 1, 1, Same)));

    let mut audio = vec![
        LayerSpec::conv(80, d, 1, Causal).relu(),
        LayerSpec::conv(d, d, 1, Causal).relu(),
        LayerSpec::conv(d, d, 1, Causal),
    ];
    audio.extend(cycle(8).map(|dl| LayerSpec::highway(d, 3, dl, Causal)));
    audio.extend((0..2).map(|_| LayerSpec::highway(d, 3, 3, Causal)));

    let mut dec = vec![LayerSpec::conv(2 * d, d, 1, Causal)];
    dec.extend(cycle(4).map(|dl| LayerSpec::highway(d, 3, dl, Causal)));
    dec.extend((0..2).map(|_| LayerSpec::highway(d, 3, 1, Causal)));
    dec.extend((0..3).map(|_| LayerSpec::conv(d, d, 1, Causal).relu()));
    dec.push(LayerSpec::conv(d, 80, 1, Causal));

    ModelSpec {
        name: Builtin::DcttsBaseline.name().into(),
        vocab: VOCAB.len(),
        d_text: e,
        d_audio: d,
        d_value: None,
        n_mels: 80,
        pe: PositionalEncodingSpec::default(),
        attention_scale: None,
        text_encoder: with_weight_norm(text),
        audio_encoder: with_weight_norm(audio),
        audio_decoder: with_weight_norm(dec),
    }
}

fn fast_dctts() -> ModelSpec {
    use Padding::{Causal, Same};
    let (e, d, g) = (128, 64, 2);
    let t = 2 * d;
    let mut text = vec![
        LayerSpec::embedding(VOCAB.len(), e),
        LayerSpec::conv(e, t, 1, Same).relu(),
        LayerSpec::conv(t, t, 1, Same),
    ];
    text.extend(cycle(8).map(|dl| LayerSpec::residual(t, 3, dl, Same)));
    text.extend((0..2).map(|_| LayerSpec::residual(t, 3, 1, Same)));
    text.extend((0..2).map(|_| LayerSpec::residual(t, 1, 1, Same)));

    let mut audio = vec![LayerSpec::conv(80, d, 1, Causal).relu()];
    audio.extend(cycle(5).map(|dl| LayerSpec::group_highway(d, 3, dl, g, Causal)));

    let mut dec = vec![LayerSpec::conv(2 * d, d, 1, Causal)];
    dec.extend(cycle(4).map(|dl| LayerSpec::group_highway(d, 3, dl, g, Causal)));
    dec.push(LayerSpec::conv(d, 80, 1, Causal));

    ModelSpec {
        name: Builtin::FastDctts.name().into(),
        vocab: VOCAB.len(),
        d_text: e,
        d_audio: d,
        d_value: None,
        n_mels: 80,
        pe: PositionalEncodingSpec::default(),
        attention_scale: None,
        text_encoder: with_weight_norm(text),
        audio_encoder: with_weight_norm(audio),
        audio_decoder: with_weight_norm(dec),
    }
}

fn dctts_separable() -> ModelSpec {
    let mut spec = dctts_baseline();
    spec.name = Builtin::DcttsSeparable.name().into();
    for net in Network::ALL {
        for l in spec.layers_mut(net) {
            if l.kind != LayerKind::Embedding && l.kernel > 1 {
                l.separable = true;
                l.weight_norm = false;
            }
        }
    }
    spec
}

pub fn builtin_spec(which: Builtin) -> ModelSpec {
    match which {
        Builtin::DcttsBaseline => dctts_baseline(),
        Builtin::FastDctts => fast_dctts(),
        Builtin::DcttsSeparable => dctts_separable(),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Builtin { builtin: String },
    Full(Box<ModelSpec>),
}

impl ModelSpec {
    pub fn builtin(name: &str) -> Result<Self> {
        Ok(builtin_spec(name.parse()?))
    }

    /// Parses spec JSON; `{"builtin": "<name>"}` is accepted as shorthand.
    pub fn from_json(text: &str) -> Result<Self> {
        // Two-pass so that malformed JSON reports its own line/column
        // rather than the untagged-enum fallback message.
        let value: serde_json::Value = serde_json::from_str(text)?;
        let spec = match serde_json::from_value::<SpecFile>(value.clone()) {
            Ok(SpecFile::Builtin { builtin }) => Self::builtin(&builtin)?,
            Ok(SpecFile::Full(spec)) => *spec,
            Err(_) => serde_json::from_value::<ModelSpec>(value)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Resolves a builtin name or reads a spec JSON file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Ok(b) = name_or_path.parse::<Builtin>() {
            return Ok(builtin_spec(b));
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::UnknownModel(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn layers(&self, net: Network) -> &[LayerSpec] {
        match net {
            Network::TextEncoder => &self.text_encoder,
            Network::AudioEncoder => &self.audio_encoder,
            Network::AudioDecoder => &self.audio_decoder,
        }
    }

    pub fn layers_mut(&mut self, net: Network) -> &mut Vec<LayerSpec> {
        match net {
            Network::TextEncoder => &mut self.text_encoder,
            Network::AudioEncoder => &mut self.audio_encoder,
            Network::AudioDecoder => &mut self.audio_decoder,
        }
    }

    pub fn value_channels(&self) -> usize {
        self.d_value.unwrap_or(self.d_audio)
    }

    pub fn attention_scale(&self) -> f64 {
        self.attention_scale
            .unwrap_or_else(|| 1.0 / (self.d_audio as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidSpec(m));
        if self.pe.base <= 1.0 {
            return err(format!(
                "positional encoding base must exceed 1, got {}",
                self.pe.base
            ));
        }
        if self.d_text % 2 != 0 || self.n_mels % 2 != 0 {
            return err("positional encoding needs even d_text and n_mels".into());
        }
        for net in Network::ALL {
            let layers = self.layers(net);
            if layers.is_empty() {
                return err(format!("{net} has no layers"));
            }
            for (i, l) in layers.iter().enumerate() {
                l.validate(&format!("{net}.{i}"))?;
                if i > 0 && l.kind == LayerKind::Embedding {
                    return err(format!(
                        "{net}.{i}: embedding only allowed first in the text encoder"
                    ));
                }
                if i > 0 && layers[i - 1].out_ch != l.in_ch {
                    return err(format!(
                        "{net}.{i}: expects {} inputs but {net}.{} produces {}",
                        l.in_ch,
                        i - 1,
                        layers[i - 1].out_ch
                    ));
                }
                if net != Network::TextEncoder && l.padding != Padding::Causal {
                    return err(format!("{net}.{i}: audio-side layers must be causal"));
                }
            }
        }
        let text = &self.text_encoder;
        if text[0].kind != LayerKind::Embedding
            || text[0].in_ch != self.vocab
            || text[0].out_ch != self.d_text
        {
            return err(format!(
                "text_encoder.0 must be an embedding {} -> {}",
                self.vocab, self.d_text
            ));
        }
        if text.len() < 2 {
            return err("text encoder needs at least one conv layer".into());
        }
        let dv = self.value_channels();
        let text_out = text.last().unwrap().out_ch;
        if text_out != self.d_audio + dv {
            return err(format!(
                "text encoder emits {text_out} channels; keys + values need {}",
                self.d_audio + dv
            ));
        }
        let audio = &self.audio_encoder;
        if audio[0].kind != LayerKind::Conv || audio[0].in_ch != self.n_mels {
            return err(format!(
                "audio_encoder.0 must be a conv taking {} mel bins",
                self.n_mels
            ));
        }
        if audio.last().unwrap().out_ch != self.d_audio {
            return err(format!(
                "audio encoder must emit d_audio = {} channels",
                self.d_audio
            ));
        }
        let dec = &self.audio_decoder;
        if dec[0].kind != LayerKind::Conv || dec[0].in_ch != dv + self.d_audio {
            return err(format!(
                "audio_decoder.0 must be a conv taking [R; Q] = {} channels",
                dv + self.d_audio
            ));
        }
        if dec.last().unwrap().out_ch != self.n_mels {
            return err(format!("audio decoder must emit {} mel bins", self.n_mels));
        }
        // Gate groups must not straddle the key/value split of the text output.
        for l in text.iter().rev().take_while(|l| l.kind.is_gated()) {
            if self.d_audio % l.group != 0 {
                return err("key/value split straddles a gate group".into());
            }
        }
        Ok(())
    }

    /// Total conv layers per network (embedding excluded).
    pub fn conv_layer_count(&self, net: Network) -> usize {
        self.layers(net)
            .iter()
            .filter(|l| l.kind != LayerKind::Embedding)
            .count()
    }
}
