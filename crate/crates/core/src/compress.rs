//! Filter pruning and the weight-normalization fold.
//!
//! Pruning works on *channel spaces*: sets of channels that must be removed
//! together because several tensors index them. A space is the output
//! stream of a plain conv plus every gated layer that passes that stream
//! through (HC/GH/RC layers read and write the same channels), and the input
//! axis of the conv that consumes it. The text encoder's output is split into
//! a key part, coupled to the audio encoder output and to the query half of
//! the decoder input, and a value part, coupled to the context half of the
//! decoder input.
//!
//! Streams touching the mel boundary and the embedding output (which carries
//! the positional encoding) are never pruned.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::cost::{count_flops, count_params, CountOptions};
use crate::graph::model::{conv_parts, conv_role, weight_name, ConvPart, Model};
use crate::graph::spec::{LayerKind, ModelSpec, Network};
use crate::nn::{weight_norm_apply, ConvKernel, WeightNormParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub network: Network,
    pub layer: usize,
    pub axis: Axis,
    /// Position of the space's channel 0 along the layer axis.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelSpace {
    pub name: String,
    pub width: usize,
    /// Channels removed at a time; the lcm of the gate groups in the space.
    pub unit: usize,
    pub slots: Vec<Slot>,
}

impl ChannelSpace {
    pub fn units(&self) -> usize {
        self.width / self.unit
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

struct Stream {
    net: Network,
    producer: usize,
    gated: std::ops::Range<usize>,
    consumer: Option<usize>,
}

impl Stream {
    fn slots(&self, offset: usize) -> Vec<Slot> {
        let slot = |layer, axis| Slot {
            network: self.net,
            layer,
            axis,
            offset,
        };
        let mut s = vec![slot(self.producer, Axis::Out)];
        for g in self.gated.clone() {
            s.push(slot(g, Axis::Out));
            s.push(slot(g, Axis::In));
        }
        if let Some(c) = self.consumer {
            s.push(slot(c, Axis::In));
        }
        s
    }

    fn unit(&self, spec: &ModelSpec) -> usize {
        self.gated
            .clone()
            .map(|g| spec.layers(self.net)[g].group)
            .fold(1, lcm)
    }
}

fn streams(spec: &ModelSpec, net: Network) -> Vec<Stream> {
    let layers = spec.layers(net);
    let mut out = Vec::new();
    let mut p = 0;
    while p < layers.len() {
        let mut q = p + 1;
        while q < layers.len() && layers[q].kind.is_gated() {
            q += 1;
        }
        out.push(Stream {
            net,
            producer: p,
            gated: p + 1..q,
            consumer: (q < layers.len()).then_some(q),
        });
        p = q;
    }
    out
}

/// Prunable channel spaces of `spec`.
pub fn channel_spaces(spec: &ModelSpec, include_attention: bool) -> Vec<ChannelSpace> {
    let mut spaces = Vec::new();
    let mut text_final = None;
    let mut audio_final = None;
    for net in Network::ALL {
        for s in streams(spec, net) {
            let producer = &spec.layers(net)[s.producer];
            if producer.kind == LayerKind::Embedding {
                continue;
            }
            match (net, s.consumer) {
                (Network::AudioDecoder, None) => {}
                (Network::TextEncoder, None) => text_final = Some(s),
                (Network::AudioEncoder, None) => audio_final = Some(s),
                (_, Some(_)) => spaces.push(ChannelSpace {
                    name: format!("{}.{}", net.name(), s.producer),
                    width: producer.out_ch,
                    unit: s.unit(spec),
                    slots: s.slots(0),
                }),
            }
        }
    }
    if include_attention {
        let (text, audio) = (
            text_final.expect("validated spec"),
            audio_final.expect("validated spec"),
        );
        let (da, dv) = (spec.d_audio, spec.value_channels());
        let decoder_in = |offset| Slot {
            network: Network::AudioDecoder,
            layer: 0,
            axis: Axis::In,
            offset,
        };
        let mut key = text.slots(0);
        key.extend(audio.slots(0));
        key.push(decoder_in(dv));
        spaces.push(ChannelSpace {
            name: "attention.key".into(),
            width: da,
            unit: lcm(text.unit(spec), audio.unit(spec)),
            slots: key,
        });
        let mut value = text.slots(da);
        value.push(decoder_in(0));
        spaces.push(ChannelSpace {
            name: "attention.value".into(),
            width: dv,
            unit: text.unit(spec),
            slots: value,
        });
    }
    spaces
}

/// Per-filter importance of a kernel `[C_out, ...]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Importance {
    /// Sum of absolute weights.
    #[default]
    L1,
    L2,
}

pub fn filter_importance<T: Scalar>(w: &Tensor<T>, score: Importance) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let r = w.row(o).iter().map(|x| x.to_f64_lossy());
            match score {
                Importance::L1 => r.map(f64::abs).sum(),
                Importance::L2 => r.map(|x| x * x).sum::<f64>().sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruneOptions {
    pub ratio: f64,
    pub importance: Importance,
    /// Also prune the attention-coupled key/value spaces.
    pub include_attention: bool,
    /// Lengths used for the before/after cost figures.
    pub t_text: usize,
    pub t_mel: usize,
}

impl PruneOptions {
    pub fn ratio(ratio: f64) -> Self {
        Self {
            ratio,
            ..Default::default()
        }
    }
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            ratio: 0.0,
            importance: Importance::L1,
            include_attention: true,
            t_text: 200,
            t_mel: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceReport {
    pub name: String,
    pub width: usize,
    pub unit: usize,
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// One score per unit of `unit` consecutive channels.
    pub unit_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub options: PruneOptions,
    pub spaces: Vec<SpaceReport>,
    pub params_before: u64,
    pub params_after: u64,
    pub macs_before: u64,
    pub macs_after: u64,
}

impl PruneReport {
    pub fn removed(&self) -> usize {
        self.spaces.iter().map(|s| s.removed.len()).sum()
    }

    pub fn macs_drop(&self) -> f64 {
        1.0 - self.macs_after as f64 / self.macs_before as f64
    }
}

type Masks = BTreeMap<(Network, usize, Axis), Vec<bool>>;

fn effective_body<T: Scalar>(model: &Model<T>, net: Network, layer: usize) -> Result<Tensor<T>> {
    Ok(match model.conv_kernel(net, layer, ConvPart::Body)? {
        ConvKernel::Full(cw) => cw.w,
        ConvKernel::Separable(sw) => sw.assembled().w,
    })
}

fn score_space<T: Scalar>(
    model: &Model<T>,
    space: &ChannelSpace,
    importance: Importance,
) -> Result<Vec<f64>> {
    let mut channel = vec![0.0f64; space.width];
    for s in space.slots.iter().filter(|s| s.axis == Axis::Out) {
        let scores = filter_importance(&effective_body(model, s.network, s.layer)?, importance);
        for (c, v) in channel.iter_mut().enumerate() {
            *v += scores[s.offset + c];
        }
    }
    Ok(channel.chunks(space.unit).map(|u| u.iter().sum()).collect())
}

fn keep_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| i)
        .collect()
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Removes the lowest-importance units of every channel space, together
/// with the consumer input channels and gate elements they feed.
pub fn prune<T: Scalar>(model: &Model<T>, opts: PruneOptions) -> Result<(Model<T>, PruneReport)> {
    if !(0.0..1.0).contains(&opts.ratio) {
        if opts.ratio >= 1.0 {
            return Err(Error::OverPruned(format!(
                "ratio {} would remove every filter",
                opts.ratio
            )));
        }
        return Err(Error::InvalidArgument(format!(
            "prune ratio must be in [0, 1), got {}",
            opts.ratio
        )));
    }
    let spec = model.spec();
    let counting = CountOptions::default();
    let params_before = count_params(spec, &counting);
    let macs_before = count_flops(spec, opts.t_text, opts.t_mel, &counting).macs;

    let mut masks: Masks = BTreeMap::new();
    for net in Network::ALL {
        for (i, l) in spec.layers(net).iter().enumerate() {
            if l.kind != LayerKind::Embedding {
                masks.insert((net, i, Axis::In), vec![true; l.in_ch]);
                masks.insert((net, i, Axis::Out), vec![true; l.out_ch]);
            }
        }
    }

    let mut reports = Vec::new();
    let mut kept_width = BTreeMap::new();
    for space in channel_spaces(spec, opts.include_attention) {
        let scores = score_space(model, &space, opts.importance)?;
        let units = space.units();
        let n_remove = (opts.ratio * units as f64).round() as usize;
        if n_remove >= units {
            return Err(Error::OverPruned(format!(
                "{} would lose all {units} units",
                space.name
            )));
        }
        let mut order: Vec<usize> = (0..units).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut keep = vec![true; space.width];
        for &u in &order[..n_remove] {
            keep[u * space.unit..(u + 1) * space.unit].fill(false);
        }
        for s in &space.slots {
            let m = masks
                .get_mut(&(s.network, s.layer, s.axis))
                .expect("slot refers to a conv");
            for (c, &k) in keep.iter().enumerate() {
                m[s.offset + c] &= k;
            }
        }
        let kept = keep_indices(&keep);
        kept_width.insert(space.name.clone(), kept.len());
        reports.push(SpaceReport {
            removed: (0..space.width).filter(|c| !keep[*c]).collect(),
            kept,
            name: space.name,
            width: space.width,
            unit: space.unit,
            unit_scores: scores,
        });
    }

    let pruned = if reports.iter().all(|r| r.removed.is_empty()) {
        model.clone()
    } else {
        apply_masks(model, &masks, &kept_width)?
    };
    let params_after = count_params(pruned.spec(), &counting);
    let macs_after = count_flops(pruned.spec(), opts.t_text, opts.t_mel, &counting).macs;
    Ok((
        pruned,
        PruneReport {
            options: opts,
            spaces: reports,
            params_before,
            params_after,
            macs_before,
            macs_after,
        },
    ))
}

fn apply_masks<T: Scalar>(
    model: &Model<T>,
    masks: &Masks,
    kept_width: &BTreeMap<String, usize>,
) -> Result<Model<T>> {
    let mut spec = model.spec().clone();
    let mut weights = model.weights().clone();
    for net in Network::ALL {
        for (i, layer) in model.spec().layers(net).iter().enumerate() {
            if layer.kind == LayerKind::Embedding {
                continue;
            }
            let in_keep = keep_indices(&masks[&(net, i, Axis::In)]);
            let out_mask = &masks[&(net, i, Axis::Out)];
            let out_keep = keep_indices(out_mask);
            for &part in conv_parts(layer) {
                let rows = match part {
                    ConvPart::Body => out_keep.clone(),
                    ConvPart::Gate => gate_rows(out_mask, layer.group, &format!("{net}.{i}"))?,
                };
                let name = |suffix: &str| weight_name(net, i, &conv_role(part, suffix));
                let mut take =
                    |suffix: &str, f: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>| -> Result<()> {
                        let key = name(suffix);
                        if let Some(t) = weights.get(&key) {
                            let t = f(t)?;
                            weights.insert(key, t);
                        }
                        Ok(())
                    };
                take("b", &|t| t.select(0, &rows))?;
                take("dw", &|t| t.select(0, &in_keep))?;
                take("pw", &|t| t.select(0, &rows)?.select(1, &in_keep))?;
                take("w", &|t| t.select(0, &rows)?.select(1, &in_keep))?;
                if layer.weight_norm {
                    let v_rows = weights[&name("v")].select(0, &rows)?;
                    let v_kept = v_rows.select(1, &in_keep)?;
                    let mut g = weights[&name("g")].select(0, &rows)?;
                    // Rescale g so the kept entries of the effective kernel
                    // are unchanged.
                    for (o, gv) in g.data_mut().iter_mut().enumerate() {
                        let (full, kept) = (row_norm(v_rows.row(o)), row_norm(v_kept.row(o)));
                        if kept == T::zero() {
                            return Err(Error::DegenerateDirection { channel: rows[o] });
                        }
                        *gv = *gv * kept / full;
                    }
                    weights.insert(name("v"), v_kept);
                    weights.insert(name("g"), g);
                }
            }
            let l = &mut spec.layers_mut(net)[i];
            l.in_ch = in_keep.len();
            l.out_ch = out_keep.len();
        }
    }
    let original_scale = spec.attention_scale();
    if let Some(&k) = kept_width.get("attention.key") {
        spec.d_audio = k;
    }
    if let Some(&v) = kept_width.get("attention.value") {
        spec.d_value = Some(v);
    }
    spec.attention_scale = Some(original_scale);
    Model::new(spec, weights)
}

/// Gate rows kept by an output-channel mask; each gate row survives only
/// with its whole group.
fn gate_rows(out_mask: &[bool], group: usize, layer: &str) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for (j, grp) in out_mask.chunks(group).enumerate() {
        match (grp.iter().all(|&k| k), grp.iter().any(|&k| k)) {
            (true, _) => rows.push(j),
            (false, false) => {}
            (false, true) => {
                return Err(Error::InvalidArgument(format!(
                    "{layer}: pruning splits gate group {j}"
                )))
            }
        }
    }
    Ok(rows)
}

/// Structural audit: channel chains, gate-group alignment and weight shapes.
pub fn audit<T: Scalar>(model: &Model<T>) -> Result<()> {
    model.validate()?;
    for net in Network::ALL {
        for (i, l) in model.spec().layers(net).iter().enumerate() {
            if let Some(gc) = l.gate_channels() {
                if gc * l.group != l.out_ch {
                    return Err(Error::InvalidSpec(format!(
                        "{net}.{i}: {gc} gates with group {} do not cover {} channels",
                        l.group, l.out_ch
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Replaces every weight-normalized conv by a plain kernel `g*v/||v||`.
pub fn fold_weight_norm<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    let mut spec = model.spec().clone();
    let mut weights = model.weights().clone();
    for net in Network::ALL {
        for (i, layer) in model.spec().layers(net).iter().enumerate() {
            if !layer.weight_norm {
                continue;
            }
            for &part in conv_parts(layer) {
                let name = |suffix: &str| weight_name(net, i, &conv_role(part, suffix));
                let v = weights
                    .remove(&name("v"))
                    .ok_or_else(|| Error::MissingWeight(name("v")))?;
                let g = weights
                    .remove(&name("g"))
                    .ok_or_else(|| Error::MissingWeight(name("g")))?;
                weights.insert(name("w"), weight_norm_apply(&WeightNormParams { v, g })?);
            }
            spec.layers_mut(net)[i].weight_norm = false;
        }
    }
    Model::new(spec, weights)
}
