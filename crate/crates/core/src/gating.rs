//! Gated convolution blocks: highway, group highway and residual.
//!
//! Highway blocks use coupled gates: `y = t*h + (1-t)*x` with
//! `h = body(x)` and `t = sigmoid(gate(x))`. In a group highway block the
//! gate conv emits `C/g` channels and gate row `j` drives body channels
//! `[j*g, (j+1)*g)`. A residual block is `y = x + body(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{conv1d, sigmoid_scalar, ConvKernel, ConvWeights};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Highway,
    GroupHighway,
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedConvLayer<T> {
    pub body: ConvKernel<T>,
    pub gate: Option<ConvKernel<T>>,
    pub group: usize,
    pub kind: BlockKind,
}

impl<T: Scalar> GatedConvLayer<T> {
    pub fn new(
        body: ConvKernel<T>,
        gate: Option<ConvKernel<T>>,
        group: usize,
        kind: BlockKind,
    ) -> Result<Self> {
        let layer = Self {
            body,
            gate,
            group,
            kind,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn channels(&self) -> usize {
        self.body.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.body.in_channels() != c {
            return Err(shape_err(format!(
                "gated body must map {c} channels onto themselves, got {} inputs",
                self.body.in_channels()
            )));
        }
        if self.group == 0 || c % self.group != 0 {
            return Err(shape_err(format!(
                "{c} channels not divisible by group {}",
                self.group
            )));
        }
        match (self.kind, &self.gate) {
            (BlockKind::Residual, None) => Ok(()),
            (BlockKind::Residual, Some(_)) => Err(shape_err("residual block has no gate")),
            (_, None) => Err(shape_err("highway block needs a gate")),
            (kind, Some(gate)) => {
                if kind == BlockKind::Highway && self.group != 1 {
                    return Err(shape_err("plain highway requires group 1"));
                }
                if gate.in_channels() != c || gate.out_channels() != c / self.group {
                    return Err(shape_err(format!(
                        "gate maps {} -> {}, expected {c} -> {}",
                        gate.in_channels(),
                        gate.out_channels(),
                        c / self.group
                    )));
                }
                Ok(())
            }
        }
    }

    /// Gate activations `[C/g, T]` after the sigmoid.
    pub fn gate_values(&self, x: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        match &self.gate {
            None => Ok(None),
            Some(g) => Ok(Some(g.forward(x)?.map(sigmoid_scalar))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.body.forward(x)?;
        match self.gate_values(x)? {
            None => x.add(&h),
            Some(t) => Ok(blend(x, &h, &t, self.group)),
        }
    }

    /// Incremental form: combines the newest input column with the newest
    /// body and gate columns.
    pub fn combine_column(&self, x: &[T], h: &[T], gate_pre: Option<&[T]>) -> Vec<T> {
        match gate_pre {
            None => x.iter().zip(h).map(|(&a, &b)| a + b).collect(),
            Some(a) => x
                .iter()
                .zip(h)
                .enumerate()
                .map(|(c, (&xv, &hv))| {
                    let t = sigmoid_scalar(a[c / self.group]);
                    t * hv + (T::one() - t) * xv
                })
                .collect(),
        }
    }
}

/// `y[c,t] = gate[c/g,t]*h[c,t] + (1 - gate[c/g,t])*x[c,t]`.
fn blend<T: Scalar>(x: &Tensor<T>, h: &Tensor<T>, gates: &Tensor<T>, group: usize) -> Tensor<T> {
    let mut y = h.clone();
    let t_len = x.cols();
    for c in 0..x.rows() {
        let tr = gates.row(c / group);
        let xr = x.row(c);
        for ((yv, &xv), &tv) in y.row_mut(c).iter_mut().zip(xr).zip(&tr[..t_len]) {
            *yv = tv * *yv + (T::one() - tv) * xv;
        }
    }
    y
}

fn expect_kind<T>(layer: &GatedConvLayer<T>, kind: BlockKind) -> Result<()> {
    if layer.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {kind:?} block, got {:?}",
            layer.kind
        )));
    }
    Ok(())
}

pub fn highway_forward<T: Scalar>(x: &Tensor<T>, layer: &GatedConvLayer<T>) -> Result<Tensor<T>> {
    expect_kind(layer, BlockKind::Highway)?;
    layer.forward(x)
}

pub fn group_highway_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &GatedConvLayer<T>,
) -> Result<Tensor<T>> {
    expect_kind(layer, BlockKind::GroupHighway)?;
    if layer.channels() % layer.group != 0 {
        return Err(shape_err("channels not divisible by group"));
    }
    layer.forward(x)
}

pub fn residual_forward<T: Scalar>(x: &Tensor<T>, layer: &GatedConvLayer<T>) -> Result<Tensor<T>> {
    expect_kind(layer, BlockKind::Residual)?;
    layer.forward(x)
}

/// Evaluates `transform*h + carry*x` with both gate multipliers pinned,
/// bypassing the gate conv. `(1, 0)` is the full-transform limit, `(0, 1)`
/// full carry, `(1, 1)` the residual special case.
pub fn forward_with_forced_gates<T: Scalar>(
    x: &Tensor<T>,
    layer: &GatedConvLayer<T>,
    transform: T,
    carry: T,
) -> Result<Tensor<T>> {
    let h = layer.body.forward(x)?;
    h.zip_map(x, |hv, xv| transform * hv + carry * xv)
}

/// Analytic gradients of `sum(upstream * forward(x))`.
#[derive(Debug, Clone)]
pub struct GatedGrads<T> {
    pub x: Tensor<T>,
    pub body_w: Tensor<T>,
    pub body_b: Tensor<T>,
    pub gate_w: Option<Tensor<T>>,
    pub gate_b: Option<Tensor<T>>,
}

fn full_weights<T>(k: &ConvKernel<T>) -> Result<&ConvWeights<T>> {
    match k {
        ConvKernel::Full(cw) => Ok(cw),
        ConvKernel::Separable(_) => Err(Error::InvalidArgument(
            "backward pass needs full convolution weights".into(),
        )),
    }
}

/// Backward of `y = conv(x, w) + b` given `dy`: returns `(dx, dw, db)`.
fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    cw: &ConvWeights<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (c_out, c_in, k_len) = (cw.out_channels(), cw.in_channels(), cw.kernel());
    let t_len = x.cols();
    let mut dx = Tensor::zeros(&[c_in, t_len]);
    let mut dw = Tensor::zeros(&[c_out, c_in, k_len]);
    let db = Tensor::new(
        vec![c_out],
        (0..c_out)
            .map(|o| dy.row(o).iter().copied().sum())
            .collect(),
    )
    .unwrap();
    for o in 0..c_out {
        let g = dy.row(o);
        for i in 0..c_in {
            for k in 0..k_len {
                let s = cw.padding.tap_offset(k, k_len, cw.dilation);
                let wv = cw.w.at3(o, i, k);
                let mut acc = T::zero();
                for (t, &gv) in g.iter().enumerate() {
                    let src = t as isize + s;
                    if src >= 0 && (src as usize) < t_len {
                        let src = src as usize;
                        acc += gv * x.at2(i, src);
                        dx.row_mut(i)[src] += gv * wv;
                    }
                }
                dw.data_mut()[(o * c_in + i) * k_len + k] = acc;
            }
        }
    }
    (dx, dw, db)
}

pub fn gated_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &GatedConvLayer<T>,
    upstream: &Tensor<T>,
) -> Result<GatedGrads<T>> {
    layer.validate()?;
    x.expect_same_shape(upstream)?;
    let body = full_weights(&layer.body)?;
    let h = conv1d(x, body)?;
    match &layer.gate {
        None => {
            let (dx_body, body_w, body_b) = conv_backward(x, body, upstream);
            Ok(GatedGrads {
                x: upstream.add(&dx_body)?,
                body_w,
                body_b,
                gate_w: None,
                gate_b: None,
            })
        }
        Some(gate) => {
            let gate = full_weights(gate)?;
            let g = layer.group;
            let t = conv1d(x, gate)?.map(sigmoid_scalar);
            let (c, t_len) = (x.rows(), x.cols());
            let mut dh = Tensor::zeros(&[c, t_len]);
            let mut dx_direct = Tensor::zeros(&[c, t_len]);
            let mut dgate = Tensor::zeros(&[c / g, t_len]);
            for ch in 0..c {
                for s in 0..t_len {
                    let u = upstream.at2(ch, s);
                    let tv = t.at2(ch / g, s);
                    dh.row_mut(ch)[s] = u * tv;
                    dx_direct.row_mut(ch)[s] = u * (T::one() - tv);
                    dgate.row_mut(ch / g)[s] += u * (h.at2(ch, s) - x.at2(ch, s));
                }
            }
            let dpre = dgate.zip_map(&t, |d, tv| d * tv * (T::one() - tv))?;
            let (dx_body, body_w, body_b) = conv_backward(x, body, &dh);
            let (dx_gate, gate_w, gate_b) = conv_backward(x, gate, &dpre);
            Ok(GatedGrads {
                x: dx_direct.add(&dx_body)?.add(&dx_gate)?,
                body_w,
                body_b,
                gate_w: Some(gate_w),
                gate_b: Some(gate_b),
            })
        }
    }
}
