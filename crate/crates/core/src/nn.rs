//! Convolutional primitives over `[channels, time]` feature maps.
//!
//! All convolutions are direct. Each output element accumulates the bias
//! first, then input channels in order and, within a channel, taps in
//! order. The incremental single-column routines use the same order, so a
//! streamed output is bitwise equal to the corresponding column of a full
//! pass.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output at `t` reads inputs at `t, t-d, ..., t-d(K-1)`.
    Causal,
    /// Receptive field centered on `t`; requires odd `K`.
    Same,
}

impl Padding {
    /// Time offset of tap `k` relative to the output position.
    #[inline]
    pub fn tap_offset(self, k: usize, kernel: usize, dilation: usize) -> isize {
        let k = k as isize;
        let d = dilation as isize;
        match self {
            Padding::Causal => -d * (kernel as isize - 1 - k),
            Padding::Same => d * (k - (kernel as isize - 1) / 2),
        }
    }
}

/// Full convolution weights `w: [C_out, C_in, K]`, `b: [C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn new(w: Tensor<T>, b: Tensor<T>, dilation: usize, padding: Padding) -> Result<Self> {
        let cw = Self {
            w,
            b,
            dilation,
            padding,
        };
        cw.validate()?;
        Ok(cw)
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    fn validate(&self) -> Result<()> {
        if self.w.rank() != 3 {
            return Err(shape_err(format!(
                "conv weight must be rank 3, got {:?}",
                self.w.shape()
            )));
        }
        if self.b.shape() != [self.out_channels()] {
            return Err(shape_err(format!(
                "bias {:?} for {} outputs",
                self.b.shape(),
                self.out_channels()
            )));
        }
        validate_geometry(self.kernel(), self.dilation, self.padding)
    }
}

fn validate_geometry(kernel: usize, dilation: usize, padding: Padding) -> Result<()> {
    if dilation == 0 {
        return Err(shape_err("dilation must be >= 1"));
    }
    if padding == Padding::Same && kernel % 2 == 0 {
        return Err(shape_err(format!(
            "same padding needs an odd kernel, got {kernel}"
        )));
    }
    Ok(())
}

/// Depthwise separable weights: `dw: [C_in, K]`, `pw: [C_out, C_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableWeights<T> {
    pub dw: Tensor<T>,
    pub pw: Tensor<T>,
    pub b: Tensor<T>,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Scalar> SeparableWeights<T> {
    pub fn new(
        dw: Tensor<T>,
        pw: Tensor<T>,
        b: Tensor<T>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        if dw.rank() != 2 || pw.rank() != 2 || pw.shape()[1] != dw.shape()[0] {
            return Err(shape_err(format!(
                "separable dw {:?} / pw {:?}",
                dw.shape(),
                pw.shape()
            )));
        }
        if b.shape() != [pw.shape()[0]] {
            return Err(shape_err("separable bias length"));
        }
        validate_geometry(dw.shape()[1], dilation, padding)?;
        Ok(Self {
            dw,
            pw,
            b,
            dilation,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.pw.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.dw.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.dw.shape()[1]
    }

    /// The equivalent full kernel `w[o,i,k] = pw[o,i] * dw[i,k]`.
    pub fn assembled(&self) -> ConvWeights<T> {
        let (co, ci, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let mut data = Vec::with_capacity(co * ci * k);
        for o in 0..co {
            for i in 0..ci {
                let p = self.pw.at2(o, i);
                data.extend(self.dw.row(i).iter().map(|&d| p * d));
            }
        }
        ConvWeights {
            w: Tensor::new(vec![co, ci, k], data).unwrap(),
            b: self.b.clone(),
            dilation: self.dilation,
            padding: self.padding,
        }
    }
}

/// A convolution in either parameterization.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvKernel<T> {
    Full(ConvWeights<T>),
    Separable(SeparableWeights<T>),
}

impl<T: Scalar> ConvKernel<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            ConvKernel::Full(cw) => conv1d(x, cw),
            ConvKernel::Separable(sw) => depthwise_separable_conv(x, sw),
        }
    }

    /// Output column for the newest time step of a time-major history.
    pub fn forward_last(&self, history: &ColumnHistory<T>) -> Vec<T> {
        match self {
            ConvKernel::Full(cw) => conv1d_last(history, cw),
            ConvKernel::Separable(sw) => separable_last(history, sw),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            ConvKernel::Full(cw) => cw.out_channels(),
            ConvKernel::Separable(sw) => sw.out_channels(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ConvKernel::Full(cw) => cw.in_channels(),
            ConvKernel::Separable(sw) => sw.in_channels(),
        }
    }

    pub fn padding(&self) -> Padding {
        match self {
            ConvKernel::Full(cw) => cw.padding,
            ConvKernel::Separable(sw) => sw.padding,
        }
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, c_in: usize) -> Result<usize> {
    if x.rank() != 2 {
        return Err(shape_err(format!(
            "feature map must be [C, T], got {:?}",
            x.shape()
        )));
    }
    if x.rows() != c_in {
        return Err(shape_err(format!(
            "input has {} channels, kernel expects {c_in}",
            x.rows()
        )));
    }
    Ok(x.shape()[1])
}

/// Valid output range `[lo, hi)` for a tap with time offset `s` over `t` steps.
#[inline]
fn tap_range(s: isize, t: usize) -> (usize, usize) {
    let lo = (-s).max(0) as usize;
    let hi = (t as isize - s).clamp(0, t as isize) as usize;
    (lo.min(hi), hi)
}

/// Dilated 1-D convolution with zero padding; output length equals input length.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, cw: &ConvWeights<T>) -> Result<Tensor<T>> {
    let t_len = check_input(x, cw.in_channels())?;
    let (c_out, c_in, k_len) = (cw.out_channels(), cw.in_channels(), cw.kernel());
    let offsets: Vec<isize> = (0..k_len)
        .map(|k| cw.padding.tap_offset(k, k_len, cw.dilation))
        .collect();
    let w = cw.w.data();
    let mut out = vec![T::zero(); c_out * t_len];
    for o in 0..c_out {
        let row = &mut out[o * t_len..(o + 1) * t_len];
        row.fill(cw.b.data()[o]);
        for i in 0..c_in {
            let xr = x.row(i);
            let wk = &w[(o * c_in + i) * k_len..(o * c_in + i + 1) * k_len];
            for (k, &wv) in wk.iter().enumerate() {
                let s = offsets[k];
                let (lo, hi) = tap_range(s, t_len);
                if lo == hi {
                    continue;
                }
                let src = &xr[(lo as isize + s) as usize..(hi as isize + s) as usize];
                for (r, &xv) in row[lo..hi].iter_mut().zip(src) {
                    *r += wv * xv;
                }
            }
        }
    }
    Tensor::new(vec![c_out, t_len], out)
}

/// Per-channel convolution: `dw: [C, K]`, no bias.
pub fn depthwise_conv<T: Scalar>(
    x: &Tensor<T>,
    dw: &Tensor<T>,
    dilation: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let t_len = check_input(x, dw.rows())?;
    let k_len = dw.shape()[1];
    let mut out = vec![T::zero(); x.len()];
    for c in 0..dw.rows() {
        let xr = x.row(c);
        let row = &mut out[c * t_len..(c + 1) * t_len];
        for (k, &wv) in dw.row(c).iter().enumerate() {
            let s = padding.tap_offset(k, k_len, dilation);
            let (lo, hi) = tap_range(s, t_len);
            if lo == hi {
                continue;
            }
            let src = &xr[(lo as isize + s) as usize..(hi as isize + s) as usize];
            for (r, &xv) in row[lo..hi].iter_mut().zip(src) {
                *r += wv * xv;
            }
        }
    }
    Tensor::new(vec![dw.rows(), t_len], out)
}

/// Depthwise convolution followed by a pointwise (1x1) channel mix.
pub fn depthwise_separable_conv<T: Scalar>(
    x: &Tensor<T>,
    sw: &SeparableWeights<T>,
) -> Result<Tensor<T>> {
    let dwx = depthwise_conv(x, &sw.dw, sw.dilation, sw.padding)?;
    let pw = ConvWeights {
        w: sw
            .pw
            .clone()
            .reshape(vec![sw.out_channels(), sw.in_channels(), 1])?,
        b: sw.b.clone(),
        dilation: 1,
        padding: Padding::Causal,
    };
    conv1d(&dwx, &pw)
}

/// Growing time-major buffer of input columns for incremental causal
/// convolution.
#[derive(Debug, Clone)]
pub struct ColumnHistory<T> {
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ColumnHistory<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, column: &[T]) {
        assert_eq!(column.len(), self.channels, "history column width");
        self.data.extend_from_slice(column);
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn get(&self, t: usize, c: usize) -> T {
        self.data[t * self.channels + c]
    }

    pub fn last(&self) -> &[T] {
        let n = self.data.len();
        &self.data[n - self.channels..]
    }
}

/// Causal conv output at the newest position of `history`.
pub fn conv1d_last<T: Scalar>(history: &ColumnHistory<T>, cw: &ConvWeights<T>) -> Vec<T> {
    debug_assert_eq!(cw.padding, Padding::Causal);
    let t = history.len() as isize - 1;
    let (c_out, c_in, k_len) = (cw.out_channels(), cw.in_channels(), cw.kernel());
    let w = cw.w.data();
    let pos: Vec<Option<usize>> = (0..k_len)
        .map(|k| {
            let p = t + cw.padding.tap_offset(k, k_len, cw.dilation);
            (p >= 0).then_some(p as usize)
        })
        .collect();
    (0..c_out)
        .map(|o| {
            let mut acc = cw.b.data()[o];
            for i in 0..c_in {
                let wk = &w[(o * c_in + i) * k_len..(o * c_in + i + 1) * k_len];
                for (k, &wv) in wk.iter().enumerate() {
                    if let Some(p) = pos[k] {
                        acc += wv * history.get(p, i);
                    }
                }
            }
            acc
        })
        .collect()
}

fn separable_last<T: Scalar>(history: &ColumnHistory<T>, sw: &SeparableWeights<T>) -> Vec<T> {
    let t = history.len() as isize - 1;
    let k_len = sw.kernel();
    let mid: Vec<T> = (0..sw.in_channels())
        .map(|c| {
            let mut acc = T::zero();
            for (k, &wv) in sw.dw.row(c).iter().enumerate() {
                let p = t + sw.padding.tap_offset(k, k_len, sw.dilation);
                if p >= 0 {
                    acc += wv * history.get(p as usize, c);
                }
            }
            acc
        })
        .collect();
    (0..sw.out_channels())
        .map(|o| {
            let mut acc = sw.b.data()[o];
            for (&p, &m) in sw.pw.row(o).iter().zip(&mid) {
                acc += p * m;
            }
            acc
        })
        .collect()
}

/// Weight-normalized parameterization `w_c = g[c] * v_c / ||v_c||`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNormParams<T> {
    pub v: Tensor<T>,
    pub g: Tensor<T>,
}

pub fn weight_norm_apply<T: Scalar>(p: &WeightNormParams<T>) -> Result<Tensor<T>> {
    let c_out = p.v.rows();
    if p.g.shape() != [c_out] {
        return Err(shape_err(format!(
            "g {:?} for direction {:?}",
            p.g.shape(),
            p.v.shape()
        )));
    }
    let mut w = p.v.clone();
    for c in 0..c_out {
        let row = w.row_mut(c);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(Error::DegenerateDirection { channel: c });
        }
        let s = p.g.data()[c] / norm;
        row.iter_mut().for_each(|v| *v *= s);
    }
    Ok(w)
}

/// Gathers table rows into a `[dim, T]` feature map.
pub fn embedding_lookup<T: Scalar>(ids: &[usize], table: &Tensor<T>) -> Result<Tensor<T>> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (vocab, dim) = (table.rows(), table.cols());
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::OutOfVocabulary { index: bad, vocab });
    }
    Ok(Tensor::from_fn2(dim, ids.len(), |d, t| {
        table.at2(ids[t], d)
    }))
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}
