//! Forward passes and autoregressive mel synthesis.
//!
//! The incremental synthesis loop and the full-sequence functions share
//! their per-column arithmetic, so a synthesized spectrogram is reproduced
//! bitwise by re-running [`audio_encode`], [`attend`] and [`decode`] over
//! the fed-back frames (see [`recompute`]).

use crate::error::{shape_err, Error, Result};
use crate::graph::model::{InferenceModel, PreparedLayer};
use crate::graph::pe::{add_positional, pe_term};
use crate::graph::spec::Activation;
use crate::nn::{embedding_lookup, sigmoid, sigmoid_scalar, ColumnHistory};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn run_stack<T: Scalar>(layers: &[PreparedLayer<T>], x: Tensor<T>) -> Result<Tensor<T>> {
    layers.iter().try_fold(x, |x, l| l.forward(&x))
}

/// Text encoder: keys `[d_audio, T_text]` and values `[d_value, T_text]`.
pub fn text_encode<T: Scalar>(
    m: &InferenceModel<T>,
    ids: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let PreparedLayer::Embedding(table) = &m.text_encoder[0] else {
        return Err(Error::InvalidSpec(
            "text encoder must start with an embedding".into(),
        ));
    };
    let x = embedding_lookup(ids, table)?;
    let x = add_positional(&x, m.spec.pe.alpha_text, m.spec.pe.base, 0)?;
    let y = run_stack(&m.text_encoder[1..], x)?;
    let d = m.spec.d_audio;
    Ok((y.slice_rows(0, d)?, y.slice_rows(d, y.rows())?))
}

/// Audio encoder over a mel prefix `[n_mels, T]`, giving `Q: [d_audio, T]`.
pub fn audio_encode<T: Scalar>(m: &InferenceModel<T>, mel: &Tensor<T>) -> Result<Tensor<T>> {
    if mel.rank() != 2 || mel.rows() != m.spec.n_mels {
        return Err(shape_err(format!(
            "audio encoder expects [{}, T], got {:?}",
            m.spec.n_mels,
            mel.shape()
        )));
    }
    let x = add_positional(mel, m.spec.pe.alpha_audio, m.spec.pe.base, 0)?;
    run_stack(&m.audio_encoder, x)
}

/// One attention column: softmax over text positions of `scale * K^T q`,
/// then the context `V a`.
pub fn attend_column<T: Scalar>(
    k: &Tensor<T>,
    v: &Tensor<T>,
    q: &[T],
    scale: T,
) -> (Vec<T>, Vec<T>) {
    let n_text = k.cols();
    let mut scores = vec![T::zero(); n_text];
    for (c, &qc) in q.iter().enumerate() {
        for (s, &kv) in scores.iter_mut().zip(k.row(c)) {
            *s += kv * qc;
        }
    }
    let max = scores
        .iter()
        .fold(T::neg_infinity(), |a, &s| a.max(s * scale));
    let mut total = T::zero();
    for s in &mut scores {
        *s = (*s * scale - max).exp();
        total += *s;
    }
    for s in &mut scores {
        *s /= total;
    }
    let r = (0..v.rows())
        .map(|c| {
            v.row(c)
                .iter()
                .zip(&scores)
                .fold(T::zero(), |acc, (&vv, &a)| acc + vv * a)
        })
        .collect();
    (scores, r)
}

/// Attention matrix `A: [T_text, T_mel]` (column-stochastic) and context
/// `R = V A: [d_value, T_mel]`.
pub fn attend<T: Scalar>(
    k: &Tensor<T>,
    v: &Tensor<T>,
    q: &Tensor<T>,
    scale: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if k.rank() != 2 || q.rank() != 2 || v.rank() != 2 {
        return Err(shape_err("attention operands must be rank 2"));
    }
    if k.rows() != q.rows() {
        return Err(shape_err(format!(
            "keys have {} channels, queries {}",
            k.rows(),
            q.rows()
        )));
    }
    if k.cols() != v.cols() {
        return Err(shape_err(format!(
            "{} keys but {} values",
            k.cols(),
            v.cols()
        )));
    }
    let (a_cols, r_cols): (Vec<Vec<T>>, Vec<Vec<T>>) = (0..q.cols())
        .map(|t| attend_column(k, v, &q.column(t), scale))
        .unzip();
    Ok((
        Tensor::from_columns(&a_cols)?,
        Tensor::from_columns(&r_cols)?,
    ))
}

/// Audio decoder over `[R; Q]`, with the final sigmoid.
pub fn decode<T: Scalar>(m: &InferenceModel<T>, r: &Tensor<T>, q: &Tensor<T>) -> Result<Tensor<T>> {
    let x = Tensor::concat_rows(&[r, q])?;
    Ok(sigmoid(&run_stack(&m.audio_decoder, x)?))
}

/// Per-layer input histories for one causal stack, fed one column at a time.
#[derive(Debug, Clone)]
pub struct CausalStackState<T> {
    inputs: Vec<ColumnHistory<T>>,
}

impl<T: Scalar> CausalStackState<T> {
    pub fn new(layers: &[PreparedLayer<T>]) -> Result<Self> {
        let inputs = layers
            .iter()
            .map(|l| match l {
                PreparedLayer::Conv { kernel, .. } => Ok(ColumnHistory::new(kernel.in_channels())),
                PreparedLayer::Gated(g) => Ok(ColumnHistory::new(g.channels())),
                PreparedLayer::Embedding(_) => {
                    Err(Error::InvalidSpec("embedding in a causal stack".into()))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { inputs })
    }

    /// Pushes one input column and returns the stack's newest output column.
    pub fn step(&mut self, layers: &[PreparedLayer<T>], column: Vec<T>) -> Vec<T> {
        let mut x = column;
        for (l, hist) in layers.iter().zip(&mut self.inputs) {
            hist.push(&x);
            x = match l {
                PreparedLayer::Conv { kernel, activation } => {
                    let mut y = kernel.forward_last(hist);
                    if *activation == Activation::Relu {
                        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
                    }
                    y
                }
                PreparedLayer::Gated(g) => {
                    let h = g.body.forward_last(hist);
                    let a = g.gate.as_ref().map(|gate| gate.forward_last(hist));
                    g.combine_column(hist.last(), &h, a.as_deref())
                }
                PreparedLayer::Embedding(_) => unreachable!("rejected in new"),
            };
        }
        x
    }
}

/// Incremental decoding state: audio encoder and decoder histories.
#[derive(Debug, Clone)]
pub struct DecoderState<T> {
    encoder: CausalStackState<T>,
    decoder: CausalStackState<T>,
    frames: usize,
}

impl<T: Scalar> DecoderState<T> {
    pub fn new(m: &InferenceModel<T>) -> Result<Self> {
        Ok(Self {
            encoder: CausalStackState::new(&m.audio_encoder)?,
            decoder: CausalStackState::new(&m.audio_decoder)?,
            frames: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Encodes the next fed-back mel frame, giving its query column.
    pub fn encode_frame(&mut self, m: &InferenceModel<T>, frame: &[T]) -> Result<Vec<T>> {
        let n = m.spec.n_mels;
        if frame.len() != n {
            return Err(shape_err(format!(
                "mel frame has {} bins, expected {n}",
                frame.len()
            )));
        }
        let pos = self.frames;
        let x: Vec<T> = frame
            .iter()
            .enumerate()
            .map(|(r, &v)| v + pe_term::<T>(pos, r, n, m.spec.pe.alpha_audio, m.spec.pe.base))
            .collect();
        Ok(self.encoder.step(&m.audio_encoder, x))
    }

    /// Decodes one output frame from a context column and a query column.
    pub fn decode_step(&mut self, m: &InferenceModel<T>, r_t: &[T], q_t: &[T]) -> Result<Vec<T>> {
        if r_t.len() != m.spec.value_channels() || q_t.len() != m.spec.d_audio {
            return Err(shape_err(format!(
                "decoder step expects {} + {} channels, got {} + {}",
                m.spec.value_channels(),
                m.spec.d_audio,
                r_t.len(),
                q_t.len()
            )));
        }
        let mut x = r_t.to_vec();
        x.extend_from_slice(q_t);
        let y = self.decoder.step(&m.audio_decoder, x);
        self.frames += 1;
        Ok(y.into_iter().map(sigmoid_scalar).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub max_frames: usize,
    /// Stop once the attention argmax has rested on the last text position
    /// for this many consecutive frames.
    pub early_stop: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            max_frames: 200,
            early_stop: Some(10),
        }
    }
}

impl SynthOptions {
    pub fn fixed(frames: usize) -> Self {
        Self {
            max_frames: frames,
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis<T> {
    /// Generated frames `[n_mels, T]`, values in `(0, 1)`.
    pub mel: Tensor<T>,
    /// Attention `[T_text, T]`.
    pub attention: Tensor<T>,
    pub stopped_early: bool,
}

/// Autoregressive synthesis. The first input frame is all zeros; each
/// generated frame is fed back as the next input.
pub fn synthesize<T: Scalar>(
    m: &InferenceModel<T>,
    ids: &[usize],
    opts: SynthOptions,
) -> Result<Synthesis<T>> {
    if opts.max_frames == 0 {
        return Err(Error::InvalidArgument(
            "max_frames must be at least 1".into(),
        ));
    }
    let (k, v) = text_encode(m, ids)?;
    let scale = T::lit(m.spec.attention_scale());
    let mut state = DecoderState::new(m)?;
    let mut frame = vec![T::zero(); m.spec.n_mels];
    let mut mel_cols = Vec::with_capacity(opts.max_frames);
    let mut att_cols = Vec::with_capacity(opts.max_frames);
    let last = ids.len() - 1;
    let mut resting = 0usize;
    let mut stopped_early = false;
    for _ in 0..opts.max_frames {
        let q = state.encode_frame(m, &frame)?;
        let (a, r) = attend_column(&k, &v, &q, scale);
        frame = state.decode_step(m, &r, &q)?;
        mel_cols.push(frame.clone());
        resting = if argmax(&a) == last { resting + 1 } else { 0 };
        att_cols.push(a);
        if opts.early_stop.is_some_and(|n| resting >= n) {
            stopped_early = true;
            break;
        }
    }
    Ok(Synthesis {
        mel: Tensor::from_columns(&mel_cols)?,
        attention: Tensor::from_columns(&att_cols)?,
        stopped_early,
    })
}

fn argmax<T: Scalar>(a: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in a.iter().enumerate() {
        if x > a[best] {
            best = i;
        }
    }
    best
}

/// Full-sequence oracle for [`synthesize`]: recomputes every output frame
/// from the whole fed-back input prefix in one pass.
pub fn recompute<T: Scalar>(
    m: &InferenceModel<T>,
    ids: &[usize],
    generated: &Tensor<T>,
) -> Result<Tensor<T>> {
    let n = generated.cols();
    let mut inputs = Tensor::zeros(&[m.spec.n_mels, n]);
    for r in 0..m.spec.n_mels {
        inputs.row_mut(r)[1..].copy_from_slice(&generated.row(r)[..n - 1]);
    }
    let (k, v) = text_encode(m, ids)?;
    let q = audio_encode(m, &inputs)?;
    let (_, r) = attend(&k, &v, &q, T::lit(m.spec.attention_scale()))?;
    decode(m, &r, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::model::Model;
    use crate::graph::spec::{builtin_spec, text_to_ids, Builtin};

    #[test]
    fn attention_hand_case() {
        // 3 text positions, 2 channels, one query.
        let k = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.5], vec![-1.0]]).unwrap();
        let (a, r) = attend(&k, &v, &q, 1.0f64).unwrap();
        let s = [0.5f64, -1.0, 0.0];
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        for n in 0..3 {
            assert!((a.at2(n, 0) - s[n].exp() / z).abs() < 1e-12);
        }
        let want: f64 = (0..3).map(|n| (n + 1) as f64 * s[n].exp() / z).sum();
        assert!((r.at2(0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn zero_queries_give_uniform_attention() {
        let k = Tensor::from_fn2(4, 5, |r, c| (r + c) as f32);
        let v = Tensor::from_fn2(2, 5, |r, c| (r * c) as f32);
        let (a, _) = attend(&k, &v, &Tensor::zeros(&[4, 3]), 0.5).unwrap();
        assert!(a.data().iter().all(|&x| (x - 0.2).abs() < 1e-7));
    }

    #[test]
    fn incremental_matches_recompute_bitwise() {
        let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 11)
            .unwrap()
            .prepare()
            .unwrap();
        let ids = text_to_ids("hello there");
        let out = synthesize(&m, &ids, SynthOptions::fixed(24)).unwrap();
        assert_eq!(out.mel.shape(), &[80, 24]);
        let full = recompute(&m, &ids, &out.mel).unwrap();
        assert_eq!(full, out.mel);
    }

    #[test]
    fn single_frame() {
        let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 2)
            .unwrap()
            .prepare()
            .unwrap();
        let out = synthesize(&m, &[3, 1], SynthOptions::fixed(1)).unwrap();
        assert_eq!(out.mel.cols(), 1);
        assert!(out.mel.data().iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
