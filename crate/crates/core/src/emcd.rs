//! Elastic mel cepstral distortion.
//!
//! `D(i, j)` accumulates weighted frame distances over monotone alignments
//! of a synthesized sequence `x` (index `i`) against ground truth `y`
//! (index `j`). A step from `(i, j-1)` is horizontal, from `(i-1, j)`
//! vertical and from `(i-1, j-1)` diagonal; each step into `(i, j)` costs
//! `w_move * MCD(x_i, y_j)`. The first cell is charged the diagonal weight,
//! and the first row and column can only be reached by horizontal and
//! vertical chains. Indices in reports are 1-based.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::audio::load_mel;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfccOptions {
    /// Number of retained cepstral coefficients.
    pub coeffs: usize,
    /// Mel values are clamped to at least this before the log.
    pub floor: f64,
    /// Retain `c0..c(D-1)` instead of `c1..cD`.
    pub include_c0: bool,
    /// Sinusoidal lifter length; 0 disables liftering.
    pub lifter: usize,
}

impl Default for MfccOptions {
    fn default() -> Self {
        Self {
            coeffs: 13,
            floor: 1e-5,
            include_c0: false,
            lifter: 0,
        }
    }
}

/// Cepstral coefficients `[D, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub coeffs: Tensor<f64>,
}

impl MfccSequence {
    pub fn new(coeffs: Tensor<f64>) -> Result<Self> {
        if coeffs.rank() != 2 {
            return Err(shape_err(format!(
                "MFCC sequence must be [D, T], got {:?}",
                coeffs.shape()
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn len(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Frames as contiguous vectors.
    pub fn frames(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|t| self.coeffs.column(t)).collect()
    }
}

/// Orthonormal DCT-II basis value `s_k cos(pi k (2n+1) / 2N)`.
pub fn dct_basis(k: usize, n: usize, len: usize) -> f64 {
    let s = if k == 0 {
        (1.0 / len as f64).sqrt()
    } else {
        (2.0 / len as f64).sqrt()
    };
    s * (std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2 * len) as f64).cos()
}

/// MFCCs of a mel spectrogram `[n_mels, T]`: orthonormal DCT-II of the
/// natural log of the floored mel values, per frame.
pub fn mel_to_mfcc<T: Scalar>(mel: &Tensor<T>, opts: &MfccOptions) -> Result<MfccSequence> {
    if mel.rank() != 2 {
        return Err(shape_err(format!(
            "mel must be [n_mels, T], got {:?}",
            mel.shape()
        )));
    }
    let n = mel.rows();
    let first = usize::from(!opts.include_c0);
    if opts.coeffs == 0 || first + opts.coeffs > n {
        return Err(Error::InvalidArgument(format!(
            "cannot retain {} coefficients from {n} mel bins",
            opts.coeffs
        )));
    }
    if !(opts.floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mel floor must be positive, got {}",
            opts.floor
        )));
    }
    let basis: Vec<Vec<f64>> = (first..first + opts.coeffs)
        .map(|k| (0..n).map(|b| dct_basis(k, b, n)).collect())
        .collect();
    let lift: Vec<f64> = (first..first + opts.coeffs)
        .map(|k| {
            if opts.lifter == 0 {
                1.0
            } else {
                let l = opts.lifter as f64;
                1.0 + 0.5 * l * (std::f64::consts::PI * k as f64 / l).sin()
            }
        })
        .collect();
    let t_len = mel.cols();
    let mut out = Tensor::zeros(&[opts.coeffs, t_len]);
    for t in 0..t_len {
        let logs: Vec<f64> = (0..n)
            .map(|b| mel.at2(b, t).to_f64_lossy().max(opts.floor).ln())
            .collect();
        for (d, (row, l)) in basis.iter().zip(&lift).enumerate() {
            let c: f64 = row.iter().zip(&logs).map(|(a, b)| a * b).sum();
            out.row_mut(d)[t] = c * l;
        }
    }
    MfccSequence::new(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum McdScale {
    /// `sqrt(2 * sum (x_d - y_d)^2)`.
    #[default]
    Bare,
    /// The bare value times `10 / ln 10` (decibels).
    Classic,
}

impl McdScale {
    pub fn factor(self) -> f64 {
        match self {
            McdScale::Bare => 1.0,
            McdScale::Classic => 10.0 / std::f64::consts::LN_10,
        }
    }
}

/// Mel cepstral distortion between two frames.
pub fn mcd_frame(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err(format!(
            "frame dims differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(mcd_unchecked(x, y))
}

#[inline]
fn mcd_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (2.0 * s).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionWeights {
    pub hor: f64,
    pub ver: f64,
    pub diag: f64,
}

impl Default for TransitionWeights {
    fn default() -> Self {
        Self {
            hor: 1.0,
            ver: 1.0,
            diag: std::f64::consts::SQRT_2,
        }
    }
}

impl TransitionWeights {
    pub fn new(hor: f64, ver: f64, diag: f64) -> Result<Self> {
        let w = Self { hor, ver, diag };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.hor) || !ok(self.ver) || !ok(self.diag) || self.diag <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "transition weights must be finite and non-negative with a positive diagonal, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            hor: self.hor * c,
            ver: self.ver * c,
            diag: self.diag * c,
        }
    }

    pub fn of(&self, m: Move) -> f64 {
        match m {
            Move::Horizontal => self.hor,
            Move::Vertical => self.ver,
            Move::Diagonal => self.diag,
        }
    }
}

impl std::str::FromStr for TransitionWeights {
    type Err = Error;

    /// Parses `hor,ver,diag`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad weights `{s}`: {e}")))?;
        match parts[..] {
            [h, v, d] => Self::new(h, v, d),
            _ => Err(Error::InvalidArgument(format!(
                "expected three weights, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Horizontal,
    Vertical,
    Diagonal,
}

impl Move {
    pub fn label(self) -> &'static str {
        match self {
            Move::Horizontal => "horizontal",
            Move::Vertical => "vertical",
            Move::Diagonal => "diagonal",
        }
    }

    fn back(self, i: usize, j: usize) -> (usize, usize) {
        match self {
            Move::Horizontal => (i, j - 1),
            Move::Vertical => (i - 1, j),
            Move::Diagonal => (i - 1, j - 1),
        }
    }
}

/// How the step weight of a cell is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `D(i,j) = min_m (D(pred_m) + w_m * MCD)`: the exact minimum over
    /// weighted monotone paths.
    #[default]
    Optimal,
    /// Take the predecessor with the smallest accumulated cost, then add
    /// its step weight times MCD. Not path-optimal when weights differ.
    GreedyPredecessor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmcdOptions {
    pub weights: TransitionWeights,
    pub normalize: bool,
    pub scale: McdScale,
    pub rule: StepRule,
}

impl Default for EmcdOptions {
    fn default() -> Self {
        Self {
            weights: TransitionWeights::default(),
            normalize: true,
            scale: McdScale::Bare,
            rule: StepRule::Optimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmcdReport {
    pub t_syn: usize,
    pub t_gt: usize,
    pub emcd_raw: f64,
    /// `emcd_raw / t_gt`, when normalization is on.
    pub emcd_normalized: Option<f64>,
    /// 1-based cells from `(1, 1)` to `(t_syn, t_gt)`.
    pub path: Vec<(usize, usize)>,
    /// The move into each path cell after the first.
    pub moves: Vec<Move>,
}

fn check_pair(x: &MfccSequence, y: &MfccSequence) -> Result<()> {
    if x.len() == 0 || y.len() == 0 {
        return Err(Error::EmptySequence);
    }
    if x.dim() != y.dim() {
        return Err(shape_err(format!(
            "MFCC dims differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Candidate predecessors in tie-break order.
const ORDER: [Move; 3] = [Move::Diagonal, Move::Vertical, Move::Horizontal];

#[inline]
fn cell<F: Fn(Move) -> Option<f64>>(
    acc: F,
    w: &TransitionWeights,
    local: f64,
    rule: StepRule,
) -> (f64, Move) {
    let mut best: Option<(f64, Move)> = None;
    for m in ORDER {
        let Some(prev) = acc(m) else { continue };
        let key = match rule {
            StepRule::Optimal => prev + w.of(m) * local,
            StepRule::GreedyPredecessor => prev,
        };
        if best.map_or(true, |(b, _)| key < b) {
            best = Some((key, m));
        }
    }
    let (key, m) = best.expect("interior cell has a predecessor");
    match rule {
        StepRule::Optimal => (key, m),
        StepRule::GreedyPredecessor => (key + w.of(m) * local, m),
    }
}

/// Full DP with path recovery.
pub fn emcd(x: &MfccSequence, y: &MfccSequence, opts: &EmcdOptions) -> Result<EmcdReport> {
    check_pair(x, y)?;
    opts.weights.validate()?;
    let (xs, ys) = (x.frames(), y.frames());
    let (n, m) = (xs.len(), ys.len());
    let f = opts.scale.factor();
    let w = &opts.weights;
    let mut acc = vec![0.0f64; n * m];
    let mut from = vec![Move::Diagonal; n * m];
    for i in 0..n {
        for j in 0..m {
            let local = f * mcd_unchecked(&xs[i], &ys[j]);
            let (v, mv) = if i == 0 && j == 0 {
                (w.diag * local, Move::Diagonal)
            } else {
                let get = |mv: Move| {
                    let ok = match mv {
                        Move::Horizontal => j > 0,
                        Move::Vertical => i > 0,
                        Move::Diagonal => i > 0 && j > 0,
                    };
                    ok.then(|| {
                        let (pi, pj) = mv.back(i, j);
                        acc[pi * m + pj]
                    })
                };
                cell(get, w, local, opts.rule)
            };
            acc[i * m + j] = v;
            from[i * m + j] = mv;
        }
    }
    let raw = acc[n * m - 1];
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i + 1, j + 1)];
    let mut moves = Vec::new();
    while i > 0 || j > 0 {
        let mv = from[i * m + j];
        moves.push(mv);
        (i, j) = mv.back(i, j);
        path.push((i + 1, j + 1));
    }
    path.reverse();
    moves.reverse();
    Ok(EmcdReport {
        t_syn: n,
        t_gt: m,
        emcd_raw: raw,
        emcd_normalized: opts.normalize.then(|| raw / m as f64),
        path,
        moves,
    })
}

/// Cost-only DP over two rows; equals `emcd(..).emcd_raw` exactly.
pub fn emcd_cost(x: &MfccSequence, y: &MfccSequence, opts: &EmcdOptions) -> Result<f64> {
    check_pair(x, y)?;
    opts.weights.validate()?;
    let (xs, ys) = (x.frames(), y.frames());
    let m = ys.len();
    let f = opts.scale.factor();
    let w = &opts.weights;
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, xi) in xs.iter().enumerate() {
        for j in 0..m {
            let local = f * mcd_unchecked(xi, &ys[j]);
            cur[j] = if i == 0 && j == 0 {
                w.diag * local
            } else {
                let get = |mv: Move| match mv {
                    Move::Horizontal => (j > 0).then(|| cur[j - 1]),
                    Move::Vertical => (i > 0).then(|| prev[j]),
                    Move::Diagonal => (i > 0 && j > 0).then(|| prev[j - 1]),
                };
                cell(get, w, local, opts.rule).0
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Exhaustive minimum over all monotone lattice paths. Exponential; meant
/// as a test oracle for small grids.
pub fn emcd_bruteforce(x: &MfccSequence, y: &MfccSequence, opts: &EmcdOptions) -> Result<f64> {
    check_pair(x, y)?;
    let (xs, ys) = (x.frames(), y.frames());
    let f = opts.scale.factor();
    let w = opts.weights;
    let local = |i: usize, j: usize| f * mcd_unchecked(&xs[i], &ys[j]);
    fn walk(
        i: usize,
        j: usize,
        cost: f64,
        n: usize,
        m: usize,
        w: &TransitionWeights,
        local: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        if i == n - 1 && j == m - 1 {
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for (di, dj, mv) in [
            (1, 1, Move::Diagonal),
            (1, 0, Move::Vertical),
            (0, 1, Move::Horizontal),
        ] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                walk(
                    ni,
                    nj,
                    cost + w.of(mv) * local(ni, nj),
                    n,
                    m,
                    w,
                    local,
                    best,
                );
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(
        0,
        0,
        w.diag * local(0, 0),
        xs.len(),
        ys.len(),
        &w,
        &local,
        &mut best,
    );
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusRow {
    pub syn: String,
    pub gt: String,
    pub t_syn: Option<usize>,
    pub t_gt: Option<usize>,
    pub emcd_raw: Option<f64>,
    pub emcd_norm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub rows: Vec<CorpusRow>,
    /// Mean and population standard deviation of the normalized values of
    /// the rows that scored; `None` when none did.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub scored: usize,
}

/// Reads `syn_path,gt_path` pairs; relative paths resolve against the
/// CSV's directory.
pub fn read_pairs(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("syn_path,gt_path") => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: expected header `syn_path,gt_path`, found {other:?}",
                path.display()
            )))
        }
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let (a, b) = l.split_once(',').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: line {} is not `syn,gt`",
                    path.display(),
                    n + 2
                ))
            })?;
            Ok((dir.join(a.trim()), dir.join(b.trim())))
        })
        .collect()
}

fn score_pair(
    syn: &Path,
    gt: &Path,
    mfcc: &MfccOptions,
    opts: &EmcdOptions,
) -> Result<(usize, usize, f64)> {
    let x = mel_to_mfcc(&load_mel(syn)?.bins, mfcc)?;
    let y = mel_to_mfcc(&load_mel(gt)?.bins, mfcc)?;
    Ok((x.len(), y.len(), emcd_cost(&x, &y, opts)?))
}

/// Scores every pair with `jobs` workers; rows keep input order and a
/// failing pair records its error instead of aborting the run.
pub fn emcd_corpus(
    pairs: &[(PathBuf, PathBuf)],
    mfcc: &MfccOptions,
    opts: &EmcdOptions,
    jobs: usize,
) -> Result<CorpusReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySequence);
    }
    opts.weights.validate()?;
    let results: Mutex<Vec<Option<CorpusRow>>> = Mutex::new(vec![None; pairs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, pairs.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((syn, gt)) = pairs.get(k) else { break };
                let mut row = CorpusRow {
                    syn: syn.display().to_string(),
                    gt: gt.display().to_string(),
                    t_syn: None,
                    t_gt: None,
                    emcd_raw: None,
                    emcd_norm: None,
                    error: None,
                };
                match score_pair(syn, gt, mfcc, opts) {
                    Ok((ts, tg, raw)) => {
                        row.t_syn = Some(ts);
                        row.t_gt = Some(tg);
                        row.emcd_raw = Some(raw);
                        row.emcd_norm = Some(raw / tg as f64);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                results.lock().unwrap()[k] = Some(row);
            });
        }
    });
    let rows: Vec<CorpusRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.emcd_norm).collect();
    let (mean, std) = if vals.is_empty() {
        (None, None)
    } else {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    Ok(CorpusReport {
        scored: vals.len(),
        rows,
        mean,
        std,
    })
}
