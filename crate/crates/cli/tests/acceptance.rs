//! End-to-end acceptance suite. Each criterion runs in isolation and prints
//! one PASS/FAIL line; the test fails if any criterion does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{exhaustive_emcd, fixture, p, run, stderr};
use fastmel_core::audio::{frame_count, stft_magnitude, Window};
use fastmel_core::compress::{
    audit, channel_spaces, fold_weight_norm, prune, Axis, Importance, PruneOptions,
};
use fastmel_core::container::{decode, encode};
use fastmel_core::emcd::{
    emcd, emcd_cost, mcd_frame, EmcdOptions, MfccSequence, TransitionWeights,
};
use fastmel_core::gating::{
    forward_with_forced_gates, gated_backward, group_highway_forward, highway_forward,
    residual_forward, BlockKind, GatedConvLayer,
};
use fastmel_core::graph::cost::{layer_cost, CountOptions};
use fastmel_core::graph::model::{weight_name, UniformInit};
use fastmel_core::graph::synth::recompute;
use fastmel_core::graph::{builtin_spec, Builtin, LayerSpec, Model};
use fastmel_core::nn::{ConvKernel, ConvWeights, Padding};
use fastmel_core::Tensor;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_seq(rng: &mut UniformInit, d: usize, t: usize) -> MfccSequence {
    MfccSequence::new(rng.tensor(&[d, t], 2.0)).unwrap()
}

fn emcd_opts(hor: f64, ver: f64, diag: f64) -> EmcdOptions {
    EmcdOptions {
        weights: TransitionWeights::new(hor, ver, diag).unwrap(),
        ..Default::default()
    }
}

fn c1_emcd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = UniformInit::new(0xACCE);
    let o = emcd_opts(1.0, 1.0, std::f64::consts::SQRT_2);
    for case in 0..500 {
        let d = 1 + rng.below(3);
        let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
        let x = random_seq(&mut rng, d, n);
        let y = random_seq(&mut rng, d, m);
        let dp = emcd(&x, &y, &o).map_err(|e| e.to_string())?.emcd_raw;
        let brute = exhaustive_emcd(&x.frames(), &y.frames(), 1.0, 1.0, std::f64::consts::SQRT_2);
        ensure!(
            dp.to_bits() == brute.to_bits(),
            "case {case} ({n}x{m}, D={d}): dp {dp} vs exhaustive {brute}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("500 pairs bitwise equal in {secs:.2} s"))
}

fn c2_emcd_identities() -> Outcome {
    let mut rng = UniformInit::new(2);
    let base = emcd_opts(1.0, 1.0, std::f64::consts::SQRT_2);
    for _ in 0..200 {
        let d = 1 + rng.below(5);
        let (n, m) = (1 + rng.below(10), 1 + rng.below(10));
        let x = random_seq(&mut rng, d, n);
        let y = random_seq(&mut rng, d, m);
        ensure!(emcd_cost(&x, &x, &base).unwrap() == 0.0, "emcd(x, x) != 0");

        let c = 0.01 + 50.0 * rng.unit();
        let a = emcd_cost(&x, &y, &base).unwrap();
        let scaled = emcd_cost(
            &x,
            &y,
            &EmcdOptions {
                weights: base.weights.scaled(c),
                ..base
            },
        )
        .unwrap();
        ensure!(
            (scaled - c * a).abs() <= 1e-9 * c * a,
            "homogeneity: {scaled} vs {}",
            c * a
        );

        let hv = 0.1 + 2.0 * rng.unit();
        let sym = emcd_opts(hv, hv, 0.1 + 2.0 * rng.unit());
        let (xy, yx) = (
            emcd_cost(&x, &y, &sym).unwrap(),
            emcd_cost(&y, &x, &sym).unwrap(),
        );
        ensure!(
            (xy - yx).abs() <= 1e-9 * xy.max(1e-300),
            "swap: {xy} vs {yx}"
        );
    }
    let unit = mcd_frame(&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
    ensure!((unit - 2f64.sqrt()).abs() <= 1e-12, "unit frame MCD {unit}");
    Ok("self-distance, homogeneity, swap symmetry and unit MCD hold on 200 pairs".into())
}

fn conv(rng: &mut UniformInit, co: usize, ci: usize, k: usize, d: usize) -> ConvWeights<f64> {
    ConvWeights::new(
        rng.tensor(&[co, ci, k], 0.8),
        rng.tensor(&[co], 0.3),
        d,
        Padding::Causal,
    )
    .unwrap()
}

fn block(
    body: ConvWeights<f64>,
    gate: Option<ConvWeights<f64>>,
    group: usize,
    kind: BlockKind,
) -> GatedConvLayer<f64> {
    GatedConvLayer::new(
        ConvKernel::Full(body),
        gate.map(ConvKernel::Full),
        group,
        kind,
    )
    .unwrap()
}

fn c3_gating() -> Outcome {
    let mut rng = UniformInit::new(3);
    let (mut worst_g, mut worst_r) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let c = 1 + rng.below(8);
        let (k, d, t) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(16));
        let body = conv(&mut rng, c, c, k, d);
        let gate = conv(&mut rng, c, c, k, d);
        let x = rng.tensor::<f64>(&[c, t], 2.0);
        let hw = highway_forward(
            &x,
            &block(body.clone(), Some(gate.clone()), 1, BlockKind::Highway),
        )
        .unwrap();
        let gh = group_highway_forward(
            &x,
            &block(body.clone(), Some(gate.clone()), 1, BlockKind::GroupHighway),
        )
        .unwrap();
        worst_g = worst_g.max(hw.max_abs_diff(&gh));
        let res = residual_forward(&x, &block(body.clone(), None, 1, BlockKind::Residual)).unwrap();
        let forced = forward_with_forced_gates(
            &x,
            &block(body, Some(gate), 1, BlockKind::Highway),
            1.0,
            1.0,
        )
        .unwrap();
        worst_r = worst_r.max(res.max_abs_diff(&forced));
    }
    ensure!(worst_g <= 1e-7, "group highway g=1 vs highway: {worst_g:e}");
    ensure!(worst_r <= 1e-7, "residual vs forced highway: {worst_r:e}");
    Ok(format!(
        "max diffs {worst_g:e} (g=1) and {worst_r:e} (residual) over 100 instances"
    ))
}

fn loss(l: &GatedConvLayer<f64>, x: &Tensor<f64>, up: &Tensor<f64>) -> f64 {
    let y = l.forward(x).unwrap();
    y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
}

/// Relative error with a floor on the denominator, so gradients that are
/// zero up to rounding compare absolutely.
fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn central(len: usize, mut f: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..len).map(|i| (f(i, h) - f(i, -h)) / (2.0 * h)).collect()
}

fn grad_worst(kind: BlockKind, seed: u64) -> f64 {
    let mut rng = UniformInit::new(seed);
    let group = if kind == BlockKind::GroupHighway {
        [1, 2, 4][rng.below(3)]
    } else {
        1
    };
    let c = group * (1 + rng.below(4 / group));
    let (k, d, t) = (1 + rng.below(3), 1 + rng.below(2), 1 + rng.below(5));
    let body = conv(&mut rng, c, c, k, d);
    let gate = (kind != BlockKind::Residual).then(|| conv(&mut rng, c / group, c, k, d));
    let l = block(body.clone(), gate.clone(), group, kind);
    let x = rng.tensor::<f64>(&[c, t], 1.0);
    let up = rng.tensor::<f64>(&[c, t], 1.0);
    let g = gated_backward(&x, &l, &up).unwrap();

    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![(
        g.x.data().to_vec(),
        central(x.len(), |i, e| {
            let mut xp = x.clone();
            xp.data_mut()[i] += e;
            loss(&l, &xp, &up)
        }),
    )];
    pairs.push((
        g.body_w.data().to_vec(),
        central(body.w.len(), |i, e| {
            let mut b = body.clone();
            b.w.data_mut()[i] += e;
            loss(&block(b, gate.clone(), group, kind), &x, &up)
        }),
    ));
    pairs.push((
        g.body_b.data().to_vec(),
        central(body.b.len(), |i, e| {
            let mut b = body.clone();
            b.b.data_mut()[i] += e;
            loss(&block(b, gate.clone(), group, kind), &x, &up)
        }),
    ));
    if let Some(gw) = &gate {
        pairs.push((
            g.gate_w.clone().unwrap().data().to_vec(),
            central(gw.w.len(), |i, e| {
                let mut q = gw.clone();
                q.w.data_mut()[i] += e;
                loss(&block(body.clone(), Some(q), group, kind), &x, &up)
            }),
        ));
        pairs.push((
            g.gate_b.clone().unwrap().data().to_vec(),
            central(gw.b.len(), |i, e| {
                let mut q = gw.clone();
                q.b.data_mut()[i] += e;
                loss(&block(body.clone(), Some(q), group, kind), &x, &up)
            }),
        ));
    }
    pairs
        .iter()
        .flat_map(|(a, n)| a.iter().zip(n).map(|(a, n)| rel(*a, *n)))
        .fold(0.0, f64::max)
}

fn c4_gradients() -> Outcome {
    let mut summary = Vec::new();
    for kind in [
        BlockKind::Highway,
        BlockKind::GroupHighway,
        BlockKind::Residual,
    ] {
        let worst = (0..100)
            .map(|s| grad_worst(kind, 1000 + s))
            .fold(0.0, f64::max);
        ensure!(worst < 1e-4, "{kind:?}: max relative error {worst:e}");
        summary.push(format!("{kind:?} {worst:.1e}"));
    }
    Ok(format!("max relative error: {}", summary.join(", ")))
}

fn c5_cost_theory() -> Outcome {
    let t3 = CountOptions::table3();
    let macs = |l: &LayerSpec| layer_cost(l, 0, 200, &t3).macs as u128;
    let shapes = [
        (1, 1, 1),
        (4, 8, 3),
        (8, 4, 3),
        (16, 16, 5),
        (80, 256, 1),
        (256, 256, 3),
        (256, 80, 3),
        (512, 512, 3),
        (3, 7, 9),
        (64, 64, 2),
        (128, 32, 7),
        (10, 100, 4),
        (100, 10, 4),
        (2, 2, 2),
        (5, 13, 11),
        (256, 512, 1),
        (512, 256, 5),
        (33, 17, 3),
        (1, 64, 3),
        (64, 1, 3),
    ];
    for (ci, co, k) in shapes {
        let full = LayerSpec::conv(ci, co, k, Padding::Causal);
        let sep = LayerSpec {
            separable: true,
            ..full.clone()
        };
        let (f, s) = (macs(&full), macs(&sep));
        // s / f == 1/co + 1/k exactly.
        ensure!(
            s * (co * k) as u128 == f * (co + k) as u128,
            "separable {ci}->{co} k{k}: {s}/{f}"
        );
    }
    for g in [1u128, 2, 4, 8] {
        let hw = macs(&LayerSpec::highway(64, 3, 1, Padding::Causal));
        let gh = macs(&LayerSpec::group_highway(
            64,
            3,
            1,
            g as usize,
            Padding::Causal,
        ));
        // gh / hw == (1 + 1/g) / 2 exactly.
        ensure!(gh * 2 * g == hw * (g + 1), "group {g}: {gh}/{hw}");
    }
    Ok("20 separable shapes and g in {1,2,4,8} match exactly".into())
}

fn c6_table3() -> Outcome {
    let o = run(&[
        "count",
        "--model",
        "dctts_baseline",
        "--model",
        "fast_dctts",
    ]);
    ensure!(o.status.success(), "count failed: {}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    ensure!(
        table.contains("657,728") && table.contains("23,896,064"),
        "reference totals missing from output"
    );
    ensure!(
        table.contains("text_encoder.1") && table.contains("audio_decoder."),
        "per-layer rows missing"
    );

    let o = run(&[
        "count",
        "--model",
        "dctts_baseline",
        "--model",
        "fast_dctts",
        "--format",
        "json",
    ]);
    ensure!(o.status.success(), "count json failed");
    let v: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let refs = v["references"].as_array().unwrap();
    let delta = |model: &str, key: &str| {
        refs.iter()
            .find(|r| r["model"] == model)
            .map(|r| r[key].as_i64().unwrap())
            .unwrap()
    };
    let ratio = &v["ratios"][0];
    let (pp, mp) = (
        ratio["params_percent"].as_f64().unwrap(),
        ratio["macs_percent"].as_f64().unwrap(),
    );
    ensure!(
        (2.0..=4.0).contains(&pp),
        "param ratio {pp:.2}% outside [2, 4]"
    );
    ensure!(
        (1.0..=3.0).contains(&mp),
        "mac ratio {mp:.2}% outside [1, 3]"
    );
    Ok(format!(
        "params {pp:.2}%, macs {mp:.2}% (published 2.75%, 1.76%); deltas: fast params {:+}, baseline params {:+}, baseline macs {:+}",
        delta("fast_dctts", "params_delta"),
        delta("dctts_baseline", "params_delta"),
        delta("dctts_baseline", "macs_delta"),
    ))
}

fn c7_speed() -> Outcome {
    let o = run(&[
        "bench",
        "--model",
        "dctts_baseline",
        "--model",
        "fast_dctts",
        "--model",
        "dctts_separable",
        "--frames",
        "200",
        "--repeats",
        "5",
        "--format",
        "json",
    ]);
    ensure!(o.status.success(), "bench failed: {}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let median = |m: &str| {
        v["benchmarks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|b| b["model"] == m)
            .unwrap()["median"]
            .as_f64()
            .unwrap()
    };
    let (base, fast, sep) = (
        median("dctts_baseline"),
        median("fast_dctts"),
        median("dctts_separable"),
    );
    let speedup = base / fast;
    ensure!(
        speedup >= 4.0,
        "fast_dctts only {speedup:.2}x faster ({base:.3} s vs {fast:.3} s)"
    );
    Ok(format!(
        "fast_dctts {speedup:.1}x faster ({base:.3} s vs {fast:.3} s median); separable baseline {sep:.3} s ({:.2}x of baseline time, report only)",
        sep / base
    ))
}

fn silence(model: &Model<f64>, ratio: f64) -> Model<f64> {
    let (spec, mut weights) = model.clone().into_parts();
    for space in channel_spaces(&spec, true) {
        let n = (ratio * space.units() as f64).round() as usize;
        for u in (0..space.units()).rev().step_by(3).take(n) {
            for slot in space.slots.iter().filter(|s| s.axis == Axis::Out) {
                for c in u * space.unit..(u + 1) * space.unit {
                    let r = slot.offset + c;
                    if let Some(w) =
                        weights.get_mut(&weight_name(slot.network, slot.layer, "body_w"))
                    {
                        w.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                    for role in ["body_g", "body_b"] {
                        if let Some(t) =
                            weights.get_mut(&weight_name(slot.network, slot.layer, role))
                        {
                            t.data_mut()[r] = 0.0;
                        }
                    }
                }
            }
        }
    }
    Model::new(spec, weights).unwrap()
}

fn c8_compression() -> Outcome {
    let mut rng = UniformInit::new(8);
    let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), 8).unwrap();
    let (p0, _) = prune(&m, PruneOptions::ratio(0.0)).map_err(|e| e.to_string())?;
    ensure!(p0.spec() == m.spec(), "ratio 0 changed the spec");
    for (name, t) in m.weights() {
        let q = p0.weight(name).unwrap();
        ensure!(
            q.shape() == t.shape()
                && q.data()
                    .iter()
                    .zip(t.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
            "ratio 0 changed {name}"
        );
    }

    let m64 = silence(
        &Model::<f64>::init(builtin_spec(Builtin::FastDctts), 81).unwrap(),
        0.2,
    );
    let (pruned, report) = prune(&m64, PruneOptions::ratio(0.2)).map_err(|e| e.to_string())?;
    ensure!(report.removed() > 0, "nothing was pruned");
    let (a, b) = (m64.prepare().unwrap(), pruned.prepare().unwrap());
    let mut worst_prune = 0.0f64;
    for _ in 0..50 {
        let n = 2 + rng.below(12);
        let mut ids: Vec<usize> = (0..n).map(|_| 2 + rng.below(30)).collect();
        ids.push(1);
        let t = 1 + rng.below(16);
        let mel = rng.tensor::<f64>(&[80, t], 1.0);
        worst_prune = worst_prune.max(
            recompute(&a, &ids, &mel)
                .unwrap()
                .max_abs_diff(&recompute(&b, &ids, &mel).unwrap()),
        );
    }
    ensure!(
        worst_prune <= 1e-6,
        "pruning silent filters moved the output by {worst_prune:e}"
    );

    let m64 = Model::<f64>::init(builtin_spec(Builtin::FastDctts), 82).unwrap();
    let folded = fold_weight_norm(&m64).unwrap();
    ensure!(
        fold_weight_norm(&folded).unwrap() == folded,
        "fold is not idempotent"
    );
    let (a, b) = (m64.prepare().unwrap(), folded.prepare().unwrap());
    let mut worst_fold = 0.0f64;
    for _ in 0..10 {
        let ids = vec![3, 4, 5, 1];
        let mel = rng.tensor::<f64>(&[80, 10], 1.0);
        worst_fold = worst_fold.max(
            recompute(&a, &ids, &mel)
                .unwrap()
                .max_abs_diff(&recompute(&b, &ids, &mel).unwrap()),
        );
    }
    ensure!(
        worst_fold <= 1e-5,
        "fold moved the output by {worst_fold:e}"
    );

    for run in 0..100 {
        let opts = PruneOptions {
            ratio: 0.9 * rng.unit(),
            importance: if run % 2 == 0 {
                Importance::L1
            } else {
                Importance::L2
            },
            include_attention: run % 5 != 0,
            ..Default::default()
        };
        let m = Model::<f32>::init(builtin_spec(Builtin::FastDctts), run).unwrap();
        let (p, _) = prune(&m, opts).map_err(|e| format!("run {run}: {e}"))?;
        audit(&p).map_err(|e| format!("audit failed on run {run}: {e}"))?;
    }
    Ok(format!(
        "ratio 0 bitwise; {} silent channels removed with max diff {worst_prune:.1e}; fold diff {worst_fold:.1e}; 100 audits clean",
        report.removed()
    ))
}

fn strip_seconds(csv: &[u8]) -> String {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let count = [
        "--seed",
        "5",
        "count",
        "--model",
        "dctts_baseline",
        "--model",
        "fast_dctts",
        "--format",
        "json",
    ];
    ensure!(
        run(&count).stdout == run(&count).stdout,
        "count output differs between runs"
    );

    let (syn, gt) = (fixture("emcd8/syn.fdt1"), fixture("emcd8/gt.fdt1"));
    let em = ["emcd", "--syn", p(&syn), "--gt", p(&gt), "--format", "csv"];
    let first = run(&em);
    ensure!(
        first.status.success() && first.stdout == run(&em).stdout,
        "emcd output differs between runs"
    );

    let mut mels = Vec::new();
    let mut csvs = Vec::new();
    for i in 0..2 {
        let mel = dir.path().join(format!("mel{i}.fdt1"));
        let o = run(&[
            "--seed",
            "5",
            "bench",
            "--model",
            "fast_dctts",
            "--frames",
            "20",
            "--repeats",
            "2",
            "--format",
            "csv",
            "--mel-out",
            p(&mel),
        ]);
        ensure!(o.status.success(), "bench failed: {}", stderr(&o));
        csvs.push(strip_seconds(&o.stdout));
        mels.push(std::fs::read(&mel).map_err(|e| e.to_string())?);
    }
    ensure!(
        csvs[0] == csvs[1],
        "bench rows differ outside the timing column"
    );
    ensure!(mels[0] == mels[1], "bench synthesized different mels");

    let mut rng = UniformInit::new(9);
    for i in 0..1000 {
        let rank = 1 + rng.below(4);
        let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(5)).collect();
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| f32::from_bits(rng.below(u32::MAX as usize) as u32))
            .collect();
        let t = Tensor::new(shape, data).unwrap();
        let bytes = encode(&[(format!("t{i}"), t.clone())], &Default::default()).unwrap();
        let back = decode(&bytes).map_err(|e| e.to_string())?;
        let got = &back.entries[0].1;
        ensure!(
            got.shape() == t.shape()
                && got
                    .data()
                    .iter()
                    .zip(t.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
            "tensor {i} changed in roundtrip"
        );
    }
    Ok("count/emcd byte-identical, bench identical apart from timings, 1000 FDT1 roundtrips bitwise".into())
}

fn one_sided(col: &[f64], n_fft: usize) -> f64 {
    let last = col.len() - 1;
    col.iter()
        .enumerate()
        .map(|(k, m)| {
            if k == 0 || k == last {
                m * m
            } else {
                2.0 * m * m
            }
        })
        .sum::<f64>()
        / n_fft as f64
}

fn c10_features() -> Outcome {
    let (n_fft, sr) = (1024usize, 22050.0);
    let k0 = 47;
    let f = k0 as f64 * sr / n_fft as f64;
    let x: Vec<f64> = (0..4 * n_fft)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin())
        .collect();
    let spec = stft_magnitude(&x, n_fft, 256, Window::Rectangular).unwrap();
    let mut min_share = f64::INFINITY;
    for t in 0..spec.cols() {
        let col = spec.column(t);
        min_share = min_share.min(2.0 * col[k0] * col[k0] / n_fft as f64 / one_sided(&col, n_fft));
    }
    ensure!(min_share >= 0.9, "sine share {min_share}");

    let mut rng = UniformInit::new(10);
    let mut worst = 0.0f64;
    for window in [Window::Hann, Window::Rectangular] {
        let x: Vec<f64> = (0..3 * n_fft).map(|_| rng.symmetric(1.0)).collect();
        let spec = stft_magnitude(&x, n_fft, 256, window).unwrap();
        let w = window.coefficients(n_fft);
        for t in 0..spec.cols() {
            let time: f64 = (0..n_fft).map(|i| (x[t * 256 + i] * w[i]).powi(2)).sum();
            worst = worst.max((time - one_sided(&spec.column(t), n_fft)).abs() / time);
        }
    }
    ensure!(worst <= 1e-3, "Parseval relative error {worst:e}");

    for _ in 0..100 {
        let n_fft = 1 << (1 + rng.below(11));
        let hop = 1 + rng.below(n_fft);
        let n = rng.below(6 * n_fft);
        let mut frames = 0;
        while frames * hop + n_fft <= n {
            frames += 1;
        }
        let got = frame_count(n, n_fft, hop);
        ensure!(
            got == (frames > 0).then_some(frames),
            "n {n} n_fft {n_fft} hop {hop}: {got:?} vs {frames}"
        );
    }
    Ok(format!(
        "sine share {:.4}, Parseval error {worst:.1e}, 100 framing triples exact",
        min_share
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("EMCD oracle equivalence", c1_emcd_oracle),
        ("EMCD identities", c2_emcd_identities),
        ("gating equivalences", c3_gating),
        ("gradient checks", c4_gradients),
        ("cost-model theory", c5_cost_theory),
        ("parameter and MAC targets", c6_table3),
        ("speed ordering", c7_speed),
        ("compression invariants", c8_compression),
        ("determinism", c9_determinism),
        ("feature pipeline", c10_features),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
