use fastmel_core::graph::cost::{
    count_flops, count_params, layer_cost, percent, CountOptions, WindowConvention,
    REFERENCE_BASELINE_PARAMS,
};
use fastmel_core::graph::{builtin_spec, Builtin, LayerSpec};
use fastmel_core::nn::Padding;

fn conv_macs(layer: &LayerSpec, t: u64) -> u64 {
    layer_cost(layer, 0, t, &CountOptions::table3()).macs
}

#[test]
fn separable_ratio_is_inverse_cout_plus_inverse_k() {
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
        for t in [1u64, 200] {
            let (f, s) = (conv_macs(&full, t) as u128, conv_macs(&sep, t) as u128);
            // s / f == 1/co + 1/k, cross-multiplied to stay in integers.
            assert_eq!(
                s * co as u128 * k as u128,
                f * (k + co) as u128,
                "{ci}->{co} k{k}"
            );
        }
    }
}

#[test]
fn group_gate_ratio_is_half_of_one_plus_inverse_g() {
    for c in [8usize, 64, 256] {
        let hw = LayerSpec::highway(c, 3, 1, Padding::Causal);
        for g in [1usize, 2, 4, 8] {
            let gh = LayerSpec::group_highway(c, 3, 1, g, Padding::Causal);
            let (h, q) = (conv_macs(&hw, 200) as u128, conv_macs(&gh, 200) as u128);
            // q / h == (1 + 1/g) / 2
            assert_eq!(q * 2 * g as u128, h * (g as u128 + 1), "c {c} g {g}");
        }
    }
}

#[test]
fn fast_over_baseline_lands_in_band() {
    let opts = CountOptions::table3();
    let b = count_flops(&builtin_spec(Builtin::DcttsBaseline), 200, 200, &opts);
    let f = count_flops(&builtin_spec(Builtin::FastDctts), 200, 200, &opts);
    assert_eq!(b.params, REFERENCE_BASELINE_PARAMS);
    let (p, m) = (percent(f.params, b.params), percent(f.macs, b.macs));
    assert!((2.0..=4.0).contains(&p), "params {p}%");
    assert!((1.0..=3.0).contains(&m), "macs {m}%");
}

#[test]
fn streaming_never_costs_more_than_full_window() {
    for b in Builtin::ALL {
        let spec = builtin_spec(b);
        let full = count_flops(&spec, 50, 80, &CountOptions::table3());
        let stream = count_flops(
            &spec,
            50,
            80,
            &CountOptions {
                window: WindowConvention::Streaming,
                ..CountOptions::table3()
            },
        );
        assert!(stream.macs < full.macs, "{}", spec.name);
        assert_eq!(stream.params, full.params);
    }
}

#[test]
fn extras_only_add_parameters() {
    let spec = builtin_spec(Builtin::FastDctts);
    let bare = count_params(&spec, &CountOptions::table3());
    let all = count_params(&spec, &CountOptions::default());
    assert!(all > bare);
    let with_emb = count_params(
        &spec,
        &CountOptions {
            include_embedding: true,
            ..CountOptions::table3()
        },
    );
    assert_eq!(with_emb - bare, (spec.vocab * spec.d_text) as u64);
}
