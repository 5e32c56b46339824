//! Text2Mel network graph: architecture specs, weights, forward passes,
//! autoregressive synthesis, cost accounting and the benchmark harness.

pub mod bench;
pub mod cost;
pub mod model;
pub mod pe;
pub mod spec;
pub mod synth;

pub use cost::{count_flops, count_params, CostReport, CostRow, CountOptions, WindowConvention};
pub use model::{InferenceModel, Model};
pub use spec::{builtin_spec, Builtin, LayerKind, LayerSpec, ModelSpec, Network};
pub use synth::{attend, audio_encode, decode, synthesize, text_encode, SynthOptions, Synthesis};
