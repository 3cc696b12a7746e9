//! Benchmark problems, ground-truth densities and the error metrics.

mod dataset;
mod eval;
mod oracles;
mod problems;
mod report;

pub use dataset::{Dataset, Provenance};
pub use eval::{
    eval_forward_1d, eval_hd, eval_inverse_1d, ConditionalModel, ExactPosterior, ExactSampler, ForwardPoint, HdPoint, Histogram,
    InversePoint, KlEstimator, DEGENERATE_EXCLUSION, MODE_PROMINENCE,
};
pub use oracles::{find_modes, true_conditional_1d, true_inverse_1d};
pub use problems::{gen_1d, gen_hd, Function1D, Noise1D, NoiseHD, Problem, Problem1D, ProblemHD, ProblemSpec, GENERATOR_VERSION};
pub use report::{
    default_sweep_grid, evaluate, summarize_sweep, Aggregates, Band, BenchmarkReport, EvalConfig, Seeds, SweepCell,
    SweepSummary, Timings,
};
