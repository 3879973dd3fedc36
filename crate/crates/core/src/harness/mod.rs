//! Closed-loop experiments: configuration, simulation, aggregation and file output.

mod config;
mod report;
mod reproduce;
mod run;

pub use config::{
    AnchorConfig, Benchmark, BenchmarkConfig, CartPendulumConfig, MpccConfig, PlantConfig, PolicyConfig, RunConfig, SensitivityConfig,
    TerminationConfig, ZeroOrderConfig,
};
pub use report::{
    read_rollout, read_trace, recompute_aggregates, rollout_header, write_comparison, write_report, FIG1_HEADER, FIG2_HEADER, TABLE_HEADER,
    TRACE_HEADER,
};
pub use reproduce::{presets, reproduce, Target, CART_NODES, MPCC_NODES};
pub use run::{compare_policies, run_closed_loop, Aggregates, Comparison, RunReport, RunStatus, SampleRecord, TraceRow};
