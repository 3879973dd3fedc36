//! Preset run sets behind `unimpc reproduce`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AnchorConfig, BenchmarkConfig, CartPendulumConfig, MpccConfig, PlantConfig, PolicyConfig, RunConfig, TerminationConfig};
use super::report::write_comparison;
use super::run::{compare_policies, Comparison};
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::sensitivity::QuadratureKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Residuals over 10 fixed iterations on the first cart-pendulum OCP.
    Fig1,
    /// Iterations per sample along the 80-step cart-pendulum rollout.
    Fig2,
    /// Rollout averages of the same runs as `Fig2`.
    Table2,
    /// One RTI lap of the oval per anchor choice.
    Mpcc,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "table2" => Ok(Self::Table2),
            "mpcc" => Ok(Self::Mpcc),
            other => Err(Error::Config(format!("unknown reproduction target {other:?} (fig1, fig2, table2, mpcc)"))),
        }
    }
}

/// Number of quadrature nodes for the cart-pendulum LPV runs.
pub const CART_NODES: usize = 20;
/// Gauss-Legendre nodes for the MPCC LPV runs.
pub const MPCC_NODES: usize = 40;

fn cart_runs(steps: usize, termination: TerminationConfig, warm_from_reference: bool, seed: u64) -> Vec<RunConfig> {
    let lpv = |anchors| PolicyConfig::lpv(QuadratureKind::Rectangular, CART_NODES, anchors, termination);
    let runs = [
        ("sqp", PolicyConfig::sqp(termination)),
        ("lpv_zero", lpv(AnchorConfig::Zero)),
        ("lpv_const", lpv(AnchorConfig::RandomConstant)),
        ("lpv_measured", lpv(AnchorConfig::MeasuredStateLastInput)),
        ("lpv_previous", lpv(AnchorConfig::PreviousIterate)),
        (
            "lpv_optimal",
            lpv(AnchorConfig::Optimal {
                warm_from_reference,
                reference_tol: 1e-9,
            }),
        ),
    ];
    runs.into_iter()
        .map(|(name, policy)| RunConfig {
            name: name.into(),
            steps,
            seed,
            out_dir: None,
            benchmark: BenchmarkConfig::CartPendulum(CartPendulumConfig::default()),
            policy,
            plant: PlantConfig::default(),
        })
        .collect()
}

fn mpcc_runs(seed: u64) -> Vec<RunConfig> {
    let rti = |mut p: PolicyConfig| {
        p.mode = Mode::Rti;
        p.initial_solve = true;
        p
    };
    let term = TerminationConfig::KktResidual { tol: 1e-6 };
    let lpv = |anchors| rti(PolicyConfig::lpv(QuadratureKind::GaussLegendre, MPCC_NODES, anchors, term));
    let runs = [
        ("sqp", rti(PolicyConfig::sqp(term))),
        ("lpv_zero", lpv(AnchorConfig::Zero)),
        ("lpv_const", lpv(AnchorConfig::RandomConstant)),
        ("lpv_measured", lpv(AnchorConfig::MeasuredStateLastInput)),
        ("lpv_previous", lpv(AnchorConfig::PreviousIterate)),
    ];
    runs.into_iter()
        .map(|(name, policy)| RunConfig {
            name: name.into(),
            steps: 400,
            seed,
            out_dir: None,
            benchmark: BenchmarkConfig::Mpcc(MpccConfig::default()),
            policy,
            plant: PlantConfig::default(),
        })
        .collect()
}

/// The run configurations behind a reproduction target.
pub fn presets(target: Target, seed: u64) -> Vec<RunConfig> {
    match target {
        Target::Fig1 => cart_runs(1, TerminationConfig::FixedIterations { n: 10 }, false, seed),
        Target::Fig2 | Target::Table2 => cart_runs(80, TerminationConfig::SchedulingDelta { tol: 1e-6 }, true, seed),
        Target::Mpcc => mpcc_runs(seed),
    }
}

/// Runs a target and writes its comparison plus the exact configs used into `out`.
pub fn reproduce(target: Target, seed: u64, out: &Path) -> Result<Comparison> {
    let cfgs = presets(target, seed);
    let cmp = compare_policies(&cfgs)?;
    write_comparison(&cmp, out)?;
    for c in &cfgs {
        let path = out.join(&c.name).join("config.toml");
        std::fs::write(&path, c.to_toml_string()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(cmp)
}
