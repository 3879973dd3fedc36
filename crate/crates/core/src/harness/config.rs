//! Run configuration: a TOML file with `[benchmark]`, `[policy]` and `[plant]` tables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{IterationPolicy, Mode, ShiftInit, Termination, ZeroOrderPartition, ZoPropagation};
use crate::error::{Error, Result};
use crate::model::{CartPendulum, IDX_THETA};
use crate::mpcc::{build_mpcc_ocp, Interpolation, MpccSetup, Track};
use crate::ocp::{BoxConstraints, HessianPolicy, OcpProblem};
use crate::qp::QpTolerances;
use crate::sensitivity::{AnchorPolicy, QuadratureKind, QuadratureRule, SensitivityPolicy};

fn default_steps() -> usize {
    80
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Label used for output files and comparison rows.
    pub name: String,
    /// Closed-loop samples to simulate (an upper bound for lap-terminated runs).
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub plant: PlantConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkConfig {
    CartPendulum(CartPendulumConfig),
    Mpcc(MpccConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPendulumConfig {
    pub ts: f64,
    pub horizon: usize,
    pub params: CartPendulum,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// Terminal weight; the stage weight `q` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub x_lb: Vec<f64>,
    pub x_ub: Vec<f64>,
    pub u_lb: Vec<f64>,
    pub u_ub: Vec<f64>,
}

impl Default for CartPendulumConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            ts: 0.01,
            horizon: 20,
            params: CartPendulum::default(),
            q: vec![100.0, 1.0, 100.0, 1.0],
            r: vec![10.0],
            w: None,
            x0: vec![0.0, 0.0, -pi, 0.0],
            x_lb: vec![-5.0, -5.0, -2.0 * pi, -10.0],
            x_ub: vec![5.0, 5.0, 2.0 * pi, 10.0],
            u_lb: vec![-4.0],
            u_ub: vec![4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpccConfig {
    /// Track CSV; the built-in oval when absent. Relative paths resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub track: Option<PathBuf>,
    pub closed: bool,
    pub interpolation: Interpolation,
    pub start_progress: f64,
    pub start_speed: f64,
    /// Stop once this many laps are driven; `steps` still caps the run.
    pub laps: f64,
    pub setup: MpccSetup,
}

impl Default for MpccConfig {
    fn default() -> Self {
        Self {
            track: None,
            closed: true,
            interpolation: Interpolation::Linear,
            start_progress: 0.0,
            start_speed: 1.0,
            laps: 1.0,
            setup: MpccSetup::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensitivityConfig {
    Linearize,
    Ftc { rule: QuadratureKind, nodes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnchorConfig {
    Zero,
    Constant {
        x: Vec<f64>,
        u: Vec<f64>,
    },
    /// A constant point drawn uniformly from the state and input boxes with the run seed.
    RandomConstant,
    MeasuredStateLastInput,
    PreviousIterate,
    /// The converged solution of each sample's OCP, computed by a reference SQP solve.
    Optimal {
        #[serde(default = "yes")]
        warm_from_reference: bool,
        #[serde(default = "reference_tol")]
        reference_tol: f64,
    },
}

fn yes() -> bool {
    true
}

fn reference_tol() -> f64 {
    1e-9
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminationConfig {
    KktResidual { tol: f64 },
    SchedulingDelta { tol: f64 },
    FixedIterations { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroOrderConfig {
    pub z: Vec<usize>,
    #[serde(default)]
    pub propagation: ZoPropagation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub sensitivity: SensitivityConfig,
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub hessian: HessianPolicy,
    pub termination: TerminationConfig,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub shift: ShiftInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_order: Option<ZeroOrderConfig>,
    #[serde(default)]
    pub qp: QpTolerances,
    /// Solve the first OCP to convergence with SQP before the closed loop starts.
    #[serde(default)]
    pub initial_solve: bool,
}

fn default_max_outer() -> usize {
    50
}

impl PolicyConfig {
    pub fn sqp(termination: TerminationConfig) -> Self {
        Self {
            sensitivity: SensitivityConfig::Linearize,
            anchors: AnchorConfig::PreviousIterate,
            hessian: HessianPolicy::GaussNewton,
            termination,
            max_outer: default_max_outer(),
            mode: Mode::FullConvergence,
            shift: ShiftInit::Duplicate,
            zero_order: None,
            qp: QpTolerances::default(),
            initial_solve: false,
        }
    }

    pub fn lpv(rule: QuadratureKind, nodes: usize, anchors: AnchorConfig, termination: TerminationConfig) -> Self {
        Self {
            sensitivity: SensitivityConfig::Ftc { rule, nodes },
            anchors,
            ..Self::sqp(termination)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Standard deviation of Gaussian noise added to the measured state.
    pub measurement_noise: f64,
}

/// Everything a closed-loop run needs, resolved from a [`RunConfig`].
pub struct Benchmark {
    pub kind: &'static str,
    /// OCP at the configured initial state; the loop only swaps `x0`.
    pub ocp: OcpProblem,
    /// Progress state index and the value at which the run stops, for lap runs.
    pub stop_progress: Option<(usize, f64)>,
    pub track: Option<Arc<Track>>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and resolves a relative track path against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let BenchmarkConfig::Mpcc(m) = &mut cfg.benchmark {
            if let Some(t) = m.track.as_mut().filter(|t| t.is_relative()) {
                *t = path.parent().unwrap_or(Path::new(".")).join(&*t);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("run name {:?} must be a nonempty file name", self.name));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if !(self.plant.measurement_noise >= 0.0 && self.plant.measurement_noise.is_finite()) {
            return bad("measurement noise must be nonnegative".into());
        }
        match &self.benchmark {
            BenchmarkConfig::CartPendulum(c) => {
                if !(c.ts > 0.0) || c.horizon == 0 {
                    return bad("cart-pendulum ts and horizon must be positive".into());
                }
                let lens = [c.q.len(), c.x0.len(), c.x_lb.len(), c.x_ub.len()];
                if lens.iter().any(|&l| l != 4) || c.w.as_ref().is_some_and(|w| w.len() != 4) {
                    return bad("cart-pendulum state vectors need 4 entries".into());
                }
                if c.r.len() != 1 || c.u_lb.len() != 1 || c.u_ub.len() != 1 {
                    return bad("cart-pendulum input vectors need 1 entry".into());
                }
            }
            BenchmarkConfig::Mpcc(m) => {
                m.setup.validate().map_err(|e| Error::Config(e.to_string()))?;
                if let Some(t) = &m.track {
                    if !t.is_file() {
                        return bad(format!("track file {} does not exist", t.display()));
                    }
                }
                if !(m.laps > 0.0) || !m.start_speed.is_finite() || !m.start_progress.is_finite() {
                    return bad("MPCC laps must be positive and start values finite".into());
                }
            }
        }
        let p = &self.policy;
        match p.termination {
            TerminationConfig::KktResidual { tol } | TerminationConfig::SchedulingDelta { tol } if !(tol > 0.0) => {
                return bad("termination tolerance must be positive".into());
            }
            TerminationConfig::FixedIterations { n: 0 } => return bad("fixed iteration count must be positive".into()),
            _ => {}
        }
        if let SensitivityConfig::Ftc { nodes: 0, .. } = p.sensitivity {
            return bad("quadrature needs at least one node".into());
        }
        if !matches!(p.sensitivity, SensitivityConfig::Ftc { .. }) && !matches!(p.anchors, AnchorConfig::PreviousIterate) {
            return bad("anchors other than previous_iterate need FTC sensitivities".into());
        }
        if let AnchorConfig::Optimal { reference_tol, .. } = p.anchors {
            if !(reference_tol > 0.0) {
                return bad("reference tolerance must be positive".into());
            }
        }
        if p.max_outer == 0 {
            return bad("max_outer must be positive".into());
        }
        p.qp.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(z) = &p.zero_order {
            let nx = match self.benchmark {
                BenchmarkConfig::CartPendulum(_) => 4,
                BenchmarkConfig::Mpcc(_) => 9,
            };
            ZeroOrderPartition::from_z(nx, z.z.clone(), z.propagation).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn benchmark_name(&self) -> &'static str {
        match self.benchmark {
            BenchmarkConfig::CartPendulum(_) => "cart_pendulum",
            BenchmarkConfig::Mpcc(_) => "mpcc",
        }
    }

    pub fn build_benchmark(&self) -> Result<Benchmark> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        match &self.benchmark {
            BenchmarkConfig::CartPendulum(c) => {
                let model = c.params.discrete_model(c.ts)?;
                let boxes = BoxConstraints::new(&c.x_lb, &c.x_ub, &c.u_lb, &c.u_ub)?;
                let ocp = OcpProblem::new(
                    model,
                    Some(Arc::new(boxes.clone())),
                    Some(Arc::new(boxes.terminal())),
                    diag(&c.q),
                    diag(&c.r),
                    diag(c.w.as_deref().unwrap_or(&c.q)),
                    c.horizon,
                    DVector::from_column_slice(&c.x0),
                )?;
                Ok(Benchmark {
                    kind: "cart_pendulum",
                    ocp,
                    stop_progress: None,
                    track: None,
                })
            }
            BenchmarkConfig::Mpcc(m) => {
                let track = match &m.track {
                    Some(p) => Track::from_csv(p, m.closed)?,
                    None => Track::oval()?,
                };
                let track = Arc::new(track.with_interpolation(m.interpolation)?);
                let x0 = m.setup.start_state(&track, m.start_progress, m.start_speed)?;
                let ocp = build_mpcc_ocp(&m.setup, Arc::clone(&track), &x0)?;
                Ok(Benchmark {
                    kind: "mpcc",
                    ocp,
                    stop_progress: Some((IDX_THETA, m.start_progress + m.laps * track.length())),
                    track: Some(track),
                })
            }
        }
    }

    /// Box bounds used to draw random constant anchors.
    fn anchor_boxes(&self, ocp: &OcpProblem) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        match &self.benchmark {
            BenchmarkConfig::CartPendulum(c) => (
                c.x_lb.iter().copied().zip(c.x_ub.iter().copied()).collect(),
                c.u_lb.iter().copied().zip(c.u_ub.iter().copied()).collect(),
            ),
            // around the start state: unbounded MPCC states have no natural box
            BenchmarkConfig::Mpcc(m) => (
                ocp.x0.iter().map(|&v| (v - 0.1, v + 0.1)).collect(),
                vec![(-0.1, 0.1), (-0.1, 0.1), (0.0, m.start_speed), (0.0, 0.0)],
            ),
        }
    }

    /// Engine policy for this config. `Optimal` anchors map to an external
    /// sequence supplied per sample through the engine context.
    pub fn iteration_policy(&self, ocp: &OcpProblem) -> Result<IterationPolicy> {
        let p = &self.policy;
        let sensitivity = match p.sensitivity {
            SensitivityConfig::Linearize => SensitivityPolicy::Linearize,
            SensitivityConfig::Ftc { rule, nodes } => SensitivityPolicy::FtcQuadrature(QuadratureRule::new(rule, nodes)?),
        };
        let anchors = match &p.anchors {
            AnchorConfig::Zero => AnchorPolicy::Zero,
            AnchorConfig::Constant { x, u } => AnchorPolicy::ConstantPoint {
                x: DVector::from_column_slice(x),
                u: DVector::from_column_slice(u),
            },
            AnchorConfig::RandomConstant => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let (xb, ub) = self.anchor_boxes(ocp);
                let mut draw = |b: &[(f64, f64)]| {
                    DVector::from_iterator(b.len(), b.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }))
                };
                let x = draw(&xb);
                let u = draw(&ub);
                AnchorPolicy::ConstantPoint { x, u }
            }
            AnchorConfig::MeasuredStateLastInput => AnchorPolicy::MeasuredStateLastInput,
            AnchorConfig::PreviousIterate => AnchorPolicy::PreviousIterate,
            AnchorConfig::Optimal { .. } => AnchorPolicy::ExternalSequence(None),
        };
        let termination = match p.termination {
            TerminationConfig::KktResidual { tol } => Termination::KktResidual(tol),
            TerminationConfig::SchedulingDelta { tol } => Termination::SchedulingDelta(tol),
            TerminationConfig::FixedIterations { n } => Termination::FixedIterations(n),
        };
        let zero_order = match &p.zero_order {
            Some(z) => Some(ZeroOrderPartition::from_z(ocp.n_x(), z.z.clone(), z.propagation)?),
            None => None,
        };
        let policy = IterationPolicy {
            sensitivity,
            anchors,
            hessian: p.hessian,
            termination,
            max_outer: p.max_outer,
            mode: p.mode,
            zero_order,
            qp: p.qp,
            shift: p.shift,
        };
        policy.validate()?;
        Ok(policy)
    }
}
