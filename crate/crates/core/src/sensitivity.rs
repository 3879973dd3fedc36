//! Stage-wise sensitivity matrices for the QP subproblem.
//!
//! Two policies produce the same data layout:
//!
//! * pointwise linearization: Jacobians of the dynamics, constraints and
//!   cost outputs evaluated at the current iterate;
//! * FTC quadrature: Jacobians averaged along the segment from an anchor
//!   point `(x~, u~)` to the iterate, `int_0^1 J(x~ + l (x^ - x~), u~ + l (u^ - u~)) dl`,
//!   approximated with a fixed quadrature rule.
//!
//! The offset terms (`f(x^, u^) - x^_{i+1}`, `h(x^, u^)` and the output value)
//! do not depend on the policy and are always computed by the same routine.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::{self, StageMap};
use crate::error::{Error, Result};
use crate::model::DynamicsModel;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    /// Midpoint rule, nodes at `(j + 1/2) / n`.
    Rectangular,
    GaussLegendre,
}

/// Quadrature on `[0, 1]` with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    kind: QuadratureKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(kind: QuadratureKind, n: usize) -> Result<Self> {
        match kind {
            QuadratureKind::Rectangular => Self::rectangular(n),
            QuadratureKind::GaussLegendre => Self::gauss_legendre(n),
        }
    }

    pub fn rectangular(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("quadrature needs at least one node".into()));
        }
        let w = 1.0 / n as f64;
        Ok(Self {
            kind: QuadratureKind::Rectangular,
            nodes: (0..n).map(|j| (j as f64 + 0.5) * w).collect(),
            weights: vec![w; n],
        })
    }

    /// Gauss-Legendre nodes by Newton iteration on `P_n`, mapped from `[-1, 1]` to `[0, 1]`.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("quadrature needs at least one node".into()));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            // ascending order on [0, 1]
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(Self {
            kind: QuadratureKind::GaussLegendre,
            nodes,
            weights,
        })
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule to a scalar function on `[0, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&l, &w)| w * f(l)).sum()
    }
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SensitivityPolicy {
    Linearize,
    FtcQuadrature(QuadratureRule),
}

/// Stage-wise anchor sequences `(X~, U~)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSequence {
    /// `N + 1` entries.
    pub states: Vec<DVector<f64>>,
    /// `N` entries.
    pub inputs: Vec<DVector<f64>>,
}

impl AnchorSequence {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            states: t.states.clone(),
            inputs: t.inputs.clone(),
        }
    }

    fn constant(x: &DVector<f64>, u: &DVector<f64>, horizon: usize) -> Self {
        Self {
            states: vec![x.clone(); horizon + 1],
            inputs: vec![u.clone(); horizon],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnchorPolicy {
    Zero,
    ConstantPoint { x: DVector<f64>, u: DVector<f64> },
    /// `x~_i = x[k]`, `u~_i = u[k-1]` with `u[-1] = 0`.
    MeasuredStateLastInput,
    PreviousIterate,
    /// Fixed sequence, or `None` to take the reference trajectory handed to
    /// [`select_anchors`] (the converged optimum in the optimal-anchor study).
    ExternalSequence(Option<Arc<AnchorSequence>>),
}

impl AnchorPolicy {
    pub fn is_previous_iterate(&self) -> bool {
        matches!(self, AnchorPolicy::PreviousIterate)
    }
}

/// Stage anchor inputs available at sample `k`.
#[derive(Clone, Copy, Debug)]
pub struct AnchorContext<'a> {
    pub k: usize,
    pub x_meas: &'a DVector<f64>,
    /// `u[k-1]`; `None` at `k = 0`.
    pub u_prev: Option<&'a DVector<f64>>,
    pub reference: Option<&'a Trajectory>,
}

pub fn select_anchors(policy: &AnchorPolicy, ctx: &AnchorContext<'_>, iterate: &Trajectory) -> Result<AnchorSequence> {
    let (n, nx, nu) = (iterate.horizon(), iterate.n_x(), iterate.n_u());
    let seq = match policy {
        AnchorPolicy::Zero => AnchorSequence::constant(&DVector::zeros(nx), &DVector::zeros(nu), n),
        AnchorPolicy::ConstantPoint { x, u } => {
            if x.len() != nx {
                return Err(Error::dim("constant anchor state", nx, x.len()));
            }
            if u.len() != nu {
                return Err(Error::dim("constant anchor input", nu, u.len()));
            }
            AnchorSequence::constant(x, u, n)
        }
        AnchorPolicy::MeasuredStateLastInput => {
            let u = match (ctx.k, ctx.u_prev) {
                (0, _) | (_, None) => DVector::zeros(nu),
                (_, Some(u)) => u.clone(),
            };
            AnchorSequence::constant(ctx.x_meas, &u, n)
        }
        AnchorPolicy::PreviousIterate => AnchorSequence::from_trajectory(iterate),
        AnchorPolicy::ExternalSequence(Some(seq)) => (**seq).clone(),
        AnchorPolicy::ExternalSequence(None) => {
            AnchorSequence::from_trajectory(ctx.reference.ok_or(Error::MissingReference)?)
        }
    };
    if seq.states.len() != n + 1 || seq.inputs.len() != n {
        return Err(Error::dim("anchor sequence length", n, seq.inputs.len()));
    }
    Ok(seq)
}

/// Sensitivities and value of one stage map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSensitivity {
    /// Map value at the iterate.
    pub value: DVector<f64>,
    pub jx: DMatrix<f64>,
    pub ju: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSensitivities {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    /// `f(x^_i, u^_i) - x^_{i+1}`
    pub offset_x: DVector<f64>,
    /// `h(x^_i, u^_i)`
    pub offset_h: DVector<f64>,
    /// Cost-output sensitivities, if the problem has an output cost.
    pub output: Option<MapSensitivity>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSensitivities {
    pub hx: DMatrix<f64>,
    pub offset_h: DVector<f64>,
    pub output: Option<MapSensitivity>,
}

/// The maps evaluated at one stage.
#[derive(Clone, Copy)]
pub struct StageMaps<'a> {
    pub dynamics: &'a DynamicsModel,
    pub constraints: Option<&'a dyn StageMap>,
    pub output: Option<&'a dyn StageMap>,
}

/// Pointwise Jacobian of `map`, or its FTC average between `anchor` and the iterate.
fn map_sensitivity(
    map: &dyn StageMap,
    x: &[f64],
    u: &[f64],
    ftc: Option<(&[f64], &[f64], &QuadratureRule)>,
    what: &str,
) -> Result<MapSensitivity> {
    let value = ad::eval(map, x, u);
    if !value.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(format!("{what} value")));
    }
    let (jx, ju) = match ftc {
        None => {
            let (_, jx, ju) = ad::jacobian(map, x, u);
            if !jx.iter().chain(ju.iter()).all(|v| v.is_finite()) {
                return Err(Error::numeric(format!("{what} Jacobian")));
            }
            (jx, ju)
        }
        Some((xa, ua, rule)) => integrated_jacobian(map, x, u, xa, ua, rule, what)?,
    };
    Ok(MapSensitivity { value, jx, ju })
}

fn integrated_jacobian(
    map: &dyn StageMap,
    x: &[f64],
    u: &[f64],
    xa: &[f64],
    ua: &[f64],
    rule: &QuadratureRule,
    what: &str,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (ny, nx, nu) = (map.n_out(), map.n_x(), map.n_u());
    let mut jx = DMatrix::zeros(ny, nx);
    let mut ju = DMatrix::zeros(ny, nu);
    let mut xs = vec![0.0; nx];
    let mut us = vec![0.0; nu];
    for (j, (&lambda, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        for k in 0..nx {
            xs[k] = xa[k] + lambda * (x[k] - xa[k]);
        }
        for k in 0..nu {
            us[k] = ua[k] + lambda * (u[k] - ua[k]);
        }
        let (_, njx, nju) = ad::jacobian(map, &xs, &us);
        if !njx.iter().chain(nju.iter()).all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("{what} Jacobian at quadrature node {j}")));
        }
        jx += njx * w;
        ju += nju * w;
    }
    Ok((jx, ju))
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::dim(what.to_string(), n, v.len()));
    }
    Ok(())
}

fn stage_sensitivities(
    maps: StageMaps<'_>,
    x: &[f64],
    u: &[f64],
    x_next: &[f64],
    ftc: Option<(&[f64], &[f64], &QuadratureRule)>,
) -> Result<StageSensitivities> {
    let model = maps.dynamics;
    let (nx, nu) = (model.n_x(), model.n_u());
    check_len("stage state", x, nx)?;
    check_len("stage input", u, nu)?;
    check_len("next state", x_next, nx)?;
    if let Some((xa, ua, _)) = ftc {
        check_len("anchor state", xa, nx)?;
        check_len("anchor input", ua, nu)?;
        if !xa.iter().chain(ua).all(|v| v.is_finite()) {
            return Err(Error::numeric("anchor point"));
        }
    }
    if !x.iter().chain(u).chain(x_next).all(|v| v.is_finite()) {
        return Err(Error::numeric("iterate"));
    }
    let dyn_sens = map_sensitivity(model.map(), x, u, ftc, "dynamics")?;
    let offset_x = &dyn_sens.value - DVector::from_column_slice(x_next);
    let (hx, hu, offset_h) = match maps.constraints {
        Some(h) => {
            let s = map_sensitivity(h, x, u, ftc, "constraints")?;
            (s.jx, s.ju, s.value)
        }
        None => (DMatrix::zeros(0, nx), DMatrix::zeros(0, nu), DVector::zeros(0)),
    };
    let output = maps
        .output
        .map(|c| map_sensitivity(c, x, u, ftc, "output"))
        .transpose()?;
    Ok(StageSensitivities {
        a: dyn_sens.jx,
        b: dyn_sens.ju,
        hx,
        hu,
        offset_x,
        offset_h,
        output,
    })
}

/// Pointwise Jacobians at `(x^_i, u^_i)` plus the residual offsets.
pub fn linearize_stage(maps: StageMaps<'_>, x: &[f64], u: &[f64], x_next: &[f64]) -> Result<StageSensitivities> {
    stage_sensitivities(maps, x, u, x_next, None)
}

/// FTC-integrated Jacobians between the anchor `(x~_i, u~_i)` and the iterate.
#[allow(clippy::too_many_arguments)]
pub fn ftc_stage(
    maps: StageMaps<'_>,
    x: &[f64],
    u: &[f64],
    x_next: &[f64],
    x_anchor: &[f64],
    u_anchor: &[f64],
    rule: &QuadratureRule,
) -> Result<StageSensitivities> {
    stage_sensitivities(maps, x, u, x_next, Some((x_anchor, u_anchor, rule)))
}

/// Terminal constraint (state-only map) and output sensitivities at `x^_N`.
///
/// The output map takes `(x, u)`; at the terminal stage it is evaluated with
/// `u = 0` and only its state Jacobian is used.
pub fn terminal_sensitivities(
    constraints: Option<&dyn StageMap>,
    output: Option<&dyn StageMap>,
    x: &[f64],
    ftc: Option<(&[f64], &QuadratureRule)>,
) -> Result<TerminalSensitivities> {
    let nx = x.len();
    let (hx, offset_h) = match constraints {
        Some(h) => {
            let s = map_sensitivity(h, x, &[], ftc.map(|(xa, r)| (xa, &[][..], r)), "terminal constraints")?;
            (s.jx, s.value)
        }
        None => (DMatrix::zeros(0, nx), DVector::zeros(0)),
    };
    let output = match output {
        Some(c) => {
            let u0 = vec![0.0; c.n_u()];
            Some(map_sensitivity(c, x, &u0, ftc.map(|(xa, r)| (xa, &u0[..], r)), "terminal output")?)
        }
        None => None,
    };
    Ok(TerminalSensitivities { hx, offset_h, output })
}

/// `|A~(x - x~) + B~(u - u~) + f(x~, u~) - f(x, u)|_inf` for the quadrature-integrated `A~, B~`.
pub fn ftc_embedding_residual(
    map: &dyn StageMap,
    x: &[f64],
    u: &[f64],
    x_anchor: &[f64],
    u_anchor: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    check_len("state", x, map.n_x())?;
    check_len("input", u, map.n_u())?;
    check_len("anchor state", x_anchor, map.n_x())?;
    check_len("anchor input", u_anchor, map.n_u())?;
    let (a, b) = integrated_jacobian(map, x, u, x_anchor, u_anchor, rule, "embedding")?;
    let dx = DVector::from_column_slice(x) - DVector::from_column_slice(x_anchor);
    let du = DVector::from_column_slice(u) - DVector::from_column_slice(u_anchor);
    let embedded = a * dx + b * du + ad::eval(map, x_anchor, u_anchor);
    Ok((embedded - ad::eval(map, x, u)).amax())
}
