//! Dynamics models, RK4 discretization and exact sensitivities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ad::{self, Scalar, SmoothMap, StageMap};
use crate::error::{Error, Result};

mod cart_pendulum;
mod single_track;

pub use cart_pendulum::CartPendulum;
pub use single_track::{SingleTrack, SingleTrackParams, IDX_DELTA, IDX_T, IDX_THETA};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeDomain {
    /// `eval` returns the vector field `dx/dt = f_c(x, u)`.
    Continuous,
    /// `eval` returns the successor state `f(x, u)`.
    Discrete,
}

/// A named dynamics model over an immutable [`StageMap`].
#[derive(Clone)]
pub struct DynamicsModel {
    name: String,
    domain: TimeDomain,
    map: Arc<dyn StageMap>,
}

impl std::fmt::Debug for DynamicsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicsModel")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("n_x", &self.n_x())
            .field("n_u", &self.n_u())
            .finish()
    }
}

impl DynamicsModel {
    pub fn new(name: impl Into<String>, domain: TimeDomain, map: Arc<dyn StageMap>) -> Result<Self> {
        if map.n_out() != map.n_x() {
            return Err(Error::dim("dynamics output", map.n_x(), map.n_out()));
        }
        Ok(Self {
            name: name.into(),
            domain,
            map,
        })
    }

    pub fn continuous<M: SmoothMap + 'static>(name: impl Into<String>, map: M) -> Result<Self> {
        Self::new(name, TimeDomain::Continuous, Arc::new(map))
    }

    pub fn discrete<M: SmoothMap + 'static>(name: impl Into<String>, map: M) -> Result<Self> {
        Self::new(name, TimeDomain::Discrete, Arc::new(map))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn n_x(&self) -> usize {
        self.map.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.map.n_u()
    }

    pub fn map(&self) -> &dyn StageMap {
        &*self.map
    }

    pub fn shared_map(&self) -> Arc<dyn StageMap> {
        Arc::clone(&self.map)
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n_x() {
            return Err(Error::dim(format!("{} state", self.name), self.n_x(), x.len()));
        }
        if u.len() != self.n_u() {
            return Err(Error::dim(format!("{} input", self.name), self.n_u(), u.len()));
        }
        Ok(())
    }

    /// Evaluates the vector field or the discrete map, depending on the domain.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(x, u)?;
        if !x.iter().chain(u).all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("{} arguments", self.name)));
        }
        let out = ad::eval(self.map(), x, u);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("{} evaluation", self.name)));
        }
        Ok(out)
    }

    /// RK4 discretization with `substeps` integration steps per sample period.
    pub fn discretize(&self, ts: f64, substeps: usize) -> Result<DynamicsModel> {
        if self.domain != TimeDomain::Continuous {
            return Err(Error::Invalid(format!("{} is already discrete", self.name)));
        }
        if !(ts > 0.0) || substeps == 0 {
            return Err(Error::Invalid(format!(
                "RK4 needs Ts > 0 and at least one substep (got Ts={ts}, substeps={substeps})"
            )));
        }
        let rk4 = Rk4 {
            field: Arc::clone(&self.map),
            ts,
            substeps,
        };
        Self::new(self.name.clone(), TimeDomain::Discrete, Arc::new(rk4))
    }

    /// `(A, B) = (df/dx, df/du)` by forward-mode AD through the discrete map.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dims(x, u)?;
        let (value, a, b) = ad::jacobian(self.map(), x, u);
        if !value.iter().chain(a.iter()).chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("{} Jacobian", self.name)));
        }
        Ok((a, b))
    }
}

/// Classical fourth-order Runge-Kutta map with zero-order-hold input.
pub struct Rk4 {
    field: Arc<dyn StageMap>,
    ts: f64,
    substeps: usize,
}

impl SmoothMap for Rk4 {
    fn n_x(&self) -> usize {
        self.field.n_x()
    }

    fn n_u(&self) -> usize {
        self.field.n_u()
    }

    fn n_out(&self) -> usize {
        self.field.n_x()
    }

    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let n = x.len();
        let h = self.ts / self.substeps as f64;
        let mut state = x.to_vec();
        let mut k = [vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n]];
        let mut probe = vec![S::zero(); n];
        for _ in 0..self.substeps {
            S::call(&*self.field, &state, u, &mut k[0]);
            for (c, frac) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
                for j in 0..n {
                    probe[j] = state[j] + k[c - 1][j].scale(h * frac);
                }
                S::call(&*self.field, &probe, u, &mut k[c]);
            }
            for j in 0..n {
                let incr = k[0][j] + k[1][j].scale(2.0) + k[2][j].scale(2.0) + k[3][j];
                state[j] += incr.scale(h / 6.0);
            }
        }
        out.copy_from_slice(&state);
    }
}

/// One RK4 step of a continuous model, checking every stage for finiteness.
pub fn rk4_step(model: &DynamicsModel, x: &[f64], u: &[f64], ts: f64) -> Result<DVector<f64>> {
    if model.domain() != TimeDomain::Continuous {
        return Err(Error::Invalid(format!("rk4_step needs a continuous model, {} is discrete", model.name())));
    }
    if !(ts > 0.0) {
        return Err(Error::Invalid(format!("Ts must be positive, got {ts}")));
    }
    let x0 = DVector::from_column_slice(x);
    let k1 = model.eval(x, u)?;
    let stage = |xs: DVector<f64>, idx: usize| -> Result<DVector<f64>> {
        model
            .eval(xs.as_slice(), u)
            .map_err(|_| Error::numeric(format!("{} RK4 stage {idx}", model.name())))
    };
    let k2 = stage(&x0 + &k1 * (0.5 * ts), 2)?;
    let k3 = stage(&x0 + &k2 * (0.5 * ts), 3)?;
    let k4 = stage(&x0 + &k3 * ts, 4)?;
    let next = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(format!("{} RK4 update", model.name())));
    }
    Ok(next)
}

/// Affine model `f(x, u) = A x + B u`, continuous or discrete.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Invalid("A must be square".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dim("B rows", a.nrows(), b.nrows()));
        }
        Ok(Self { a, b })
    }
}

impl SmoothMap for LinearModel {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }
    fn n_u(&self) -> usize {
        self.b.ncols()
    }
    fn n_out(&self) -> usize {
        self.a.nrows()
    }
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (c, xc) in x.iter().enumerate() {
                if self.a[(r, c)] != 0.0 {
                    acc += xc.scale(self.a[(r, c)]);
                }
            }
            for (c, uc) in u.iter().enumerate() {
                if self.b[(r, c)] != 0.0 {
                    acc += uc.scale(self.b[(r, c)]);
                }
            }
            *o = acc;
        }
    }
}

/// Which Lagrangian block a stage Hessian belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    /// Stage 0. The initial-condition constraint is affine and adds no curvature.
    Initial,
    Intermediate,
    /// Stage N: only `x_N` enters; `u`, `theta` and `r` are ignored and `q` is the terminal weight.
    Terminal,
}

/// Exact Hessian of the stage Lagrangian
/// `1/2 |x|_Q^2 + 1/2 |u|_R^2 + theta' f(x, u) + mu' h(x, u)`.
///
/// `theta` multiplies the dynamics leaving this stage (the equality multiplier of
/// `x_{i+1} = f(x_i, u_i)`); `mu` multiplies the stage inequality map. For
/// [`StageKind::Terminal`], `constraints` must be a state-only map (`n_u == 0`).
#[allow(clippy::too_many_arguments)]
pub fn hessian_lagrangian_stage(
    model: &DynamicsModel,
    constraints: Option<&dyn StageMap>,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
    mu: &[f64],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    kind: StageKind,
) -> Result<DMatrix<f64>> {
    let nx = model.n_x();
    if x.len() != nx {
        return Err(Error::dim("Hessian state", nx, x.len()));
    }
    if q.shape() != (nx, nx) {
        return Err(Error::dim("Hessian Q rows", nx, q.nrows()));
    }
    if let Some(h) = constraints {
        if mu.len() != h.n_out() {
            return Err(Error::dim("inequality multipliers", h.n_out(), mu.len()));
        }
    } else if mu.iter().any(|&m| m != 0.0) {
        return Err(Error::Invalid("inequality multipliers given without constraints".into()));
    }

    if kind == StageKind::Terminal {
        let mut hess = q.clone();
        if let Some(h) = constraints {
            if h.n_u() != 0 {
                return Err(Error::Invalid("terminal constraint map must be state-only".into()));
            }
            hess += ad::weighted_hessian(h, x, &[], mu);
        }
        return Ok(symmetrize(hess));
    }

    let nu = model.n_u();
    if u.len() != nu {
        return Err(Error::dim("Hessian input", nu, u.len()));
    }
    if theta.len() != nx {
        return Err(Error::dim("dynamics multipliers", nx, theta.len()));
    }
    if r.shape() != (nu, nu) {
        return Err(Error::dim("Hessian R rows", nu, r.nrows()));
    }
    let n = nx + nu;
    let mut hess = DMatrix::zeros(n, n);
    hess.view_mut((0, 0), (nx, nx)).copy_from(q);
    hess.view_mut((nx, nx), (nu, nu)).copy_from(r);
    hess += ad::weighted_hessian(model.map(), x, u, theta);
    if let Some(h) = constraints {
        hess += ad::weighted_hessian(h, x, u, mu);
    }
    if !hess.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("stage Lagrangian Hessian"));
    }
    Ok(symmetrize(hess))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
