use nalgebra::DVector;

use crate::error::{Error, Result};

/// Primal-dual iterate over a horizon of `N` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_N`
    pub states: Vec<DVector<f64>>,
    /// `u_0 .. u_{N-1}`
    pub inputs: Vec<DVector<f64>>,
    /// Dynamics multipliers `theta_0 .. theta_N`; `theta_0` belongs to the initial condition.
    pub eq_mult: Vec<DVector<f64>>,
    /// Inequality multipliers `mu_0 .. mu_N`; the last entry is the terminal set.
    pub ineq_mult: Vec<DVector<f64>>,
    /// Scheduling sequence `rho_i = [x_i; u_i]`, `i < N`.
    pub scheduling: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    /// All-zero multipliers, states held at `x0`, inputs zero.
    pub fn constant(x0: &DVector<f64>, n_u: usize, horizon: usize, n_h: usize, n_h_terminal: usize) -> Self {
        let n_x = x0.len();
        let mut ineq_mult = vec![DVector::zeros(n_h); horizon];
        ineq_mult.push(DVector::zeros(n_h_terminal));
        Self {
            states: vec![x0.clone(); horizon + 1],
            inputs: vec![DVector::zeros(n_u); horizon],
            eq_mult: vec![DVector::zeros(n_x); horizon + 1],
            ineq_mult,
            scheduling: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_x(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn n_u(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn validate(&self, n_x: usize, n_u: usize, horizon: usize) -> Result<()> {
        if self.inputs.len() != horizon {
            return Err(Error::dim("trajectory inputs", horizon, self.inputs.len()));
        }
        if self.states.len() != horizon + 1 {
            return Err(Error::dim("trajectory states", horizon + 1, self.states.len()));
        }
        if self.eq_mult.len() != horizon + 1 {
            return Err(Error::dim("dynamics multipliers", horizon + 1, self.eq_mult.len()));
        }
        if self.ineq_mult.len() != horizon + 1 {
            return Err(Error::dim("inequality multipliers", horizon + 1, self.ineq_mult.len()));
        }
        for x in self.states.iter().chain(&self.eq_mult) {
            if x.len() != n_x {
                return Err(Error::dim("trajectory state entry", n_x, x.len()));
            }
        }
        for u in &self.inputs {
            if u.len() != n_u {
                return Err(Error::dim("trajectory input entry", n_u, u.len()));
            }
        }
        if let Some(p) = &self.scheduling {
            if p.len() != horizon {
                return Err(Error::dim("scheduling sequence", horizon, p.len()));
            }
            if let Some(bad) = p.iter().find(|r| r.len() != n_x + n_u) {
                return Err(Error::dim("scheduling entry", n_x + n_u, bad.len()));
            }
        }
        Ok(())
    }

    /// `rho_i = [x_i; u_i]` for `i < N`.
    pub fn scheduling_from_iterate(&self) -> Vec<DVector<f64>> {
        self.inputs
            .iter()
            .zip(&self.states)
            .map(|(u, x)| DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied()))
            .collect()
    }

    pub fn refresh_scheduling(&mut self) {
        self.scheduling = Some(self.scheduling_from_iterate());
    }

    /// Drops the first stage and duplicates the last one.
    pub fn shifted(&self) -> Self {
        fn shift(v: &[DVector<f64>]) -> Vec<DVector<f64>> {
            let mut out: Vec<_> = v.iter().skip(1).cloned().collect();
            if let Some(last) = v.last() {
                out.push(last.clone());
            }
            out
        }
        let n = self.horizon();
        // the terminal multiplier has a different size than stage ones, keep it in place
        let mut ineq: Vec<_> = self.ineq_mult[..n].iter().skip(1).cloned().collect();
        if n > 0 {
            ineq.push(self.ineq_mult[n - 1].clone());
        }
        ineq.push(self.ineq_mult[n].clone());
        let mut out = Self {
            states: shift(&self.states),
            inputs: shift(&self.inputs),
            eq_mult: shift(&self.eq_mult),
            ineq_mult: ineq,
            scheduling: None,
        };
        if self.scheduling.is_some() {
            out.refresh_scheduling();
        }
        out
    }

    /// Largest absolute entry over states and inputs of `self - other`.
    pub fn primal_distance(&self, other: &Trajectory) -> f64 {
        let d = |a: &[DVector<f64>], b: &[DVector<f64>]| {
            a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
        };
        d(&self.states, &other.states).max(d(&self.inputs, &other.inputs))
    }
}

/// `max_i |a_i - b_i|_inf` over two stage-wise sequences.
pub fn sequence_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}
