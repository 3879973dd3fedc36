//! Forward-mode automatic differentiation.
//!
//! [`Dual`] carries one tangent direction. Nesting it (`Dual<Dual<f64>>`)
//! yields mixed second derivatives, so Jacobians and Lagrangian Hessians come
//! from the same arithmetic, evaluated once per seeded direction (or pair of
//! directions).
//!
//! Model code is written once against [`Scalar`] through [`SmoothMap`] and is
//! then usable as a type-erased [`StageMap`] for every supported scalar type.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};

/// Arithmetic required by model code.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal value with all tangents stripped.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Value plus a single tangent component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Self { re, eps: T::zero() }
    }

    /// Chain rule for a unary function with derivative `d` at `re`.
    #[inline]
    fn chain(self, re: T, d: T) -> Self {
        Self { re, eps: d * self.eps }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let re = self.re / o.re;
        Self { re, eps: (self.eps - re * o.eps) / o.re }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { re: -self.re, eps: -self.eps }
    }
}

impl<T: Real> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real> Real for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::from_f64(1.0) + t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), T::from_f64(1.0) / (T::from_f64(1.0) + self.re * self.re))
    }
    fn atan2(self, x: Self) -> Self {
        let den = x.re * x.re + self.re * self.re;
        Self {
            re: self.re.atan2(x.re),
            eps: (x.re * self.eps - self.re * x.eps) / den,
        }
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::from_f64(0.5) / s)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::from_f64(1.0) / self.re)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::from_f64(1.0) - t * t)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::from_f64(1.0);
        }
        self.chain(self.re.powi(n), self.re.powi(n - 1).scale(n as f64))
    }
}

pub type Dual1 = Dual<f64>;
pub type Dual2 = Dual<Dual<f64>>;

/// Scalars that can drive a type-erased [`StageMap`].
pub trait Scalar: Real {
    fn call(map: &dyn StageMap, x: &[Self], u: &[Self], out: &mut [Self]);
}

impl Scalar for f64 {
    fn call(map: &dyn StageMap, x: &[Self], u: &[Self], out: &mut [Self]) {
        map.eval_f64(x, u, out)
    }
}

impl Scalar for Dual1 {
    fn call(map: &dyn StageMap, x: &[Self], u: &[Self], out: &mut [Self]) {
        map.eval_dual(x, u, out)
    }
}

impl Scalar for Dual2 {
    fn call(map: &dyn StageMap, x: &[Self], u: &[Self], out: &mut [Self]) {
        map.eval_dual2(x, u, out)
    }
}

/// A smooth map `(x, u) -> out`, written generically over the scalar type.
pub trait SmoothMap: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_out(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]);
}

/// Object-safe view of a [`SmoothMap`].
pub trait StageMap: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_out(&self) -> usize;
    fn eval_f64(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn eval_dual(&self, x: &[Dual1], u: &[Dual1], out: &mut [Dual1]);
    fn eval_dual2(&self, x: &[Dual2], u: &[Dual2], out: &mut [Dual2]);
}

impl<M: SmoothMap> StageMap for M {
    fn n_x(&self) -> usize {
        SmoothMap::n_x(self)
    }
    fn n_u(&self) -> usize {
        SmoothMap::n_u(self)
    }
    fn n_out(&self) -> usize {
        SmoothMap::n_out(self)
    }
    fn eval_f64(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.eval(x, u, out)
    }
    fn eval_dual(&self, x: &[Dual1], u: &[Dual1], out: &mut [Dual1]) {
        self.eval(x, u, out)
    }
    fn eval_dual2(&self, x: &[Dual2], u: &[Dual2], out: &mut [Dual2]) {
        self.eval(x, u, out)
    }
}

pub fn eval(map: &dyn StageMap, x: &[f64], u: &[f64]) -> DVector<f64> {
    let mut out = vec![0.0; map.n_out()];
    map.eval_f64(x, u, &mut out);
    DVector::from_vec(out)
}

/// Value and Jacobian blocks `(out, d out/dx, d out/du)`.
pub fn jacobian(
    map: &dyn StageMap,
    x: &[f64],
    u: &[f64],
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (nx, nu, ny) = (map.n_x(), map.n_u(), map.n_out());
    let mut jx = DMatrix::zeros(ny, nx);
    let mut ju = DMatrix::zeros(ny, nu);
    let mut value = DVector::zeros(ny);
    let mut xs: Vec<Dual1> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut us: Vec<Dual1> = u.iter().map(|&v| Dual::constant(v)).collect();
    let mut out = vec![Dual1::zero(); ny];
    if nx + nu == 0 {
        map.eval_dual(&xs, &us, &mut out);
        value.iter_mut().zip(&out).for_each(|(v, o)| *v = o.re);
    }
    for dir in 0..nx + nu {
        if dir < nx {
            xs[dir].eps = 1.0;
        } else {
            us[dir - nx].eps = 1.0;
        }
        map.eval_dual(&xs, &us, &mut out);
        for (r, o) in out.iter().enumerate() {
            if dir < nx {
                jx[(r, dir)] = o.eps;
            } else {
                ju[(r, dir - nx)] = o.eps;
            }
        }
        if dir == 0 {
            value.iter_mut().zip(&out).for_each(|(v, o)| *v = o.re);
        }
        if dir < nx {
            xs[dir].eps = 0.0;
        } else {
            us[dir - nx].eps = 0.0;
        }
    }
    (value, jx, ju)
}

/// `sum_k weights[k] * hess(out_k)` over the stacked variable `[x; u]`.
pub fn weighted_hessian(map: &dyn StageMap, x: &[f64], u: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let (nx, nu, ny) = (map.n_x(), map.n_u(), map.n_out());
    assert_eq!(weights.len(), ny, "one weight per output");
    let n = nx + nu;
    let mut hess = DMatrix::zeros(n, n);
    if weights.iter().all(|&w| w == 0.0) {
        return hess;
    }
    let lift = |v: f64| Dual::constant(Dual::constant(v));
    let mut xs: Vec<Dual2> = x.iter().map(|&v| lift(v)).collect();
    let mut us: Vec<Dual2> = u.iter().map(|&v| lift(v)).collect();
    let mut out = vec![Dual2::zero(); ny];
    let seed = |xs: &mut [Dual2], us: &mut [Dual2], k: usize, inner: f64, outer: f64| {
        let slot = if k < nx { &mut xs[k] } else { &mut us[k - nx] };
        slot.re.eps += inner;
        slot.eps.re += outer;
    };
    for a in 0..n {
        for b in a..n {
            seed(&mut xs, &mut us, a, 1.0, 0.0);
            seed(&mut xs, &mut us, b, 0.0, 1.0);
            map.eval_dual2(&xs, &us, &mut out);
            let v: f64 = out.iter().zip(weights).map(|(o, w)| w * o.eps.eps).sum();
            hess[(a, b)] = v;
            hess[(b, a)] = v;
            seed(&mut xs, &mut us, a, -1.0, 0.0);
            seed(&mut xs, &mut us, b, 0.0, -1.0);
        }
    }
    hess
}
