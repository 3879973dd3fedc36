//! Contouring control for the single-track car: track geometry, contouring
//! and lag errors, progress reward and softened track constraints.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, SmoothMap, StageMap};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, SingleTrack, SingleTrackParams, IDX_DELTA, IDX_T, IDX_THETA};
use crate::ocp::{BoxConstraints, OcpProblem, OutputCost, StackedMaps};
use crate::trajectory::Trajectory;

/// The benchmark oval: two 1.43 m straights joined by 0.5 m semicircles.
pub const OVAL_CSV: &str = include_str!("../assets/oval_track.csv");

/// Largest allowed gap between the first and last sample of a closed track.
pub const CLOSURE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    CubicSpline,
}

/// Per-segment cubic `a + b t + c t^2 + d t^3` for both coordinates.
#[derive(Clone, Debug, PartialEq)]
struct SplineSegments {
    x: Vec<[f64; 4]>,
    y: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    s: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    closed: bool,
    interpolation: Interpolation,
    spline: Option<SplineSegments>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPose {
    pub point: [f64; 2],
    pub tangent: [f64; 2],
    /// Tangent rotated a quarter turn counterclockwise (points to the left).
    pub normal: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContouringOutput {
    pub lag: f64,
    pub contouring: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct TrackRow {
    s: f64,
    x: f64,
    y: f64,
    w: f64,
}

impl Track {
    pub fn from_samples(s: Vec<f64>, x: Vec<f64>, y: Vec<f64>, w: Vec<f64>, closed: bool) -> Result<Self> {
        let n = s.len();
        if n < 2 || x.len() != n || y.len() != n || w.len() != n {
            return Err(Error::Invalid("track needs at least two samples of s, x, y, w".into()));
        }
        if !s.iter().chain(&x).chain(&y).chain(&w).all(|v| v.is_finite()) {
            return Err(Error::Invalid("track samples must be finite".into()));
        }
        if let Some(k) = s.windows(2).position(|p| p[1] <= p[0]) {
            return Err(Error::Invalid(format!("track arc length is not increasing at row {}", k + 1)));
        }
        if let Some(k) = w.iter().position(|&v| v <= 0.0) {
            return Err(Error::Invalid(format!("track half-width must be positive (row {k})")));
        }
        if closed {
            let gap = (x[n - 1] - x[0]).hypot(y[n - 1] - y[0]);
            if gap > CLOSURE_TOL {
                return Err(Error::Invalid(format!("closed track has a closure gap of {gap:e} m")));
            }
        }
        Ok(Self {
            s,
            x,
            y,
            w,
            closed,
            interpolation: Interpolation::Linear,
            spline: None,
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R, closed: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Invalid(format!("track CSV: {e}")))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "x", "y", "w"] {
            return Err(Error::Invalid(format!("track CSV header must be s,x,y,w (got {})", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let (mut s, mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, row) in rdr.deserialize::<TrackRow>().enumerate() {
            let row = row.map_err(|e| Error::Invalid(format!("track CSV row {}: {e}", k + 1)))?;
            s.push(row.s);
            x.push(row.x);
            y.push(row.y);
            w.push(row.w);
        }
        Self::from_samples(s, x, y, w, closed)
    }

    pub fn from_csv(path: &Path, closed: bool) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f, closed)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for k in 0..self.s.len() {
            wtr.serialize(TrackRow {
                s: self.s[k],
                x: self.x[k],
                y: self.y[k],
                w: self.w[k],
            })
            .map_err(|e| Error::Invalid(format!("track CSV: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Invalid(format!("track CSV: {e}")))?;
        Ok(())
    }

    /// The shipped benchmark oval.
    pub fn oval() -> Result<Self> {
        Self::from_csv_reader(OVAL_CSV.as_bytes(), true)
    }

    /// A stadium: bottom straight heading +x, counterclockwise, starting at its left end.
    /// `s` is the cumulative chord length of the samples.
    pub fn stadium(straight: f64, radius: f64, half_width: f64, spacing: f64) -> Result<Self> {
        if !(straight > 0.0 && radius > 0.0 && half_width > 0.0 && spacing > 0.0) {
            return Err(Error::Invalid("stadium dimensions must be positive".into()));
        }
        let pi = std::f64::consts::PI;
        let n_str = (straight / spacing).ceil() as usize;
        let n_arc = (pi * radius / spacing).ceil() as usize;
        let h = straight / 2.0;
        let mut pts = Vec::new();
        for k in 0..n_str {
            pts.push((-h + straight * k as f64 / n_str as f64, -radius));
        }
        for k in 0..n_arc {
            let a = -pi / 2.0 + pi * k as f64 / n_arc as f64;
            pts.push((h + radius * a.cos(), radius * a.sin()));
        }
        for k in 0..n_str {
            pts.push((h - straight * k as f64 / n_str as f64, radius));
        }
        for k in 0..n_arc {
            let a = pi / 2.0 + pi * k as f64 / n_arc as f64;
            pts.push((-h + radius * a.cos(), radius * a.sin()));
        }
        pts.push(pts[0]);
        let mut s = vec![0.0];
        for p in pts.windows(2) {
            let d = (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1);
            s.push(s.last().copied().unwrap_or(0.0) + d);
        }
        let (x, y) = pts.into_iter().unzip();
        let w = vec![half_width; s.len()];
        Self::from_samples(s, x, y, w, true)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Result<Self> {
        self.interpolation = interpolation;
        self.spline = match interpolation {
            Interpolation::Linear => None,
            Interpolation::CubicSpline => Some(SplineSegments {
                x: spline_coefficients(&self.s, &self.x, self.closed)?,
                y: spline_coefficients(&self.s, &self.y, self.closed)?,
            }),
        };
        Ok(self)
    }

    pub fn length(&self) -> f64 {
        self.s[self.s.len() - 1] - self.s[0]
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn samples(&self) -> usize {
        self.s.len()
    }

    /// Segment index and the offset within it, after wrapping on closed tracks.
    fn locate(&self, theta: f64) -> Result<(usize, f64)> {
        if !theta.is_finite() {
            return Err(Error::Invalid("track progress must be finite".into()));
        }
        let (s0, len) = (self.s[0], self.length());
        let t = if self.closed {
            s0 + (theta - s0).rem_euclid(len)
        } else if theta < s0 - 1e-12 || theta > s0 + len + 1e-12 {
            return Err(Error::Invalid(format!("progress {theta} outside the open track [{s0}, {}]", s0 + len)));
        } else {
            theta.clamp(s0, s0 + len)
        };
        let seg = self.s.partition_point(|&v| v <= t).saturating_sub(1).min(self.s.len() - 2);
        Ok((seg, t))
    }

    /// Reference point and unit tangent at progress `theta`, differentiable in `theta`.
    ///
    /// Wrapping shifts `theta` by a multiple of the length, which has zero derivative.
    fn reference<S: Scalar>(&self, theta: S) -> (S, S, S, S) {
        let (seg, wrapped) = match self.locate(theta.value()) {
            Ok(v) => v,
            Err(_) => {
                let nan = S::from_f64(f64::NAN);
                return (nan, nan, nan, nan);
            }
        };
        let t = theta + S::from_f64(wrapped - theta.value() - self.s[seg]);
        match &self.spline {
            None => {
                let ds = self.s[seg + 1] - self.s[seg];
                let (dx, dy) = ((self.x[seg + 1] - self.x[seg]) / ds, (self.y[seg + 1] - self.y[seg]) / ds);
                let norm = dx.hypot(dy);
                let px = S::from_f64(self.x[seg]) + t.scale(dx);
                let py = S::from_f64(self.y[seg]) + t.scale(dy);
                (px, py, S::from_f64(dx / norm), S::from_f64(dy / norm))
            }
            Some(sp) => {
                let cubic = |c: &[f64; 4]| {
                    let v = S::from_f64(c[0]) + t * (S::from_f64(c[1]) + t * (S::from_f64(c[2]) + t.scale(c[3])));
                    let d = S::from_f64(c[1]) + t * (S::from_f64(2.0 * c[2]) + t.scale(3.0 * c[3]));
                    (v, d)
                };
                let (px, dx) = cubic(&sp.x[seg]);
                let (py, dy) = cubic(&sp.y[seg]);
                let norm = (dx * dx + dy * dy).sqrt();
                (px, py, dx / norm, dy / norm)
            }
        }
    }

    /// Piecewise-linear half-width at `theta`.
    fn half_width<S: Scalar>(&self, theta: S) -> S {
        let Ok((seg, wrapped)) = self.locate(theta.value()) else {
            return S::from_f64(f64::NAN);
        };
        let t = theta + S::from_f64(wrapped - theta.value() - self.s[seg]);
        let slope = (self.w[seg + 1] - self.w[seg]) / (self.s[seg + 1] - self.s[seg]);
        S::from_f64(self.w[seg]) + t.scale(slope)
    }

    pub fn half_width_at(&self, theta: f64) -> Result<f64> {
        self.locate(theta)?;
        Ok(self.half_width(theta))
    }

    pub fn project_progress(&self, theta: f64) -> Result<TrackPose> {
        self.locate(theta)?;
        let (px, py, tx, ty) = self.reference(theta);
        Ok(TrackPose {
            point: [px, py],
            tangent: [tx, ty],
            normal: [-ty, tx],
        })
    }

    /// Progress of the sample-polyline point closest to `p`.
    pub fn nearest_progress(&self, p: [f64; 2]) -> f64 {
        let mut best = (f64::INFINITY, self.s[0]);
        for k in 0..self.s.len() - 1 {
            let (ax, ay) = (self.x[k], self.y[k]);
            let (dx, dy) = (self.x[k + 1] - ax, self.y[k + 1] - ay);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0);
            let d = (ax + t * dx - p[0]).hypot(ay + t * dy - p[1]);
            if d < best.0 {
                best = (d, self.s[k] + t * (self.s[k + 1] - self.s[k]));
            }
        }
        best.1
    }
}

/// Cubic spline through `(s_k, v_k)`: periodic on closed tracks, natural otherwise.
fn spline_coefficients(s: &[f64], v: &[f64], closed: bool) -> Result<Vec<[f64; 4]>> {
    let n = s.len() - 1;
    let h: Vec<f64> = s.windows(2).map(|p| p[1] - p[0]).collect();
    let slope: Vec<f64> = (0..n).map(|k| (v[k + 1] - v[k]) / h[k]).collect();
    // second derivatives at the knots
    let mut m = vec![0.0; n + 1];
    if closed {
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for k in 0..n {
            let prev = (k + n - 1) % n;
            a[(k, prev)] += h[prev];
            a[(k, k)] += 2.0 * (h[prev] + h[k]);
            a[(k, (k + 1) % n)] += h[k];
            rhs[k] = 6.0 * (slope[k] - slope[prev]);
        }
        let sol = a.lu().solve(&rhs).ok_or_else(|| Error::numeric("periodic spline system"))?;
        m[..n].copy_from_slice(sol.as_slice());
        m[n] = m[0];
    } else if n > 1 {
        let mut a = DMatrix::zeros(n - 1, n - 1);
        let mut rhs = DVector::zeros(n - 1);
        for k in 1..n {
            a[(k - 1, k - 1)] = 2.0 * (h[k - 1] + h[k]);
            if k > 1 {
                a[(k - 1, k - 2)] = h[k - 1];
            }
            if k < n - 1 {
                a[(k - 1, k)] = h[k];
            }
            rhs[k - 1] = 6.0 * (slope[k] - slope[k - 1]);
        }
        let sol = a.lu().solve(&rhs).ok_or_else(|| Error::numeric("natural spline system"))?;
        m[1..n].copy_from_slice(sol.as_slice());
    }
    Ok((0..n)
        .map(|k| {
            let b = slope[k] - h[k] * (2.0 * m[k] + m[k + 1]) / 6.0;
            [v[k], b, m[k] / 2.0, (m[k + 1] - m[k]) / (6.0 * h[k])]
        })
        .collect())
}

fn errors<S: Scalar>(track: &Track, px: S, py: S, theta: S) -> (S, S) {
    let (rx, ry, tx, ty) = track.reference(theta);
    let (dx, dy) = (px - rx, py - ry);
    (tx * dx + ty * dy, tx * dy - ty * dx)
}

/// Lag error along the tangent and contouring error along the left normal.
pub fn contouring_errors(track: &Track, p: [f64; 2], theta: f64) -> Result<ContouringOutput> {
    track.locate(theta)?;
    let (lag, contouring) = errors(track, p[0], p[1], theta);
    Ok(ContouringOutput { lag, contouring })
}

/// `[e_l, e_c]` as a smooth map of the car state.
pub struct ContouringMap {
    pub track: Arc<Track>,
    pub n_x: usize,
    pub n_u: usize,
}

impl SmoothMap for ContouringMap {
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_out(&self) -> usize {
        2
    }
    fn eval<S: Scalar>(&self, x: &[S], _u: &[S], out: &mut [S]) {
        let (el, ec) = errors(&self.track, x[0], x[1], x[IDX_THETA]);
        out[0] = el;
        out[1] = ec;
    }
}

/// Softened track bounds `+-e_c - (w - d_t) - s <= 0` and `-s <= 0`, with `s` the last input.
pub struct TrackBoundary {
    pub track: Arc<Track>,
    pub tightening: f64,
    pub n_x: usize,
    pub n_u: usize,
}

impl SmoothMap for TrackBoundary {
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_out(&self) -> usize {
        3
    }
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let theta = x[IDX_THETA];
        let (_, ec) = errors(&self.track, x[0], x[1], theta);
        let room = self.track.half_width(theta) - S::from_f64(self.tightening);
        let slack = u[self.n_u - 1];
        out[0] = ec - room - slack;
        out[1] = -ec - room - slack;
        out[2] = -slack;
    }
}

/// Appends inputs that the wrapped dynamics ignore.
pub struct ExtraInputs<M> {
    pub inner: M,
    pub extra: usize,
}

impl<M: SmoothMap> SmoothMap for ExtraInputs<M> {
    fn n_x(&self) -> usize {
        self.inner.n_x()
    }
    fn n_u(&self) -> usize {
        self.inner.n_u() + self.extra
    }
    fn n_out(&self) -> usize {
        self.inner.n_out()
    }
    fn eval<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        self.inner.eval(x, &u[..self.inner.n_u()], out);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpccWeights {
    pub lag: f64,
    pub contouring: f64,
    pub torque_rate: f64,
    pub steer_rate: f64,
    pub progress_rate: f64,
    /// Reward per unit of progress speed.
    pub progress_reward: f64,
    /// Linear penalty on the track slack.
    pub slack_linear: f64,
    pub slack_quadratic: f64,
}

impl Default for MpccWeights {
    fn default() -> Self {
        Self {
            lag: 1000.0,
            contouring: 50.0,
            torque_rate: 0.1,
            steer_rate: 0.1,
            progress_rate: 0.1,
            progress_reward: 1.0,
            slack_linear: 1000.0,
            slack_quadratic: 100.0,
        }
    }
}

impl MpccWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lag >= 0.0 && self.contouring >= 0.0) {
            return Err(Error::Invalid("contouring and lag weights must be nonnegative".into()));
        }
        if !(self.torque_rate > 0.0 && self.steer_rate > 0.0 && self.progress_rate > 0.0 && self.slack_quadratic > 0.0) {
            return Err(Error::Invalid("input rate weights must be positive".into()));
        }
        if !(self.slack_linear > 0.0) {
            return Err(Error::Invalid("slack penalty must be positive".into()));
        }
        if !self.progress_reward.is_finite() {
            return Err(Error::Invalid("progress reward must be finite".into()));
        }
        Ok(())
    }

    /// Quadratic input block, linear input term `g` (cost `2 g'u`) and the
    /// constant that makes `[[R, g], [g', c]]` positive semidefinite.
    pub fn input_weight(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.torque_rate,
            self.steer_rate,
            self.progress_rate,
            self.slack_quadratic,
        ]));
        let g = DVector::from_vec(vec![0.0, 0.0, -0.5 * self.progress_reward, 0.5 * self.slack_linear]);
        let c = (0..4).map(|k| g[k] * g[k] / r[(k, k)]).sum();
        (r, g, c)
    }
}

/// Everything needed to build the contouring OCP except the measured state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpccSetup {
    pub horizon: usize,
    pub ts: f64,
    pub substeps: usize,
    /// Track tightening margin `d_t` in meters.
    pub tightening: f64,
    pub weights: MpccWeights,
    pub car: SingleTrackParams,
    pub torque_range: [f64; 2],
    pub steer_range: [f64; 2],
    pub max_speed: f64,
    pub torque_rate_range: [f64; 2],
    pub steer_rate_range: [f64; 2],
    pub progress_rate_range: [f64; 2],
}

impl Default for MpccSetup {
    fn default() -> Self {
        Self {
            horizon: 30,
            ts: 0.03,
            substeps: 2,
            tightening: 0.0,
            weights: MpccWeights::default(),
            car: SingleTrackParams::default(),
            torque_range: [-0.1, 1.0],
            steer_range: [-0.4, 0.4],
            max_speed: 3.5,
            torque_rate_range: [-10.0, 10.0],
            steer_rate_range: [-8.0, 8.0],
            progress_rate_range: [0.0, 4.0],
        }
    }
}

impl MpccSetup {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.horizon == 0 || !(self.ts > 0.0) || self.substeps == 0 {
            return Err(Error::Invalid("MPCC horizon, Ts and substeps must be positive".into()));
        }
        if !(self.tightening >= 0.0) {
            return Err(Error::Invalid("track tightening must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn discrete_model(&self) -> Result<DynamicsModel> {
        let car = ExtraInputs {
            inner: SingleTrack::new(self.car),
            extra: 1,
        };
        DynamicsModel::continuous("single_track_mpcc", car)?.discretize(self.ts, self.substeps)
    }

    pub fn boxes(&self) -> Result<BoxConstraints> {
        let inf = f64::INFINITY;
        let mut x_lb = vec![-inf; 9];
        let mut x_ub = vec![inf; 9];
        x_ub[3] = self.max_speed;
        [x_lb[IDX_T], x_ub[IDX_T]] = self.torque_range;
        [x_lb[IDX_DELTA], x_ub[IDX_DELTA]] = self.steer_range;
        let u_lb = [self.torque_rate_range[0], self.steer_rate_range[0], self.progress_rate_range[0], -inf];
        let u_ub = [self.torque_rate_range[1], self.steer_rate_range[1], self.progress_rate_range[1], inf];
        BoxConstraints::new(&x_lb, &x_ub, &u_lb, &u_ub)
    }

    /// Starting state on the centerline at `theta`, aligned with the track, at speed `vx`.
    pub fn start_state(&self, track: &Track, theta: f64, vx: f64) -> Result<DVector<f64>> {
        let pose = track.project_progress(theta)?;
        let c = &self.car;
        // torque balancing drivetrain drag at this speed
        let torque = -(c.c3 * vx * vx + c.c4) / (c.c1 + c.c2 * vx);
        Ok(DVector::from_vec(vec![
            pose.point[0],
            pose.point[1],
            pose.tangent[1].atan2(pose.tangent[0]),
            vx,
            0.0,
            0.0,
            torque.clamp(self.torque_range[0], self.torque_range[1]),
            0.0,
            theta,
        ]))
    }
}

/// The contouring OCP at measured state `x_meas`.
///
/// Inputs are `[T_dot, delta_dot, theta_dot, slack]`. The stage cost is
/// `|[e_l, e_c]|_Q^2 + u'Ru + 2 g'u + c`; the terminal stage only keeps the state box.
pub fn build_mpcc_ocp(setup: &MpccSetup, track: Arc<Track>, x_meas: &DVector<f64>) -> Result<OcpProblem> {
    setup.validate()?;
    if x_meas.len() != 9 {
        return Err(Error::dim("MPCC state", 9, x_meas.len()));
    }
    track.locate(x_meas[IDX_THETA])?;
    let model = setup.discrete_model()?;
    let (nx, nu) = (9, 4);
    let boxes = setup.boxes()?;
    let boundary: Arc<dyn StageMap> = Arc::new(TrackBoundary {
        track: Arc::clone(&track),
        tightening: setup.tightening,
        n_x: nx,
        n_u: nu,
    });
    let constraints = StackedMaps::new(vec![boundary, Arc::new(boxes.clone())])?;
    let (r, g_u, c) = setup.weights.input_weight();
    let mut linear = DVector::zeros(nx + nu);
    linear.rows_mut(nx, nu).copy_from(&g_u);
    let ocp = OcpProblem::new(
        model,
        Some(Arc::new(constraints)),
        Some(Arc::new(boxes.terminal())),
        DMatrix::zeros(nx, nx),
        r,
        DMatrix::zeros(nx, nx),
        setup.horizon,
        x_meas.clone(),
    )?;
    ocp.with_output_cost(OutputCost {
        map: Arc::new(ContouringMap { track, n_x: nx, n_u: nu }),
        weight: DMatrix::from_diagonal(&DVector::from_vec(vec![setup.weights.lag, setup.weights.contouring])),
        linear,
        constant: c,
        terminal: false,
    })
}

/// Rollout with the current speed as progress rate, used to initialize the first solve.
pub fn initial_guess(ocp: &OcpProblem) -> Result<Trajectory> {
    let mut t = ocp.cold_start();
    let rate = ocp.x0[3].max(0.0);
    for u in &mut t.inputs {
        u[2] = rate;
    }
    t.states = ocp.simulate(&t.inputs)?;
    Ok(t)
}
