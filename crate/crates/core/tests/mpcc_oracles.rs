//! Track geometry and MPCC maps against brute-force computations on the raw samples.

use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unimpc::ad;
use unimpc::mpcc::{contouring_errors, ContouringMap, Interpolation, MpccSetup, Track, TrackBoundary, OVAL_CSV};
use unimpc::sensitivity::{ftc_stage, linearize_stage, QuadratureRule, StageMaps};

struct Samples {
    s: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn raw_samples() -> Samples {
    let mut rdr = csv::Reader::from_reader(OVAL_CSV.as_bytes());
    let mut out = Samples { s: vec![], x: vec![], y: vec![] };
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].trim().parse::<f64>().unwrap();
        out.s.push(f(0));
        out.x.push(f(1));
        out.y.push(f(2));
    }
    out
}

/// Linear interpolation by scanning every segment.
fn interpolate(smp: &Samples, theta: f64) -> ([f64; 2], [f64; 2]) {
    for k in 0..smp.s.len() - 1 {
        if theta >= smp.s[k] && theta < smp.s[k + 1] {
            let l = (theta - smp.s[k]) / (smp.s[k + 1] - smp.s[k]);
            let (dx, dy) = (smp.x[k + 1] - smp.x[k], smp.y[k + 1] - smp.y[k]);
            let n = dx.hypot(dy);
            return ([smp.x[k] + l * dx, smp.y[k] + l * dy], [dx / n, dy / n]);
        }
    }
    panic!("theta {theta} outside the samples");
}

/// Closest point on the sample polyline: distance, progress and whether it is a segment interior.
fn closest(smp: &Samples, p: [f64; 2]) -> (f64, f64, bool) {
    let mut best = (f64::INFINITY, 0.0, false);
    for k in 0..smp.s.len() - 1 {
        let (dx, dy) = (smp.x[k + 1] - smp.x[k], smp.y[k + 1] - smp.y[k]);
        let t = ((p[0] - smp.x[k]) * dx + (p[1] - smp.y[k]) * dy) / (dx * dx + dy * dy);
        let tc = t.clamp(0.0, 1.0);
        let (qx, qy) = (smp.x[k] + tc * dx, smp.y[k] + tc * dy);
        let d = (p[0] - qx).hypot(p[1] - qy);
        if d < best.0 {
            let cross = dx * (p[1] - qy) - dy * (p[0] - qx);
            best = (d.copysign(cross), smp.s[k] + tc * (smp.s[k + 1] - smp.s[k]), t > 1e-3 && t < 1.0 - 1e-3);
        }
    }
    best
}

#[test]
fn projection_matches_dense_interpolation_of_the_samples() {
    let track = Track::oval().unwrap();
    let smp = raw_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let theta = rng.random_range(0.0..track.length());
        let pose = track.project_progress(theta).unwrap();
        let (p, t) = interpolate(&smp, theta);
        worst = worst.max((pose.point[0] - p[0]).abs().max((pose.point[1] - p[1]).abs()));
        worst = worst.max((pose.tangent[0] - t[0]).abs().max((pose.tangent[1] - t[1]).abs()));
        assert_eq!(pose.normal, [-pose.tangent[1], pose.tangent[0]]);
    }
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn closed_track_projection_is_periodic() {
    let track = Track::oval().unwrap();
    for theta in [0.1, 1.7, 3.3] {
        let a = track.project_progress(theta).unwrap();
        let b = track.project_progress(theta + 2.0 * track.length()).unwrap();
        assert!((a.point[0] - b.point[0]).abs() <= 1e-12 && (a.point[1] - b.point[1]).abs() <= 1e-12);
    }
}

#[test]
fn spline_track_passes_through_its_samples_and_stays_close() {
    let track = Track::oval().unwrap().with_interpolation(Interpolation::CubicSpline).unwrap();
    let smp = raw_samples();
    for k in (0..smp.s.len() - 1).step_by(7) {
        let pose = track.project_progress(smp.s[k]).unwrap();
        assert!((pose.point[0] - smp.x[k]).abs() <= 1e-10 && (pose.point[1] - smp.y[k]).abs() <= 1e-10, "knot {k}");
    }
    // between knots the spline deviates from the chords by at most the chord sag
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let theta = rng.random_range(0.0..track.length());
        let (p, _) = interpolate(&smp, theta);
        let q = track.project_progress(theta).unwrap().point;
        assert!((p[0] - q[0]).hypot(p[1] - q[1]) <= 1e-3, "theta {theta}");
    }
}

#[test]
fn contouring_error_is_the_signed_distance_to_the_centreline() {
    let track = Track::oval().unwrap();
    let smp = raw_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 500 {
        let theta = rng.random_range(0.0..track.length());
        let pose = track.project_progress(theta).unwrap();
        let off = rng.random_range(-0.1..0.1);
        let p = [pose.point[0] + off * pose.normal[0], pose.point[1] + off * pose.normal[1]];
        let (dist, progress, interior) = closest(&smp, p);
        if !interior {
            continue;
        }
        let e = contouring_errors(&track, p, progress).unwrap();
        assert!((e.contouring - dist).abs() <= 1e-12, "{} vs {dist}", e.contouring);
        assert!(e.lag.abs() <= 1e-12, "lag {}", e.lag);
        checked += 1;
    }
}

#[test]
fn boundary_rows_are_signed_distance_minus_room_and_slack() {
    let track = Arc::new(Track::oval().unwrap());
    let smp = raw_samples();
    let map = TrackBoundary { track: Arc::clone(&track), tightening: 0.01, n_x: 9, n_u: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 300 {
        let theta = rng.random_range(0.0..track.length());
        let pose = track.project_progress(theta).unwrap();
        let off = rng.random_range(-0.2..0.2);
        let p = [pose.point[0] + off * pose.normal[0], pose.point[1] + off * pose.normal[1]];
        let (dist, progress, interior) = closest(&smp, p);
        if !interior {
            continue;
        }
        let slack = rng.random_range(0.0..0.05);
        let mut x = vec![0.0; 9];
        x[0] = p[0];
        x[1] = p[1];
        x[3] = 1.0;
        x[8] = progress;
        let h = ad::eval(&map, &x, &[0.0, 0.0, 0.0, slack]);
        let room = 0.115 - 0.01;
        assert!((h[0] - (dist - room - slack)).abs() <= 1e-12);
        assert!((h[1] - (-dist - room - slack)).abs() <= 1e-12);
        assert_eq!(h[2], -slack);
        // both rows hold exactly when the point lies within room plus slack
        assert_eq!(h[0] <= 0.0 && h[1] <= 0.0, dist.abs() <= room + slack);
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_map_ftc_with_previous_iterate_anchor_is_pointwise(
        theta in 0.0..6.0f64,
        off in -0.1..0.1f64,
        vx in 0.5..3.0f64,
        vy in -0.3..0.3f64,
        r in -1.0..1.0f64,
        nodes in 1usize..40,
    ) {
        let setup = MpccSetup::default();
        let track = Arc::new(Track::oval().unwrap());
        let model = setup.discrete_model().unwrap();
        let contour = ContouringMap { track: Arc::clone(&track), n_x: 9, n_u: 4 };
        let pose = track.project_progress(theta).unwrap();
        let x = [
            pose.point[0] + off * pose.normal[0],
            pose.point[1] + off * pose.normal[1],
            pose.tangent[1].atan2(pose.tangent[0]),
            vx, vy, r, 0.3, 0.05, theta,
        ];
        let u = [0.1, -0.2, 1.5, 0.0];
        let next: DVector<f64> = model.eval(&x, &u).unwrap();
        let maps = StageMaps { dynamics: &model, constraints: None, output: Some(&contour) };
        let lin = linearize_stage(maps, &x, &u, next.as_slice()).unwrap();
        let ftc = ftc_stage(maps, &x, &u, next.as_slice(), &x, &u, &QuadratureRule::gauss_legendre(nodes).unwrap()).unwrap();
        let (a, b) = (lin.output.unwrap(), ftc.output.unwrap());
        prop_assert!((&a.jx - &b.jx).amax() <= 1e-12);
        prop_assert!((&a.ju - &b.ju).amax() <= 1e-12);
        prop_assert_eq!(a.value, b.value);
    }
}
