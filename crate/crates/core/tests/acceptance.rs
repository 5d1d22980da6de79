//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances and budgets are pinned below.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radarfuse::eval::{
    detection_map, evaluate_suite, l2_at_horizons, motion_metrics, nds, tpc, DetectionBox, DetectionFrame, MotionFrame,
    MotionPrediction, MotionTruth, Predictor, DISTANCE_THRESHOLDS, SHORT_HORIZONS,
};
use radarfuse::fusion::{attention_gradcheck, attention_weights, range_adaptive_attention, scaled_dot_product_attention, AttentionInputs};
use radarfuse::geometry::{boxes_overlap, point_polyline_distance, OrientedBox2D};
use radarfuse::losses::{hungarian_match, LossConfig};
use radarfuse::model::{AgentClass, Frame, FusionConfig, Point2, Pose2D, RadarPoint, Trajectory, TrajectorySet};
use radarfuse::planner::{train, PlannerModel, TrainConfig};
use radarfuse::world::radar::{RadarTarget, SweepScene};
use radarfuse::world::{accumulate_sweeps, compensate_doppler, generate_suite, simulate_sweep, MapTemplate, RadarSensorConfig, ScenarioConfig, TimedSweep, WeatherConfig};

// Criterion 1
const NDS_TOLERANCE: f64 = 0.005;
const NDS_BUDGET: Duration = Duration::from_secs(1);
// Criterion 2
const ATTENTION_INSTANCES: usize = 100;
const ROW_SUM_TOLERANCE: f64 = 1e-6;
const PLAIN_ATTENTION_TOLERANCE: f64 = 1e-9;
const GRADIENT_REL_TOLERANCE: f64 = 1e-4;
const ATTENTION_BUDGET: Duration = Duration::from_secs(10);
// Criterion 3
const GEOMETRY_PAIRS: usize = 1000;
const DENSE_SAMPLES: usize = 100_000;
const DISTANCE_TOLERANCE: f64 = 1e-5;
const CONTAINMENT_SAMPLES: usize = 10_000;
const TANGENCY_MARGIN: f64 = 1e-6;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(60);
// Criteria 4 and 5
const DOPPLER_CONFIGS: usize = 10_000;
const DOPPLER_TOLERANCE: f64 = 1e-9;
const SWEEP_TOLERANCE: f64 = 1e-9;
// Criterion 6
const HUNGARIAN_MATRICES: usize = 200;
// Criterion 7
const METRIC_TOLERANCE: f64 = 1e-9;
// Criterion 8
const ABLATION_SEEDS: u64 = 5;
const ABLATION_REQUIRED: usize = 4;
const ABLATION_EPOCHS: usize = 30;
const TRAINING_SCENES: usize = 20;
const HELD_OUT_SCENES: usize = 20;
const ABLATION_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(o: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    outcome(o.pass && elapsed <= budget, format!("{} [{elapsed:.1?} of {budget:?}]", o.detail))
}

// ---------------------------------------------------------------- 1

fn nds_rows() -> Outcome {
    let t = Instant::now();
    let a = nds(0.466, [0.512, 0.271, 0.494, 0.173, 0.177]);
    let b = nds(0.418, [0.566, 0.275, 0.552, 0.261, 0.190]);
    let pass = (a - 0.570).abs() <= NDS_TOLERANCE && (b - 0.525).abs() <= NDS_TOLERANCE;
    within_budget(outcome(pass, format!("{a:.4} vs 0.570, {b:.4} vs 0.525 (±{NDS_TOLERANCE})")), t.elapsed(), NDS_BUDGET)
}

// ---------------------------------------------------------------- 2

fn attention_kernel() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_row, mut worst_plain, mut worst_grad) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..ATTENTION_INSTANCES {
        let nq = rng.random_range(1..=64);
        let nk = rng.random_range(1..=64);
        let d = rng.random_range(1..=32);
        let mut m = |r: usize, c: usize, s: f64| Array2::from_shape_fn((r, c), |_| rng.random_range(-s..s));
        let inputs = AttentionInputs {
            queries: m(nq, d, 1.0),
            keys: m(nk, d, 1.0),
            values: m(nk, d, 1.0),
            query_positions: m(nq, 3, 50.0),
            key_positions: m(nk, 3, 50.0),
        };
        let grad_out = m(nq, d, 1.0);
        let alpha = rng.random_range(0.0..4.0);
        let r_max = rng.random_range(10.0..80.0);
        let w = attention_weights(&inputs, alpha, r_max).unwrap();
        for row in w.rows() {
            worst_row = worst_row.max((row.sum() - 1.0).abs());
        }
        let plain = scaled_dot_product_attention(&inputs.queries, &inputs.keys, &inputs.values);
        let zero = range_adaptive_attention(&inputs, 0.0, r_max).unwrap();
        worst_plain = worst_plain.max((&zero - &plain).iter().fold(0.0, |a, v| a.max(v.abs())));
        worst_grad = worst_grad.max(attention_gradcheck(&inputs, alpha, r_max, &grad_out, 1e-4).unwrap().max());
    }
    let pass = worst_row <= ROW_SUM_TOLERANCE && worst_plain <= PLAIN_ATTENTION_TOLERANCE && worst_grad < GRADIENT_REL_TOLERANCE;
    within_budget(
        outcome(
            pass,
            format!("{ATTENTION_INSTANCES} instances: row-sum err {worst_row:.1e}, α=0 err {worst_plain:.1e}, grad rel err {worst_grad:.1e}"),
        ),
        t.elapsed(),
        ATTENTION_BUDGET,
    )
}

// ---------------------------------------------------------------- 3

/// Minimum distance to `DENSE_SAMPLES` points spread along the polyline by
/// arc length (vertices included).
fn dense_distance(p: Point2, wp: &[Point2]) -> f64 {
    let lens: Vec<f64> = wp.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = lens.iter().sum();
    let mut best = f64::INFINITY;
    for (s, w) in wp.windows(2).enumerate() {
        let n = ((DENSE_SAMPLES as f64) * lens[s] / total).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let q = [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
            best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    best
}

fn corners(c: Point2, hw: f64, hl: f64, yaw: f64) -> [Point2; 4] {
    let (s, co) = yaw.sin_cos();
    [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)].map(|(a, b)| {
        let (x, y) = (a * hl, b * hw);
        [c[0] + co * x - s * y, c[1] + s * x + co * y]
    })
}

fn inside(b: &(Point2, f64, f64, f64), p: Point2) -> bool {
    let (c, hw, hl, yaw) = *b;
    let (s, co) = yaw.sin_cos();
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    (co * dx + s * dy).abs() <= hl && (-s * dx + co * dy).abs() <= hw
}

/// Points spread over a box: its corners, its perimeter and an interior grid.
fn box_samples(b: &(Point2, f64, f64, f64)) -> Vec<Point2> {
    let (c, hw, hl, yaw) = *b;
    let cs = corners(c, hw, hl, yaw);
    let mut out = cs.to_vec();
    let per_edge = CONTAINMENT_SAMPLES / 8;
    for e in 0..4 {
        let (a, bb) = (cs[e], cs[(e + 1) % 4]);
        for k in 1..per_edge {
            let t = k as f64 / per_edge as f64;
            out.push([a[0] + t * (bb[0] - a[0]), a[1] + t * (bb[1] - a[1])]);
        }
    }
    let side = ((CONTAINMENT_SAMPLES - out.len()) as f64).sqrt() as usize;
    let (s, co) = yaw.sin_cos();
    for i in 0..side {
        for j in 0..side {
            let x = hl * (2.0 * (i as f64 + 0.5) / side as f64 - 1.0);
            let y = hw * (2.0 * (j as f64 + 0.5) / side as f64 - 1.0);
            out.push([c[0] + co * x - s * y, c[1] + s * x + co * y]);
        }
    }
    out
}

/// Signed separating-axis margin: positive gap when apart, negative
/// penetration depth when overlapping.
fn sat_margin(a: &(Point2, f64, f64, f64), b: &(Point2, f64, f64, f64)) -> f64 {
    let ca = corners(a.0, a.1, a.2, a.3);
    let cb = corners(b.0, b.1, b.2, b.3);
    let mut margin = f64::NEG_INFINITY;
    for yaw in [a.3, b.3] {
        for axis in [[yaw.cos(), yaw.sin()], [-yaw.sin(), yaw.cos()]] {
            let proj = |cs: &[Point2; 4]| {
                let v: Vec<f64> = cs.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).collect();
                (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            };
            let (a0, a1) = proj(&ca);
            let (b0, b1) = proj(&cb);
            margin = margin.max((b0 - a1).max(a0 - b1));
        }
    }
    margin
}

fn geometry_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..GEOMETRY_PAIRS {
        let n = rng.random_range(2..=20);
        let mut wp = vec![[rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]];
        let mut heading: f64 = rng.random_range(-3.14..3.14);
        for _ in 1..n {
            heading += rng.random_range(-1.0..1.0);
            let step = rng.random_range(0.5..3.0);
            let last = wp[wp.len() - 1];
            wp.push([last[0] + step * heading.cos(), last[1] + step * heading.sin()]);
        }
        let p = [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)];
        let d = point_polyline_distance(p, &wp).unwrap().distance;
        worst = worst.max((d - dense_distance(p, &wp)).abs());
    }

    let mut disagreements = 0;
    let mut excluded = 0;
    let mut overlaps = 0;
    for _ in 0..GEOMETRY_PAIRS {
        let random_box = |rng: &mut ChaCha8Rng| {
            (
                [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)],
                rng.random_range(0.2..1.5),
                rng.random_range(0.5..3.0),
                rng.random_range(-3.2..3.2),
            )
        };
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        if sat_margin(&a, &b).abs() < TANGENCY_MARGIN {
            excluded += 1;
            continue;
        }
        let oracle = box_samples(&a).iter().any(|&p| inside(&b, p)) || box_samples(&b).iter().any(|&p| inside(&a, p));
        let got = boxes_overlap(&OrientedBox2D::new(a.0, 2.0 * a.1, 2.0 * a.2, a.3), &OrientedBox2D::new(b.0, 2.0 * b.1, 2.0 * b.2, b.3));
        overlaps += oracle as usize;
        disagreements += (oracle != got) as usize;
    }
    let pass = worst <= DISTANCE_TOLERANCE && disagreements == 0;
    within_budget(
        outcome(
            pass,
            format!(
                "polyline max err {worst:.1e} over {GEOMETRY_PAIRS} pairs; boxes {disagreements} disagreements ({overlaps} overlapping, {excluded} near-tangent excluded)"
            ),
        ),
        t.elapsed(),
        GEOMETRY_BUDGET,
    )
}

// ---------------------------------------------------------------- 4

fn quiet_sensor(rng: &mut ChaCha8Rng) -> (RadarSensorConfig, WeatherConfig) {
    let sensor = RadarSensorConfig {
        mount: [rng.random_range(-1.0..2.0), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)],
        points_per_agent: 6,
        rcs_noise: 0.0,
        ..RadarSensorConfig::default()
    };
    (sensor, WeatherConfig { position_noise: 0.0, dropout: 0.0 })
}

fn doppler_physics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut worst_static, mut points, mut statics) = (0.0f64, 0.0f64, 0usize, 0usize);
    for i in 0..DOPPLER_CONFIGS {
        let (sensor, weather) = quiet_sensor(&mut rng);
        let ego = Pose2D::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-3.1..3.1));
        let ego_v = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
        let range = rng.random_range(3.0..45.0);
        let bearing: f64 = rng.random_range(-3.1..3.1);
        let center = [ego.translation[0] + range * bearing.cos(), ego.translation[1] + range * bearing.sin()];
        let target = RadarTarget {
            footprint: OrientedBox2D::new(center, rng.random_range(0.6..2.5), rng.random_range(0.8..10.0), rng.random_range(-3.1..3.1)),
            velocity: [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
            class: AgentClass::Car,
        };
        let targets = [target];
        let scene = SweepScene {
            ego_pose: ego,
            ego_velocity: ego_v,
            targets: &targets,
            static_lines: &[],
        };
        let (ys, yc) = ego.yaw.sin_cos();
        let sensor_xy = [
            ego.translation[0] + yc * sensor.mount[0] - ys * sensor.mount[1],
            ego.translation[1] + ys * sensor.mount[0] + yc * sensor.mount[1],
        ];
        let to_world = |p: &RadarPoint| {
            [
                ego.translation[0] + yc * p.position[0] - ys * p.position[1],
                ego.translation[1] + ys * p.position[0] + yc * p.position[1],
            ]
        };
        for p in simulate_sweep(&scene, &sensor, &weather, i as u64) {
            let w = to_world(&p);
            let (dx, dy) = (w[0] - sensor_xy[0], w[1] - sensor_xy[1]);
            let r = dx.hypot(dy);
            let analytic = ((target.velocity[0] - ego_v[0]) * dx + (target.velocity[1] - ego_v[1]) * dy) / r;
            worst = worst.max((p.doppler - analytic).abs());
            points += 1;
        }

        // Static structure: compensation in the ego frame cancels ego motion.
        let line: Vec<Point2> = (0..6).map(|k| [center[0] + 3.0 * k as f64, center[1] + rng.random_range(-1.0..1.0)]).collect();
        let lines = [line];
        let scene = SweepScene {
            ego_pose: ego,
            ego_velocity: ego_v,
            targets: &[],
            static_lines: &lines,
        };
        let ego_v_local = [yc * ego_v[0] + ys * ego_v[1], -ys * ego_v[0] + yc * ego_v[1], 0.0];
        let mount = [sensor.mount[0], sensor.mount[1], 0.0];
        for p in simulate_sweep(&scene, &sensor, &weather, i as u64) {
            let c = compensate_doppler(p.doppler, p.position, ego_v_local, mount).unwrap();
            worst_static = worst_static.max(c.abs());
            statics += 1;
        }
    }
    let pass = worst <= DOPPLER_TOLERANCE && worst_static <= DOPPLER_TOLERANCE && points > DOPPLER_CONFIGS && statics > DOPPLER_CONFIGS;
    outcome(
        pass,
        format!("{points} agent returns max err {worst:.1e}; {statics} static returns max compensated {worst_static:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn sweep_accumulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut poses = vec![Pose2D::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-3.1..3.1))];
        for _ in 1..4 {
            let last = *poses.last().unwrap();
            let step = Pose2D::new(rng.random_range(0.0..2.0), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2));
            poses.push(last.compose(&step));
        }
        let world: Vec<Point2> = (0..40).map(|_| [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)]).collect();
        let sweeps: Vec<TimedSweep> = poses
            .iter()
            .enumerate()
            .map(|(k, pose)| {
                let inv = pose.inverse();
                TimedSweep {
                    timestamp: k as f64 * 0.075,
                    points: world
                        .iter()
                        .map(|&w| {
                            let [x, y] = inv.transform_point(w);
                            RadarPoint {
                                position: [x, y, 0.0],
                                rcs: 1.0,
                                doppler: 0.0,
                                sweep_offset: 0.0,
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        let acc = accumulate_sweeps(&sweeps, &poses).unwrap();
        let n = world.len();
        for j in 0..n {
            for k in 1..4 {
                let (a, b) = (acc[j].position, acc[k * n + j].position);
                worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
    }
    outcome(worst <= SWEEP_TOLERANCE, format!("100 random paths × 4 sweeps × 40 points: max spread {worst:.1e} m"))
}

// ---------------------------------------------------------------- 6

fn exhaustive_minimum(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let (rows, cols, t) = if n <= m { (n, m, false) } else { (m, n, true) };
    // Every injective map rows → cols, enumerated as permutations of cols.
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut best = f64::INFINITY;
    fn heap(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if k == 1 {
            visit(perm);
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, visit);
            let j = if k % 2 == 0 { i } else { 0 };
            perm.swap(j, k - 1);
        }
    }
    heap(cols, &mut perm, &mut |p| {
        let mut pairs: Vec<(usize, usize)> = (0..rows).map(|i| if t { (p[i], i) } else { (i, p[i]) }).collect();
        pairs.sort();
        let total: f64 = pairs.iter().map(|&(i, j)| cost[[i, j]]).sum();
        best = best.min(total);
    });
    best
}

fn hungarian_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..HUNGARIAN_MATRICES {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        // Dyadic costs keep every sum exact, so "equal" means bit-equal.
        let cost = Array2::from_shape_fn((n, m), |_| rng.random_range(0..4096) as f64 / 256.0);
        let got = hungarian_match(&cost).unwrap().total_cost;
        if got != exhaustive_minimum(&cost) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{HUNGARIAN_MATRICES} matrices, {mismatches} differ from the exhaustive minimum"))
}

// ---------------------------------------------------------------- 7

fn oracle_ap(frames: &[DetectionFrame], threshold: f64) -> f64 {
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (f, fr) in frames.iter().enumerate() {
        for (i, p) in fr.predictions.iter().enumerate() {
            order.push((p.score, f, i));
        }
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let n_gt: usize = frames.iter().map(|f| f.truths.len()).sum();
    if n_gt == 0 || order.is_empty() {
        return 0.0;
    }
    let mut used = HashSet::new();
    let (mut tp, mut rec, mut prec) = (0.0, Vec::new(), Vec::new());
    for (k, &(_, f, i)) in order.iter().enumerate() {
        let c = frames[f].predictions[i].center;
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in frames[f].truths.iter().enumerate() {
            let d = (c[0] - g.center[0]).hypot(c[1] - g.center[1]);
            if !used.contains(&(f, j)) && d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            used.insert((f, j));
            tp += 1.0;
        }
        rec.push(tp / n_gt as f64);
        prec.push(tp / (k + 1) as f64);
    }
    let env: Vec<f64> = (0..prec.len()).map(|k| prec[k..].iter().cloned().fold(0.0, f64::max)).collect();
    let mut sum = 0.0;
    for s in 11..=100 {
        let r = s as f64 / 100.0;
        let v = match rec.iter().position(|&x| x >= r) {
            None => 0.0,
            Some(0) => env[0],
            Some(k) if rec[k] == rec[k - 1] => env[k],
            Some(k) => env[k - 1] + (env[k] - env[k - 1]) * (r - rec[k - 1]) / (rec[k] - rec[k - 1]),
        };
        sum += (v - 0.1).max(0.0);
    }
    sum / 90.0 / 0.9
}

fn metric_oracles() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // L2: error growing by 0.1 m per 0.5 s step.
    let gt: Vec<Point2> = (1..=12).map(|k| [k as f64, 0.0]).collect();
    let plan: Vec<Point2> = gt.iter().enumerate().map(|(k, p)| [p[0], 0.1 * (k + 1) as f64]).collect();
    let l2 = l2_at_horizons(&plan, &gt, &SHORT_HORIZONS).unwrap();
    if l2.values.iter().zip([0.2, 0.4, 0.6]).any(|(a, b)| (a - b).abs() > METRIC_TOLERANCE) {
        failures.push(format!("l2 growth case {:?}", l2.values));
    }
    for _ in 0..100 {
        let plan: Vec<Point2> = (0..12).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let gt: Vec<Point2> = (0..12).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let got = l2_at_horizons(&plan, &gt, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        for (h, v) in got.values.iter().enumerate() {
            // Horizon h+1 seconds is the 2(h+1)-th point, one step = 0.5 s.
            let k = 2 * (h + 1) - 1;
            if (v - (plan[k][0] - gt[k][0]).hypot(plan[k][1] - gt[k][1])).abs() > METRIC_TOLERANCE {
                failures.push("l2 random".into());
            }
        }
    }

    // TPC with a moving ego: transform the previous plan by hand.
    for _ in 0..100 {
        let prev: Vec<Point2> = (0..12).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let cur: Vec<Point2> = (0..12).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let (tx, ty, yaw) = (rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5));
        // Pose of the previous ego frame expressed in the current one.
        let rel = Pose2D::new(tx, ty, yaw);
        let got = tpc(&cur, &prev, &rel, &SHORT_HORIZONS).unwrap();
        for (h, v) in got.values.iter().enumerate() {
            let kmax = 2 * (h + 1) - 1;
            let mut acc = 0.0;
            for k in 0..=kmax {
                let p = prev[k + 1];
                let x = tx + yaw.cos() * p[0] - yaw.sin() * p[1];
                let y = ty + yaw.sin() * p[0] + yaw.cos() * p[1];
                acc += (cur[k][0] - x).hypot(cur[k][1] - y);
            }
            if (v - acc / (kmax + 1) as f64).abs() > METRIC_TOLERANCE {
                failures.push("tpc moving ego".into());
            }
        }
    }

    // Motion: one hit, one false positive, two ground-truth agents.
    let future = |x0: f64| -> Vec<Point2> { (1..=24).map(|k| [x0 + k as f64, 0.0]).collect() };
    let modes = |traj: Vec<Point2>| TrajectorySet {
        modes: vec![Trajectory { points: traj, score: 1.0 }],
    };
    let frame = MotionFrame {
        predictions: vec![
            MotionPrediction { center: [0.0, 0.0], score: 0.9, futures: modes(future(0.0)) },
            MotionPrediction { center: [40.0, 40.0], score: 0.8, futures: modes(future(40.0)) },
        ],
        truths: vec![
            MotionTruth { center: [0.0, 0.0], future: future(0.0) },
            MotionTruth { center: [-30.0, 0.0], future: future(-30.0) },
        ],
    };
    let m = motion_metrics(&[frame]).unwrap();
    if m.epa != 0.25 {
        failures.push(format!("EPA {} != 0.25", m.epa));
    }
    if m.min_ade != 0.0 || m.min_fde != 0.0 || m.miss_rate != 0.0 {
        failures.push(format!("exact mode: ADE {} FDE {} MR {}", m.min_ade, m.min_fde, m.miss_rate));
    }
    let far = MotionFrame {
        predictions: vec![MotionPrediction {
            center: [0.0, 0.0],
            score: 0.9,
            futures: TrajectorySet {
                modes: (0..6).map(|k| Trajectory { points: future(0.0).iter().map(|p| [p[0], p[1] + 5.0 + k as f64]).collect(), score: 0.1 }).collect(),
            },
        }],
        truths: vec![MotionTruth { center: [0.5, 0.0], future: future(0.0) }],
    };
    if motion_metrics(&[far]).unwrap().miss_rate != 1.0 {
        failures.push("far modes should all miss".into());
    }

    // Detection: AP against an independent reference on small random scenes.
    let bx = |c: Point2, s: f64| DetectionBox {
        center: c,
        size: [1.8, 1.5, 4.4],
        yaw: 0.0,
        velocity: [0.0, 0.0],
        class: AgentClass::Car,
        score: s,
    };
    let mut worst_ap = 0.0f64;
    for _ in 0..200 {
        let frames: Vec<DetectionFrame> = (0..rng.random_range(1..=3))
            .map(|_| DetectionFrame {
                truths: (0..rng.random_range(0..=5)).map(|_| bx([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)], 1.0)).collect(),
                predictions: (0..rng.random_range(0..=5))
                    .map(|_| bx([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)], rng.random_range(0..4) as f64 / 4.0))
                    .collect(),
            })
            .collect();
        let got = detection_map(&frames, &DISTANCE_THRESHOLDS);
        for (k, &d) in DISTANCE_THRESHOLDS.iter().enumerate() {
            worst_ap = worst_ap.max((got.ap[k] - oracle_ap(&frames, d)).abs());
        }
    }
    if worst_ap > METRIC_TOLERANCE {
        failures.push(format!("AP max err {worst_ap:.1e}"));
    }
    // A confident FP ranked above the only TP: precision 1/2 at recall 1,
    // so AP = (0.5 − 0.1)/0.9.
    let tp_fp = DetectionFrame {
        predictions: vec![bx([0.1, 0.0], 0.5), bx([20.0, 0.0], 0.9)],
        truths: vec![bx([0.0, 0.0], 1.0)],
    };
    let ap = detection_map(&[tp_fp], &[2.0]).ap[0];
    if (ap - 0.4 / 0.9).abs() > METRIC_TOLERANCE {
        failures.push(format!("TP+FP AP {ap}"));
    }

    let detail = if failures.is_empty() {
        format!("l2, tpc, motion, AP (max err {worst_ap:.1e}) match; EPA = {}", m.epa)
    } else {
        failures.dedup();
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 8, 9

/// Dense, mostly moving traffic at a junction: many agents with a radial
/// velocity component and many partially hidden behind others.
fn suite(seed: u64, scenes: usize) -> Vec<Vec<Frame>> {
    let mut cfg = ScenarioConfig::new(seed);
    cfg.scenes = scenes;
    cfg.num_agents = 14;
    cfg.parked_fraction = 0.1;
    cfg.map_template = MapTemplate::TJunction;
    generate_suite(&cfg).unwrap().into_iter().map(|s| s.frames).collect()
}

fn trained(training: &[Vec<Frame>], seed: u64, radar: bool) -> PlannerModel {
    let frames: Vec<&Frame> = training.iter().flatten().collect();
    let mut model = PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &frames, seed).unwrap();
    let cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        radar_enabled: radar,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, training, &cfg, |_| {}).unwrap();
    model
}

fn radar_ablation(training: &[Vec<Frame>], held_out: &[Vec<Frame>]) -> (Outcome, PlannerModel) {
    let t = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    let mut keep = None;
    for seed in 0..ABLATION_SEEDS {
        let on = trained(training, seed, true);
        let off = trained(training, seed, false);
        let r_on = evaluate_suite(held_out, Predictor::Model { model: &on, radar_enabled: true }).unwrap().report;
        let r_off = evaluate_suite(held_out, Predictor::Model { model: &off, radar_enabled: false }).unwrap().report;
        let (t_on, t_off) = (r_on.planning.tpc.unwrap().average, r_off.planning.tpc.unwrap().average);
        let win = r_on.detection.mave < r_off.detection.mave && t_on < t_off;
        wins += win as usize;
        rows.push(format!(
            "seed {seed}: mAVE {:.3}/{:.3} TPC {:.3}/{:.3} {}",
            r_on.detection.mave,
            r_off.detection.mave,
            t_on,
            t_off,
            if win { "✓" } else { "✗" }
        ));
        keep.get_or_insert(on);
    }
    let o = outcome(
        wins >= ABLATION_REQUIRED,
        format!("{wins}/{ABLATION_SEEDS} seeds with radar-on lower in both (on/off): {}", rows.join("; ")),
    );
    (within_budget(o, t.elapsed(), ABLATION_BUDGET), keep.expect("at least one seed"))
}

fn degenerate_radar(model: &PlannerModel, held_out: &[Vec<Frame>]) -> Outcome {
    let stripped: Vec<Vec<Frame>> = held_out
        .iter()
        .map(|s| s.iter().map(|f| Frame { radar_points: Vec::new(), ..f.clone() }).collect())
        .collect();
    let off = evaluate_suite(held_out, Predictor::Model { model, radar_enabled: false }).unwrap();
    let empty = evaluate_suite(&stripped, Predictor::Model { model, radar_enabled: true }).unwrap();
    let same = off.report.to_json() == empty.report.to_json() && off.series.to_csv() == empty.series.to_csv();
    outcome(same, format!("{} frames: report and per-frame series byte-equal = {same}", off.report.frames))
}

// ---------------------------------------------------------------- 10

fn run_chain(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("scenario.toml"), "seed = 9\nscenes = 3\nscene_duration = 4.0\n").unwrap();
    let steps: [&[&str]; 3] = [
        &["generate", "--config", "scenario.toml", "--out", "scenes"],
        &["train", "--scenes", "scenes", "--epochs", "2", "--seed", "4", "--radar", "on", "--out", "params.json"],
        &["eval", "--scenes", "scenes", "--params", "params.json", "--radar", "on", "--out", "report"],
    ];
    for args in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_radarfuse"))
            .args(args)
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = run_chain(a.path()).and_then(|_| run_chain(b.path())) {
        return outcome(false, e);
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let same = fa.len() == fb.len() && differing.is_empty();
    outcome(same, format!("{} output files compared, {} differ {:?}", fa.len(), differing.len(), differing))
}

// ----------------------------------------------------------------

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut record = |id: u8, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "NDS formula", nds_rows());
    record(2, "attention kernel", attention_kernel());
    record(3, "geometry oracles", geometry_oracles());
    record(4, "Doppler physics", doppler_physics());
    record(5, "multi-sweep compensation", sweep_accumulation());
    record(6, "Hungarian optimality", hungarian_optimality());
    record(7, "metric oracles", metric_oracles());
    let training = suite(1, TRAINING_SCENES);
    let held_out = suite(1000, HELD_OUT_SCENES);
    let (ablation, model) = radar_ablation(&training, &held_out);
    record(8, "radar ablation direction", ablation);
    record(9, "degenerate radar equivalence", degenerate_radar(&model, &held_out));
    record(10, "end-to-end determinism", end_to_end_determinism());

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
