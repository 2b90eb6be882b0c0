//! Acceptance suite. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line, whether or not output is captured.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Point2, Point3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pitchcal::eval::{acc_at_t, score, Confusion};
use pitchcal::geometry::{fit_ellipse, tangent_points, Conic, Ellipse, Homography};
use pitchcal::keypoints::derive_all;
use pitchcal::pitch::Construction;
use pitchcal::synthetic::{frame_rng, generate_frame, render_annotation, SyntheticFrame, SyntheticScenario};
use pitchcal::voter::{calibrate_frame, fuse_lines, iterative_vote, vote_detailed};
use pitchcal::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn frames(scenario: &SyntheticScenario, n: u64) -> Vec<SyntheticFrame> {
    let template = default_template();
    (0..n).map(|i| generate_frame(&template, scenario, i)).collect()
}

fn c1_metric_arithmetic() -> Outcome {
    let start = Instant::now();
    let a = score(0.7322, 0.7559);
    let b = score(0.7446, 0.7245);
    let elapsed = start.elapsed();
    check(
        (a - 0.5535).abs() <= 5e-4 && (b - 0.5395).abs() <= 5e-4 && elapsed < Duration::from_secs(1),
        format!("score = {a:.5} and {b:.5} in {elapsed:?}"),
    )
}

fn c2_oracle_closure() -> Outcome {
    let template = default_template();
    let scenario = SyntheticScenario {
        min_visible_keypoints: 8,
        seed: 2024,
        ..SyntheticScenario::default()
    };
    let config = VoterConfig::default();
    let mut eval = Evaluator::new(&[5.0]);
    let (mut worst_focal, mut worst_pos) = (0.0f64, 0.0f64);
    let mut misses = 0;
    for frame in frames(&scenario, 200) {
        let kp = derive_all(&template, &frame.annotation, &DeriveOptions::default());
        let out = iterative_vote(&template, &kp, frame.camera.image_size, &config);
        match &out {
            Some(o) => {
                let truth = &frame.camera;
                worst_focal = worst_focal.max((o.params.focal - truth.focal).abs() / truth.focal);
                worst_pos = worst_pos.max((o.params.position - truth.position).norm());
            }
            None => misses += 1,
        }
        eval.add_frame(out.as_ref().map(|o| &o.params), &template, &frame.annotation);
    }
    let r = eval.report();
    let acc = r.acc_at_5.unwrap_or(0.0);
    check(
        misses == 0 && r.completeness_ratio == 1.0 && acc == 1.0 && worst_focal < 1e-3 && worst_pos < 0.02,
        format!(
            "cr {:.4}, acc@5 {acc:.4}, worst focal err {:.2e}, worst position err {worst_pos:.2e} m",
            r.completeness_ratio, worst_focal
        ),
    )
}

fn c3_noise_robustness() -> Outcome {
    let template = default_template();
    let scenario = SyntheticScenario {
        min_visible_keypoints: 8,
        detection_noise_sigma_px: 1.0,
        seed: 31,
        ..SyntheticScenario::default()
    };
    let config = VoterConfig::default();
    let mut eval = Evaluator::new(&[5.0]);
    let mut rmse = Vec::new();
    for frame in frames(&scenario, 200) {
        let d = &frame.detections;
        let out = calibrate_frame(&template, &d.keypoints, &d.lines, d.image_size, &config);
        if let Some(o) = &out {
            rmse.push(o.rmse_px);
        }
        eval.add_frame(out.as_ref().map(|o| &o.params), &template, &frame.annotation);
    }
    rmse.sort_by(f64::total_cmp);
    let median = if rmse.is_empty() { f64::INFINITY } else { rmse[rmse.len() / 2] };
    let r = eval.report();
    let acc = r.acc_at_5.unwrap_or(0.0);
    check(
        acc >= 0.9 && median < 3.0,
        format!("acc@5 {acc:.4}, cr {:.4}, median rmse {median:.3} px", r.completeness_ratio),
    )
}

fn c4_outlier_handling() -> Outcome {
    let template = default_template();
    let scenario = SyntheticScenario {
        min_visible_keypoints: 8,
        seed: 404,
        ..SyntheticScenario::default()
    };
    let config = VoterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut trials, mut selected, mut beaten) = (0, 0, 0);
    for index in 0.. {
        if trials == 100 {
            break;
        }
        let frame = generate_frame(&template, &scenario, index);
        let mut kp = frame.detections.keypoints.clone();
        let targets: Vec<usize> = kp
            .ids()
            .filter(|&id| {
                let def = template.keypoint(id).unwrap();
                def.family == KeypointFamily::LineLine && def.on_ground()
            })
            .collect();
        if targets.is_empty() {
            continue;
        }
        trials += 1;
        let mut k = *kp.get(targets[rng.random_range(0..targets.len())]).unwrap();
        let angle = rng.random_range(0.0..2.0 * PI);
        k.position += nalgebra::Vector2::new(angle.cos(), angle.sin()) * 60.0;
        kp.insert(k);
        let report = vote_detailed(&template, &kp, 0.5, frame.camera.image_size, &config);
        let Some(out) = &report.selected else { continue };
        if out.label == SubsetLabel::GroundRansac {
            selected += 1;
            let all = report.candidates.iter().find(|c| c.label == SubsetLabel::All).unwrap();
            if out.rmse_px < all.rmse_px {
                beaten += 1;
            }
        }
    }
    check(
        selected >= 95 && beaten == selected,
        format!("ground_ransac selected in {selected}/{trials}, beats all-points in {beaten}/{selected}"),
    )
}

fn c5_tangency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let center = Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let r = rng.random_range(0.5..3.0);
        let circle = Conic::from_ellipse(&Ellipse {
            center,
            semi_major: r,
            semi_minor: r,
            angle: 0.0,
        })
        .unwrap();
        let a = rng.random_range(0.0..2.0 * PI);
        let p = center + nalgebra::Vector2::new(a.cos(), a.sin()) * r * rng.random_range(1.2..5.0);
        let m = Matrix3::new(
            rng.random_range(0.5..2.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-5.0..5.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.5..2.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            1.0,
        );
        let h = Homography::new(m).unwrap();
        let before = tangent_points(&p, &circle).unwrap();
        let mapped = [h.apply(&before[0]).unwrap(), h.apply(&before[1]).unwrap()];
        let after = tangent_points(&h.apply(&p).unwrap(), &circle.transform(&m).unwrap()).unwrap();
        let straight = (mapped[0] - after[0]).norm().max((mapped[1] - after[1]).norm());
        let crossed = (mapped[0] - after[1]).norm().max((mapped[1] - after[0]).norm());
        worst = worst.max(straight.min(crossed));
    }
    check(worst <= 1e-6, format!("1000 triples, worst tangent point error {worst:.2e}"))
}

fn c6_ellipse_fit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = rng.random_range(1.0..50.0);
        let truth = Ellipse {
            center: Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
            semi_major: a,
            semi_minor: a * rng.random_range(0.2..0.95),
            angle: rng.random_range(-PI / 2.0 + 1e-3..PI / 2.0),
        };
        let span = rng.random_range(PI / 2.0..2.0 * PI);
        let start = rng.random_range(0.0..2.0 * PI);
        let n = rng.random_range(6..40);
        let (s, c) = truth.angle.sin_cos();
        let pts: Vec<Point2<f64>> = (0..n)
            .map(|i| {
                let t = start + span * i as f64 / (n - 1) as f64;
                let (x, y) = (truth.semi_major * t.cos(), truth.semi_minor * t.sin());
                truth.center + nalgebra::Vector2::new(c * x - s * y, s * x + c * y)
            })
            .collect();
        let fit = fit_ellipse(&pts).unwrap().ellipse().unwrap();
        let mut dangle = (fit.angle - truth.angle).rem_euclid(PI);
        dangle = dangle.min(PI - dangle);
        let errors = [
            (fit.center - truth.center).norm() / truth.semi_major,
            (fit.semi_major - truth.semi_major).abs() / truth.semi_major,
            (fit.semi_minor - truth.semi_minor).abs() / truth.semi_minor,
            dangle,
        ];
        worst = errors.iter().fold(worst, |w, e| w.max(*e));
    }
    check(worst <= 1e-6, format!("1000 ellipses, worst relative parameter error {worst:.2e}"))
}

fn c7_eq1_fixtures() -> Outcome {
    let fixtures = [((1, 0, 1), 0.5), ((3, 0, 0), 1.0), ((0, 2, 0), 0.0)];
    let fixtures_ok = fixtures
        .iter()
        .all(|&((tp, fp, fn_), want)| acc_at_t(&Confusion::new(tp, fp, fn_)) == Some(want));

    let template = default_template();
    let scenario = SyntheticScenario {
        min_visible_keypoints: 6,
        detection_noise_sigma_px: 3.0,
        seed: 77,
        ..SyntheticScenario::default()
    };
    let ts = [2.0, 5.0, 10.0, 20.0];
    let config = VoterConfig::default();
    let mut total = Evaluator::new(&ts);
    let mut monotone = true;
    for frame in frames(&scenario, 50) {
        let d = &frame.detections;
        let out = calibrate_frame(&template, &d.keypoints, &d.lines, d.image_size, &config);
        let mut e = Evaluator::new(&ts);
        e.add_frame(out.as_ref().map(|o| &o.params), &template, &frame.annotation);
        let accs: Vec<f64> = ts.iter().map(|&t| e.report().acc(t).unwrap_or(0.0)).collect();
        monotone &= accs.windows(2).all(|w| w[0] <= w[1]);
        total.merge(&e);
    }
    let r = total.report();
    let accs: Vec<f64> = ts.iter().map(|&t| r.acc(t).unwrap_or(0.0)).collect();
    monotone &= accs.windows(2).all(|w| w[0] <= w[1]);
    check(
        fixtures_ok && monotone,
        format!("fixtures {}, acc@{{2,5,10,20}} = {accs:.4?}", if fixtures_ok { "ok" } else { "wrong" }),
    )
}

fn c8_central_circle_zoom() -> Outcome {
    let template = default_template();
    let cam = CameraParams::look_at(
        Point3::new(3.0, -40.0, 22.0),
        Point3::new(0.0, 10.0, 0.0),
        1500.0,
        0.01,
        ImageSize::BROADCAST,
    )
    .unwrap();
    let mut rng = frame_rng(8, 0);
    let ann = render_annotation(&cam, &template, &SyntheticScenario::default(), &mut rng);
    let config = VoterConfig::default();
    let without = derive_all(
        &template,
        &ann,
        &DeriveOptions {
            tangents: false,
            ..DeriveOptions::default()
        },
    );
    let with = derive_all(&template, &ann, &DeriveOptions::default());
    let fails_without = without.len() < 4 && iterative_vote(&template, &without, cam.image_size, &config).is_none();
    let out = iterative_vote(&template, &with, cam.image_size, &config);
    let ground_rmse = out.as_ref().and_then(|o| {
        let corr: Vec<Correspondence> = template
            .keypoints()
            .iter()
            .filter(|k| k.on_ground())
            .filter_map(|k| {
                let p = cam.project(&k.world)?;
                cam.image_size.contains(&p).then(|| Correspondence::new(k.id, k.world, p))
            })
            .collect();
        reprojection_rmse(&o.params, &corr)
    });
    let succeeds = out.as_ref().is_some_and(|o| is_plausible(&o.params)) && ground_rmse.is_some_and(|r| r < 3.0);
    check(
        fails_without && succeeds,
        format!(
            "{} keypoints without tangents ({}), {} with tangents, ground rmse {:.2e} px",
            without.len(),
            if fails_without { "no camera" } else { "calibrated" },
            with.len(),
            ground_rmse.unwrap_or(f64::INFINITY)
        ),
    )
}

/// Whether a frame could be calibrated from its in-frame keypoints plus the
/// exact projections of every line-line keypoint whose two lines are visible.
fn fusion_oracle(template: &PitchTemplate, frame: &SyntheticFrame, config: &VoterConfig) -> bool {
    let d = &frame.detections;
    let seen: Vec<MarkingId> = d.lines.iter().map(|l| l.class).collect();
    let mut kp = d.keypoints.clone();
    for def in template.keypoints() {
        if let Construction::LineLine { a, b } = def.construction {
            if seen.contains(&a) && seen.contains(&b) {
                if let Some(p) = frame.camera.project(&def.world) {
                    kp.insert_if_absent(Keypoint::derived(def.id, p));
                }
            }
        }
    }
    iterative_vote(template, &kp, d.image_size, config).is_some()
}

fn c9_fusion() -> Outcome {
    let template = default_template();
    let mut scenario = SyntheticScenario {
        seed: 909,
        ..SyntheticScenario::default()
    };
    scenario.camera.focal_px = [3000.0, 6000.0];
    let config = VoterConfig::default();
    let (mut trials, mut enabled, mut index) = (0, 0, 0);
    while trials < 100 && index < 20_000 {
        let frame = generate_frame(&template, &scenario, index);
        index += 1;
        let d = &frame.detections;
        if d.keypoints.count_in_frame(d.image_size) >= 7
            || d.lines.len() < 2
            || iterative_vote(&template, &d.keypoints, d.image_size, &config).is_some()
            || !fusion_oracle(&template, &frame, &config)
        {
            continue;
        }
        trials += 1;
        let fused = fuse_lines(&template, &d.keypoints, &d.lines, d.image_size, &config);
        if let Some(o) = iterative_vote(&template, &fused, d.image_size, &config) {
            let focal_err = (o.params.focal - frame.camera.focal).abs() / frame.camera.focal;
            if is_plausible(&o.params) && focal_err < 1e-3 {
                enabled += 1;
            }
        }
    }
    check(
        trials == 100 && enabled >= 90,
        format!("fusion enabled calibration in {enabled}/{trials} trials ({index} frames scanned)"),
    )
}

fn c10_plausibility() -> Outcome {
    let cam = |x: f64, y: f64, z: f64, f: f64| {
        CameraParams::new(f, Rotation3::identity(), Point3::new(x, y, z), ImageSize::BROADCAST)
    };
    let cases = [
        ("z = -1", cam(0.0, -60.0, -1.0, 2000.0), false),
        ("focal 25000", cam(0.0, -60.0, 20.0, 25000.0), false),
        ("(0,-60,20) f 2000", cam(0.0, -60.0, 20.0, 2000.0), true),
        ("z = 100", cam(0.0, -60.0, 100.0, 2000.0), true),
        ("focal 10", cam(0.0, -60.0, 20.0, 10.0), true),
        ("focal 20000", cam(0.0, -60.0, 20.0, 20000.0), true),
        ("|x| = 250", cam(-250.0, -60.0, 20.0, 2000.0), true),
    ];
    let wrong: Vec<&str> = cases
        .iter()
        .filter(|(_, c, want)| is_plausible(c) != *want)
        .map(|(name, _, _)| *name)
        .collect();
    check(wrong.is_empty(), format!("{} fixtures, wrong: {wrong:?}", cases.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metric arithmetic", c1_metric_arithmetic),
        ("oracle closure", c2_oracle_closure),
        ("noise robustness", c3_noise_robustness),
        ("outlier handling", c4_outlier_handling),
        ("tangency preservation", c5_tangency),
        ("ellipse-fit exactness", c6_ellipse_fit),
        ("accuracy fixtures and monotonicity", c7_eq1_fixtures),
        ("central-circle zoom", c8_central_circle_zoom),
        ("out-of-frame fusion", c9_fusion),
        ("plausibility gate", c10_plausibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
