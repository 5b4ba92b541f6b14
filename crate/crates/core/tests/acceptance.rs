//! Acceptance criteria, one line each. Exits non-zero if any criterion
//! fails unless it is listed as a known shortfall (see the README).

mod common;

use std::time::{Duration, Instant};

use common::{cylinder_sequence, relative_errors, Sequence};
use endofusion::dataset::{
    plan_manifest, plan_sequences, read_sequence, write_sequence, SequenceInfo,
};
use endofusion::depth::{calibrate_noise, noise_rms};
use endofusion::eval::{ate, depth_metrics, sequence_depth_metrics, surface_error};
use endofusion::fusion::{
    fuse, predict_view_with, specular_mask, FusionConfig, Pipeline, PipelineConfig, SurfelMap,
    TrackingConfig, TrackingProblem,
};
use endofusion::scene::{
    build_scene, render_frame, shade, AppearanceParams, PointLight, DEFAULT_LIGHT_POWER,
};
use endofusion::{
    CameraIntrinsics, DatasetManifest, DepthMap, DepthSource, Difficulty, Image, Pose, SplitLabel,
};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    /// Documented as unattainable; reported but does not fail the run.
    known_shortfall: bool,
    check: fn(&mut Shared) -> Outcome,
}

/// Expensive artefacts reused by several criteria.
#[derive(Default)]
struct Shared {
    gt_run: Option<(Sequence, Pipeline, Duration)>,
}

impl Shared {
    /// The noiseless 50-frame cylinder sequence fused with ground-truth depth.
    fn gt_run(&mut self) -> &(Sequence, Pipeline, Duration) {
        self.gt_run.get_or_insert_with(|| {
            let start = Instant::now();
            let seq = cylinder_sequence(50, 0.0005);
            let pipeline =
                common::run_pipeline(&seq, &DepthSource::GroundTruth, PipelineConfig::default())
                    .expect("noiseless run");
            (seq, pipeline, start.elapsed())
        })
    }
}

fn main() {
    let criteria = [
        Criterion {
            name: "metric correctness",
            budget: Duration::from_secs(1),
            known_shortfall: false,
            check: metric_correctness,
        },
        Criterion {
            name: "rendering fidelity",
            budget: Duration::from_secs(10),
            known_shortfall: false,
            check: rendering_fidelity,
        },
        Criterion {
            name: "tracking accuracy",
            budget: Duration::from_secs(120),
            known_shortfall: false,
            check: tracking_accuracy,
        },
        Criterion {
            name: "reconstruction accuracy (ground-truth depth)",
            budget: Duration::from_secs(300),
            known_shortfall: false,
            check: reconstruction_ground_truth,
        },
        Criterion {
            name: "reconstruction accuracy (depth noise at normalized rms 0.054)",
            budget: Duration::from_secs(300),
            known_shortfall: true,
            check: reconstruction_noisy,
        },
        Criterion {
            name: "noise calibration",
            budget: Duration::from_secs(300),
            known_shortfall: false,
            check: noise_calibration,
        },
        Criterion {
            name: "published depth table not reproducible",
            budget: Duration::from_secs(60),
            known_shortfall: false,
            check: table_substitution,
        },
        Criterion {
            name: "format round-trip and split",
            budget: Duration::from_secs(120),
            known_shortfall: false,
            check: format_round_trip,
        },
    ];

    let mut shared = Shared::default();
    let mut unexpected = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)(&mut shared);
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = outcome.pass && in_time;
        let tag = match (pass, c.known_shortfall) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => "FAIL",
        };
        println!(
            "{tag} {}: {} [{:.1}s of {}s]",
            c.name,
            outcome.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if !pass && !c.known_shortfall {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn metric_correctness(_: &mut Shared) -> Outcome {
    let m = depth_metrics(
        &Image::from_vec(2, 1, vec![1.0, 3.0]),
        &Image::from_vec(2, 1, vec![2.0, 2.0]),
        false,
    )
    .expect("overlapping maps");
    // Independent scalar evaluation.
    let rel = ((1.0f64 - 2.0).abs() / 2.0 + (3.0f64 - 2.0).abs() / 2.0) / 2.0;
    let log10 = ((0.5f64).log10().abs() + (1.5f64).log10().abs()) / 2.0;
    let rms = (((1.0f64 - 2.0).powi(2) + (3.0f64 - 2.0).powi(2)) / 2.0).sqrt();
    let pass = (m.rel - 0.5).abs() < 1e-9
        && (m.log10 - 0.238560).abs() < 1e-6
        && (m.rms - 1.0).abs() < 1e-9
        && (m.rel - rel).abs() < 1e-9
        && (m.log10 - log10).abs() < 1e-9
        && (m.rms - rms).abs() < 1e-9;
    Outcome {
        pass,
        detail: format!("rel {:.9} log10 {:.9} rms {:.9}", m.rel, m.log10, m.rms),
    }
}

fn rendering_fidelity(_: &mut Shared) -> Outcome {
    let scene = build_scene(0, Difficulty::Straight);
    let intr = CameraIntrinsics::default();
    let pose = Pose::identity();
    let frame = render_frame(&scene, &pose, &intr);
    let r = scene.r0();
    let (mut worst, mut valid) = (0.0f64, 0usize);
    for v in 0..intr.height {
        for u in 0..intr.width {
            let d = *frame.depth.get(u, v) as f64;
            if d == 0.0 {
                continue;
            }
            // Camera at the origin on the z-axis: the ray (x, y, 1) hits at z = r / |(x, y)|.
            let ray = intr.ray(u as f64, v as f64);
            let z = r / (ray.x * ray.x + ray.y * ray.y).sqrt();
            worst = worst.max((d - z).abs());
            valid += 1;
        }
    }

    let app = AppearanceParams {
        texture_octaves: 0,
        specular_strength: 0.0,
        ..AppearanceParams::default()
    };
    let light = PointLight {
        position: Vector3::zeros(),
        power: DEFAULT_LIGHT_POWER,
    };
    let n = Vector3::new(0.0, -0.6, -0.8);
    let dir = Vector3::new(0.0, 0.3, 1.0).normalize();
    let near = shade(&(dir * 0.015), &n, &(-dir), &light, &app).diffuse;
    let far = shade(&(dir * 0.03), &n, &(-dir), &light, &app).diffuse;
    let ratio = near[0] / far[0];
    Outcome {
        pass: worst < 1e-4 && valid > 60_000 && (ratio - 4.0).abs() < 0.04,
        detail: format!(
            "max depth error {worst:.2e} m over {valid} pixels; diffuse ratio {ratio:.6}"
        ),
    }
}

fn jacobian_check(seq: &Sequence) -> f64 {
    let mut map = SurfelMap::new(2.0, 1_000_000);
    let threshold = TrackingConfig::default().mask_threshold;
    let f0 = &seq.frames[0];
    fuse(
        &mut map,
        f0,
        &seq.poses[0],
        &seq.intr,
        &specular_mask(&f0.rgb, threshold),
        &FusionConfig::default(),
    );
    let view = predict_view_with(&map, &seq.poses[0], &seq.intr, 0.0);
    let mask = specular_mask(&seq.frames[1].rgb, threshold);
    let problem = TrackingProblem::new(&view, &seq.frames[1], &mask, &TrackingConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-7;
    let fd = |value: &dyn Fn(&Pose) -> f64, t: &Pose| {
        Vector6::from_fn(|k, _| {
            let mut d = Vector6::zeros();
            d[k] = eps;
            (value(&Pose::exp(&d).compose(t)) - value(&Pose::exp(&-d).compose(t))) / (2.0 * eps)
        })
    };
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let xi = Vector6::from_fn(|k, _| {
            let s = if k < 3 { 2e-4 } else { 5e-3 };
            rng.random_range(-s..s)
        });
        let t_rel = Pose::exp(&xi).compose(&problem.relative_pose(&seq.poses[1]));
        for level in 0..2 {
            let assoc = problem.associate(level, &t_rel);
            let (mut diff, mut norm) = (0.0, 0.0);
            for pair in assoc.geometric.iter().step_by(131) {
                let an = problem.geometric_residual(pair, &t_rel).jacobian;
                let num = fd(&|t| problem.geometric_residual(pair, t).value, &t_rel);
                diff += (an - num).norm_squared();
                norm += num.norm_squared();
            }
            worst = worst.max((diff / norm).sqrt());
            let (mut diff, mut norm) = (0.0, 0.0);
            for &m in assoc.photometric.iter().step_by(131) {
                let Some(r) = problem.photometric_residual(level, m, &t_rel) else {
                    continue;
                };
                let num = fd(
                    &|t| {
                        problem
                            .photometric_residual(level, m, t)
                            .map_or(f64::NAN, |r| r.value)
                    },
                    &t_rel,
                );
                diff += (r.jacobian - num).norm_squared();
                norm += num.norm_squared();
            }
            worst = worst.max((diff / norm).sqrt());
        }
    }
    worst
}

fn tracking_accuracy(shared: &mut Shared) -> Outcome {
    let (seq, pipeline, _) = shared.gt_run();
    let errors = relative_errors(&pipeline.trajectory, &seq.poses);
    let worst_m = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let worst_deg = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let ate = ate(&pipeline.trajectory, &seq.poses)
        .expect("equal lengths")
        .ate_rmse;
    let converged = pipeline.telemetry.iter().all(|t| t.converged);
    let jac = jacobian_check(seq);
    Outcome {
        pass: converged && worst_m < 5e-5 && worst_deg < 0.05 && ate < 1e-4 && jac < 1e-4,
        detail: format!(
            "worst frame {worst_m:.2e} m / {worst_deg:.2e} deg, ATE {ate:.2e} m, jacobian relative error {jac:.1e}"
        ),
    }
}

fn reconstruction_ground_truth(shared: &mut Shared) -> Outcome {
    let (seq, pipeline, elapsed) = shared.gt_run();
    let err = surface_error(&pipeline.map, &seq.scene).expect("stable surfels");
    Outcome {
        pass: err.mean < 1e-4 && elapsed.as_secs() < 300,
        detail: format!(
            "mean |sdf| {:.2e} m over {} stable surfels (pipeline run {:.1}s)",
            err.mean,
            err.count,
            elapsed.as_secs_f64()
        ),
    }
}

fn reconstruction_noisy(shared: &mut Shared) -> Outcome {
    let gt_err = {
        let (seq, pipeline, _) = shared.gt_run();
        surface_error(&pipeline.map, &seq.scene)
            .expect("stable surfels")
            .mean
    };
    let (seq, _, _) = shared.gt_run();
    let depths: Vec<DepthMap> = seq.frames.iter().map(|f| f.depth.clone()).collect();
    let model = calibrate_noise(0.054, &depths).expect("calibration");
    // Keep tracking through failures so the converged fraction covers every frame.
    let config = PipelineConfig {
        max_consecutive_failures: usize::MAX,
        ..PipelineConfig::default()
    };
    let pipeline =
        common::run_pipeline(seq, &DepthSource::Corrupted(model), config).expect("noisy run");
    let converged = pipeline.converged_fraction();
    let surface = match surface_error(&pipeline.map, &seq.scene) {
        Ok(e) => format!(
            "mean |sdf| {:.2e} m = {:.0}x the noiseless run",
            e.mean,
            e.mean / gt_err
        ),
        Err(_) => "no stable surfels to score".to_string(),
    };
    let ratio = surface_error(&pipeline.map, &seq.scene).map_or(f64::INFINITY, |e| e.mean / gt_err);
    Outcome {
        pass: ratio < 10.0 && converged >= 0.95,
        detail: format!(
            "sigma_m {:.3}, converged {:.1}% of frames, {surface}",
            model.multiplicative_sigma,
            100.0 * converged
        ),
    }
}

fn noise_calibration(_: &mut Shared) -> Outcome {
    let seq = cylinder_sequence(100, 0.0005);
    let depths: Vec<DepthMap> = seq.frames.iter().map(|f| f.depth.clone()).collect();
    let model = calibrate_noise(0.054, &depths).expect("calibration");
    let rms = noise_rms(&model, &depths).expect("rms");
    // Cross-check through the evaluation module on the provider's output.
    let source = DepthSource::Corrupted(model);
    let preds: Vec<DepthMap> = seq
        .frames
        .iter()
        .map(|f| source.provide(f.frame_index, &f.depth).expect("corrupt"))
        .collect();
    let eval_rms = sequence_depth_metrics(&preds, &depths, true)
        .expect("metrics")
        .rms;
    Outcome {
        pass: (0.0486..=0.0594).contains(&rms) && (eval_rms - rms).abs() < 1e-12,
        detail: format!(
            "sigma_m {:.4}, rms {rms:.5} over 100 frames",
            model.multiplicative_sigma
        ),
    }
}

fn table_substitution(shared: &mut Shared) -> Outcome {
    // The published rel/log10/rms come from renders we do not have. Report what
    // the same metrics give for the synthetic stand-in at the same rms budget.
    let (seq, _, _) = shared.gt_run();
    let depths: Vec<DepthMap> = seq.frames.iter().map(|f| f.depth.clone()).collect();
    let model = calibrate_noise(0.054, &depths).expect("calibration");
    let source = DepthSource::Corrupted(model);
    let preds: Vec<DepthMap> = seq
        .frames
        .iter()
        .map(|f| source.provide(f.frame_index, &f.depth).expect("corrupt"))
        .collect();
    let m = sequence_depth_metrics(&preds, &depths, true).expect("metrics");
    Outcome {
        pass: (0.0486..=0.0594).contains(&m.rms),
        detail: format!(
            "not reproduced (source renders unavailable); synthetic stand-in at the rms budget gives rel {:.3} log10 {:.3} rms {:.3} against published 0.312 / 0.012 / 0.054",
            m.rel, m.log10, m.rms
        ),
    }
}

fn format_round_trip(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let intr = CameraIntrinsics::default();
    let info = SequenceInfo::new(2, Difficulty::Curved, 50, 0.0005);
    let (frames, poses) = info.render(&intr).expect("render");
    let manifest = DatasetManifest::single_sequence("acceptance", intr, info);
    write_sequence(dir.path(), &frames, &poses, &manifest).expect("write");
    let back = read_sequence(dir.path()).expect("read");
    let depth_exact = frames.iter().zip(&back.frames).all(|(a, b)| {
        a.depth
            .as_slice()
            .iter()
            .zip(b.depth.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let pose_err = poses
        .iter()
        .zip(&back.poses)
        .map(|(a, b)| {
            (a.translation - b.translation)
                .norm()
                .max((a.rotation - b.rotation).norm())
        })
        .fold(0.0, f64::max);

    let seeds: Vec<u64> = (0..10).collect();
    let planned = plan_manifest(
        "split",
        intr,
        plan_sequences(
            &seeds,
            1,
            &SequenceInfo::new(0, Difficulty::Randomized, 5, 0.0005),
        ),
        0.2,
    )
    .expect("plan");
    let scenes = planned.frame_scenes();
    let val_scenes: std::collections::BTreeSet<u64> = scenes
        .iter()
        .zip(&planned.split)
        .filter(|(_, l)| **l == SplitLabel::Val)
        .map(|(s, _)| *s)
        .collect();
    let disjoint = scenes
        .iter()
        .zip(&planned.split)
        .all(|(s, l)| (*l == SplitLabel::Val) == val_scenes.contains(s));
    let frac = planned.val_fraction();
    Outcome {
        pass: depth_exact && pose_err < 1e-12 && disjoint && frac == 0.2 && back.frames.len() == 50,
        detail: format!(
            "50 frames, depth bit-exact {depth_exact}, max pose error {pose_err:.1e}; split {:.0}/{:.0} scene-disjoint {disjoint}",
            100.0 * (1.0 - frac),
            100.0 * frac
        ),
    }
}
