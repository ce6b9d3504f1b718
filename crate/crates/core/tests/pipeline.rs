use bidiff_core::diffusion::{
    score_matching_loss_scaled, target_score_scaled, BrownianKernel, DiffusionConfig, ForwardDiffuser, MarginalOracle,
};
use bidiff_core::lie::{pose_distance, Pose, Rotation, Twist, Vec3};
use bidiff_core::pointcloud::PointCloud;
use bidiff_core::sampler::{build_schedule, run_denoising, DenoiseOptions, Segment};
use bidiff_core::score_model::ScoreModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ring(n: usize, radius: f64, z: f64) -> Vec<Vec3<f64>> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(radius * a.cos(), radius * a.sin(), z)
        })
        .collect()
}

fn setup() -> (PointCloud<f64>, PointCloud<f64>, Vec<Pose<f64>>) {
    let grasp = PointCloud::new(ring(24, 0.05, 0.0));
    let mut scene_pts = Vec::new();
    let demos: Vec<Pose<f64>> = [(0.2, 0.3), (-0.25, -1.2)]
        .iter()
        .map(|&(x, yaw)| {
            Pose::new(
                Vec3::new(x, 0.1, 0.3),
                Rotation::from_axis_angle(&Vec3::z(), yaw).unwrap(),
            )
        })
        .collect();
    for d in &demos {
        // a short peg through each ring
        for k in 0..10 {
            scene_pts.push(d.apply(&Vec3::new(0.04, 0.0, -0.05 + 0.01 * k as f64)));
        }
    }
    (PointCloud::new(scene_pts), grasp, demos)
}

#[test]
fn oracle_minimizes_the_denoising_loss_over_an_affine_probe() {
    let (scene, grasp, demos) = setup();
    let cfg = DiffusionConfig::new(0.3, 0.02, 0.1).unwrap();
    let oracle = MarginalOracle::new(&demos, &scene, &grasp, cfg.contact_radius, cfg.length_scale).unwrap();
    let kernel = BrownianKernel::new(cfg.t).unwrap();
    let diffusers: Vec<_> = demos
        .iter()
        .map(|g0| ForwardDiffuser::new(g0, &scene, &grasp, &cfg).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let e = Twist::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)) * (0.5f64.sqrt());
    let mut samples = Vec::new();
    for i in 0..4000 {
        let d = i % demos.len();
        let s = diffusers[d].sample(&mut rng);
        let o = oracle.score_with_kernel(&kernel, &s.g_t).unwrap();
        samples.push((s, d, o));
    }
    // scale of the probe offset relative to the score magnitude
    let scale = (samples.iter().map(|(_, _, o)| o.dot(o)).sum::<f64>() / samples.len() as f64).sqrt();
    let loss = |a: f64, b: f64| {
        samples
            .iter()
            .map(|(s, d, o)| {
                let model = *o * a + e * (b * scale);
                score_matching_loss_scaled(&model, &s.g_t, &demos[*d], &s.origin, cfg.t, cfg.length_scale).unwrap()
            })
            .sum::<f64>()
            / samples.len() as f64
    };
    let grid: Vec<f64> = (0..=10).map(|k| 0.5 + 0.1 * k as f64).collect();
    let offsets: Vec<f64> = (0..=10).map(|k| -0.5 + 0.1 * k as f64).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &a in &grid {
        for &b in &offsets {
            let l = loss(a, b);
            if l < best.0 {
                best = (l, a, b);
            }
        }
    }
    assert!((best.1 - 1.0).abs() < 0.05 && best.2.abs() < 0.05, "argmin at {best:?}");
    // the loss at the target itself is zero
    let (s, d, _) = &samples[0];
    let target = target_score_scaled(&s.g_t, &demos[*d], &s.origin, cfg.t, cfg.length_scale).unwrap();
    assert_eq!(
        score_matching_loss_scaled(&target, &s.g_t, &demos[*d], &s.origin, cfg.t, cfg.length_scale).unwrap(),
        0.0
    );
}

#[test]
fn annealed_oracle_sampling_recovers_demos() {
    let (scene, grasp, demos) = setup();
    let l = 0.1;
    let oracle = MarginalOracle::new(&demos, &scene, &grasp, 0.02, l).unwrap();
    let segs = [
        Segment {
            start: 1.0,
            end: 0.1,
            steps: 150,
        },
        Segment {
            start: 0.1,
            end: 0.01,
            steps: 150,
        },
    ];
    let schedule = build_schedule(&segs, 0.1, 0.5, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inits: Vec<Pose<f64>> = (0..16)
        .map(|_| {
            let d = bidiff_core::lie::random_pose::<f64, _>(&mut rng, 0.3);
            Pose::new(d.translation, d.rotation)
        })
        .collect();
    let opts = DenoiseOptions {
        length_scale: l,
        ..Default::default()
    };
    let out = run_denoising(|g, t| oracle.score(g, t), &inits, &schedule, 5, &opts);
    let mut hits = 0;
    for c in &out {
        assert!(c.failure.is_none(), "{:?}", c.failure);
        if demos.iter().any(|d| {
            let (dt, da) = pose_distance(&c.final_pose, d);
            dt < 0.05 * l && da < 5f64.to_radians()
        }) {
            hits += 1;
        }
    }
    assert!(hits >= 14, "{hits} of 16");
}

#[test]
fn single_precision_pipeline() {
    let grasp = PointCloud::<f32>::new(ring(12, 0.05, 0.0).iter().map(|p| p.cast()).collect());
    let g0 = Pose::<f32>::new(Vec3::new(0.1, 0.0, 0.2), Rotation::identity());
    let scene = PointCloud::new(vec![g0.apply(&Vec3::new(0.05, 0.0, 0.0))]);
    let cfg = DiffusionConfig::new(0.4f32, 0.02, 0.1).unwrap();
    let s = ForwardDiffuser::new(&g0, &scene, &grasp, &cfg)
        .unwrap()
        .sample(&mut ChaCha8Rng::seed_from_u64(1));
    let score = target_score_scaled(&s.g_t, &g0, &s.origin, cfg.t, cfg.length_scale).unwrap();
    assert!(score.is_finite());
    let s64 = target_score_scaled(&s.g_t.cast::<f64>(), &g0.cast(), &s.origin.cast(), 0.4, 0.1).unwrap();
    let d = (Twist::new(score.linear.cast::<f64>(), score.angular.cast()) - s64).norm();
    assert!(d < 1e-3 * s64.norm().max(1.0), "{d}");

    let model = ScoreModel::<f32>::seeded(0.1, 6, 4).unwrap();
    let prepared = model.prepare(&grasp).unwrap();
    let out = model.score(&prepared, &g0, &scene, 0.3, 0.1).unwrap();
    assert!(out.score.is_finite());
}
