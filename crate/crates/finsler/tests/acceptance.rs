//! Acceptance suite: every release-gating check at its pinned tolerance,
//! one test per criterion, each printing a pass/fail line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::PI;
use std::time::Instant;

use finsler::characters;
use finsler::curvature::{cfc_certify, BallSampler, BodySampler};
use finsler::gallery::{
    integrate_sphere_geodesic, make_hilbert_metric, make_quadric_metric, make_round_sphere,
    normalize_sphere_state, quadric_f_closed, quadric_f_newton, reversibility_defect,
    ConvexBodySpec, QuadricSpec,
};
use finsler::metric::cartan_tensor;
use finsler::surface::{
    build_cfc_coframe, conformal_transform, integrate_beta_geodesic, magnetic_residual,
    make_round_sphere_surface, make_zoll_revolution, structure_equation_residual,
    trajectory_hausdorff, zoll_to_cfc_data, OddProfile, ScalarField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Criterion {
    name: &'static str,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Criterion {
            name,
            checks: Vec::new(),
        }
    }

    fn below(&mut self, label: &str, value: f64, limit: f64) {
        self.checks.push((
            format!("{label} = {value:.3e} (< {limit:.1e})"),
            value < limit,
        ));
    }

    fn above(&mut self, label: &str, value: f64, limit: f64) {
        self.checks.push((
            format!("{label} = {value:.3e} (> {limit:.1e})"),
            value > limit,
        ));
    }

    fn is_true(&mut self, label: &str, ok: bool) {
        self.checks.push((label.to_string(), ok));
    }

    fn finish(self) {
        let pass = self.checks.iter().all(|(_, ok)| *ok);
        let detail = self
            .checks
            .iter()
            .map(|(s, ok)| format!("{}{}", if *ok { "" } else { "!! " }, s))
            .collect::<Vec<_>>()
            .join("; ");
        println!(
            "{} {}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            self.name
        );
        assert!(pass, "{} failed: {detail}", self.name);
    }
}

#[test]
fn criterion_01_quadric_constant_flag_curvature() {
    let mut c = Criterion::new("criterion-01 quadric-cfc");
    for (label, spec, dim) in [
        ("n1", QuadricSpec::new(vec![0.4, 0.9]).unwrap(), 2usize),
        ("n2", QuadricSpec::new(vec![0.3, 0.6, 1.0]).unwrap(), 3usize),
    ] {
        let oracle = make_quadric_metric(spec);
        let sampler = BallSampler { dim, radius: 2.0 };
        let started = Instant::now();
        let report = cfc_certify(&oracle, &sampler, 200, 7, Some(1.0)).unwrap();
        let seconds = started.elapsed().as_secs_f64();
        c.below(&format!("{label} mean |K-1|"), report.mean_abs_dev, 5e-4);
        c.below(&format!("{label} max |K-1|"), report.max_abs_dev, 5e-3);
        c.below(&format!("{label} runtime s"), seconds, 60.0);
        c.is_true(&format!("{label} no failures"), report.failures.is_empty());
    }
    c.finish();
}

#[test]
fn criterion_02_round_sphere_oracle() {
    let mut c = Criterion::new("criterion-02 round-sphere");
    let oracle = make_round_sphere(1).unwrap();
    let sampler = BallSampler {
        dim: 2,
        radius: 2.0,
    };
    let report = cfc_certify(&oracle, &sampler, 200, 7, Some(1.0)).unwrap();
    c.below("max |K-1|", report.max_abs_dev, 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0) + 0.2).collect();
        let ct = cartan_tensor(&oracle, &x, &y).unwrap();
        worst = worst.max(ct.norm());
    }
    c.below("max Cartan norm", worst, 1e-5);
    c.finish();
}

#[test]
fn criterion_03_hilbert_metrics() {
    let mut c = Criterion::new("criterion-03 hilbert");
    let ball = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
    let sampler = BodySampler {
        body: ConvexBodySpec::Ball { dim: 2 },
        margin: 0.2,
    };
    let report = cfc_certify(&ball, &sampler, 200, 11, None).unwrap();
    c.below("ball std dev", report.std_dev, 1e-4);
    c.below("ball |mean+1|", (report.c_estimate + 1.0).abs(), 1e-3);

    let se = make_hilbert_metric(ConvexBodySpec::Superellipse);
    let sampler = BodySampler {
        body: ConvexBodySpec::Superellipse,
        margin: 0.2,
    };
    let report = cfc_certify(&se, &sampler, 200, 11, None).unwrap();
    c.below("superellipse std dev", report.std_dev, 1e-3);

    let ct = cartan_tensor(&se, &[0.3, 0.2], &[0.7, 0.4]).unwrap();
    c.above("superellipse Cartan norm", ct.norm(), 1e-2);
    c.finish();
}

#[test]
fn criterion_04_geodesic_closure_and_rectilinearity() {
    let mut c = Criterion::new("criterion-04 closure");
    for (label, spec, v0, w0) in [
        (
            "n1",
            QuadricSpec::new(vec![0.4, 0.9]).unwrap(),
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.4],
        ),
        (
            "n2",
            QuadricSpec::new(vec![0.3, 0.6, 1.0]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.4, -0.2],
        ),
    ] {
        let (v0, w0) = normalize_sphere_state(&spec, &v0, &w0).unwrap();
        let traj = integrate_sphere_geodesic(&spec, &v0, &w0, 2.0 * PI, 1e-3).unwrap();
        c.below(&format!("{label} closure"), traj.closure_defect(), 1e-4);
        c.below(
            &format!("{label} planarity"),
            traj.planarity_defect().unwrap(),
            1e-6,
        );
    }
    c.finish();
}

#[test]
fn criterion_05_closed_form_vs_newton() {
    let mut c = Criterion::new("criterion-05 closed-vs-newton");
    let mut worst = 0.0f64;
    for spec in [
        QuadricSpec::new(vec![0.4, 0.9]).unwrap(),
        QuadricSpec::new(vec![0.3, 0.6, 1.0]).unwrap(),
    ] {
        let dim = spec.ambient_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut produced = 0;
        while produced < 500 {
            let v_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: f64 = v_raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 0.2 {
                continue;
            }
            let v: Vec<f64> = v_raw.iter().map(|c| c / n).collect();
            let y_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&y_raw).map(|(a, b)| a * b).sum();
            let y: Vec<f64> = (0..dim).map(|i| y_raw[i] - dot * v[i]).collect();
            if y.iter().map(|cc| cc * cc).sum::<f64>() < 1e-3 {
                continue;
            }
            let fc = quadric_f_closed(&spec, &v, &y).unwrap();
            let fnewt = quadric_f_newton(&spec, &v, &y).unwrap();
            worst = worst.max((fc - fnewt).abs() / fc);
            produced += 1;
        }
    }
    c.below("max relative difference (1000 samples)", worst, 1e-9);
    c.finish();
}

#[test]
fn criterion_06_zoll_pipeline() {
    let mut c = Criterion::new("criterion-06 zoll-pipeline");
    let profile = OddProfile::odd_poly(&[0.2]);
    let zoll = make_zoll_revolution(profile).unwrap();
    let derived = zoll_to_cfc_data(&zoll).unwrap();

    c.below(
        "magnetic residual @128",
        magnetic_residual(&derived, 128).unwrap(),
        1e-5,
    );

    let coframe = build_cfc_coframe(&derived).unwrap();
    let mut residuals = Vec::new();
    for grid in [32usize, 64, 128] {
        residuals.push(structure_equation_residual(&coframe, grid).unwrap());
    }
    let finest = residuals.last().unwrap();
    for (i, &r) in finest.iter().enumerate() {
        c.below(&format!("structure residual {} @128", i + 1), r, 1e-5);
    }
    let mut min_order = f64::INFINITY;
    for w in residuals.windows(2) {
        for (coarse, fine) in w[0].iter().zip(&w[1]) {
            if coarse.max(*fine) > 1e-12 {
                min_order = min_order.min((coarse / fine).log2());
            }
        }
    }
    c.above("observed convergence order", min_order, 2.0);

    let base = integrate_beta_geodesic(&zoll, (PI / 2.0, 0.0), 0.7, 2.0 * PI, 1e-3).unwrap();
    let beta = integrate_beta_geodesic(&derived, (PI / 2.0, 0.0), 0.7, 8.0, 1e-3).unwrap();
    c.below(
        "beta-geodesic vs base hausdorff",
        trajectory_hausdorff(&base, &beta),
        1e-5,
    );
    c.finish();
}

#[test]
fn criterion_07_conformal_invariance() {
    let mut c = Criterion::new("criterion-07 conformal");
    let round = make_round_sphere_surface();
    let base = integrate_beta_geodesic(&round, (1.2, 0.3), 0.4, 2.0 * PI, 1e-3).unwrap();

    // First factor: the Gauss curvature of a rotational metric.
    let zoll = make_zoll_revolution(OddProfile::odd_poly(&[0.2])).unwrap();
    let k0 = zoll.analytic_gauss.clone().unwrap();
    let conf1 = conformal_transform(&round, k0).unwrap();
    let t1 = integrate_beta_geodesic(&conf1, (1.2, 0.3), 0.4, 8.0, 1e-3).unwrap();
    c.below(
        "L = curvature factor",
        trajectory_hausdorff(&base, &t1),
        1e-5,
    );

    // Second factor: a positive trigonometric polynomial in both variables.
    let l =
        ScalarField::new(|u: f64, v: f64| 1.3 + 0.2 * u.sin() * v.cos() + 0.1 * (2.0 * v).cos())
            .with_partials(
                |u, v| 0.2 * u.cos() * v.cos(),
                |u, v| -0.2 * u.sin() * v.sin() - 0.2 * (2.0 * v).sin(),
            );
    let conf2 = conformal_transform(&round, l).unwrap();
    let t2 = integrate_beta_geodesic(&conf2, (1.2, 0.3), 0.4, 9.0, 1e-3).unwrap();
    c.below(
        "L = trig polynomial",
        trajectory_hausdorff(&base, &t2),
        1e-5,
    );
    c.finish();
}

#[test]
fn criterion_08_character_identities() {
    let mut c = Criterion::new("criterion-08 characters");
    let started = Instant::now();
    c.is_true(
        "identities hold for 2..=12",
        characters::verify_involutivity_identities(12).is_ok(),
    );
    let mut generality_ok = true;
    for n in 2..=12u32 {
        let t = characters::cartan_characters(n).unwrap();
        generality_ok &= t.s[(n + 1) as usize] == (n as i128) * (n as i128 + 1);
    }
    c.is_true("s_{n+1} = n(n+1)", generality_ok);
    c.below("runtime s", started.elapsed().as_secs_f64(), 1.0);
    c.finish();
}

#[test]
fn criterion_09_reversibility() {
    let mut c = Criterion::new("criterion-09 reversibility");
    let round = make_round_sphere(1).unwrap();
    c.below(
        "round sphere defect",
        reversibility_defect(&round, 100, 7).unwrap(),
        1e-10,
    );
    let ball = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
    c.below(
        "ball hilbert defect",
        reversibility_defect(&ball, 100, 7).unwrap(),
        1e-10,
    );
    let quadric = make_quadric_metric(QuadricSpec::new(vec![0.4, 0.9]).unwrap());
    c.above(
        "quadric defect",
        reversibility_defect(&quadric, 100, 7).unwrap(),
        1e-3,
    );
    c.finish();
}

#[test]
fn criterion_10_cli_determinism() {
    let mut c = Criterion::new("criterion-10 determinism");
    // Same filename in two directories so the echoed configs are identical;
    // only then does the byte-comparison constrain the payload.
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let out1 = dir1.path().join("r.json");
    let out2 = dir2.path().join("r.json");
    for out in [&out1, &out2] {
        let code = finsler::cli::run([
            "finsler",
            "curvature-certify",
            "--metric",
            "quadric",
            "--p",
            "0.4,0.9",
            "--samples",
            "40",
            "--seed",
            "7",
            "--c",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let payload_bytes = |path: &std::path::Path| {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let mut kept = serde_json::Map::new();
        kept.insert("payload".into(), v["payload"].clone());
        kept.insert("verdicts".into(), v["verdicts"].clone());
        kept.insert("version".into(), v["version"].clone());
        serde_json::to_string_pretty(&kept).unwrap()
    };
    c.is_true(
        "byte-identical payloads",
        payload_bytes(&out1) == payload_bytes(&out2),
    );
    c.finish();
}
