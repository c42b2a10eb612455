mod common;

use rand::Rng;
use vcache_core::flowsim::GmmField;
use vcache_core::metrics::{self, SampleCloud};
use vcache_core::rng;

fn cloud(points: Vec<Vec<f64>>) -> SampleCloud {
    SampleCloud::new(points).unwrap()
}

fn random_points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-3.0..3.0)).collect()).collect()
}

#[test]
fn deviation_matches_scalar_loop() {
    let a = random_points(1, 200, 3);
    let b = random_points(2, 200, 3);
    let got = metrics::endpoint_deviation(&cloud(a.clone()), &cloud(b.clone())).unwrap();
    let mut sq = 0.0;
    for p in &a {
        for v in p {
            sq += v * v;
        }
    }
    let rms = (sq / a.len() as f64).sqrt();
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for i in 0..a.len() {
        let d = common::sq_dist(&a[i], &b[i]).sqrt() / rms;
        sum += d;
        max = max.max(d);
    }
    assert!((got.mean_rel - sum / a.len() as f64).abs() < 1e-12);
    assert!((got.max_rel - max).abs() < 1e-12);
}

#[test]
fn constant_offset_deviation_is_closed_form() {
    let a = random_points(3, 50, 2);
    let c = [0.3, -0.4];
    let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + c[0], p[1] + c[1]]).collect();
    let ca = cloud(a);
    let got = metrics::endpoint_deviation(&ca, &cloud(b)).unwrap();
    let expected = 0.5 / ca.rms_norm();
    assert!((got.mean_rel - expected).abs() < 1e-12);
    assert!((got.max_rel - expected).abs() < 1e-12);
    let same = metrics::endpoint_deviation(&ca, &ca).unwrap();
    assert_eq!((same.mean_rel, same.max_rel), (0.0, 0.0));
}

/// `2 E|A-B| - E|A-A'| - E|B-B'|` over all ordered pairs.
fn energy_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mean = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += common::sq_dist(p, q).sqrt();
            }
        }
        s / (x.len() * y.len()) as f64
    };
    (2.0 * mean(a, b) - mean(a, a) - mean(b, b)).max(0.0)
}

#[test]
fn energy_distance_matches_pairwise_oracle() {
    let a = random_points(4, 60, 2);
    let b = random_points(5, 45, 2);
    let got = metrics::energy_distance(&cloud(a.clone()), &cloud(b.clone())).unwrap();
    assert!((got - energy_oracle(&a, &b)).abs() < 1e-12);
    let sym = metrics::energy_distance(&cloud(b), &cloud(a)).unwrap();
    assert!((got - sym).abs() < 1e-12);
    let one = metrics::energy_distance(&cloud(vec![vec![0.0]]), &cloud(vec![vec![2.0]])).unwrap();
    assert_eq!(one, 4.0);
}

#[test]
fn energy_distance_separates_shifted_mixtures() {
    let f = GmmField::bundled();
    let mut shifted: serde_json::Value = serde_json::to_value(&f).unwrap();
    for c in shifted["components"].as_array_mut().unwrap() {
        let m = c["mean"].as_array_mut().unwrap();
        for v in m.iter_mut() {
            *v = serde_json::json!(v.as_f64().unwrap() + 1.0);
        }
    }
    let g: GmmField = serde_json::from_value(shifted).unwrap();
    let mut r = rng::seeded(8);
    let draw = |field: &GmmField, r: &mut rng::Rng| cloud((0..512).map(|_| field.sample(r)).collect());
    let a = draw(&f, &mut r);
    let b = draw(&f, &mut r);
    let c = draw(&g, &mut r);
    let same = metrics::energy_distance(&a, &b).unwrap();
    let apart = metrics::energy_distance(&a, &c).unwrap();
    assert!(same < apart, "{same} vs {apart}");
}

#[test]
fn direct_mixture_draws_hit_moments() {
    let f = common::moment_field();
    let mut r = rng::seeded(17);
    let c = cloud((0..100_000).map(|_| f.sample(&mut r)).collect());
    let m = metrics::moment_check(&c, &f).unwrap();
    assert!(m.mean_err < 0.02, "{m:?}");
    assert!(m.cov_err < 0.05, "{m:?}");
    // library mixture moments against the closed form
    let comps: Vec<(f64, Vec<f64>, f64)> =
        f.components().iter().map(|c| (c.weight, c.mean.clone(), c.sigma)).collect();
    let (mean, cov) = common::mixture_moments(&comps);
    assert_eq!(f.mixture_mean(), mean);
    assert!(common::rel_frobenius(&f.mixture_covariance(), &cov) < 1e-15);
}

#[test]
fn moment_check_trivial_cases() {
    let f = common::moment_field();
    let means = cloud(f.components().iter().map(|c| c.mean.clone()).collect());
    assert_eq!(metrics::moment_check(&means, &f).unwrap().mean_err, 0.0);

    let unit = GmmField::new(vec![vcache_core::flowsim::GmmComponent {
        weight: 1.0,
        mean: vec![2.0, 2.0],
        sigma: 1.0,
    }])
    .unwrap();
    let m = metrics::moment_check(&cloud(vec![vec![2.0, 2.0]]), &unit).unwrap();
    assert_eq!(m.mean_err, 0.0);
    assert!((m.cov_err - 1.0).abs() < 1e-15);
}

#[test]
fn metrics_invariant_under_coordinate_permutation() {
    let a = random_points(6, 40, 3);
    let b = random_points(7, 40, 3);
    let p = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![x[2], x[0], x[1]]).collect::<Vec<_>>();
    let e1 = metrics::energy_distance(&cloud(a.clone()), &cloud(b.clone())).unwrap();
    let e2 = metrics::energy_distance(&cloud(p(&a)), &cloud(p(&b))).unwrap();
    assert!((e1 - e2).abs() < 1e-12);
    let d1 = metrics::endpoint_deviation(&cloud(a.clone()), &cloud(b.clone())).unwrap();
    let d2 = metrics::endpoint_deviation(&cloud(p(&a)), &cloud(p(&b))).unwrap();
    assert!((d1.mean_rel - d2.mean_rel).abs() < 1e-12);
}

#[test]
fn csv_emitters() {
    let mut buf = Vec::new();
    metrics::write_deviation_csv(&[0.5, 0.25], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "sample,deviation\n0,0.5\n1,0.25\n");
}
