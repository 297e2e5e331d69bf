use schedq::arrival::{generate_traffic, TrafficConfig, TrafficSample};
use schedq::distributions::PerturbationSpec;
use schedq::seed::{SeedSpec, Stream};
use schedq::stats::EcdfSummary;

fn sample(spec: PerturbationSpec, h: f64, window: f64, rep: u64) -> TrafficSample {
    let cfg = TrafficConfig::new(h, spec, window);
    generate_traffic(&cfg, SeedSpec::new(4242, rep, Stream::Perturbation)).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn counts_have_rate_one_over_h() {
    let h = 0.5;
    let spec = PerturbationSpec::Exponential { mean: 2.0 };
    let counts: Vec<f64> = (0..4000)
        .map(|r| sample(spec, h, 50.0, r).n(50.0).unwrap() as f64)
        .collect();
    let (m, se) = mean_and_se(&counts);
    assert!((m - 100.0).abs() <= 4.0 * se, "mean {m}, se {se}");
}

#[test]
fn counts_are_stationary() {
    // Counts over two windows of equal length, one at the origin and one far
    // from it, must share a law.
    let spec = PerturbationSpec::TwoSidedPareto {
        alpha: 2.5,
        beta: 1.0,
        p_plus: 0.7,
        p_minus: 0.3,
    };
    let (mut near, mut far) = (Vec::new(), Vec::new());
    for r in 0..10_000 {
        let s = sample(spec, 1.0, 45.0, r);
        near.push(s.count(0.0, 2.5).unwrap() as f64);
        far.push(s.count(40.3, 42.8).unwrap() as f64);
    }
    let d = EcdfSummary::new(near)
        .unwrap()
        .sup_distance(&EcdfSummary::new(far).unwrap());
    assert!(d <= 0.03, "sup distance {d}");
}

#[test]
fn mean_early_and_late_counts_match_the_tail_means() {
    // E L(0) = E ξ⁺ / h and E E(0) = E ξ⁻ / h: averaging over the uniform
    // phase turns the sum of tail probabilities into an integral of the tail.
    let (alpha, beta, p_plus) = (2.5, 1.5, 0.4);
    let spec = PerturbationSpec::TwoSidedPareto {
        alpha,
        beta,
        p_plus,
        p_minus: 1.0 - p_plus,
    };
    let h = 0.8;
    let lomax_mean = beta / (alpha - 1.0);
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for r in 0..20_000 {
        let s = sample(spec, h, h, r);
        early.push(s.early_count(0.0).unwrap() as f64);
        late.push(s.late_count(0.0).unwrap() as f64);
    }
    let (me, se_e) = mean_and_se(&early);
    let (ml, se_l) = mean_and_se(&late);
    let want_e = (1.0 - p_plus) * lomax_mean / h;
    let want_l = p_plus * lomax_mean / h;
    assert!((me - want_e).abs() <= 4.0 * se_e, "E(0): {me} vs {want_e} (se {se_e})");
    assert!((ml - want_l).abs() <= 4.0 * se_l, "L(0): {ml} vs {want_l} (se {se_l})");
}

#[test]
fn first_arrival_offsets_are_uniform_without_perturbation() {
    let spec = PerturbationSpec::PointMass { value: 0.0 };
    let firsts: Vec<f64> = (0..3000).map(|r| sample(spec, 2.0, 10.0, r).epochs()[0]).collect();
    let e = EcdfSummary::new(firsts).unwrap();
    let d = e.ks_distance(|x| (x / 2.0).clamp(0.0, 1.0));
    assert!(d <= 1.95 / 3000f64.sqrt(), "KS {d}");
}

#[test]
fn far_customers_reach_the_window_under_heavy_tails() {
    // With α = 1.1 a late customer scheduled long before 0 shows up in the
    // window on a sizeable fraction of paths; those paths must contain it.
    let spec = PerturbationSpec::ShiftedPareto { alpha: 1.1, beta: 1.0 };
    let mut hits = 0;
    for r in 0..400 {
        let s = sample(spec, 1.0, 20.0, r);
        let early_index = s.epoch_indices().iter().copied().min().unwrap();
        if early_index < -100 {
            hits += 1;
        }
        assert_eq!(s.epochs().len(), s.epoch_indices().len());
        assert!(s.epochs().iter().all(|t| (0.0..=20.0).contains(t)));
    }
    assert!(hits > 0);
}

#[test]
fn same_seed_same_path_and_csv() {
    let spec = PerturbationSpec::Normal { mean: 0.0, sd: 3.0 };
    let a = sample(spec, 1.0, 30.0, 9);
    let b = sample(spec, 1.0, 30.0, 9);
    assert_eq!(a.epochs(), b.epochs());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
}
