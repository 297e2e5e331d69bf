use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use schedq::stats::{half_normal_cdf, EcdfSummary};

fn unit(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// P(M_n ≥ k) for the running maximum of a simple symmetric walk, by reflection:
/// P(S_n ≥ k) + P(S_n > k).
fn max_tail(n: u64, k: i64) -> f64 {
    if k <= 0 {
        return 1.0;
    }
    let p_sn = |m: i64| {
        // S_n = m needs (n + m) / 2 up-steps.
        if (n as i64 + m) % 2 != 0 || m.abs() > n as i64 {
            return 0.0;
        }
        let up = ((n as i64 + m) / 2) as u64;
        (ln_choose(n, up) - n as f64 * std::f64::consts::LN_2).exp()
    };
    let ge = |k: i64| (k..=n as i64).map(p_sn).sum::<f64>();
    ge(k) + ge(k + 1)
}

#[test]
fn running_max_of_a_walk_matches_reflection() {
    let n = 100u64;
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let maxima: Vec<f64> = (0..5000)
        .map(|_| {
            let (mut s, mut m) = (0i64, 0i64);
            for _ in 0..n {
                s += if rng.next_u32() & 1 == 1 { 1 } else { -1 };
                m = m.max(s);
            }
            m as f64
        })
        .collect();
    let e = EcdfSummary::new(maxima).unwrap();
    let d = e.ks_distance(|x| {
        if x < 0.0 {
            0.0
        } else {
            1.0 - max_tail(n, x.floor() as i64 + 1)
        }
    });
    assert!(d <= 0.03, "KS {d}");
}

#[test]
fn half_normal_sample_from_box_muller() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let sigma = 1.7;
    let xs: Vec<f64> = (0..2000)
        .map(|_| {
            let (u, v) = (unit(&mut rng), unit(&mut rng));
            sigma * ((-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()).abs()
        })
        .collect();
    let e = EcdfSummary::new(xs).unwrap();
    let d = e.ks_distance(|x| half_normal_cdf(x, sigma).unwrap());
    assert!(d <= 0.045, "KS {d}");
    let wrong = e.ks_distance(|x| half_normal_cdf(x, 1.3 * sigma).unwrap());
    assert!(wrong > 0.08, "KS against the wrong scale {wrong}");
}

#[test]
fn quantiles_of_a_small_sample() {
    let e = EcdfSummary::new(vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]).unwrap();
    assert_eq!(e.quantile(0.25).unwrap(), 1.0);
    assert_eq!(e.quantile(0.5).unwrap(), 3.0);
    assert_eq!(e.quantile(1.0).unwrap(), 9.0);
    assert_eq!(e.eval(1.0), 0.25);
    assert_eq!(e.eval(0.999), 0.0);
    assert!(e.quantile(1.5).is_err());
}
