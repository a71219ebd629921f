use mmtc_core::channel::NoiseSpec;
use mmtc_core::common::{split_rng, ErrorCount, RngStream};
use mmtc_core::csmud::*;
use mmtc_core::Complex64 as C;
use proptest::prelude::*;

struct Paired {
    omp: ErrorCount,
    oracle: ErrorCount,
    missed: ErrorCount,
    false_alarm: ErrorCount,
}

fn residual_rule(ns: usize, l: usize, n0: f64, factor: f64) -> StopRule {
    StopRule::ResidualThreshold(factor * ((ns * l) as f64 * n0).sqrt())
}

fn paired_point(snr_db: f64, trials: u64, seed: u64) -> Paired {
    let (n, ns, l) = (16, 16, 8);
    let noise = NoiseSpec::from_snr_db(snr_db).unwrap();
    let mut out = Paired {
        omp: ErrorCount::default(),
        oracle: ErrorCount::default(),
        missed: ErrorCount::default(),
        false_alarm: ErrorCount::default(),
    };
    for t in 0..trials {
        let mut rng = split_rng(seed, t);
        let a = gen_spreading::<f64>(n, ns, &mut rng).unwrap();
        let act = ActivityVector::random(n, 0.2, &mut rng);
        let h: Vec<C> = (0..n).map(|_| rng.complex_gaussian(1.0)).collect();
        let cfg = CsMudConfig::new(residual_rule(ns, l, noise.n0(), 1.0), l);
        let bits = random_frame_bits(&act, &cfg, &mut rng);
        let y = simulate_uplink_frame(&act, &bits, &a, &h, &noise, &cfg, &mut rng).unwrap();
        let sent: Vec<Vec<C>> = bits.iter().map(|b| Modulation::Bpsk.modulate(b).unwrap()).collect();
        let omp = group_omp_detect(&y, &a, Some(&h), noise.n0(), &cfg).unwrap();
        let oracle = known_activity_oracle(&y, &a, &act, &h, noise.n0(), Modulation::Bpsk).unwrap();
        out.omp += count_symbol_errors(&act, &sent, &omp);
        out.oracle += count_symbol_errors(&act, &sent, &oracle);
        let (md, fa) = activity_errors(&act, &omp.activity);
        out.missed += md;
        out.false_alarm += fa;
    }
    out
}

fn le_with_slack(a: &ErrorCount, b: &ErrorCount) -> bool {
    a.rate().unwrap() <= b.rate().unwrap() + a.std_error().unwrap().max(b.std_error().unwrap())
}

#[test]
fn known_activity_bounds_greedy_detection() {
    let points: Vec<Paired> = [0.0, 4.0, 8.0, 12.0, 16.0]
        .iter()
        .enumerate()
        .map(|(i, &snr)| paired_point(snr, 500, 100 + i as u64))
        .collect();
    for (i, p) in points.iter().enumerate() {
        assert!(le_with_slack(&p.oracle, &p.omp), "point {i}: {:?} vs {:?}", p.oracle, p.omp);
    }
    let gap = |p: &Paired| p.omp.rate().unwrap() - p.oracle.rate().unwrap();
    assert!(gap(&points[4]) < gap(&points[1]));
    for w in points.windows(2) {
        assert!(le_with_slack(&w[1].omp, &w[0].omp));
        assert!(le_with_slack(&w[1].oracle, &w[0].oracle));
        assert!(le_with_slack(&w[1].missed, &w[0].missed));
        assert!(le_with_slack(&w[1].false_alarm, &w[0].false_alarm));
    }
}

#[test]
fn greedy_support_agrees_with_map() {
    let (n, ns, l) = (6, 8, 8);
    let noise = NoiseSpec::from_snr_db(12.0).unwrap();
    let h = vec![C::new(1.0, 0.0); n];
    let mut agree = 0;
    let frames = 1000;
    for t in 0..frames {
        let mut rng = split_rng(110, t);
        let a = gen_spreading::<f64>(n, ns, &mut rng).unwrap();
        let act = ActivityVector::random(n, 0.3, &mut rng);
        let mut cfg = CsMudConfig::new(StopRule::KnownSparsity(0), l);
        let trials = (100.0 / cfg.target_pfa).ceil() as usize;
        let tau = np_calibrate_threshold(&a, noise.n0(), cfg.target_pfa, l, trials, &mut rng.child(1)).unwrap();
        cfg.stop_rule = StopRule::StatisticThreshold(tau);
        let bits = random_frame_bits(&act, &cfg, &mut rng);
        let y = simulate_uplink_frame(&act, &bits, &a, &h, &noise, &cfg, &mut rng).unwrap();
        let omp = group_omp_detect(&y, &a, Some(&h), noise.n0(), &cfg).unwrap();
        let map = exhaustive_map_oracle(&y, &a, 0.3, &h, noise.n0()).unwrap();
        agree += usize::from(omp.activity == map);
    }
    assert!(agree as f64 >= 0.9 * frames as f64, "{agree}/{frames}");
}

/// MAP score of one support computed directly from the Gaussian marginal
/// `CN(0, B B^H + n0 I)` with a dense determinant and inverse.
fn direct_map_score(y: &[Vec<C>], cols: &[Vec<C>], support: &[usize], p: f64, n0: f64) -> f64 {
    let ns = y[0].len();
    let mut cov = vec![vec![C::new(0.0, 0.0); ns]; ns];
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += n0;
        for &j in support {
            for (k, v) in row.iter_mut().enumerate() {
                *v += cols[j][i] * cols[j][k].conj();
            }
        }
    }
    let (inv, det) = invert(cov);
    let quad: f64 = y
        .iter()
        .map(|yt| {
            (0..ns)
                .flat_map(|i| (0..ns).map(move |k| (i, k)))
                .map(|(i, k)| (yt[i].conj() * inv[i][k] * yt[k]).re)
                .sum::<f64>()
        })
        .sum();
    let k = support.len() as f64;
    k * p.ln() + (cols.len() as f64 - k) * (1.0 - p).ln() - quad - y.len() as f64 * det.ln()
}

/// Gauss-Jordan inverse and determinant of a Hermitian positive-definite matrix.
fn invert(mut m: Vec<Vec<C>>) -> (Vec<Vec<C>>, f64) {
    let n = m.len();
    let mut inv: Vec<Vec<C>> = (0..n)
        .map(|i| (0..n).map(|k| C::new(f64::from(u8::from(i == k)), 0.0)).collect())
        .collect();
    let mut det = 1.0;
    for c in 0..n {
        let piv = m[c][c];
        det *= piv.re;
        for k in 0..n {
            m[c][k] /= piv;
            inv[c][k] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for k in 0..n {
                    let (a, b) = (m[c][k], inv[c][k]);
                    m[r][k] -= f * a;
                    inv[r][k] -= f * b;
                }
            }
        }
    }
    (inv, det)
}

#[test]
fn map_oracle_maximises_direct_posterior() {
    let (n, ns, l) = (5, 4, 3);
    let n0 = 0.3;
    let noise = NoiseSpec::from_n0(n0).unwrap();
    for t in 0..20 {
        let mut rng = split_rng(111, t);
        let a = gen_spreading::<f64>(n, ns, &mut rng).unwrap();
        let act = ActivityVector::random(n, 0.4, &mut rng);
        let h: Vec<C> = (0..n).map(|_| rng.complex_gaussian(1.0)).collect();
        let cfg = CsMudConfig::new(StopRule::KnownSparsity(1), l);
        let bits = random_frame_bits(&act, &cfg, &mut rng);
        let y = simulate_uplink_frame(&act, &bits, &a, &h, &noise, &cfg, &mut rng).unwrap();
        let cols: Vec<Vec<C>> = (0..n).map(|j| a.signature(j).iter().map(|v| v * h[j]).collect()).collect();
        let ys: Vec<Vec<C>> = (0..l).map(|t| y.column(t)).collect();
        let best = (0usize..1 << n)
            .map(|mask| {
                let s: Vec<usize> = (0..n).filter(|&j| mask >> j & 1 == 1).collect();
                (direct_map_score(&ys, &cols, &s, 0.4, n0), mask)
            })
            .max_by(|x, y| x.0.partial_cmp(&y.0).unwrap())
            .unwrap()
            .1;
        let map = exhaustive_map_oracle(&y, &a, 0.4, &h, n0).unwrap();
        assert_eq!(map.0, (0..n).map(|j| best >> j & 1 == 1).collect::<Vec<_>>());
    }
}

fn orthogonal_frame(seed: u64, active: &[usize]) -> (SpreadingMatrix<f64>, ActivityVector, Vec<Vec<bool>>, CsMudConfig, mmtc_core::CMatrix64, Vec<C>) {
    let n = 8;
    let a = SpreadingMatrix::<f64>::orthogonal(n, 8).unwrap();
    let act = ActivityVector::from_indices(n, active);
    let cfg = CsMudConfig::new(StopRule::ResidualThreshold(1e-6), 4);
    let mut rng: RngStream = split_rng(seed, 0);
    let h: Vec<C> = (0..n).map(|_| rng.complex_gaussian(1.0)).collect();
    let bits = random_frame_bits(&act, &cfg, &mut rng);
    let y = simulate_uplink_frame(&act, &bits, &a, &h, &NoiseSpec::noiseless(), &cfg, &mut rng).unwrap();
    (a, act, bits, cfg, y, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orthogonal_noiseless_frames_are_recovered(seed in any::<u64>(), mask in 0u8..=255) {
        let active: Vec<usize> = (0..8).filter(|j| mask >> j & 1 == 1).collect();
        let (a, act, bits, cfg, y, h) = orthogonal_frame(seed, &active);
        let d = group_omp_detect(&y, &a, Some(&h), 0.0, &cfg).unwrap();
        prop_assert_eq!(&d.activity, &act);
        for &u in &active {
            prop_assert_eq!(d.bits(u, Modulation::Bpsk).unwrap(), bits[u].clone());
        }
        let map = exhaustive_map_oracle(&y, &a, 0.5, &h, 1e-9).unwrap();
        prop_assert_eq!(map, act);
    }

    #[test]
    fn symbols_present_exactly_for_flagged_users(seed in any::<u64>(), k in 0usize..=6) {
        let mut rng = split_rng(seed, 1);
        let a = gen_spreading::<f64>(10, 6, &mut rng).unwrap();
        let noise = NoiseSpec::from_snr_db(5.0).unwrap();
        let cfg = CsMudConfig::new(StopRule::KnownSparsity(k), 3);
        let act = ActivityVector::random(10, 0.3, &mut rng);
        let h = vec![C::new(1.0, 0.0); 10];
        let bits = random_frame_bits(&act, &cfg, &mut rng);
        let y = simulate_uplink_frame(&act, &bits, &a, &h, &noise, &cfg, &mut rng).unwrap();
        let d = group_omp_detect(&y, &a, None, noise.n0(), &cfg).unwrap();
        prop_assert_eq!(d.activity.count(), k);
        for j in 0..10 {
            prop_assert_eq!(d.symbols[j].is_some(), d.activity.is_active(j));
        }
    }
}
