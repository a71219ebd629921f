//! Acceptance checks. Runs as a plain binary so every criterion prints its
//! own `[PASS]` or `[FAIL]` line; exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mmtc_core::channel::awgn;
use mmtc_core::common::{count_bit_errors, q_function, split_rng, ErrorCount};
use mmtc_core::cpm::*;
use mmtc_core::cra::*;
use mmtc_core::csmud::*;
use mmtc_core::grantfree::*;
use mmtc_core::harness::*;
use mmtc_core::scma::*;
use mmtc_core::Complex64 as C;
use num_rational::Ratio;

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

fn value(records: &[MetricRecord], point: f64, metric: &str) -> MetricRecord {
    records
        .iter()
        .find(|r| r.point == point && r.metric == metric)
        .unwrap_or_else(|| panic!("no {metric} record at {point}"))
        .clone()
}

fn ac1() -> Outcome {
    let g = build_factor_graph(4, 2).unwrap();
    let ok = g.num_layers() == 6
        && g.overload() == Ratio::new(3, 2)
        && g.column_weights().iter().all(|&w| w == 2)
        && g.row_weights().iter().all(|&w| w == 3)
        && (0..4).all(|k| g.tone_layers(k).len() == 3);
    outcome(
        ok,
        format!(
            "J = {}, overload = {}, column weights {:?}, row weights {:?}",
            g.num_layers(),
            g.overload(),
            g.column_weights(),
            g.row_weights()
        ),
    )
}

fn ac2() -> Outcome {
    let r = complexity_report(16, 3, 4, 6, 9).unwrap();
    let ok = r.per_tone_full == 4096
        && r.joint_full == 16_777_216
        && r.per_tone_projected == 729
        && r.reduction_factor == Ratio::new(16_777_216, 729)
        && r.reduction_factor_rounded() == 23014
        && (r.reduction_factor_f64() - 16f64.powi(6) / 9f64.powi(3)).abs() < 1e-9;
    outcome(
        ok,
        format!(
            "per-tone {}, joint {}, reduction {} = {:.4} ~ {}",
            r.per_tone_full,
            r.joint_full,
            r.reduction_factor,
            r.reduction_factor_f64(),
            r.reduction_factor_rounded()
        ),
    )
}

fn ac3() -> Outcome {
    let mut s = Scenario::with_defaults("mpa-vs-ml", ExperimentKind::ScmaSer, vec![12.0]).unwrap();
    s.trials = 10_000;
    s.seed = 3;
    s.scma.as_mut().unwrap().compare_ml = true;
    let records = run_experiment(&s, 1).unwrap();
    let d = value(&records, 12.0, "mpa_ml_disagreement");
    let agreement = 1.0 - d.value;
    outcome(
        agreement >= 0.99,
        format!("agreement {:.4} over {} symbols", agreement, d.total.unwrap()),
    )
}

fn ac4() -> Outcome {
    let mut s = Scenario::with_defaults("blind-activity", ExperimentKind::ScmaBlind, vec![8.0, 12.0, 16.0]).unwrap();
    s.trials = 10_000;
    s.seed = 4;
    s.scma.as_mut().unwrap().fading = false;
    let blind = s.blind.as_mut().unwrap();
    blind.prior_active = 0.3;
    blind.active_layers = Some(1);
    let records = run_experiment(&s, 0).unwrap();
    let get = |p: f64, m: &str| value(&records, p, m);
    let mut ok = true;
    for p in [12.0, 16.0] {
        ok &= get(p, "missed_detection").value <= 0.05 && get(p, "false_alarm").value <= 0.05;
    }
    for m in ["missed_detection", "false_alarm"] {
        let (lo, hi) = (get(8.0, m), get(16.0, m));
        let slack = lo.stderr.unwrap_or(0.0).max(hi.stderr.unwrap_or(0.0));
        ok &= hi.value + slack < lo.value;
    }
    let line = |p: f64| {
        format!(
            "{p} dB MD {:.4} FA {:.4}",
            get(p, "missed_detection").value,
            get(p, "false_alarm").value
        )
    };
    outcome(ok, format!("{}; {}; {}", line(8.0), line(12.0), line(16.0)))
}

fn ac5() -> Outcome {
    let points = vec![0.0, 4.0, 8.0, 12.0, 16.0];
    let mut s = Scenario::with_defaults("csmud-gap", ExperimentKind::CsmudGap, points.clone()).unwrap();
    s.trials = 1000;
    s.seed = 5;
    let records = run_experiment(&s, 0).unwrap();
    let omp: Vec<MetricRecord> = points.iter().map(|&p| value(&records, p, "ser_omp")).collect();
    let oracle: Vec<MetricRecord> = points.iter().map(|&p| value(&records, p, "ser_oracle")).collect();
    let se = |r: &MetricRecord| r.stderr.unwrap_or(0.0);
    let dominance = omp.iter().zip(&oracle).all(|(o, k)| k.value <= o.value + se(o).max(se(k)));
    let gap = |i: usize| omp[i].value - oracle[i].value;
    let closure = gap(4) < gap(1);
    let monotone = |v: &[MetricRecord]| v.windows(2).all(|w| w[1].value <= w[0].value + se(&w[0]).max(se(&w[1])));
    let ok = dominance && closure && monotone(&omp) && monotone(&oracle);
    let fmt = |v: &[MetricRecord]| v.iter().map(|r| format!("{:.4}", r.value)).collect::<Vec<_>>().join(" ");
    outcome(
        ok,
        format!(
            "SER omp [{}] oracle [{}]; gap 4 dB {:.4}, 16 dB {:.4}",
            fmt(&omp),
            fmt(&oracle),
            gap(1),
            gap(4)
        ),
    )
}

fn ac6() -> Outcome {
    let (n, ns, l) = (6, 8, 8);
    let noise = mmtc_core::channel::NoiseSpec::from_snr_db(12.0).unwrap();
    let h = vec![C::new(1.0, 0.0); n];
    let frames = 1000;
    let mut agree = 0;
    for t in 0..frames {
        let mut rng = split_rng(6, t);
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
    let rate = agree as f64 / frames as f64;
    outcome(rate >= 0.9, format!("support agreement {rate:.3} over {frames} frames"))
}

fn ac7() -> Outcome {
    let t = slotted_aloha_baseline(1000, 1.0, 100_000, &mut split_rng(7, 0)).unwrap();
    outcome((t - 0.368).abs() <= 0.01, format!("throughput {t:.4} vs 1/e = {:.4}", (-1f64).exp()))
}

fn ac8() -> Outcome {
    let grid: Vec<f64> = (0..=15).map(|i| 2.0 + 0.1 * i as f64).collect();
    let mut s = Scenario::with_defaults("cra-beta", ExperimentKind::CraThroughput, vec![3.1]).unwrap();
    s.trials = 1000;
    s.seed = 8;
    let r = sweep_optimize(&s, "beta", &grid, 0).unwrap();
    let aloha_peak = (-1f64).exp();
    outcome(
        r.best_metric > 0.55 && r.best_metric >= 1.4 * aloha_peak,
        format!(
            "best beta {:.1}, mean throughput {:.4} ({:.2}x the ALOHA peak)",
            r.best_value,
            r.best_metric,
            r.best_metric / aloha_peak
        ),
    )
}

fn ac9() -> Outcome {
    let t1 = ContentionConfig::with_beta(100, 3.1);
    let mut t2 = t1;
    t2.mpr_threshold = 2;
    let (mut subset, mut sum1, mut sum2) = (true, 0.0, 0.0);
    let runs = 1000;
    for run in 0..runs {
        let r1 = run_contention(&t1, &mut split_rng(9, run), PhyMode::Abstract).unwrap();
        let g = PeelingGraph::from_log(100, &r1.log).unwrap();
        let (mut a, mut b) = (g.reset(), g.reset());
        subset &= a.peel(1).is_subset(&b.peel(2));
        let r2 = run_contention(&t2, &mut split_rng(9, run), PhyMode::Abstract).unwrap();
        sum1 += r1.throughput;
        sum2 += r2.throughput;
    }
    let (m1, m2) = (sum1 / runs as f64, sum2 / runs as f64);
    outcome(
        subset && m2 > m1,
        format!("subset on all {runs} transcripts: {subset}; mean throughput T=1 {m1:.4}, T=2 {m2:.4}"),
    )
}

fn ac10() -> Outcome {
    let mut rng = split_rng(10, 0);
    let mut confluent = 0;
    for _ in 0..500 {
        let users = 1 + rng.below(12);
        let slots = 1 + rng.below(12);
        let mut g = PeelingGraph::new(users);
        let p = 0.05 + 0.5 * rng.uniform();
        for _ in 0..slots {
            let occ: Vec<usize> = (0..users).filter(|_| rng.bernoulli(p)).collect();
            g.add_slot(&occ).unwrap();
        }
        let sets: BTreeSet<BTreeSet<usize>> = (0..10).map(|_| g.reset().peel_randomized(1, &mut rng)).collect();
        confluent += usize::from(sets.len() == 1);
    }
    outcome(confluent == 500, format!("{confluent}/500 graphs peel to one resolved set"))
}

fn ac11() -> Outcome {
    let mut exact = true;
    for p in 1..=10usize {
        for a in 0..=6usize {
            let total = p.pow(a as u32);
            let colliding = (0..total)
                .filter(|&code| {
                    let picks: Vec<usize> = (0..a).map(|i| code / p.pow(i as u32) % p).collect();
                    picks.iter().collect::<BTreeSet<_>>().len() < a
                })
                .count();
            exact &= pilot_collision_probability_exact(a, p).unwrap() == Some(Ratio::new(colliding as u128, total as u128));
        }
    }
    let mut within = 0;
    let mut rng = split_rng(11, 0);
    for p in 1..=10 {
        let pool = build_ctu_pool(1, 1, p).unwrap();
        for a in 1..=6usize {
            let users: Vec<usize> = (0..a).collect();
            let mut hits = ErrorCount::default();
            for _ in 0..100_000 {
                hits.record(!detect_pilot_collisions(&select_ctus(&users, &pool, &mut rng)).collisions.is_empty());
            }
            let q = pilot_collision_probability(a, p).unwrap();
            let se = (q * (1.0 - q) / 1e5).sqrt();
            within += usize::from((hits.rate().unwrap() - q).abs() <= 3.0 * se + 1e-12);
        }
    }
    let a2 = pilot_collision_probability(2, 10).unwrap();
    let a3 = pilot_collision_probability(3, 3).unwrap();
    let ok = exact && within == 60 && (a2 - 0.1).abs() < 1e-12 && (a3 - 0.7778).abs() < 5e-5;
    outcome(
        ok,
        format!("enumeration exact: {exact}; Monte-Carlo within 3 SE: {within}/60; A=2,P=10 -> {a2:.4}; A=3,P=3 -> {a3:.4}"),
    )
}

fn ac12() -> Outcome {
    let spec = CpmSpec::msk(4, 16).unwrap();
    let (mut cpm_papr, mut cpm_rcm, mut ifdma_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t in 0..1000 {
        let mut rng = split_rng(12, t);
        let bits = rng.bits(16);
        let e = envelope_metrics(&cpm_modulate::<f64>(&bits, &spec).unwrap()).unwrap();
        cpm_papr = cpm_papr.max(e.papr_db);
        cpm_rcm = cpm_rcm.max(e.rcm_db);
        let w = cpm_modulate::<f64>(&close_burst_phase(&bits, &spec).unwrap(), &spec).unwrap();
        let burst = ifdma_precode(&w, w.len() * 4, 4, rng.below(4)).unwrap();
        ifdma_worst = ifdma_worst.max(envelope_metrics(&burst.oversampled(4).unwrap()).unwrap().papr_db);
    }
    let mc = multicarrier_reference(64, 1000, &mut split_rng(12, 1_000_000)).unwrap();
    let ok = cpm_papr <= 0.01 && cpm_rcm <= 0.01 && ifdma_worst < 1.0 && mc.papr_mean_db > 6.0;
    outcome(
        ok,
        format!(
            "CPM PAPR {cpm_papr:.2e} dB RCM {cpm_rcm:.2e} dB; I-FDMA worst PAPR {ifdma_worst:.3} dB; 64-subcarrier mean PAPR {:.2} dB",
            mc.papr_mean_db
        ),
    )
}

fn ac13() -> Outcome {
    let spec = CpmSpec::msk(4, 100).unwrap();
    let noise = noise_for_ebn0(&spec, 6.0).unwrap();
    let mut errors = ErrorCount::default();
    for burst in 0..10_000u64 {
        let mut rng = split_rng(13, burst);
        let bits = rng.bits(100);
        let w = cpm_modulate::<f64>(&bits, &spec).unwrap();
        let r = WaveformBuffer::new(awgn(w.samples(), &noise, &mut rng), 4).unwrap();
        errors += count_bit_errors(&bits, &mlse_detect(&r, &spec, noise.n0()).unwrap()).unwrap();
    }
    let reference = q_function((2.0 * 10f64.powf(0.6)).sqrt());
    let ber = errors.rate().unwrap();
    let ratio = ber / reference;
    let ten = CpmSpec::msk(4, 10).unwrap();
    let exhaustive = (0..1u32 << 10).all(|x| {
        let bits: Vec<bool> = (0..10).map(|i| x >> i & 1 == 1).collect();
        let w = cpm_modulate::<f64>(&bits, &ten).unwrap();
        mlse_detect(&w, &ten, 0.0).unwrap() == bits
    });
    outcome(
        (0.5..=2.0).contains(&ratio) && exhaustive,
        format!(
            "BER {ber:.3e} over {} bits vs reference {reference:.3e} (ratio {ratio:.2}); noiseless 2^10 inputs exact: {exhaustive}",
            errors.total
        ),
    )
}

fn ac14() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = 0;
    for (i, &kind) in ExperimentKind::ALL.iter().enumerate() {
        let sweep = match kind {
            ExperimentKind::CraThroughput => vec![2.5, 3.1],
            ExperimentKind::GrantfreeCollision => vec![4.0, 8.0],
            ExperimentKind::CpmEnvelope => vec![16.0, 64.0],
            _ => vec![6.0, 12.0],
        };
        let mut s = Scenario::with_defaults(kind.name(), kind, sweep).unwrap();
        s.trials = 200;
        s.seed = 14;
        let files: Vec<Vec<u8>> = [(0, 1), (1, 1), (2, 3)]
            .iter()
            .map(|&(run, workers)| {
                let path = dir.path().join(format!("{i}-{run}.csv"));
                export_records(&run_experiment(&s, workers).unwrap(), &path, RecordFormat::Csv).unwrap();
                std::fs::read(path).unwrap()
            })
            .collect();
        identical += usize::from(files[0] == files[1] && files[0] == files[2] && !files[0].is_empty());
    }
    let kinds = ExperimentKind::ALL.len();
    outcome(
        identical == kinds,
        format!("{identical}/{kinds} kinds byte-identical across repeat runs and worker counts 1 and 3"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        (1, "SCMA factor graph structure", ac1, Some(Duration::from_millis(1))),
        (2, "complexity arithmetic", ac2, Some(Duration::from_millis(1))),
        (3, "MPA agrees with ML", ac3, Some(Duration::from_secs(120))),
        (4, "blind activity detection", ac4, None),
        (5, "CS-MUD gap to known activity", ac5, Some(Duration::from_secs(300))),
        (6, "CS-MUD support vs exhaustive MAP", ac6, Some(Duration::from_secs(60))),
        (7, "slotted ALOHA at G = 1", ac7, Some(Duration::from_secs(10))),
        (8, "coded random access gain", ac8, Some(Duration::from_secs(120))),
        (9, "MPR monotonicity", ac9, None),
        (10, "peeling confluence", ac10, None),
        (11, "pilot collision law", ac11, Some(Duration::from_secs(30))),
        (12, "constant envelope", ac12, Some(Duration::from_secs(30))),
        (13, "MSK bit error rate", ac13, Some(Duration::from_secs(180))),
        (14, "reproducible records", ac14, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map_or(String::new(), |l| format!(" / {l:?}"));
        println!(
            "[{}] AC-{id} {name}: {} ({elapsed:.2?}{budget})",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("{} of 14 criteria passed", 14 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
