//! Experiment execution and sweeps.
//!
//! Trial `t` at sweep point `i` draws from `split_rng(seed, i * 10^6 + t)`.
//! Trials run on a rayon pool, results are collected in trial order and
//! folded sequentially, so the records do not depend on the worker count.

use num_complex::Complex;
use rayon::prelude::*;

use super::records::MetricRecord;
use super::scenario::{
    set_parameter, ExperimentKind, GrantFreePhyName, ModulationName, Scenario, StopName,
};
use crate::channel::{awgn, rayleigh_block, superpose, ChannelRealization, NoiseSpec};
use crate::common::{count_bit_errors, index_to_bits, q_function, split_rng, ErrorCount, RngStream};
use crate::cpm::{
    close_burst_phase, cpm_modulate, envelope_metrics, ifdma_precode, mlse_detect, multicarrier_burst,
    noise_for_ebn0, CpmSpec, MULTICARRIER_OVERSAMPLING,
};
use crate::cra::{run_contention, ContentionConfig, PhyMode};
use crate::csmud::{
    activity_errors, count_symbol_errors, gen_spreading, group_omp_detect, known_activity_oracle,
    pin_reference_symbol, random_frame_bits, simulate_uplink_frame, ActivityVector, CsMudConfig, Modulation,
    StopRule,
};
use crate::error::{Error, Result};
use crate::grantfree::{
    build_ctu_pool, per_user_collision_probability, pilot_collision_probability, run_grantfree_round, CtuPool,
    GrantFreePhy, RoundOutcome,
};
use crate::scma::{
    blind_mpa_detect, build_codebooks, build_factor_graph, ml_oracle_detect, mpa_detect, Codebook, Construction,
    MpaConfig, OracleMode,
};

type C = Complex<f64>;

/// Contribution of one trial to one metric.
#[derive(Clone, Copy, Debug)]
enum Tally {
    Rate(ErrorCount),
    Sample(f64),
}

#[derive(Default)]
struct TrialMetrics(Vec<(&'static str, Tally)>);

impl TrialMetrics {
    fn rate(&mut self, name: &'static str, count: ErrorCount) {
        self.0.push((name, Tally::Rate(count)));
    }

    fn hit(&mut self, name: &'static str, error: bool) {
        self.rate(name, ErrorCount { errors: u64::from(error), total: 1 });
    }

    fn sample(&mut self, name: &'static str, value: f64) {
        self.0.push((name, Tally::Sample(value)));
    }
}

enum Accum {
    Rate(ErrorCount),
    Samples(Vec<f64>),
}

/// Fixed per-point state shared by all trials of the point.
enum PointContext {
    Scma {
        codebooks: Vec<Codebook<f64>>,
        noise: NoiseSpec,
        mpa: MpaConfig<f64>,
    },
    CsMud {
        noise: NoiseSpec,
    },
    Cra {
        config: ContentionConfig,
    },
    GrantFree {
        pool: CtuPool,
        active: usize,
        codebooks: Vec<Codebook<f64>>,
        mpa: MpaConfig<f64>,
        noise: NoiseSpec,
    },
    CpmEnvelope {
        spec: CpmSpec,
        subcarriers: usize,
    },
    CpmBer {
        spec: CpmSpec,
        noise: NoiseSpec,
    },
}

fn scma_codebooks(tones: usize, layer_degree: usize, order: usize, construction: Construction) -> Result<Vec<Codebook<f64>>> {
    let graph = build_factor_graph(tones, layer_degree)?;
    build_codebooks(&graph, order, construction)
}

fn point_context(s: &Scenario, x: f64) -> Result<PointContext> {
    Ok(match s.kind {
        ExperimentKind::ScmaSer | ExperimentKind::ScmaBlind => {
            let p = s.scma();
            let noise = NoiseSpec::from_snr_db(x)?;
            let mut mpa = MpaConfig::new(noise.n0());
            mpa.max_iterations = p.iterations;
            mpa.mode = p.mode.into();
            if s.kind == ExperimentKind::ScmaBlind {
                mpa.prior_active = s.blind().prior_active;
                mpa.activity_threshold = s.blind().threshold;
            }
            PointContext::Scma {
                codebooks: scma_codebooks(p.tones, p.layer_degree, p.order, p.construction())?,
                noise,
                mpa,
            }
        }
        ExperimentKind::CsmudGap => PointContext::CsMud {
            noise: NoiseSpec::from_snr_db(x)?,
        },
        ExperimentKind::CraThroughput => {
            let p = s.cra();
            let mut config = ContentionConfig::with_beta(p.users, x);
            config.mpr_threshold = p.mpr_threshold;
            config.resolved_fraction = p.resolved_fraction;
            config.max_slot_factor = p.max_slot_factor;
            config.validate()?;
            PointContext::Cra { config }
        }
        ExperimentKind::GrantfreeCollision => {
            let p = s.grantfree();
            let noise = NoiseSpec::from_snr_db(p.snr_db)?;
            let mut mpa = MpaConfig::new(noise.n0());
            mpa.prior_active = p.prior_active;
            let codebooks = match p.phy {
                GrantFreePhyName::Abstract => Vec::new(),
                GrantFreePhyName::BlindMpa => scma_codebooks(p.tones, p.layer_degree, p.order, Construction::Default)?,
            };
            PointContext::GrantFree {
                pool: build_ctu_pool(p.regions, p.codebooks, p.pilots)?,
                active: x as usize,
                codebooks,
                mpa,
                noise,
            }
        }
        ExperimentKind::CpmEnvelope => PointContext::CpmEnvelope {
            spec: s.cpm().spec()?,
            subcarriers: x as usize,
        },
        ExperimentKind::CpmBer => {
            let spec = s.cpm().spec()?;
            PointContext::CpmBer {
                noise: noise_for_ebn0(&spec, x)?,
                spec,
            }
        }
    })
}

fn scma_trial(s: &Scenario, codebooks: &[Codebook<f64>], noise: &NoiseSpec, mpa: &MpaConfig<f64>, rng: &mut RngStream) -> Result<TrialMetrics> {
    let p = s.scma();
    let j = codebooks.len();
    let k = p.tones;
    let blind = s.kind == ExperimentKind::ScmaBlind;
    let active: Vec<bool> = if !blind {
        vec![true; j]
    } else if let Some(n) = s.blind().active_layers {
        let mut order: Vec<usize> = (0..j).collect();
        rng.shuffle(&mut order);
        let mut a = vec![false; j];
        order[..n].iter().for_each(|&l| a[l] = true);
        a
    } else {
        (0..j).map(|_| rng.bernoulli(s.blind().prior_active)).collect()
    };
    let sent: Vec<usize> = codebooks.iter().map(|b| rng.below(b.order())).collect();
    let channel = if p.fading {
        rayleigh_block::<f64>(j, k, rng)
    } else {
        ChannelRealization::unit(j, k)
    };
    let words: Vec<Vec<C>> = (0..j)
        .map(|l| {
            if active[l] {
                codebooks[l].codeword(sent[l]).to_vec()
            } else {
                vec![C::new(0.0, 0.0); k]
            }
        })
        .collect();
    let y = awgn(&superpose(&words, &channel)?, noise, rng);
    let mut m = TrialMetrics::default();
    let bits_of = |l: usize, i: usize| index_to_bits(i, codebooks[l].bits_per_codeword());
    if blind {
        let d = blind_mpa_detect(&y, &channel, codebooks, mpa)?;
        let mut missed = ErrorCount::default();
        let mut false_alarm = ErrorCount::default();
        let mut activity = ErrorCount::default();
        let mut ser = ErrorCount::default();
        for (l, est) in d.layers.iter().enumerate() {
            activity.record(est.active != active[l]);
            if active[l] {
                missed.record(!est.active);
                ser.record(est.symbol() != Some(sent[l]));
            } else {
                false_alarm.record(est.active);
            }
        }
        m.rate("activity_error", activity);
        m.rate("missed_detection", missed);
        m.rate("false_alarm", false_alarm);
        m.rate("ser", ser);
    } else {
        let d = mpa_detect(&y, &channel, codebooks, mpa)?;
        let mut ser = ErrorCount::default();
        let mut ber = ErrorCount::default();
        for (l, est) in d.layers.iter().enumerate() {
            ser.record(est.index != sent[l]);
            ber += count_bit_errors(&bits_of(l, sent[l]), &bits_of(l, est.index))?;
        }
        m.rate("ser", ser);
        m.rate("ber", ber);
        if p.compare_ml {
            let ml = ml_oracle_detect(&y, &channel, codebooks, mpa.noise_variance, OracleMode::Coherent)?;
            let mut ser_ml = ErrorCount::default();
            let mut disagree = ErrorCount::default();
            for (l, (a, b)) in d.layers.iter().zip(&ml.layers).enumerate() {
                ser_ml.record(b.index != sent[l]);
                disagree.record(a.index != b.index);
            }
            m.rate("ser_ml", ser_ml);
            m.rate("mpa_ml_disagreement", disagree);
        }
    }
    Ok(m)
}

fn csmud_trial(s: &Scenario, noise: &NoiseSpec, rng: &mut RngStream) -> Result<TrialMetrics> {
    let p = s.csmud();
    let modulation = match p.modulation {
        ModulationName::Bpsk => Modulation::Bpsk,
        ModulationName::Qpsk => Modulation::Qpsk,
    };
    let spreading = gen_spreading::<f64>(p.users, p.spreading_len, rng)?;
    let activity = ActivityVector::random(p.users, p.p_active, rng);
    let gains: Vec<C> = if p.fading {
        (0..p.users).map(|_| rng.complex_gaussian(1.0)).collect()
    } else {
        vec![C::new(1.0, 0.0); p.users]
    };
    let stop = match p.stop {
        StopName::KnownSparsity => StopRule::KnownSparsity(activity.count()),
        StopName::Residual => {
            StopRule::ResidualThreshold(p.residual_factor * (p.spreading_len as f64 * p.frame_len as f64 * noise.n0()).sqrt())
        }
    };
    let mut config = CsMudConfig::new(stop, p.frame_len);
    config.modulation = modulation;
    let mut bits = random_frame_bits(&activity, &config, rng);
    if !p.gains_known {
        pin_reference_symbol(&mut bits, modulation);
    }
    let y = simulate_uplink_frame(&activity, &bits, &spreading, &gains, noise, &config, rng)?;
    let symbols: Vec<Vec<C>> = bits.iter().map(|b| modulation.modulate(b)).collect::<Result<_>>()?;
    let nv = noise.n0();
    let omp = group_omp_detect(&y, &spreading, p.gains_known.then_some(gains.as_slice()), nv, &config)?;
    let oracle = known_activity_oracle(&y, &spreading, &activity, &gains, nv, modulation)?;
    let (missed, false_alarm) = activity_errors(&activity, &omp.activity);
    let mut m = TrialMetrics::default();
    m.rate("ser_omp", count_symbol_errors(&activity, &symbols, &omp));
    m.rate("ser_oracle", count_symbol_errors(&activity, &symbols, &oracle));
    m.rate("missed_detection", missed);
    m.rate("false_alarm", false_alarm);
    m.hit("support_error", omp.activity != activity);
    Ok(m)
}

fn cra_trial(config: &ContentionConfig, rng: &mut RngStream) -> Result<TrialMetrics> {
    let r = run_contention(config, rng, PhyMode::Abstract)?;
    let mut m = TrialMetrics::default();
    m.sample("throughput", r.throughput);
    m.sample("resolved_fraction", r.resolved_fraction(config.num_users));
    m.sample("slots_used", r.slots_used as f64);
    m.hit("cap_reached", r.cap_reached);
    Ok(m)
}

fn grantfree_trial(
    s: &Scenario,
    pool: &CtuPool,
    active: usize,
    codebooks: &[Codebook<f64>],
    mpa: &MpaConfig<f64>,
    noise: &NoiseSpec,
    rng: &mut RngStream,
) -> Result<TrialMetrics> {
    let p = s.grantfree();
    let phy = match p.phy {
        GrantFreePhyName::Abstract => GrantFreePhy::Abstract,
        GrantFreePhyName::BlindMpa => GrantFreePhy::BlindMpa {
            codebooks,
            mpa: *mpa,
            noise: *noise,
            fading: p.fading,
            interference_scale: p.interference_scale,
        },
    };
    let users: Vec<usize> = (0..active).collect();
    let report = run_grantfree_round(&users, pool, &phy, rng)?;
    let mut m = TrialMetrics::default();
    let delivered = report.delivered().len();
    let collided = report.collisions.num_collided();
    m.hit("pilot_collision_event", collided > 0);
    m.rate("user_collided", ErrorCount::new(collided as u64, active as u64)?);
    m.sample("delivered_users", delivered as f64);
    m.rate(
        "delivered",
        ErrorCount::new(delivered as u64, active as u64)?,
    );
    if p.phy == GrantFreePhyName::BlindMpa {
        let clean = active - collided;
        let failed = report.with_outcome(RoundOutcome::PhyFailed).len();
        m.rate("phy_failed", ErrorCount::new(failed as u64, clean as u64)?);
    }
    Ok(m)
}

fn cpm_envelope_trial(spec: &CpmSpec, subcarriers: usize, s: &Scenario, rng: &mut RngStream) -> Result<TrialMetrics> {
    let p = s.cpm();
    let bits = close_burst_phase(&rng.bits(spec.symbols_per_burst), spec)?;
    let w = cpm_modulate::<f64>(&bits, spec)?;
    let plain = envelope_metrics(&w)?;
    let user = rng.below(p.ifdma_users);
    let burst = ifdma_precode(&w, w.len() * p.ifdma_users, p.ifdma_users, user)?;
    let ifdma = envelope_metrics(&burst.oversampled(p.ifdma_oversampling)?)?;
    let mc = envelope_metrics(&multicarrier_burst::<f64>(
        subcarriers,
        p.multicarrier_symbols,
        MULTICARRIER_OVERSAMPLING,
        rng,
    )?)?;
    let mut m = TrialMetrics::default();
    m.sample("cpm_papr_db", plain.papr_db);
    m.sample("cpm_rcm_db", plain.rcm_db);
    m.sample("ifdma_papr_db", ifdma.papr_db);
    m.sample("ifdma_rcm_db", ifdma.rcm_db);
    m.sample("multicarrier_papr_db", mc.papr_db);
    m.sample("multicarrier_rcm_db", mc.rcm_db);
    m.hit("multicarrier_papr_above_6db", mc.papr_db > 6.0);
    Ok(m)
}

fn cpm_ber_trial(spec: &CpmSpec, noise: &NoiseSpec, rng: &mut RngStream) -> Result<TrialMetrics> {
    let bits = rng.bits(spec.symbols_per_burst);
    let w = cpm_modulate::<f64>(&bits, spec)?;
    let rx = crate::cpm::WaveformBuffer::new(awgn(w.samples(), noise, rng), w.sample_rate_relative())?;
    let detected = mlse_detect(&rx, spec, noise.n0())?;
    let errors = count_bit_errors(&bits, &detected)?;
    let mut m = TrialMetrics::default();
    m.rate("ber", errors);
    m.hit("burst_error", errors.errors > 0);
    Ok(m)
}

fn run_trial(s: &Scenario, ctx: &PointContext, rng: &mut RngStream) -> Result<TrialMetrics> {
    match ctx {
        PointContext::Scma { codebooks, noise, mpa } => scma_trial(s, codebooks, noise, mpa, rng),
        PointContext::CsMud { noise } => csmud_trial(s, noise, rng),
        PointContext::Cra { config } => cra_trial(config, rng),
        PointContext::GrantFree {
            pool,
            active,
            codebooks,
            mpa,
            noise,
        } => grantfree_trial(s, pool, *active, codebooks, mpa, noise, rng),
        PointContext::CpmEnvelope { spec, subcarriers } => cpm_envelope_trial(spec, *subcarriers, s, rng),
        PointContext::CpmBer { spec, noise } => cpm_ber_trial(spec, noise, rng),
    }
}

/// Closed-form reference values recorded next to the Monte-Carlo metrics.
fn analytic_metrics(s: &Scenario, x: f64) -> Result<Vec<(&'static str, f64)>> {
    Ok(match s.kind {
        ExperimentKind::CraThroughput => vec![("slotted_aloha_peak", (-1.0f64).exp())],
        ExperimentKind::GrantfreeCollision => {
            let p = s.grantfree();
            let a = x as usize;
            let resources = p.regions * p.pilots;
            vec![
                ("pilot_collision_analytic", pilot_collision_probability(a, resources)?),
                ("user_collided_analytic", per_user_collision_probability(a, resources)?),
            ]
        }
        ExperimentKind::CpmBer if s.cpm().spec()?.modulation_index() == num_rational::Ratio::new(1, 2) => {
            vec![("ber_coherent_reference", q_function((2.0 * 10f64.powf(x / 10.0)).sqrt()))]
        }
        _ => Vec::new(),
    })
}

fn mean_and_stderr(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn aggregate(s: &Scenario, x: f64, trials: Vec<TrialMetrics>) -> Result<Vec<MetricRecord>> {
    let mut acc: Vec<(&'static str, Accum)> = Vec::new();
    for t in trials {
        for (name, tally) in t.0 {
            let slot = match acc.iter().position(|(n, _)| *n == name) {
                Some(i) => &mut acc[i].1,
                None => {
                    let fresh = match tally {
                        Tally::Rate(_) => Accum::Rate(ErrorCount::default()),
                        Tally::Sample(_) => Accum::Samples(Vec::new()),
                    };
                    acc.push((name, fresh));
                    &mut acc.last_mut().unwrap().1
                }
            };
            match (slot, tally) {
                (Accum::Rate(total), Tally::Rate(c)) => *total += c,
                (Accum::Samples(v), Tally::Sample(value)) => v.push(value),
                _ => unreachable!("metric {name} changed type between trials"),
            }
        }
    }
    let base = |metric: &str, value: f64, stderr: Option<f64>| MetricRecord {
        scenario: s.name.clone(),
        point: x,
        metric: metric.into(),
        value,
        stderr,
        trials: s.trials,
        seed: s.seed,
        count: None,
        total: None,
    };
    let mut out = Vec::new();
    for (name, a) in &acc {
        match a {
            Accum::Rate(c) => out.extend(MetricRecord::rate(&s.name, x, name, *c, s.trials, s.seed)),
            Accum::Samples(v) => {
                let (mean, se) = mean_and_stderr(v);
                out.push(base(name, mean, se));
            }
        }
    }
    if s.kind == ExperimentKind::CsmudGap {
        let rate = |name: &str| {
            acc.iter().find(|(n, _)| *n == name).and_then(|(_, a)| match a {
                Accum::Rate(c) => c.rate(),
                Accum::Samples(_) => None,
            })
        };
        if let (Some(omp), Some(oracle)) = (rate("ser_omp"), rate("ser_oracle")) {
            out.push(base("ser_gap", omp - oracle, None));
        }
    }
    for (name, value) in analytic_metrics(s, x)? {
        out.push(base(name, value, None));
    }
    Ok(out)
}

fn with_context(s: &Scenario, e: Error) -> Error {
    match e {
        Error::Scenario { .. } => e,
        other => Error::Scenario {
            scenario: s.name.clone(),
            source: Box::new(other),
        },
    }
}

/// Runs every sweep point of `scenario` and returns the aggregated records,
/// point by point. `workers = 0` uses all cores; any worker count yields
/// identical records.
pub fn run_experiment(scenario: &Scenario, workers: usize) -> Result<Vec<MetricRecord>> {
    scenario.validate().map_err(|e| with_context(scenario, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| {
        let mut records = Vec::new();
        for (i, &x) in scenario.sweep.iter().enumerate() {
            let ctx = point_context(scenario, x).map_err(|e| with_context(scenario, e))?;
            let trials: Vec<TrialMetrics> = (0..scenario.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = split_rng(scenario.seed, Scenario::stream_id(i, t));
                    run_trial(scenario, &ctx, &mut rng)
                })
                .collect::<Result<_>>()
                .map_err(|e| with_context(scenario, e))?;
            records.extend(aggregate(scenario, x, trials)?);
        }
        Ok(records)
    })
}

/// Outcome of [`sweep_optimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub parameter: String,
    pub best_value: f64,
    pub best_metric: f64,
    pub metric: String,
    /// `(grid value, records)` in ascending grid order.
    pub runs: Vec<(f64, Vec<MetricRecord>)>,
}

/// Runs the scenario once per grid value of `parameter` and returns the value
/// that optimises the kind's primary metric, averaged over the sweep points
/// (maximised for throughput-like metrics, minimised for error rates). Ties
/// go to the lowest value, so the grid order does not matter.
pub fn sweep_optimize(scenario: &Scenario, parameter: &str, grid: &[f64], workers: usize) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Validation("sweep grid must not be empty".into()));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("grid value {v} is not finite")));
    }
    let mut values = grid.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let variants: Vec<Scenario> = values
        .iter()
        .map(|&v| set_parameter(scenario, parameter, v))
        .collect::<Result<_>>()?;
    let (metric, maximise) = scenario.kind.primary_metric();
    let mut runs = Vec::with_capacity(values.len());
    let mut best: Option<(f64, f64)> = None;
    for (&v, s) in values.iter().zip(&variants) {
        let records = run_experiment(s, workers)?;
        let scores: Vec<f64> = records.iter().filter(|r| r.metric == metric).map(|r| r.value).collect();
        if !scores.is_empty() {
            let score = scores.iter().sum::<f64>() / scores.len() as f64;
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if maximise {
                        score > b
                    } else {
                        score < b
                    }
                }
            };
            if better {
                best = Some((v, score));
            }
        }
        runs.push((v, records));
    }
    let (best_value, best_metric) = best.ok_or_else(|| Error::Scenario {
        scenario: scenario.name.clone(),
        source: Box::new(Error::invalid(format!("no grid value produced metric {metric}"))),
    })?;
    Ok(SweepResult {
        parameter: parameter.into(),
        best_value,
        best_metric,
        metric: metric.into(),
        runs,
    })
}
