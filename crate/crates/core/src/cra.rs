//! Coded random access: frameless ALOHA with successive interference
//! cancellation.
//!
//! Every user holds one packet per contention period and, in every slot,
//! transmits a replica with probability `p`. The receiver decodes a slot
//! when at most `T` unresolved users remain in it (multi-packet reception),
//! then cancels the decoded users' replicas in every other slot, which may
//! unlock further slots. The period ends as soon as a fraction `V` of users
//! is resolved or after `c_max * N` slots.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use num_complex::Complex;
use rand::Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::channel::{awgn, rayleigh_block, ChannelRealization, NoiseSpec};
use crate::common::{split_rng, RngStream};
use crate::csmud::{self, CsMudConfig, Modulation, SpreadingMatrix};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::Real;
use crate::scma::{self, Codebook, MpaConfig};

/// Parameters of one contention period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContentionConfig {
    pub num_users: usize,
    pub access_probability: f64,
    pub resolved_fraction: f64,
    pub max_slot_factor: f64,
    pub mpr_threshold: usize,
}

impl ContentionConfig {
    /// `p = beta / N` with `V = 0.85`, `c_max = 2` and `T = 1`.
    pub fn with_beta(num_users: usize, beta: f64) -> Self {
        ContentionConfig {
            num_users,
            access_probability: if num_users == 0 { 1.0 } else { (beta / num_users as f64).min(1.0) },
            resolved_fraction: 0.85,
            max_slot_factor: 2.0,
            mpr_threshold: 1,
        }
    }

    pub fn beta(&self) -> f64 {
        self.access_probability * self.num_users as f64
    }

    pub fn max_slots(&self) -> usize {
        ((self.max_slot_factor * self.num_users as f64).floor() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.access_probability > 0.0 && self.access_probability <= 1.0) {
            return Err(Error::invalid(format!(
                "access probability must lie in (0, 1], got {}",
                self.access_probability
            )));
        }
        if !(self.resolved_fraction > 0.0 && self.resolved_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "resolved fraction must lie in (0, 1], got {}",
                self.resolved_fraction
            )));
        }
        if !(self.max_slot_factor >= 1.0 && self.max_slot_factor.is_finite()) {
            return Err(Error::invalid(format!(
                "max slot factor must be >= 1, got {}",
                self.max_slot_factor
            )));
        }
        if self.mpr_threshold == 0 {
            return Err(Error::invalid("MPR threshold must be >= 1"));
        }
        Ok(())
    }
}

/// Abstract multi-packet reception: the unresolved occupants of a slot all
/// decode when there are at most `T` of them, otherwise none do.
pub fn intra_slot_decode(occupants: &[usize], already_resolved: &BTreeSet<usize>, threshold: usize) -> BTreeSet<usize> {
    let rest: BTreeSet<usize> = occupants
        .iter()
        .copied()
        .filter(|u| !already_resolved.contains(u))
        .collect();
    if rest.len() <= threshold {
        rest
    } else {
        BTreeSet::new()
    }
}

/// Physical-layer model that decides which users of a slot can be recovered.
pub trait SlotDecoder {
    /// Called once when a slot closes, before any decoding attempt.
    fn observe_slot(&mut self, _slot: usize, _occupants: &[usize]) -> Result<()> {
        Ok(())
    }

    /// Users among the unresolved occupants of `slot` that decode after the
    /// replicas of already resolved users are cancelled.
    fn decode(&mut self, slot: usize, occupants: &[usize], resolved: &[bool]) -> Vec<usize>;
}

/// [`intra_slot_decode`] as a [`SlotDecoder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AbstractMpr(pub usize);

impl SlotDecoder for AbstractMpr {
    fn decode(&mut self, _slot: usize, occupants: &[usize], resolved: &[bool]) -> Vec<usize> {
        let rest: Vec<usize> = occupants.iter().copied().filter(|&u| !resolved[u]).collect();
        if rest.len() <= self.0 {
            rest
        } else {
            Vec::new()
        }
    }
}

/// User/slot bipartite transmission graph with per-user resolved flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeelingGraph {
    num_users: usize,
    slots: Vec<Vec<usize>>,
    resolved: Vec<bool>,
}

impl PeelingGraph {
    pub fn new(num_users: usize) -> Self {
        PeelingGraph {
            num_users,
            slots: Vec::new(),
            resolved: vec![false; num_users],
        }
    }

    /// Appends a slot; duplicate occupants are merged.
    pub fn add_slot(&mut self, occupants: &[usize]) -> Result<usize> {
        if let Some(&u) = occupants.iter().find(|&&u| u >= self.num_users) {
            return Err(Error::invalid(format!(
                "user {u} does not exist in a graph of {} users",
                self.num_users
            )));
        }
        let mut occ = occupants.to_vec();
        occ.sort_unstable();
        occ.dedup();
        self.slots.push(occ);
        Ok(self.slots.len() - 1)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, slot: usize) -> &[usize] {
        &self.slots[slot]
    }

    pub fn user_slots(&self, user: usize) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&s| self.slots[s].binary_search(&user).is_ok())
            .collect()
    }

    pub fn is_resolved(&self, user: usize) -> bool {
        self.resolved[user]
    }

    pub fn resolved_flags(&self) -> &[bool] {
        &self.resolved
    }

    pub fn resolved_users(&self) -> BTreeSet<usize> {
        (0..self.num_users).filter(|&u| self.resolved[u]).collect()
    }

    pub fn resolved_count(&self) -> usize {
        self.resolved.iter().filter(|&&r| r).count()
    }

    /// Unresolved occupants of `slot`.
    pub fn unresolved_in(&self, slot: usize) -> usize {
        self.slots[slot].iter().filter(|&&u| !self.resolved[u]).count()
    }

    /// Same transmissions, all flags cleared.
    pub fn reset(&self) -> PeelingGraph {
        PeelingGraph {
            num_users: self.num_users,
            slots: self.slots.clone(),
            resolved: vec![false; self.num_users],
        }
    }

    /// Abstract-`T` peeling to its fixpoint; returns the newly resolved users.
    pub fn peel(&mut self, threshold: usize) -> BTreeSet<usize> {
        let order: Vec<usize> = (0..self.slots.len()).collect();
        self.peel_in_order(threshold, &order)
    }

    /// Abstract-`T` peeling that sweeps slots in the given order until no
    /// sweep makes progress.
    pub fn peel_in_order(&mut self, threshold: usize, order: &[usize]) -> BTreeSet<usize> {
        let mut newly = BTreeSet::new();
        loop {
            let mut progress = false;
            for &s in order {
                if s >= self.slots.len() {
                    continue;
                }
                let rest: Vec<usize> = self.slots[s].iter().copied().filter(|&u| !self.resolved[u]).collect();
                if !rest.is_empty() && rest.len() <= threshold {
                    for u in rest {
                        self.resolved[u] = true;
                        newly.insert(u);
                    }
                    progress = true;
                }
            }
            if !progress {
                return newly;
            }
        }
    }

    /// Peels with a reshuffled slot order on every sweep.
    pub fn peel_randomized(&mut self, threshold: usize, rng: &mut RngStream) -> BTreeSet<usize> {
        let mut newly = BTreeSet::new();
        loop {
            let mut order: Vec<usize> = (0..self.slots.len()).collect();
            rng.shuffle(&mut order);
            let mut progress = false;
            for s in order {
                let rest: Vec<usize> = self.slots[s].iter().copied().filter(|&u| !self.resolved[u]).collect();
                if !rest.is_empty() && rest.len() <= threshold {
                    for u in rest {
                        self.resolved[u] = true;
                        newly.insert(u);
                    }
                    progress = true;
                }
            }
            if !progress {
                return newly;
            }
        }
    }

    /// Joint intra/inter-slot fixpoint driven by an arbitrary decoder. A slot
    /// is retried only after its unresolved occupant count has changed.
    pub fn peel_with(&mut self, decoder: &mut dyn SlotDecoder, attempted: &mut Vec<Option<usize>>) -> BTreeSet<usize> {
        attempted.resize(self.slots.len(), None);
        let mut newly = BTreeSet::new();
        loop {
            let mut progress = false;
            for s in 0..self.slots.len() {
                let left = self.unresolved_in(s);
                if left == 0 || attempted[s] == Some(left) {
                    continue;
                }
                attempted[s] = Some(left);
                for u in decoder.decode(s, &self.slots[s], &self.resolved) {
                    if !self.resolved[u] && self.slots[s].binary_search(&u).is_ok() {
                        self.resolved[u] = true;
                        newly.insert(u);
                        progress = true;
                    }
                }
            }
            if !progress {
                return newly;
            }
        }
    }

    /// Rebuilds the transmission graph recorded in a decode log.
    pub fn from_log(num_users: usize, log: &[SlotRecord]) -> Result<Self> {
        let mut g = PeelingGraph::new(num_users);
        for (i, rec) in log.iter().enumerate() {
            if rec.slot != i {
                return Err(Error::Parse(format!("log entry {i} carries slot index {}", rec.slot)));
            }
            g.add_slot(&rec.occupants)?;
        }
        Ok(g)
    }
}

/// One line of the per-slot decode log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub occupants: Vec<usize>,
    /// Users resolved while processing this slot, by any slot.
    pub decoded: Vec<usize>,
}

/// Outcome of a contention period.
#[derive(Clone, Debug, PartialEq)]
pub struct MacResult {
    pub resolved_users: BTreeSet<usize>,
    pub slots_used: usize,
    pub throughput: f64,
    pub log: Vec<SlotRecord>,
    /// The period ended on the slot cap rather than the resolved fraction.
    pub cap_reached: bool,
}

impl MacResult {
    pub fn resolved_fraction(&self, num_users: usize) -> f64 {
        if num_users == 0 {
            1.0
        } else {
            self.resolved_users.len() as f64 / num_users as f64
        }
    }
}

/// How slots are decoded during contention.
pub enum PhyMode<'a> {
    /// [`AbstractMpr`] with the configured threshold.
    Abstract,
    Coupled(&'a mut dyn SlotDecoder),
}

/// Runs one frameless contention period.
///
/// Each slot every user draws its access decision; resolved users stay
/// silent. The draw is taken for resolved users too, so the transmission
/// pattern depends only on `rng`, not on what was decoded.
pub fn run_contention(config: &ContentionConfig, rng: &mut RngStream, phy: PhyMode<'_>) -> Result<MacResult> {
    config.validate()?;
    let mut abstract_decoder = AbstractMpr(config.mpr_threshold);
    let decoder: &mut dyn SlotDecoder = match phy {
        PhyMode::Abstract => &mut abstract_decoder,
        PhyMode::Coupled(d) => d,
    };
    let n = config.num_users;
    let max_slots = config.max_slots();
    let mut graph = PeelingGraph::new(n);
    let mut attempted = Vec::new();
    let mut log = Vec::new();
    loop {
        let occupants: Vec<usize> = (0..n)
            .filter(|_| rng.bernoulli(config.access_probability))
            .filter(|&u| !graph.is_resolved(u))
            .collect();
        let slot = graph.add_slot(&occupants)?;
        decoder.observe_slot(slot, &occupants)?;
        let decoded = graph.peel_with(decoder, &mut attempted);
        log.push(SlotRecord {
            slot,
            occupants,
            decoded: decoded.into_iter().collect(),
        });
        let m = slot + 1;
        let resolved = graph.resolved_count();
        let done = n == 0 || resolved as f64 >= config.resolved_fraction * n as f64;
        if done || m >= max_slots {
            return Ok(MacResult {
                resolved_users: graph.resolved_users(),
                slots_used: m,
                throughput: resolved as f64 / m as f64,
                log,
                cap_reached: !done,
            });
        }
    }
}

/// Resolved set of a recorded transmission pattern under abstract-`T`
/// peeling.
pub fn decode_transcript(num_users: usize, log: &[SlotRecord], threshold: usize) -> Result<BTreeSet<usize>> {
    let mut g = PeelingGraph::from_log(num_users, log)?;
    g.peel(threshold);
    Ok(g.resolved_users())
}

/// Slotted ALOHA: `N` users each transmit with probability `G / N` per slot;
/// a slot delivers iff exactly one user transmits.
pub fn slotted_aloha_baseline(num_users: usize, offered_load: f64, num_slots: usize, rng: &mut RngStream) -> Result<f64> {
    if !(offered_load > 0.0) || offered_load > num_users as f64 {
        return Err(Error::invalid(format!(
            "offered load must lie in (0, N], got {offered_load} with N = {num_users}"
        )));
    }
    if num_slots == 0 {
        return Err(Error::invalid("need at least one slot"));
    }
    let draws = Binomial::new(num_users as u64, offered_load / num_users as f64)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let delivered = (0..num_slots).filter(|_| rng.sample(draws) == 1).count();
    Ok(delivered as f64 / num_slots as f64)
}

/// Consecutive beacon-delimited contention periods. Each beacon announces
/// `p = beta / backlog` for the users still unresolved; user ids in the
/// results are global. A round with an empty backlog occupies one idle slot.
pub fn beacon_cycle(config: &ContentionConfig, rounds: usize, rng: &mut RngStream) -> Result<Vec<MacResult>> {
    config.validate()?;
    if rounds == 0 {
        return Err(Error::invalid("need at least one round"));
    }
    let beta = config.beta();
    let mut backlog: Vec<usize> = (0..config.num_users).collect();
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        if backlog.is_empty() {
            out.push(MacResult {
                resolved_users: BTreeSet::new(),
                slots_used: 1,
                throughput: 0.0,
                log: vec![SlotRecord {
                    slot: 0,
                    occupants: Vec::new(),
                    decoded: Vec::new(),
                }],
                cap_reached: false,
            });
            continue;
        }
        let round_cfg = ContentionConfig {
            num_users: backlog.len(),
            access_probability: (beta / backlog.len() as f64).min(1.0),
            ..*config
        };
        let mut r = run_contention(&round_cfg, rng, PhyMode::Abstract)?;
        let global = |v: &[usize]| v.iter().map(|&u| backlog[u]).collect::<Vec<_>>();
        r.resolved_users = r.resolved_users.iter().map(|&u| backlog[u]).collect();
        for rec in &mut r.log {
            rec.occupants = global(&rec.occupants);
            rec.decoded = global(&rec.decoded);
        }
        backlog.retain(|u| !r.resolved_users.contains(u));
        out.push(r);
    }
    Ok(out)
}

/// Writes one JSON object per slot record.
pub fn write_decode_log<W: Write>(log: &[SlotRecord], mut out: W) -> Result<()> {
    for rec in log {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_decode_log<R: BufRead>(input: R) -> Result<Vec<SlotRecord>> {
    let mut log = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        log.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(log)
}

/// Detector run on each slot's synthesized signal.
#[derive(Clone, Debug)]
pub enum PhyDetector<T> {
    /// Group OMP over per-user signatures; works for any user count.
    CsMud {
        spreading: SpreadingMatrix<T>,
        config: CsMudConfig,
    },
    /// Blind MPA where user `u` owns layer `u`; needs `N <= J`.
    Scma {
        codebooks: Vec<Codebook<T>>,
        mpa: MpaConfig<T>,
    },
}

impl<T: Real> PhyDetector<T> {
    fn num_users(&self) -> usize {
        match self {
            PhyDetector::CsMud { spreading, .. } => spreading.num_users(),
            PhyDetector::Scma { codebooks, .. } => codebooks.len(),
        }
    }
}

#[derive(Clone, Debug)]
struct SlotSignal<T> {
    y: Vec<Complex<T>>,
    /// Per-user received contribution, used for cancellation.
    contributions: HashMap<usize, Vec<Complex<T>>>,
    /// Ground truth for the idealized CRC.
    payload: HashMap<usize, Vec<bool>>,
    gains: Vec<Complex<T>>,
}

/// Link-level slot decoder: synthesizes every slot's received signal,
/// cancels resolved users' replicas exactly and runs the configured
/// detector on the remainder. A packet counts as decoded iff its bits match
/// the transmitted ones (perfect CRC).
#[derive(Clone, Debug)]
pub struct PhyCoupled<T> {
    detector: PhyDetector<T>,
    noise: NoiseSpec,
    fading: bool,
    rng: RngStream,
    slots: Vec<SlotSignal<T>>,
    diagnostics: Vec<String>,
}

impl<T: Real> PhyCoupled<T> {
    /// `rng` is owned by the decoder so the MAC transmission pattern does
    /// not depend on the physical layer.
    pub fn new(detector: PhyDetector<T>, noise: NoiseSpec, fading: bool, rng: RngStream) -> Result<Self> {
        if let PhyDetector::Scma { mpa, .. } = &detector {
            mpa.validate()?;
        }
        if let PhyDetector::CsMud { config, .. } = &detector {
            config.validate()?;
        }
        Ok(PhyCoupled {
            detector,
            noise,
            fading,
            rng,
            slots: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.detector.num_users()
    }

    /// Messages from detector calls that failed.
    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn synthesize(&mut self, occupants: &[usize]) -> Result<SlotSignal<T>> {
        let n = self.num_users();
        if let Some(&u) = occupants.iter().find(|&&u| u >= n) {
            return Err(Error::invalid(format!("user {u} has no signature; the detector serves {n} users")));
        }
        let one = Complex::new(T::one(), T::zero());
        match &self.detector {
            PhyDetector::CsMud { spreading, config } => {
                let gains: Vec<Complex<T>> = if self.fading {
                    (0..n).map(|_| self.rng.complex_gaussian(1.0)).collect()
                } else {
                    vec![one; n]
                };
                let ns = spreading.spreading_len();
                let l = config.frame_len;
                let mut contributions = HashMap::new();
                let mut payload = HashMap::new();
                let mut y = vec![Complex::new(T::zero(), T::zero()); ns * l];
                for &u in occupants {
                    let bits = self.rng.bits(l * config.modulation.bits_per_symbol());
                    let x = config.modulation.modulate::<T>(&bits)?;
                    let sig = spreading.signature(u);
                    let mut c = vec![Complex::new(T::zero(), T::zero()); ns * l];
                    for i in 0..ns {
                        for t in 0..l {
                            c[i * l + t] = sig[i] * gains[u] * x[t];
                        }
                    }
                    y.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
                    contributions.insert(u, c);
                    payload.insert(u, bits);
                }
                let y = awgn(&y, &self.noise, &mut self.rng);
                Ok(SlotSignal {
                    y,
                    contributions,
                    payload,
                    gains,
                })
            }
            PhyDetector::Scma { codebooks, .. } => {
                let k = codebooks[0].num_tones();
                let channel = if self.fading {
                    rayleigh_block::<T>(n, k, &mut self.rng)
                } else {
                    ChannelRealization::unit(n, k)
                };
                let mut contributions = HashMap::new();
                let mut payload = HashMap::new();
                let mut y = vec![Complex::new(T::zero(), T::zero()); k];
                for &u in occupants {
                    let bits = self.rng.bits(codebooks[u].bits_per_codeword());
                    let cw = scma::encode(&codebooks[u], &bits)?;
                    let c: Vec<Complex<T>> = cw.iter().zip(channel.user_gains(u)).map(|(x, h)| x * h).collect();
                    y.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
                    contributions.insert(u, c);
                    payload.insert(u, bits);
                }
                let y = awgn(&y, &self.noise, &mut self.rng);
                Ok(SlotSignal {
                    y,
                    contributions,
                    payload,
                    gains: channel.as_slice().to_vec(),
                })
            }
        }
    }

    fn detect(&self, signal: &SlotSignal<T>, residual: &[Complex<T>]) -> Result<Vec<(usize, Vec<bool>)>> {
        let n = self.num_users();
        match &self.detector {
            PhyDetector::CsMud { spreading, config } => {
                let y = CMatrix::from_vec(spreading.spreading_len(), config.frame_len, residual.to_vec())?;
                let d = csmud::group_omp_detect(&y, spreading, Some(&signal.gains), T::lit(self.noise.n0()), config)?;
                Ok((0..n)
                    .filter_map(|u| d.bits(u, config.modulation).map(|b| (u, b)))
                    .collect())
            }
            PhyDetector::Scma { codebooks, mpa } => {
                let k = codebooks[0].num_tones();
                let gains = ChannelRealization::new(n, k, signal.gains.clone())?;
                let d = scma::blind_mpa_detect(residual, &gains, codebooks, mpa)?;
                Ok(d.layers
                    .iter()
                    .enumerate()
                    .filter_map(|(u, l)| {
                        l.symbol().map(|s| (u, crate::common::index_to_bits(s, codebooks[u].bits_per_codeword())))
                    })
                    .collect())
            }
        }
    }
}

impl<T: Real> SlotDecoder for PhyCoupled<T> {
    fn observe_slot(&mut self, slot: usize, occupants: &[usize]) -> Result<()> {
        if slot != self.slots.len() {
            return Err(Error::invalid(format!("slot {slot} observed out of order")));
        }
        let s = self.synthesize(occupants)?;
        self.slots.push(s);
        Ok(())
    }

    fn decode(&mut self, slot: usize, occupants: &[usize], resolved: &[bool]) -> Vec<usize> {
        let signal = &self.slots[slot];
        let mut residual = signal.y.clone();
        for &u in occupants.iter().filter(|&&u| resolved[u]) {
            residual.iter_mut().zip(&signal.contributions[&u]).for_each(|(a, b)| *a -= b);
        }
        match self.detect(signal, &residual) {
            Ok(found) => found
                .into_iter()
                .filter(|(u, bits)| !resolved[*u] && signal.payload.get(u) == Some(bits))
                .map(|(u, _)| u)
                .collect(),
            Err(e) => {
                self.diagnostics.push(format!("slot {slot}: {e}"));
                Vec::new()
            }
        }
    }
}

/// Decodes a single isolated slot with the given detector.
pub fn phy_coupled_slot<T: Real>(
    occupants: &[usize],
    detector: &PhyDetector<T>,
    noise: NoiseSpec,
    fading: bool,
    rng: RngStream,
) -> Result<BTreeSet<usize>> {
    let mut phy = PhyCoupled::new(detector.clone(), noise, fading, rng)?;
    phy.observe_slot(0, occupants)?;
    let resolved = vec![false; phy.num_users()];
    Ok(phy.decode(0, occupants, &resolved).into_iter().collect())
}

/// CS-MUD detector with `N` DFT-orthogonal signatures of length `Ns`, BPSK
/// frames of `frame_len` symbols and a residual-energy stop rule.
pub fn orthogonal_csmud_detector<T: Real>(num_users: usize, spreading_len: usize, frame_len: usize, eps: f64) -> Result<PhyDetector<T>> {
    let mut config = CsMudConfig::new(csmud::StopRule::ResidualThreshold(eps), frame_len);
    config.modulation = Modulation::Bpsk;
    Ok(PhyDetector::CsMud {
        spreading: SpreadingMatrix::orthogonal(num_users, spreading_len)?,
        config,
    })
}

/// Independent stream for a physical-layer decoder attached to run `run`.
pub fn phy_stream(seed: u64, run: u64) -> RngStream {
    split_rng(seed, run).child(0x5048_5953)
}
