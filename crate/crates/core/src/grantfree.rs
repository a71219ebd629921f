//! Grant-free SCMA access over contention transmission units (CTUs).
//!
//! A CTU is a `(region, codebook, pilot)` triple. Active users pick a CTU
//! uniformly at random; two users collide only when they share both the
//! region and the pilot, because the receiver then cannot estimate either
//! channel. Sharing a codebook alone is harmless.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use num_complex::Complex;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::channel::{awgn, rayleigh_block, ChannelRealization, NoiseSpec};
use crate::common::{index_to_bits, RngStream};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scma::{self, Codebook, MpaConfig, MpaNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ctu {
    pub region: usize,
    pub codebook: usize,
    pub pilot: usize,
}

/// `R x C x P` grid of CTUs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CtuPool {
    num_regions: usize,
    num_codebooks: usize,
    num_pilots: usize,
}

pub fn build_ctu_pool(num_regions: usize, num_codebooks: usize, num_pilots: usize) -> Result<CtuPool> {
    if num_regions == 0 || num_codebooks == 0 || num_pilots == 0 {
        return Err(Error::invalid(format!(
            "pool dimensions must be positive, got ({num_regions}, {num_codebooks}, {num_pilots})"
        )));
    }
    Ok(CtuPool {
        num_regions,
        num_codebooks,
        num_pilots,
    })
}

impl CtuPool {
    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    pub fn num_pilots(&self) -> usize {
        self.num_pilots
    }

    pub fn size(&self) -> usize {
        self.num_regions * self.num_codebooks * self.num_pilots
    }

    /// CTU with linear index `i`, pilots varying fastest.
    pub fn ctu(&self, i: usize) -> Ctu {
        let per_region = self.num_codebooks * self.num_pilots;
        Ctu {
            region: i / per_region,
            codebook: (i % per_region) / self.num_pilots,
            pilot: i % self.num_pilots,
        }
    }

    pub fn index(&self, ctu: Ctu) -> usize {
        (ctu.region * self.num_codebooks + ctu.codebook) * self.num_pilots + ctu.pilot
    }

    pub fn ctus(&self) -> impl Iterator<Item = Ctu> + '_ {
        (0..self.size()).map(|i| self.ctu(i))
    }

    /// Same codebooks and pilots with a different region count.
    pub fn with_regions(&self, num_regions: usize) -> Result<CtuPool> {
        build_ctu_pool(num_regions, self.num_codebooks, self.num_pilots)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtuSelection {
    pub user: usize,
    pub ctu: Ctu,
}

/// Every active user draws one CTU uniformly from the pool.
pub fn select_ctus(active_users: &[usize], pool: &CtuPool, rng: &mut RngStream) -> Vec<CtuSelection> {
    active_users
        .iter()
        .map(|&user| CtuSelection {
            user,
            ctu: pool.ctu(rng.below(pool.size())),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotOutcome {
    Clean,
    PilotCollided,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CollisionReport {
    /// Users sharing `(region, pilot)`, only for groups of two or more.
    pub collisions: BTreeMap<(usize, usize), Vec<usize>>,
    pub outcomes: BTreeMap<usize, PilotOutcome>,
}

impl CollisionReport {
    pub fn num_users(&self) -> usize {
        self.outcomes.len()
    }

    pub fn num_collided(&self) -> usize {
        self.outcomes.values().filter(|&&o| o == PilotOutcome::PilotCollided).count()
    }

    pub fn is_clean(&self, user: usize) -> bool {
        self.outcomes.get(&user) == Some(&PilotOutcome::Clean)
    }
}

pub fn detect_pilot_collisions(selections: &[CtuSelection]) -> CollisionReport {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for s in selections {
        groups.entry((s.ctu.region, s.ctu.pilot)).or_default().push(s.user);
    }
    let mut outcomes = BTreeMap::new();
    let mut collisions = BTreeMap::new();
    for (key, users) in groups {
        let outcome = if users.len() > 1 {
            PilotOutcome::PilotCollided
        } else {
            PilotOutcome::Clean
        };
        for &u in &users {
            outcomes.insert(u, outcome);
        }
        if users.len() > 1 {
            collisions.insert(key, users);
        }
    }
    CollisionReport { collisions, outcomes }
}

/// Probability that some pilot is chosen by two or more of `A` users picking
/// uniformly among `P` pilots: `1 - P! / (P^A (P - A)!)`, and `1` once
/// `A > P`.
pub fn pilot_collision_probability(active: usize, pilots: usize) -> Result<f64> {
    if pilots == 0 {
        return Err(Error::invalid("need at least one pilot"));
    }
    if active > pilots {
        return Ok(1.0);
    }
    let p = pilots as f64;
    let distinct: f64 = (0..active).map(|i| (p - i as f64) / p).product();
    Ok(1.0 - distinct)
}

/// Exact rational form of [`pilot_collision_probability`]; `None` when
/// `P^A` overflows.
pub fn pilot_collision_probability_exact(active: usize, pilots: usize) -> Result<Option<Ratio<u128>>> {
    if pilots == 0 {
        return Err(Error::invalid("need at least one pilot"));
    }
    if active > pilots {
        return Ok(Some(Ratio::from_integer(1)));
    }
    let p = pilots as u128;
    let mut falling = 1u128;
    let mut power = 1u128;
    for i in 0..active as u128 {
        let (Some(f), Some(w)) = (falling.checked_mul(p - i), power.checked_mul(p)) else {
            return Ok(None);
        };
        falling = f;
        power = w;
    }
    Ok(Some(Ratio::from_integer(1) - Ratio::new(falling, power)))
}

/// Probability that a given user shares its `(region, pilot)` with at least
/// one of the other `A - 1` users, over `resources` equally likely pairs.
pub fn per_user_collision_probability(active: usize, resources: usize) -> Result<f64> {
    if resources == 0 {
        return Err(Error::invalid("need at least one resource"));
    }
    if active <= 1 {
        return Ok(0.0);
    }
    Ok(1.0 - (1.0 - 1.0 / resources as f64).powi(active as i32 - 1))
}

/// Multiplicative region scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptPolicy {
    pub g_up: f64,
    pub g_down: f64,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        AdaptPolicy { g_up: 1.5, g_down: 0.75 }
    }
}

/// Fraction of users that were pilot-collided over `history`.
pub fn measured_collision_rate(history: &[CollisionReport]) -> f64 {
    let users: usize = history.iter().map(CollisionReport::num_users).sum();
    if users == 0 {
        return 0.0;
    }
    history.iter().map(CollisionReport::num_collided).sum::<usize>() as f64 / users as f64
}

/// New region count: grow by `g_up` above the target, shrink by `g_down`
/// below half the target, hold otherwise.
pub fn adapt_pool(
    history: &[CollisionReport],
    target_collision_rate: f64,
    current: &CtuPool,
    policy: AdaptPolicy,
) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::invalid("adaptation needs at least one report"));
    }
    if !(0.0..=1.0).contains(&target_collision_rate) {
        return Err(Error::invalid(format!(
            "target collision rate must lie in [0, 1], got {target_collision_rate}"
        )));
    }
    if !(policy.g_up > 1.0 && policy.g_down > 0.0 && policy.g_down < 1.0) {
        return Err(Error::invalid("need g_up > 1 and 0 < g_down < 1"));
    }
    let rate = measured_collision_rate(history);
    let r = current.num_regions() as f64;
    Ok(if rate > target_collision_rate {
        (r * policy.g_up).ceil() as usize
    } else if rate < target_collision_rate / 2.0 {
        ((r * policy.g_down).floor() as usize).max(1)
    } else {
        current.num_regions()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundOutcome {
    Delivered,
    PilotCollided,
    PhyFailed,
}

/// Receiver model of a round.
#[derive(Clone, Debug)]
pub enum GrantFreePhy<'a, T> {
    /// Clean users are delivered.
    Abstract,
    /// Blind MPA per region over the clean users; codebook `c` of the pool
    /// is `codebooks[c]`.
    BlindMpa {
        codebooks: &'a [Codebook<T>],
        mpa: MpaConfig<T>,
        noise: NoiseSpec,
        fading: bool,
        /// Amplitude scale applied to pilot-collided users' signals, which
        /// the receiver does not model: 0 removes them, 1 is full power.
        interference_scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub selections: Vec<CtuSelection>,
    pub collisions: CollisionReport,
    pub outcomes: BTreeMap<usize, RoundOutcome>,
}

impl RoundReport {
    pub fn delivered(&self) -> BTreeSet<usize> {
        self.with_outcome(RoundOutcome::Delivered)
    }

    pub fn with_outcome(&self, outcome: RoundOutcome) -> BTreeSet<usize> {
        self.outcomes
            .iter()
            .filter(|(_, &o)| o == outcome)
            .map(|(&u, _)| u)
            .collect()
    }
}

/// One grant-free access round.
pub fn run_grantfree_round<T: Real>(
    active_users: &[usize],
    pool: &CtuPool,
    phy: &GrantFreePhy<'_, T>,
    rng: &mut RngStream,
) -> Result<RoundReport> {
    let distinct: BTreeSet<usize> = active_users.iter().copied().collect();
    if distinct.len() != active_users.len() {
        return Err(Error::invalid("active users must be distinct"));
    }
    if let GrantFreePhy::BlindMpa {
        codebooks,
        mpa,
        interference_scale,
        ..
    } = phy
    {
        if codebooks.len() < pool.num_codebooks() {
            return Err(Error::invalid(format!(
                "pool uses {} codebooks but only {} are configured",
                pool.num_codebooks(),
                codebooks.len()
            )));
        }
        if !(*interference_scale >= 0.0 && interference_scale.is_finite()) {
            return Err(Error::invalid("interference scale must be finite and >= 0"));
        }
        mpa.validate()?;
    }
    let selections = select_ctus(active_users, pool, rng);
    let collisions = detect_pilot_collisions(&selections);
    let mut outcomes: BTreeMap<usize, RoundOutcome> = collisions
        .outcomes
        .iter()
        .map(|(&u, &o)| {
            let r = match o {
                PilotOutcome::Clean => RoundOutcome::Delivered,
                PilotOutcome::PilotCollided => RoundOutcome::PilotCollided,
            };
            (u, r)
        })
        .collect();

    if let GrantFreePhy::BlindMpa {
        codebooks,
        mpa,
        noise,
        fading,
        interference_scale,
    } = phy
    {
        let k = codebooks[0].num_tones();
        let scale = T::lit(*interference_scale);
        for region in 0..pool.num_regions() {
            let members: Vec<&CtuSelection> = selections.iter().filter(|s| s.ctu.region == region).collect();
            if members.is_empty() {
                continue;
            }
            let channel = if *fading {
                rayleigh_block::<T>(members.len(), k, rng)
            } else {
                ChannelRealization::unit(members.len(), k)
            };
            let mut y = vec![Complex::new(T::zero(), T::zero()); k];
            let mut sent = Vec::with_capacity(members.len());
            for (i, s) in members.iter().enumerate() {
                let book = &codebooks[s.ctu.codebook];
                let index = rng.below(book.order());
                let cw = book.codeword(index);
                let amp = if collisions.is_clean(s.user) { T::one() } else { scale };
                for (t, yt) in y.iter_mut().enumerate() {
                    *yt += channel.gain(i, t) * cw[t] * amp;
                }
                sent.push(index);
            }
            let y = awgn(&y, noise, rng);
            let clean: Vec<usize> = (0..members.len()).filter(|&i| collisions.is_clean(members[i].user)).collect();
            if clean.is_empty() {
                continue;
            }
            let nodes: Vec<MpaNode<'_, T>> = clean
                .iter()
                .map(|&i| MpaNode {
                    codebook: &codebooks[members[i].ctu.codebook],
                    gains: channel.user_gains(i),
                })
                .collect();
            let decision = scma::mpa_detect_nodes(&y, &nodes, mpa, true)?;
            for (layer, &i) in decision.layers.iter().zip(&clean) {
                let book = &codebooks[members[i].ctu.codebook];
                let ok = layer.symbol().map(|s| index_to_bits(s, book.bits_per_codeword()))
                    == Some(index_to_bits(sent[i], book.bits_per_codeword()));
                if !ok {
                    outcomes.insert(members[i].user, RoundOutcome::PhyFailed);
                }
            }
        }
    }
    Ok(RoundReport {
        selections,
        collisions,
        outcomes,
    })
}

/// One line of an exported round report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub user: usize,
    pub region: usize,
    pub codebook: usize,
    pub pilot: usize,
    pub outcome: RoundOutcome,
}

pub fn round_records(round: usize, report: &RoundReport) -> Vec<RoundRecord> {
    report
        .selections
        .iter()
        .map(|s| RoundRecord {
            round,
            user: s.user,
            region: s.ctu.region,
            codebook: s.ctu.codebook,
            pilot: s.ctu.pilot,
            outcome: report.outcomes[&s.user],
        })
        .collect()
}

pub fn write_round_records<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_round_records<R: BufRead>(input: R) -> Result<Vec<RoundRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
