//! Sparse code multiple access.
//!
//! `J = C(K, d_l)` layers share `K` orthogonal tones. Each layer maps
//! `log2(M)` bits to a sparse `K`-dimensional codeword that is non-zero only
//! on the `d_l` tones of its factor-graph column, so exactly
//! `d_f = J d_l / K` layers collide on any tone. The receiver runs the
//! message passing algorithm (MPA) on that graph; per tone it enumerates
//! `M^{d_f}` hypotheses instead of `M^J`.
//!
//! Blind detection appends an all-zero codeword to every layer so that
//! activity and data are decided jointly.

use std::fmt::Write as _;

use num_complex::Complex;
use num_rational::Ratio;
use num_traits::{Float, ToPrimitive};

use crate::channel::ChannelRealization;
use crate::common::{argmax, bits_to_index, split_rng};
use crate::error::{Error, Result};
use crate::scalar::{log_add_exp, Real};

/// Layer/tone incidence of an SCMA system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorGraph {
    num_tones: usize,
    layer_degree: usize,
    layer_tones: Vec<Vec<usize>>,
}

/// Enumerates every `d_l`-subset of `K` tones in lexicographic order, one
/// layer per subset.
pub fn build_factor_graph(num_tones: usize, layer_degree: usize) -> Result<FactorGraph> {
    if layer_degree == 0 || layer_degree > num_tones {
        return Err(Error::invalid(format!(
            "layer degree must satisfy 1 <= d_l <= K, got d_l = {layer_degree}, K = {num_tones}"
        )));
    }
    let mut layer_tones = Vec::new();
    let mut subset: Vec<usize> = (0..layer_degree).collect();
    loop {
        layer_tones.push(subset.clone());
        // advance to the next combination
        let mut i = layer_degree;
        loop {
            if i == 0 {
                return Ok(FactorGraph {
                    num_tones,
                    layer_degree,
                    layer_tones,
                });
            }
            i -= 1;
            if subset[i] < num_tones - layer_degree + i {
                subset[i] += 1;
                for t in i + 1..layer_degree {
                    subset[t] = subset[t - 1] + 1;
                }
                break;
            }
        }
    }
}

impl FactorGraph {
    /// `K`
    pub fn num_tones(&self) -> usize {
        self.num_tones
    }

    /// `J`
    pub fn num_layers(&self) -> usize {
        self.layer_tones.len()
    }

    /// `d_l`, non-zero dimensions per layer.
    pub fn layer_degree(&self) -> usize {
        self.layer_degree
    }

    /// `d_f = J d_l / K`, layers colliding on each tone.
    pub fn tone_degree(&self) -> usize {
        self.num_layers() * self.layer_degree / self.num_tones
    }

    /// `J / K`
    pub fn overload(&self) -> Ratio<usize> {
        Ratio::new(self.num_layers(), self.num_tones)
    }

    pub fn layer_tones(&self, layer: usize) -> &[usize] {
        &self.layer_tones[layer]
    }

    pub fn tone_layers(&self, tone: usize) -> Vec<usize> {
        (0..self.num_layers())
            .filter(|&j| self.layer_tones[j].contains(&tone))
            .collect()
    }

    /// `K x J` binary incidence matrix.
    pub fn incidence(&self) -> Vec<Vec<bool>> {
        (0..self.num_tones)
            .map(|k| {
                self.layer_tones
                    .iter()
                    .map(|tones| tones.contains(&k))
                    .collect()
            })
            .collect()
    }

    pub fn row_weights(&self) -> Vec<usize> {
        self.incidence()
            .iter()
            .map(|row| row.iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn column_weights(&self) -> Vec<usize> {
        self.layer_tones.iter().map(Vec::len).collect()
    }
}

/// Codeword set of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    layer: usize,
    num_tones: usize,
    support: Vec<usize>,
    codewords: Vec<Vec<Complex<T>>>,
}

impl<T: Real> Codebook<T> {
    /// Validates and wraps a layer's codewords. The support is taken from the
    /// non-zero pattern, which must be shared by every codeword.
    pub fn new(layer: usize, num_tones: usize, codewords: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let m = codewords.len();
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::invalid(format!(
                "codebook size must be a power of two >= 2, got {m}"
            )));
        }
        let zero = Complex::new(T::zero(), T::zero());
        for (i, c) in codewords.iter().enumerate() {
            if c.len() != num_tones {
                return Err(Error::LengthMismatch {
                    expected: num_tones,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::invalid(format!("codeword {i} has non-finite entries")));
            }
        }
        let support: Vec<usize> = (0..num_tones).filter(|&k| codewords[0][k] != zero).collect();
        if support.is_empty() {
            return Err(Error::invalid("codeword 0 is all-zero"));
        }
        for (i, c) in codewords.iter().enumerate() {
            let s: Vec<usize> = (0..num_tones).filter(|&k| c[k] != zero).collect();
            if s != support {
                return Err(Error::invalid(format!(
                    "codeword {i} of layer {layer} has support {s:?}, expected {support:?}"
                )));
            }
        }
        for a in 0..m {
            for b in a + 1..m {
                if codewords[a] == codewords[b] {
                    return Err(Error::invalid(format!(
                        "codewords {a} and {b} of layer {layer} coincide"
                    )));
                }
            }
        }
        Ok(Codebook {
            layer,
            num_tones,
            support,
            codewords,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn num_tones(&self) -> usize {
        self.num_tones
    }

    /// `M`
    pub fn order(&self) -> usize {
        self.codewords.len()
    }

    pub fn bits_per_codeword(&self) -> usize {
        self.order().trailing_zeros() as usize
    }

    /// Tones carrying non-zero entries.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn codewords(&self) -> &[Vec<Complex<T>>] {
        &self.codewords
    }

    pub fn codeword(&self, index: usize) -> &[Complex<T>] {
        &self.codewords[index]
    }

    pub fn average_energy(&self) -> T {
        let total: T = self
            .codewords
            .iter()
            .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<T>())
            .sum();
        total / T::from_usize_lossy(self.order())
    }
}

/// Selects the codebook construction. `Default` is fully deterministic;
/// `Seeded(id)` additionally applies random per-dimension phase rotations and
/// a random labelling drawn from stream `id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Construction {
    #[default]
    Default,
    Seeded(u64),
}

/// Builds one codebook per layer of `graph`.
///
/// The mother constellation is the Cartesian product of `d_l` PSK rings of
/// size `q = M^{1/d_l}`, ring `d` rotated by `2 pi d / (q d_l)` (`pi d / (q d_l)`
/// for odd `d_l`, where the former zeroes DFT outputs), spread across the
/// `d_l` non-zero dimensions by a DFT matrix and scaled to unit energy.
/// Layer `l` is rotated by `exp(i 2 pi l / (J M))`.
pub fn build_codebooks<T: Real>(
    graph: &FactorGraph,
    order: usize,
    construction: Construction,
) -> Result<Vec<Codebook<T>>> {
    let dl = graph.layer_degree();
    let ring = ring_size(order, dl).ok_or_else(|| {
        Error::invalid(format!(
            "codebook size {order} is not supported with d_l = {dl}: need a power of two M >= 4 \
             whose d_l-th root is an integer >= 2"
        ))
    })?;
    let j_layers = graph.num_layers();
    let pi = std::f64::consts::PI;
    let ring_step = if dl % 2 == 0 { 2.0 * pi } else { pi } / (ring * dl) as f64;

    let mother: Vec<Vec<Complex<f64>>> = (0..order)
        .map(|idx| {
            let mut digits = vec![0usize; dl];
            let mut rest = idx;
            for d in (0..dl).rev() {
                digits[d] = rest % ring;
                rest /= ring;
            }
            let points: Vec<Complex<f64>> = (0..dl)
                .map(|d| {
                    let phase = 2.0 * pi * digits[d] as f64 / ring as f64
                        + ring_step * d as f64;
                    Complex::from_polar(1.0, phase)
                })
                .collect();
            (0..dl)
                .map(|m| {
                    points
                        .iter()
                        .enumerate()
                        .map(|(d, p)| {
                            p * Complex::from_polar(1.0, -2.0 * pi * (m * d) as f64 / dl as f64)
                        })
                        .sum::<Complex<f64>>()
                        / dl as f64
                })
                .collect()
        })
        .collect();
    if mother.iter().flatten().any(|v| v.norm() < 1e-9) {
        return Err(Error::invalid(format!(
            "construction for M = {order}, d_l = {dl} yields a zero entry"
        )));
    }

    let mut books = Vec::with_capacity(j_layers);
    for layer in 0..j_layers {
        let base = 2.0 * pi * layer as f64 / (j_layers * order) as f64;
        let (dims, labels) = match construction {
            Construction::Default => (vec![0.0; dl], (0..order).collect::<Vec<_>>()),
            Construction::Seeded(id) => {
                let mut rng = split_rng(id, layer as u64);
                let dims = (0..dl).map(|_| 2.0 * pi * rng.uniform()).collect();
                let mut labels: Vec<usize> = (0..order).collect();
                rng.shuffle(&mut labels);
                (dims, labels)
            }
        };
        let tones = graph.layer_tones(layer);
        let codewords = labels
            .iter()
            .map(|&src| {
                let mut cw = vec![Complex::new(T::zero(), T::zero()); graph.num_tones()];
                for (m, &tone) in tones.iter().enumerate() {
                    let v = mother[src][m] * Complex::from_polar(1.0, base + dims[m]);
                    cw[tone] = Complex::new(T::lit(v.re), T::lit(v.im));
                }
                cw
            })
            .collect();
        books.push(Codebook::new(layer, graph.num_tones(), codewords)?);
    }
    Ok(books)
}

fn ring_size(order: usize, dl: usize) -> Option<usize> {
    if order < 4 || !order.is_power_of_two() {
        return None;
    }
    let bits = order.trailing_zeros() as usize;
    (bits % dl == 0).then(|| 1usize << (bits / dl))
}

/// Maps `log2(M)` bits (MSB first) to the corresponding codeword.
pub fn encode<T: Real>(codebook: &Codebook<T>, bits: &[bool]) -> Result<Vec<Complex<T>>> {
    if bits.len() != codebook.bits_per_codeword() {
        return Err(Error::LengthMismatch {
            expected: codebook.bits_per_codeword(),
            got: bits.len(),
        });
    }
    Ok(codebook.codeword(bits_to_index(bits)).to_vec())
}

/// Serializes codebooks as text: one codeword per line holding the layer,
/// the codeword index and `2K` reals (re, im per tone).
pub fn codebooks_to_text<T: Real>(codebooks: &[Codebook<T>]) -> String {
    let mut out = String::from("# layer index re_0 im_0 ... re_{K-1} im_{K-1}\n");
    for cb in codebooks {
        for (i, cw) in cb.codewords().iter().enumerate() {
            write!(out, "{} {}", cb.layer(), i).unwrap();
            for v in cw {
                write!(out, " {} {}", v.re.to_f64_lossy(), v.im.to_f64_lossy()).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Parses the format written by [`codebooks_to_text`].
pub fn parse_codebooks<T: Real>(text: &str) -> Result<Vec<Codebook<T>>> {
    let mut rows: Vec<(usize, usize, Vec<Complex<T>>)> = Vec::new();
    let mut num_tones = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields.len() % 2 != 0 {
            return Err(bad("expected layer, index and an even number of reals"));
        }
        let layer: usize = fields[0].parse().map_err(|_| bad("bad layer"))?;
        let index: usize = fields[1].parse().map_err(|_| bad("bad index"))?;
        let reals = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad real"))?;
        let k = reals.len() / 2;
        if *num_tones.get_or_insert(k) != k {
            return Err(bad("inconsistent codeword length"));
        }
        let cw = reals
            .chunks(2)
            .map(|p| Complex::new(T::lit(p[0]), T::lit(p[1])))
            .collect();
        rows.push((layer, index, cw));
    }
    let num_tones = num_tones.ok_or_else(|| Error::Parse("no codewords".into()))?;
    let num_layers = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let mut per_layer: Vec<Vec<Option<Vec<Complex<T>>>>> = vec![Vec::new(); num_layers];
    for (layer, index, cw) in rows {
        let slot = &mut per_layer[layer];
        if slot.len() <= index {
            slot.resize(index + 1, None);
        }
        if slot[index].replace(cw).is_some() {
            return Err(Error::Parse(format!("duplicate codeword {index} of layer {layer}")));
        }
    }
    per_layer
        .into_iter()
        .enumerate()
        .map(|(layer, cws)| {
            let cws = cws
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    c.ok_or_else(|| Error::Parse(format!("layer {layer} is missing codeword {i}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Codebook::new(layer, num_tones, cws)
        })
        .collect()
}

/// Message combining rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MpaMode {
    #[default]
    SumProduct,
    MaxLog,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpaConfig<T> {
    pub max_iterations: usize,
    pub mode: MpaMode,
    /// Prior probability that a layer is active; blind detection only.
    pub prior_active: f64,
    pub noise_variance: T,
    /// A layer is declared active when the posterior of its all-zero
    /// hypothesis falls below this value.
    pub activity_threshold: f64,
}

impl<T: Real> MpaConfig<T> {
    /// Sum-product, 6 flooding iterations, MAP activity rule.
    pub fn new(noise_variance: T) -> Self {
        MpaConfig {
            max_iterations: 6,
            mode: MpaMode::SumProduct,
            prior_active: 0.5,
            noise_variance,
            activity_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if !(self.prior_active > 0.0 && self.prior_active <= 1.0) {
            return Err(Error::invalid(format!(
                "prior_active must lie in (0, 1], got {}",
                self.prior_active
            )));
        }
        if !(self.noise_variance > T::zero() && self.noise_variance.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Per-layer detector output.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEstimate<T> {
    pub active: bool,
    /// Hard decision. In blind mode index `M` is the all-zero codeword.
    pub index: usize,
    pub posterior: Vec<T>,
}

impl<T: Real> LayerEstimate<T> {
    /// Most likely data codeword if the layer was declared active.
    pub fn symbol(&self) -> Option<usize> {
        if !self.active {
            return None;
        }
        // M is even, so an odd-length posterior carries the zero hypothesis last
        let m = self.posterior.len() - usize::from(self.posterior.len() % 2 == 1);
        argmax(&self.posterior[..m])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDecision<T> {
    pub layers: Vec<LayerEstimate<T>>,
    /// Hypotheses enumerated on each tone per MPA iteration.
    pub tone_hypotheses: Vec<u64>,
    /// Joint hypotheses enumerated by the exhaustive oracle.
    pub joint_hypotheses: u64,
}

/// One variable node of the MPA graph: a transmitter with its codebook and
/// per-tone channel. Several nodes may share a codebook.
#[derive(Clone, Copy, Debug)]
pub struct MpaNode<'a, T> {
    pub codebook: &'a Codebook<T>,
    pub gains: &'a [Complex<T>],
}

/// MPA with every layer assumed active. `gains` is `J x K`.
pub fn mpa_detect<T: Real>(
    y: &[Complex<T>],
    gains: &ChannelRealization<T>,
    codebooks: &[Codebook<T>],
    config: &MpaConfig<T>,
) -> Result<LayerDecision<T>> {
    let nodes = layer_nodes(y, gains, codebooks)?;
    mpa_detect_nodes(y, &nodes, config, false)
}

/// MPA over codebooks augmented with the all-zero codeword; decides activity
/// and data jointly.
pub fn blind_mpa_detect<T: Real>(
    y: &[Complex<T>],
    gains: &ChannelRealization<T>,
    codebooks: &[Codebook<T>],
    config: &MpaConfig<T>,
) -> Result<LayerDecision<T>> {
    let nodes = layer_nodes(y, gains, codebooks)?;
    mpa_detect_nodes(y, &nodes, config, true)
}

fn layer_nodes<'a, T: Real>(
    y: &[Complex<T>],
    gains: &'a ChannelRealization<T>,
    codebooks: &'a [Codebook<T>],
) -> Result<Vec<MpaNode<'a, T>>> {
    if gains.num_users() != codebooks.len() || gains.num_resources() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "gains are {}x{}, expected {}x{}",
            gains.num_users(),
            gains.num_resources(),
            codebooks.len(),
            y.len()
        )));
    }
    Ok(codebooks
        .iter()
        .enumerate()
        .map(|(j, codebook)| MpaNode {
            codebook,
            gains: gains.user_gains(j),
        })
        .collect())
}

/// Log prior over a node's hypotheses (`M` codewords, plus the zero codeword
/// last when blind).
fn log_prior<T: Real>(order: usize, blind: bool, prior_active: f64) -> Vec<T> {
    if blind {
        let mut p = vec![T::lit((prior_active / order as f64).ln()); order];
        p.push(T::lit((1.0 - prior_active).ln()));
        p
    } else {
        vec![T::lit(-(order as f64).ln()); order]
    }
}

fn normalize<T: Real>(msg: &mut [T], mode: MpaMode) {
    let norm = match mode {
        MpaMode::SumProduct => msg.iter().fold(T::neg_infinity(), |a, &b| log_add_exp(a, b)),
        MpaMode::MaxLog => msg.iter().fold(T::neg_infinity(), |a, &b| a.max(b)),
    };
    if norm == T::neg_infinity() {
        msg.iter_mut().for_each(|v| *v = T::zero());
    } else {
        msg.iter_mut().for_each(|v| *v -= norm);
    }
}

fn posterior_from_log<T: Real>(mut lp: Vec<T>) -> Vec<T> {
    normalize(&mut lp, MpaMode::SumProduct);
    let mut p: Vec<T> = lp.into_iter().map(Float::exp).collect();
    let s: T = p.iter().copied().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Flooding-schedule MPA over arbitrary nodes.
pub fn mpa_detect_nodes<T: Real>(
    y: &[Complex<T>],
    nodes: &[MpaNode<'_, T>],
    config: &MpaConfig<T>,
    blind: bool,
) -> Result<LayerDecision<T>> {
    config.validate()?;
    let k_tones = y.len();
    for (n, node) in nodes.iter().enumerate() {
        if node.codebook.num_tones() != k_tones || node.gains.len() != k_tones {
            return Err(Error::DimensionMismatch(format!(
                "node {n}: codebook spans {} tones, gains {}, received {k_tones}",
                node.codebook.num_tones(),
                node.gains.len()
            )));
        }
    }
    let zero = Complex::new(T::zero(), T::zero());
    let inv_n0 = T::one() / config.noise_variance;

    let priors: Vec<Vec<T>> = nodes
        .iter()
        .map(|nd| log_prior(nd.codebook.order(), blind, config.prior_active))
        .collect();
    // contrib[n][s][c]: received contribution of hypothesis c on support slot s
    let contrib: Vec<Vec<Vec<Complex<T>>>> = nodes
        .iter()
        .map(|nd| {
            nd.codebook
                .support()
                .iter()
                .map(|&k| {
                    let mut v: Vec<Complex<T>> = nd
                        .codebook
                        .codewords()
                        .iter()
                        .map(|cw| nd.gains[k] * cw[k])
                        .collect();
                    if blind {
                        v.push(zero);
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut tone_members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k_tones];
    for (n, nd) in nodes.iter().enumerate() {
        for (s, &k) in nd.codebook.support().iter().enumerate() {
            tone_members[k].push((n, s));
        }
    }

    let mut to_tone: Vec<Vec<Vec<T>>> = nodes
        .iter()
        .enumerate()
        .map(|(n, nd)| {
            let mut p = priors[n].clone();
            normalize(&mut p, config.mode);
            vec![p; nd.codebook.support().len()]
        })
        .collect();
    let mut to_node = to_tone.clone();
    let mut tone_hypotheses = vec![0u64; k_tones];

    for iter in 0..config.max_iterations {
        for (k, members) in tone_members.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let sizes: Vec<usize> = members.iter().map(|&(n, _)| priors[n].len()).collect();
            let mut out: Vec<Vec<T>> = sizes.iter().map(|&h| vec![T::neg_infinity(); h]).collect();
            let mut idx = vec![0usize; members.len()];
            let mut count = 0u64;
            let mut incoming = vec![T::zero(); members.len()];
            loop {
                count += 1;
                let mut s = zero;
                for (i, &(n, slot)) in members.iter().enumerate() {
                    s += contrib[n][slot][idx[i]];
                    incoming[i] = to_tone[n][slot][idx[i]];
                }
                let base = -(y[k] - s).norm_sqr() * inv_n0;
                for i in 0..members.len() {
                    let mut v = base;
                    for (j, &m) in incoming.iter().enumerate() {
                        if j != i {
                            v += m;
                        }
                    }
                    let cell = &mut out[i][idx[i]];
                    *cell = match config.mode {
                        MpaMode::SumProduct => log_add_exp(*cell, v),
                        MpaMode::MaxLog => cell.max(v),
                    };
                }
                let mut pos = members.len();
                let mut done = true;
                while pos > 0 {
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < sizes[pos] {
                        done = false;
                        break;
                    }
                    idx[pos] = 0;
                }
                if done {
                    break;
                }
            }
            tone_hypotheses[k] = count;
            for (i, &(n, slot)) in members.iter().enumerate() {
                let mut msg = std::mem::take(&mut out[i]);
                normalize(&mut msg, config.mode);
                to_node[n][slot] = msg;
            }
        }
        if iter + 1 == config.max_iterations {
            break;
        }
        for n in 0..nodes.len() {
            let slots = to_node[n].len();
            for s in 0..slots {
                let mut msg = priors[n].clone();
                for (t, m) in to_node[n].iter().enumerate() {
                    if t != s {
                        msg.iter_mut().zip(m).for_each(|(a, &b)| *a += b);
                    }
                }
                normalize(&mut msg, config.mode);
                to_tone[n][s] = msg;
            }
        }
    }

    let layers = (0..nodes.len())
        .map(|n| {
            let mut lp = priors[n].clone();
            for m in &to_node[n] {
                lp.iter_mut().zip(m).for_each(|(a, &b)| *a += b);
            }
            let posterior = posterior_from_log(lp);
            let index = argmax(&posterior).unwrap();
            let order = nodes[n].codebook.order();
            let active = !blind || posterior[order].to_f64_lossy() < config.activity_threshold;
            LayerEstimate {
                active,
                index,
                posterior,
            }
        })
        .collect();
    Ok(LayerDecision {
        layers,
        tone_hypotheses,
        joint_hypotheses: 0,
    })
}

/// Largest joint search the exhaustive oracle accepts, `16^6`.
pub const ML_ORACLE_GUARD: u128 = 1 << 24;

/// Hypothesis model of the exhaustive oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleMode {
    /// All layers active, uniform prior: joint ML.
    Coherent,
    /// Zero codeword added with the given activity prior: joint MAP.
    Blind { prior_active: f64 },
}

/// Exhaustive joint detection over all layer-codeword combinations. The hard
/// decisions are the joint maximiser; posteriors are exact marginals.
pub fn ml_oracle_detect<T: Real>(
    y: &[Complex<T>],
    gains: &ChannelRealization<T>,
    codebooks: &[Codebook<T>],
    noise_variance: T,
    mode: OracleMode,
) -> Result<LayerDecision<T>> {
    if !(noise_variance > T::zero() && noise_variance.is_finite()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let (blind, prior_active) = match mode {
        OracleMode::Coherent => (false, 1.0),
        OracleMode::Blind { prior_active } => {
            if !(prior_active > 0.0 && prior_active <= 1.0) {
                return Err(Error::invalid("prior_active must lie in (0, 1]"));
            }
            (true, prior_active)
        }
    };
    let nodes = layer_nodes(y, gains, codebooks)?;
    let sizes: Vec<usize> = nodes
        .iter()
        .map(|n| n.codebook.order() + usize::from(blind))
        .collect();
    let total = sizes
        .iter()
        .try_fold(1u128, |acc, &s| acc.checked_mul(s as u128))
        .unwrap_or(u128::MAX);
    if total > ML_ORACLE_GUARD {
        return Err(Error::GuardExceeded {
            hypotheses: total,
            guard: ML_ORACLE_GUARD,
        });
    }
    let zero = Complex::new(T::zero(), T::zero());
    let inv_n0 = T::one() / noise_variance;
    let priors: Vec<Vec<T>> = nodes
        .iter()
        .map(|nd| log_prior(nd.codebook.order(), blind, prior_active))
        .collect();
    let received: Vec<Vec<Vec<Complex<T>>>> = nodes
        .iter()
        .map(|nd| {
            let mut v: Vec<Vec<Complex<T>>> = nd
                .codebook
                .codewords()
                .iter()
                .map(|cw| cw.iter().zip(nd.gains).map(|(x, h)| h * x).collect())
                .collect();
            if blind {
                v.push(vec![zero; y.len()]);
            }
            v
        })
        .collect();

    let j_layers = nodes.len();
    let mut marginals: Vec<Vec<T>> = sizes.iter().map(|&s| vec![T::neg_infinity(); s]).collect();
    let mut best = (T::neg_infinity(), vec![0usize; j_layers]);
    let mut idx = vec![0usize; j_layers];
    let mut s = vec![zero; y.len()];
    loop {
        s.iter_mut().for_each(|v| *v = zero);
        let mut metric = T::zero();
        for (j, &c) in idx.iter().enumerate() {
            for (acc, v) in s.iter_mut().zip(&received[j][c]) {
                *acc += *v;
            }
            metric += priors[j][c];
        }
        let dist: T = y.iter().zip(&s).map(|(a, b)| (a - b).norm_sqr()).sum();
        metric -= dist * inv_n0;
        if metric > best.0 {
            best = (metric, idx.clone());
        }
        for (j, &c) in idx.iter().enumerate() {
            marginals[j][c] = log_add_exp(marginals[j][c], metric);
        }
        let mut pos = j_layers;
        let mut done = true;
        while pos > 0 {
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sizes[pos] {
                done = false;
                break;
            }
            idx[pos] = 0;
        }
        if done {
            break;
        }
    }
    let layers = marginals
        .into_iter()
        .enumerate()
        .map(|(j, lp)| {
            let index = best.1[j];
            LayerEstimate {
                active: !blind || index != nodes[j].codebook.order(),
                index,
                posterior: posterior_from_log(lp),
            }
        })
        .collect();
    Ok(LayerDecision {
        layers,
        tone_hypotheses: Vec::new(),
        joint_hypotheses: total as u64,
    })
}

/// Detection-cost bookkeeping for sparse, low-projection codebooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    /// `M^{d_f}`
    pub per_tone_full: u128,
    /// `projection^{d_f}`
    pub per_tone_projected: u128,
    /// `M^J`
    pub joint_full: u128,
    /// `M^J / projection^{d_f}`, exact.
    pub reduction_factor: Ratio<u128>,
}

impl ComplexityReport {
    pub fn reduction_factor_f64(&self) -> f64 {
        self.reduction_factor.to_f64().unwrap_or(f64::INFINITY)
    }

    /// Reduction factor rounded half-up to an integer.
    pub fn reduction_factor_rounded(&self) -> u128 {
        let r = self.reduction_factor;
        (r.numer() * 2 + r.denom()) / (r.denom() * 2)
    }
}

pub fn complexity_report(
    order: u32,
    tone_degree: u32,
    num_tones: u32,
    num_layers: u32,
    projection: u32,
) -> Result<ComplexityReport> {
    if projection == 0 || projection > order {
        return Err(Error::invalid(format!(
            "projection must satisfy 1 <= projection <= M, got {projection} with M = {order}"
        )));
    }
    if num_tones == 0 || num_layers == 0 {
        return Err(Error::invalid("K and J must be positive"));
    }
    let pow = |b: u32, e: u32| {
        (b as u128)
            .checked_pow(e)
            .ok_or_else(|| Error::invalid(format!("{b}^{e} overflows 128 bits")))
    };
    let per_tone_full = pow(order, tone_degree)?;
    let per_tone_projected = pow(projection, tone_degree)?;
    let joint_full = pow(order, num_layers)?;
    Ok(ComplexityReport {
        per_tone_full,
        per_tone_projected,
        joint_full,
        reduction_factor: Ratio::new(joint_full, per_tone_projected),
    })
}

/// Hypotheses the MPA enumerates on one tone: `(M + blind)^{d_f}`.
pub fn tone_hypotheses(order: usize, tone_degree: usize, blind: bool) -> u64 {
    ((order + usize::from(blind)) as u64).pow(tone_degree as u32)
}
