//! Compressed-sensing multi-user detection (CS-MUD).
//!
//! `N` users own non-orthogonal unit-norm signatures of length `Ns`
//! (`Ns < N` allowed). In a frame of `L` symbols only a sparse subset is
//! active, so the received block
//!
//! ```text
//! Y = A diag(h) X + W        (Ns x L)
//! ```
//!
//! has row-sparse `X`. Activity and data are estimated jointly with group
//! orthogonal matching pursuit: the user whose signature captures the most
//! residual energy across all `L` symbols is added to the support, the
//! selected users are re-fit by least squares, and the loop repeats until
//! the configured stop rule fires.
//!
//! Two oracles bracket the detector: a known-activity LMMSE receiver and an
//! exhaustive MAP search over all `2^N` supports.

use num_complex::Complex;

use crate::channel::NoiseSpec;
use crate::common::{ErrorCount, RngStream};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, inner, CMatrix};
use crate::scalar::Real;

/// Column-normalised signature matrix, `Ns x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpreadingMatrix<T> {
    matrix: CMatrix<T>,
}

impl<T: Real> SpreadingMatrix<T> {
    /// Wraps `matrix` after checking every column has unit norm.
    pub fn new(matrix: CMatrix<T>) -> Result<Self> {
        for j in 0..matrix.cols() {
            let norm: T = matrix.column(j).iter().map(|v| v.norm_sqr()).sum();
            if (norm - T::one()).abs() > T::lit(1e-6) {
                return Err(Error::invalid(format!("column {j} has squared norm {norm}")));
            }
        }
        Ok(SpreadingMatrix { matrix })
    }

    /// `N` mutually orthogonal DFT signatures; needs `Ns >= N`.
    pub fn orthogonal(num_users: usize, spreading_len: usize) -> Result<Self> {
        if spreading_len < num_users || num_users == 0 {
            return Err(Error::invalid(format!(
                "orthogonal signatures need 1 <= N <= Ns, got N = {num_users}, Ns = {spreading_len}"
            )));
        }
        let scale = 1.0 / (spreading_len as f64).sqrt();
        let cols: Vec<Vec<Complex<T>>> = (0..num_users)
            .map(|j| {
                (0..spreading_len)
                    .map(|i| {
                        let phase = 2.0 * std::f64::consts::PI * (i * j) as f64 / spreading_len as f64;
                        let v = Complex::from_polar(scale, phase);
                        Complex::new(T::lit(v.re), T::lit(v.im))
                    })
                    .collect()
            })
            .collect();
        Ok(SpreadingMatrix {
            matrix: CMatrix::from_columns(spreading_len, &cols)?,
        })
    }

    pub fn num_users(&self) -> usize {
        self.matrix.cols()
    }

    pub fn spreading_len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn signature(&self, user: usize) -> Vec<Complex<T>> {
        self.matrix.column(user)
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    /// Largest `|a_i^H a_j|` over distinct columns.
    pub fn coherence(&self) -> T {
        let cols: Vec<_> = (0..self.num_users()).map(|j| self.signature(j)).collect();
        let mut mu = T::zero();
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                mu = mu.max(inner(&cols[a], &cols[b]).norm());
            }
        }
        mu
    }
}

/// I.i.d. QPSK signatures scaled to unit column norm.
pub fn gen_spreading<T: Real>(
    num_users: usize,
    spreading_len: usize,
    rng: &mut RngStream,
) -> Result<SpreadingMatrix<T>> {
    if num_users == 0 || spreading_len == 0 {
        return Err(Error::invalid("N and Ns must be positive"));
    }
    let a = T::lit(1.0 / (2.0 * spreading_len as f64).sqrt());
    let mut m = CMatrix::zeros(spreading_len, num_users);
    for j in 0..num_users {
        for i in 0..spreading_len {
            let re = if rng.bernoulli(0.5) { a } else { -a };
            let im = if rng.bernoulli(0.5) { a } else { -a };
            m[(i, j)] = Complex::new(re, im);
        }
    }
    Ok(SpreadingMatrix { matrix: m })
}

/// Which users transmit in a frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivityVector(pub Vec<bool>);

impl ActivityVector {
    pub fn inactive(num_users: usize) -> Self {
        ActivityVector(vec![false; num_users])
    }

    pub fn from_indices(num_users: usize, active: &[usize]) -> Self {
        let mut v = vec![false; num_users];
        for &u in active {
            v[u] = true;
        }
        ActivityVector(v)
    }

    /// Each user active independently with probability `p`.
    pub fn random(num_users: usize, p: f64, rng: &mut RngStream) -> Self {
        ActivityVector((0..num_users).map(|_| rng.bernoulli(p)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, user: usize) -> bool {
        self.0[user]
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&u| self.0[u]).collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Modulation {
    #[default]
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    /// Unit-energy symbols; Gray-mapped for QPSK.
    pub fn modulate<T: Real>(self, bits: &[bool]) -> Result<Vec<Complex<T>>> {
        let bps = self.bits_per_symbol();
        if bits.len() % bps != 0 {
            return Err(Error::invalid(format!(
                "{} bits do not fill whole {self:?} symbols",
                bits.len()
            )));
        }
        let sign = |b: bool| if b { -T::one() } else { T::one() };
        Ok(match self {
            Modulation::Bpsk => bits.iter().map(|&b| Complex::new(sign(b), T::zero())).collect(),
            Modulation::Qpsk => {
                let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                bits.chunks(2)
                    .map(|p| Complex::new(sign(p[0]) * s, sign(p[1]) * s))
                    .collect()
            }
        })
    }

    /// Nearest alphabet point.
    pub fn hard_decision<T: Real>(self, z: Complex<T>) -> Complex<T> {
        let pick = |v: T| if v < T::zero() { -T::one() } else { T::one() };
        match self {
            Modulation::Bpsk => Complex::new(pick(z.re), T::zero()),
            Modulation::Qpsk => {
                let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                Complex::new(pick(z.re) * s, pick(z.im) * s)
            }
        }
    }

    pub fn demodulate<T: Real>(self, symbols: &[Complex<T>]) -> Vec<bool> {
        symbols
            .iter()
            .flat_map(|z| match self {
                Modulation::Bpsk => vec![z.re < T::zero()],
                Modulation::Qpsk => vec![z.re < T::zero(), z.im < T::zero()],
            })
            .collect()
    }

    /// Symbol assumed in slot 0 of every frame when channel gains are not
    /// known to the detector.
    pub fn reference_symbol<T: Real>(self) -> Complex<T> {
        self.modulate::<T>(&vec![false; self.bits_per_symbol()]).unwrap()[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CsMudAlgorithm {
    #[default]
    GroupOmp,
}

/// When greedy support growth stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Exactly `k` users are selected.
    KnownSparsity(usize),
    /// Stop once the residual Frobenius norm is at most `eps`.
    ResidualThreshold(f64),
    /// Stop once no unselected user's decision statistic reaches the
    /// threshold, e.g. one from [`np_calibrate_threshold`].
    StatisticThreshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsMudConfig {
    pub algorithm: CsMudAlgorithm,
    pub stop_rule: StopRule,
    pub target_pfa: f64,
    pub modulation: Modulation,
    pub frame_len: usize,
}

impl CsMudConfig {
    pub fn new(stop_rule: StopRule, frame_len: usize) -> Self {
        CsMudConfig {
            algorithm: CsMudAlgorithm::GroupOmp,
            stop_rule,
            target_pfa: 0.01,
            modulation: Modulation::Bpsk,
            frame_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 {
            return Err(Error::invalid("frame length must be >= 1"));
        }
        if !(self.target_pfa > 0.0 && self.target_pfa < 1.0) {
            return Err(Error::invalid(format!(
                "target_pfa must lie in (0, 1), got {}",
                self.target_pfa
            )));
        }
        match self.stop_rule {
            StopRule::ResidualThreshold(eps) | StopRule::StatisticThreshold(eps)
                if !(eps >= 0.0 && eps.is_finite()) =>
            {
                Err(Error::invalid(format!("stop threshold must be finite and >= 0, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

/// Detector output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult<T> {
    pub activity: ActivityVector,
    /// Hard symbol decisions, present exactly for users flagged active.
    pub symbols: Vec<Option<Vec<Complex<T>>>>,
    /// Per-user decision statistic: mean residual correlation energy per
    /// symbol when the user was selected, or against the final residual.
    pub statistics: Vec<T>,
    /// Users in the order they were selected.
    pub selection_order: Vec<usize>,
    /// Squared residual norm before the first and after every selection.
    pub residual_norms: Vec<T>,
    /// The stop rule never fired and the support grew to its limit.
    pub stop_rule_exhausted: bool,
}

impl<T: Real> DetectionResult<T> {
    pub fn iterations(&self) -> usize {
        self.selection_order.len()
    }

    pub fn bits(&self, user: usize, modulation: Modulation) -> Option<Vec<bool>> {
        self.symbols[user].as_ref().map(|s| modulation.demodulate(s))
    }
}

/// Random payload for every active user (inactive users get no bits).
pub fn random_frame_bits(
    activity: &ActivityVector,
    config: &CsMudConfig,
    rng: &mut RngStream,
) -> Vec<Vec<bool>> {
    let n = config.frame_len * config.modulation.bits_per_symbol();
    activity
        .0
        .iter()
        .map(|&a| if a { rng.bits(n) } else { Vec::new() })
        .collect()
}

/// Forces the leading symbol of every payload to the reference symbol used
/// for phase recovery when gains are unknown.
pub fn pin_reference_symbol(bits: &mut [Vec<bool>], modulation: Modulation) {
    for b in bits.iter_mut().filter(|b| !b.is_empty()) {
        for v in b.iter_mut().take(modulation.bits_per_symbol()) {
            *v = false;
        }
    }
}

/// Builds `Y = A diag(h) X + W`; rows of `X` for inactive users are zero.
pub fn simulate_uplink_frame<T: Real>(
    activity: &ActivityVector,
    bits: &[Vec<bool>],
    spreading: &SpreadingMatrix<T>,
    gains: &[Complex<T>],
    noise: &NoiseSpec,
    config: &CsMudConfig,
    rng: &mut RngStream,
) -> Result<CMatrix<T>> {
    let n = spreading.num_users();
    if activity.len() != n || bits.len() != n || gains.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} users but activity {}, bits {}, gains {}",
            activity.len(),
            bits.len(),
            gains.len()
        )));
    }
    let l = config.frame_len;
    let ns = spreading.spreading_len();
    let mut y = CMatrix::zeros(ns, l);
    for u in activity.indices() {
        let expected = l * config.modulation.bits_per_symbol();
        if bits[u].len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: bits[u].len(),
            });
        }
        let x = config.modulation.modulate::<T>(&bits[u])?;
        let sig = spreading.signature(u);
        for i in 0..ns {
            let a = sig[i] * gains[u];
            for (t, &xt) in x.iter().enumerate() {
                y[(i, t)] += a * xt;
            }
        }
    }
    if !noise.is_noiseless() {
        for i in 0..ns {
            for t in 0..l {
                y[(i, t)] += rng.complex_gaussian::<T>(noise.n0());
            }
        }
    }
    Ok(y)
}

fn composite_columns<T: Real>(
    spreading: &SpreadingMatrix<T>,
    gains: Option<&[Complex<T>]>,
) -> Vec<Vec<Complex<T>>> {
    (0..spreading.num_users())
        .map(|j| {
            let sig = spreading.signature(j);
            match gains {
                Some(h) => sig.iter().map(|a| a * h[j]).collect(),
                None => sig,
            }
        })
        .collect()
}

/// Mean correlation energy per symbol, `(1/L) sum_l |b^H r_l|^2 / |b|^2`.
fn correlation_energy<T: Real>(b: &[Complex<T>], norm_sqr: T, r: &CMatrix<T>) -> T {
    if norm_sqr <= T::zero() {
        return T::zero();
    }
    let mut e = T::zero();
    for t in 0..r.cols() {
        let mut c = Complex::new(T::zero(), T::zero());
        for (i, bi) in b.iter().enumerate() {
            c += bi.conj() * r[(i, t)];
        }
        e += c.norm_sqr();
    }
    e / (norm_sqr * T::from_usize_lossy(r.cols()))
}

/// Regularised least squares `(B^H B + reg I)^{-1} B^H Y` for the columns in
/// `support`.
fn fit_support<T: Real>(
    cols: &[Vec<Complex<T>>],
    support: &[usize],
    y: &CMatrix<T>,
    reg: T,
) -> Result<CMatrix<T>> {
    let b = CMatrix::from_columns(y.rows(), &support.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>())?;
    let bh = b.adjoint();
    let mut gram = bh.matmul(&b)?;
    gram.add_diagonal(reg);
    gram.solve(&bh.matmul(y)?)
}

fn residual<T: Real>(
    cols: &[Vec<Complex<T>>],
    support: &[usize],
    y: &CMatrix<T>,
    x: &CMatrix<T>,
) -> Result<CMatrix<T>> {
    let b = CMatrix::from_columns(y.rows(), &support.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>())?;
    y.sub(&b.matmul(x)?)
}

fn check_frame<T: Real>(y: &CMatrix<T>, spreading: &SpreadingMatrix<T>, gains: Option<&[Complex<T>]>) -> Result<()> {
    if y.rows() != spreading.spreading_len() {
        return Err(Error::DimensionMismatch(format!(
            "received block has {} rows, signatures have length {}",
            y.rows(),
            spreading.spreading_len()
        )));
    }
    if let Some(h) = gains {
        if h.len() != spreading.num_users() {
            return Err(Error::LengthMismatch {
                expected: spreading.num_users(),
                got: h.len(),
            });
        }
    }
    Ok(())
}

/// Group OMP joint activity and data detection.
///
/// With `gains = Some(h)` the detector uses composite signatures `a_j h_j`.
/// With `None` the gains are absorbed into the symbol estimates and each
/// selected user's phase is corrected so that its first symbol matches
/// [`Modulation::reference_symbol`].
pub fn group_omp_detect<T: Real>(
    y: &CMatrix<T>,
    spreading: &SpreadingMatrix<T>,
    gains: Option<&[Complex<T>]>,
    noise_variance: T,
    config: &CsMudConfig,
) -> Result<DetectionResult<T>> {
    config.validate()?;
    check_frame(y, spreading, gains)?;
    if y.cols() != config.frame_len {
        return Err(Error::LengthMismatch {
            expected: config.frame_len,
            got: y.cols(),
        });
    }
    if noise_variance < T::zero() {
        return Err(Error::invalid("noise variance must be >= 0"));
    }
    let n = spreading.num_users();
    let cols = composite_columns(spreading, gains);
    let norms: Vec<T> = cols.iter().map(|c| c.iter().map(|v| v.norm_sqr()).sum()).collect();
    let max_support = match config.stop_rule {
        StopRule::KnownSparsity(k) => k.min(n),
        _ => n,
    };

    let mut support: Vec<usize> = Vec::new();
    let mut selected = vec![false; n];
    let mut statistics = vec![T::zero(); n];
    let mut r = y.clone();
    let mut residual_norms = vec![r.frobenius_sqr()];
    let mut estimates = CMatrix::zeros(0, y.cols());
    let mut exhausted = false;

    loop {
        let stats: Vec<T> = (0..n)
            .map(|j| {
                if selected[j] {
                    T::neg_infinity()
                } else {
                    correlation_energy(&cols[j], norms[j], &r)
                }
            })
            .collect();
        let stop = match config.stop_rule {
            StopRule::KnownSparsity(k) => support.len() >= k,
            StopRule::ResidualThreshold(eps) => {
                r.frobenius_sqr().to_f64_lossy().sqrt() <= eps
            }
            StopRule::StatisticThreshold(tau) => {
                stats.iter().all(|s| s.to_f64_lossy() < tau)
            }
        };
        if stop {
            break;
        }
        if support.len() >= max_support {
            exhausted = !matches!(config.stop_rule, StopRule::KnownSparsity(_));
            break;
        }
        let mut best = None;
        for j in 0..n {
            if !selected[j] && norms[j] > T::zero() && best.is_none_or(|b: usize| stats[j] > stats[b]) {
                best = Some(j);
            }
        }
        let Some(j) = best else {
            exhausted = true;
            break;
        };
        support.push(j);
        let fit = match fit_support(&cols, &support, y, T::zero()) {
            Ok(x) => x,
            Err(_) => {
                // rank deficient: the support cannot grow any further
                support.pop();
                exhausted = true;
                break;
            }
        };
        selected[j] = true;
        statistics[j] = stats[j];
        r = residual(&cols, &support, y, &fit)?;
        residual_norms.push(r.frobenius_sqr());
        estimates = fit;
    }

    for j in 0..n {
        if !selected[j] {
            statistics[j] = correlation_energy(&cols[j], norms[j], &r);
        }
    }
    let mut symbols = vec![None; n];
    for (row, &j) in support.iter().enumerate() {
        let mut soft: Vec<Complex<T>> = estimates.row(row).to_vec();
        if gains.is_none() {
            let reference = config.modulation.reference_symbol::<T>();
            let rot = soft[0] * reference.conj();
            if rot.norm() > T::zero() {
                let unit = rot.conj() / rot.norm();
                soft.iter_mut().for_each(|s| *s *= unit);
            }
        }
        symbols[j] = Some(soft.into_iter().map(|s| config.modulation.hard_decision(s)).collect());
    }
    let mut activity = ActivityVector::inactive(n);
    for &j in &support {
        activity.0[j] = true;
    }
    let _ = noise_variance;
    Ok(DetectionResult {
        activity,
        symbols,
        statistics,
        selection_order: support,
        residual_norms,
        stop_rule_exhausted: exhausted,
    })
}

/// Per-user decision statistics of a noise-only frame.
fn noise_only_statistics<T: Real>(
    spreading: &SpreadingMatrix<T>,
    noise_variance: f64,
    frame_len: usize,
    rng: &mut RngStream,
) -> Vec<f64> {
    let ns = spreading.spreading_len();
    let mut w = CMatrix::<T>::zeros(ns, frame_len);
    for i in 0..ns {
        for t in 0..frame_len {
            w[(i, t)] = rng.complex_gaussian(noise_variance);
        }
    }
    (0..spreading.num_users())
        .map(|j| correlation_energy(&spreading.signature(j), T::one(), &w).to_f64_lossy())
        .collect()
}

/// Neyman-Pearson style activity threshold: the empirical `1 - target_pfa`
/// quantile of the per-user decision statistic under noise-only input,
/// estimated from `trials` frames.
pub fn np_calibrate_threshold<T: Real>(
    spreading: &SpreadingMatrix<T>,
    noise_variance: f64,
    target_pfa: f64,
    frame_len: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(Error::invalid(format!("target_pfa must lie in (0, 1), got {target_pfa}")));
    }
    let needed = (100.0 / target_pfa).ceil() as usize;
    if trials < needed {
        return Err(Error::invalid(format!(
            "{trials} trials are too few for target_pfa = {target_pfa}; need at least {needed}"
        )));
    }
    if !(noise_variance > 0.0) || frame_len == 0 {
        return Err(Error::invalid("noise variance and frame length must be positive"));
    }
    let mut stats: Vec<f64> = (0..trials)
        .flat_map(|_| noise_only_statistics(spreading, noise_variance, frame_len, rng))
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = (((1.0 - target_pfa) * stats.len() as f64).floor() as usize).min(stats.len() - 1);
    Ok(stats[idx])
}

/// Fraction of per-user noise-only statistics exceeding `threshold`.
pub fn measure_false_alarms<T: Real>(
    spreading: &SpreadingMatrix<T>,
    noise_variance: f64,
    threshold: f64,
    frame_len: usize,
    trials: usize,
    rng: &mut RngStream,
) -> ErrorCount {
    let mut count = ErrorCount::default();
    for _ in 0..trials {
        for s in noise_only_statistics(spreading, noise_variance, frame_len, rng) {
            count.record(s > threshold);
        }
    }
    count
}

/// LMMSE detection restricted to the true active users, then hard
/// decisions. With `noise_variance = 0` this is plain least squares.
pub fn known_activity_oracle<T: Real>(
    y: &CMatrix<T>,
    spreading: &SpreadingMatrix<T>,
    true_activity: &ActivityVector,
    gains: &[Complex<T>],
    noise_variance: T,
    modulation: Modulation,
) -> Result<DetectionResult<T>> {
    check_frame(y, spreading, Some(gains))?;
    let n = spreading.num_users();
    if true_activity.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: true_activity.len(),
        });
    }
    let support = true_activity.indices();
    let mut symbols = vec![None; n];
    if !support.is_empty() {
        let cols = composite_columns(spreading, Some(gains));
        let x = fit_support(&cols, &support, y, noise_variance)?;
        for (row, &j) in support.iter().enumerate() {
            symbols[j] = Some(x.row(row).iter().map(|&s| modulation.hard_decision(s)).collect());
        }
    }
    Ok(DetectionResult {
        activity: true_activity.clone(),
        symbols,
        statistics: vec![T::zero(); n],
        selection_order: support,
        residual_norms: Vec::new(),
        stop_rule_exhausted: false,
    })
}

/// Largest user count the exhaustive MAP oracle accepts (`2^20` supports).
pub const MAP_ORACLE_MAX_USERS: usize = 20;

/// Support maximising the posterior over all `2^N` activity patterns.
///
/// Symbols are marginalised under a unit-variance Gaussian prior, so the
/// likelihood of support `S` with composite columns `B` is that of
/// `CN(0, B B^H + n0 I)` per symbol slot. Its data term is the regularised
/// least-squares fit energy `y^H B (B^H B + n0 I)^{-1} B^H y / n0`.
pub fn exhaustive_map_oracle<T: Real>(
    y: &CMatrix<T>,
    spreading: &SpreadingMatrix<T>,
    p_active: f64,
    gains: &[Complex<T>],
    noise_variance: T,
) -> Result<ActivityVector> {
    check_frame(y, spreading, Some(gains))?;
    let n = spreading.num_users();
    if n > MAP_ORACLE_MAX_USERS {
        return Err(Error::GuardExceeded {
            hypotheses: 1u128 << n,
            guard: 1u128 << MAP_ORACLE_MAX_USERS,
        });
    }
    if !(p_active > 0.0 && p_active < 1.0) {
        return Err(Error::invalid(format!("p_active must lie in (0, 1), got {p_active}")));
    }
    if !(noise_variance > T::zero()) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let n0 = noise_variance.to_f64_lossy();
    let l = y.cols();
    let cols = composite_columns(spreading, Some(gains));
    // z[j][t] = b_j^H y_t
    let z: Vec<Vec<Complex<T>>> = cols
        .iter()
        .map(|b| (0..l).map(|t| inner(b, &y.column(t))).collect())
        .collect();
    let gram: Vec<Vec<Complex<T>>> = cols
        .iter()
        .map(|a| cols.iter().map(|b| inner(a, b)).collect())
        .collect();
    let (lp, lq) = (p_active.ln(), (1.0 - p_active).ln());

    let mut best = (f64::NEG_INFINITY, 0usize);
    for mask in 0usize..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&j| mask >> j & 1 == 1).collect();
        let k = support.len();
        let mut score = k as f64 * lp + (n - k) as f64 * lq;
        if k > 0 {
            let mut g = CMatrix::zeros(k, k);
            for (a, &i) in support.iter().enumerate() {
                for (b, &j) in support.iter().enumerate() {
                    g[(a, b)] = gram[i][j];
                }
            }
            g.add_diagonal(noise_variance);
            let Ok(chol) = g.cholesky() else { continue };
            let logdet: f64 = (0..k).map(|i| 2.0 * chol[(i, i)].re.to_f64_lossy().ln()).sum::<f64>()
                - k as f64 * n0.ln();
            let mut quad = 0.0;
            for t in 0..l {
                let rhs: Vec<Complex<T>> = support.iter().map(|&j| z[j][t]).collect();
                let sol = cholesky_solve(&chol, &rhs);
                quad += inner(&rhs, &sol).re.to_f64_lossy();
            }
            score += quad / n0 - l as f64 * logdet;
        }
        if score > best.0 {
            best = (score, mask);
        }
    }
    Ok(ActivityVector((0..n).map(|j| best.1 >> j & 1 == 1).collect()))
}

/// Symbol errors over the truly active users. A missed user counts all of
/// its `L` symbols as errors; false alarms carry no symbols to score.
pub fn count_symbol_errors<T: Real>(
    true_activity: &ActivityVector,
    true_symbols: &[Vec<Complex<T>>],
    result: &DetectionResult<T>,
) -> ErrorCount {
    let mut count = ErrorCount::default();
    for u in true_activity.indices() {
        let sent = &true_symbols[u];
        match &result.symbols[u] {
            Some(est) => {
                for (a, b) in sent.iter().zip(est) {
                    count.record((a - b).norm() > T::lit(1e-6));
                }
            }
            None => {
                count.errors += sent.len() as u64;
                count.total += sent.len() as u64;
            }
        }
    }
    count
}

/// Missed detections over active users and false alarms over inactive ones.
pub fn activity_errors(truth: &ActivityVector, estimate: &ActivityVector) -> (ErrorCount, ErrorCount) {
    let mut missed = ErrorCount::default();
    let mut false_alarm = ErrorCount::default();
    for (&t, &e) in truth.0.iter().zip(&estimate.0) {
        if t {
            missed.record(!e);
        } else {
            false_alarm.record(e);
        }
    }
    (missed, false_alarm)
}
