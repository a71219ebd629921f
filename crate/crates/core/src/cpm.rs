//! Binary full-response CPM (1REC), envelope metrics, I-FDMA mapping and
//! MLSE detection.
//!
//! With modulation index `h = k/p` the phase moves by `pi h a_n` across
//! symbol `n` (`a_n = +-1`) and ramps linearly inside it. Phases are kept as
//! exact integer multiples of `pi / (p Q)`, so no rounding accumulates over
//! long bursts.

use std::io::{Read, Write};

use num_complex::Complex;
use num_rational::Ratio;
use rustfft::FftPlanner;

use crate::channel::NoiseSpec;
use crate::common::RngStream;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How data bits map to the antipodal CPM symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precoding {
    /// `a_n = +1` for bit 1, `-1` for bit 0.
    None,
    /// `a_n = d_n d_{n-1}` with `d_{-1} = +1`; a minimum-distance trellis
    /// error then costs one bit instead of two.
    #[default]
    Differential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CpmSpec {
    modulation_index: Ratio<u32>,
    samples_per_symbol: usize,
    pub symbols_per_burst: usize,
    pub precoding: Precoding,
}

impl CpmSpec {
    /// MSK: `h = 1/2`.
    pub fn msk(samples_per_symbol: usize, symbols_per_burst: usize) -> Result<Self> {
        CpmSpec::new(Ratio::new(1, 2), samples_per_symbol, symbols_per_burst)
    }

    pub fn new(modulation_index: Ratio<u32>, samples_per_symbol: usize, symbols_per_burst: usize) -> Result<Self> {
        if *modulation_index.numer() == 0 {
            return Err(Error::invalid("modulation index must be positive"));
        }
        if samples_per_symbol < 4 {
            return Err(Error::invalid(format!(
                "need at least 4 samples per symbol, got {samples_per_symbol}"
            )));
        }
        Ok(CpmSpec {
            modulation_index,
            samples_per_symbol,
            symbols_per_burst,
            precoding: Precoding::default(),
        })
    }

    /// Always in lowest terms.
    pub fn modulation_index(&self) -> Ratio<u32> {
        self.modulation_index
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    /// Distinct symbol-boundary phases, `2p`.
    pub fn num_phase_states(&self) -> usize {
        2 * *self.modulation_index.denom() as usize
    }

    fn symbols(&self, bits: &[bool]) -> Vec<i64> {
        let raw = bits.iter().map(|&b| if b { 1 } else { -1 });
        match self.precoding {
            Precoding::None => raw.collect(),
            Precoding::Differential => {
                let mut prev = 1;
                raw.map(|d| {
                    let a = d * prev;
                    prev = d;
                    a
                })
                .collect()
            }
        }
    }

    fn unprecode(&self, symbols: &[i64]) -> Vec<bool> {
        match self.precoding {
            Precoding::None => symbols.iter().map(|&a| a > 0).collect(),
            Precoding::Differential => {
                let mut prev = 1;
                symbols
                    .iter()
                    .map(|&a| {
                        prev *= a;
                        prev > 0
                    })
                    .collect()
            }
        }
    }

    /// Data bits that continue `prefix` with the CPM symbols `tail`.
    fn data_for_symbols(&self, prefix: &[i64], tail: &[i64]) -> Vec<bool> {
        match self.precoding {
            Precoding::None => tail.iter().map(|&a| a > 0).collect(),
            Precoding::Differential => {
                let mut prev = prefix.iter().product::<i64>();
                tail.iter()
                    .map(|&a| {
                        prev *= a;
                        prev > 0
                    })
                    .collect()
            }
        }
    }

    /// Phase of sample `i` of a symbol `a` starting in `state`, in units of
    /// `pi / (p Q)`, reduced modulo `2 p Q`.
    fn sample_phase(&self, state: usize, a: i64, i: usize) -> i64 {
        let q = self.samples_per_symbol as i64;
        let k = *self.modulation_index.numer() as i64;
        let period = self.num_phase_states() as i64 * q;
        (state as i64 * q + a * k * i as i64).rem_euclid(period)
    }

    fn next_state(&self, state: usize, a: i64) -> usize {
        let k = *self.modulation_index.numer() as i64;
        (state as i64 + a * k).rem_euclid(self.num_phase_states() as i64) as usize
    }

    fn phasor<T: Real>(&self, units: i64) -> Complex<T> {
        let period = (self.num_phase_states() * self.samples_per_symbol) as f64;
        let angle = 2.0 * std::f64::consts::PI * units as f64 / period;
        Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
    }
}

/// Shortest tail of data bits that brings the phase of `bits` back to 0
/// (mod `2 pi`), so the burst is cyclically continuous.
pub fn phase_closing_tail(bits: &[bool], spec: &CpmSpec) -> Result<Vec<bool>> {
    let symbols = spec.symbols(bits);
    (0..=2 * spec.num_phase_states())
        .find_map(|len| closing_tail_of_len(&symbols, spec, len))
        .ok_or_else(|| Error::invalid("no tail closes the phase for this modulation index"))
}

/// `bits` with its shortest possible suffix overwritten so that the burst
/// ends at phase 0. The length is unchanged.
pub fn close_burst_phase(bits: &[bool], spec: &CpmSpec) -> Result<Vec<bool>> {
    for len in 0..=bits.len() {
        let head = &bits[..bits.len() - len];
        if let Some(tail) = closing_tail_of_len(&spec.symbols(head), spec, len) {
            let mut out = head.to_vec();
            out.extend(tail);
            return Ok(out);
        }
    }
    Err(Error::invalid(format!("no {}-symbol burst closes the phase", bits.len())))
}

fn closing_tail_of_len(symbols: &[i64], spec: &CpmSpec, len: usize) -> Option<Vec<bool>> {
    let states = spec.num_phase_states() as i64;
    let k = *spec.modulation_index.numer() as i64;
    let end = symbols.iter().fold(0i64, |s, &a| (s + a * k).rem_euclid(states));
    (0..=len).find_map(|plus| {
        let sum = 2 * plus as i64 - len as i64;
        ((end + sum * k).rem_euclid(states) == 0).then(|| {
            let mut tail: Vec<i64> = vec![1; plus];
            tail.extend(std::iter::repeat_n(-1, len - plus));
            spec.data_for_symbols(symbols, &tail)
        })
    })
}

/// Sampled complex baseband waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformBuffer<T> {
    samples: Vec<Complex<T>>,
    sample_rate_relative: usize,
}

impl<T: Real> WaveformBuffer<T> {
    pub fn new(samples: Vec<Complex<T>>, sample_rate_relative: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must not be empty"));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::invalid("waveform samples must be finite"));
        }
        if sample_rate_relative == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(WaveformBuffer {
            samples,
            sample_rate_relative,
        })
    }

    pub fn samples(&self) -> &[Complex<T>] {
        &self.samples
    }

    pub fn sample_rate_relative(&self) -> usize {
        self.sample_rate_relative
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One `re im` pair per line.
    pub fn to_text(&self) -> String {
        self.samples.iter().map(|s| format!("{} {}\n", s.re.to_f64_lossy(), s.im.to_f64_lossy())).collect()
    }

    pub fn from_text(text: &str, sample_rate_relative: usize) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if v.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected two numbers", i + 1)));
            }
            samples.push(Complex::new(T::lit(v[0]), T::lit(v[1])));
        }
        WaveformBuffer::new(samples, sample_rate_relative)
    }

    /// Little-endian `f64` pairs.
    pub fn write_raw<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.samples {
            out.write_all(&s.re.to_f64_lossy().to_le_bytes())?;
            out.write_all(&s.im.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut input: R, sample_rate_relative: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() % 16 != 0 {
            return Err(Error::Parse(format!("{} bytes is not a whole number of samples", bytes.len())));
        }
        let samples = bytes
            .chunks(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex::new(T::lit(re), T::lit(im))
            })
            .collect();
        WaveformBuffer::new(samples, sample_rate_relative)
    }
}

/// Unit-modulus CPM waveform, `Q` samples per bit, starting at phase 0.
pub fn cpm_modulate<T: Real>(bits: &[bool], spec: &CpmSpec) -> Result<WaveformBuffer<T>> {
    if bits.is_empty() {
        return Err(Error::invalid("no bits to modulate"));
    }
    let q = spec.samples_per_symbol;
    let mut samples = Vec::with_capacity(bits.len() * q);
    let mut state = 0;
    for a in spec.symbols(bits) {
        for i in 0..q {
            samples.push(spec.phasor(spec.sample_phase(state, a, i)));
        }
        state = spec.next_state(state, a);
    }
    WaveformBuffer::new(samples, q)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeReport {
    pub papr_db: f64,
    pub rcm_db: f64,
    pub mean_power: f64,
    pub peak_power: f64,
}

/// PAPR `10 log10(max|s|^2 / mean|s|^2)` and raw cubic metric
/// `20 log10(rms(|s|^3) / rms(|s|)^3)`.
pub fn envelope_metrics<T: Real>(waveform: &WaveformBuffer<T>) -> Result<EnvelopeReport> {
    envelope_of(waveform.samples())
}

fn envelope_of<T: Real>(samples: &[Complex<T>]) -> Result<EnvelopeReport> {
    let n = samples.len() as f64;
    let p: Vec<f64> = samples.iter().map(|s| s.norm_sqr().to_f64_lossy()).collect();
    let mean_power = p.iter().sum::<f64>() / n;
    let peak_power = p.iter().copied().fold(0.0, f64::max);
    if !(mean_power > 0.0) {
        return Err(Error::invalid("waveform has no energy"));
    }
    let mean_cube_sq = p.iter().map(|&v| v * v * v).sum::<f64>() / n;
    let rcm = mean_cube_sq.sqrt() / mean_power.powf(1.5);
    Ok(EnvelopeReport {
        papr_db: 10.0 * (peak_power / mean_power).log10(),
        rcm_db: 20.0 * rcm.log10(),
        mean_power,
        peak_power,
    })
}

/// A user's I-FDMA allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct IfdmaBurst<T> {
    /// All `total_subcarriers` bins; zero outside the user's interleave.
    pub spectrum: Vec<Complex<T>>,
    /// Time-domain burst at the critical rate.
    pub burst: WaveformBuffer<T>,
}

impl<T: Real> IfdmaBurst<T> {
    pub fn occupied_subcarriers(&self) -> Vec<usize> {
        (0..self.spectrum.len())
            .filter(|&k| self.spectrum[k].norm() > T::lit(1e-12))
            .collect()
    }

    /// Burst interpolated by `factor` through a zero-padded inverse
    /// transform, for envelope measurements between critical samples.
    pub fn oversampled(&self, factor: usize) -> Result<WaveformBuffer<T>> {
        if factor == 0 {
            return Err(Error::invalid("oversampling factor must be >= 1"));
        }
        let n = self.spectrum.len();
        let len = n * factor;
        let mut bins = vec![Complex::new(T::zero(), T::zero()); len];
        // keep each bin at its signed frequency so the interpolation is band-limited
        for (k, &v) in self.spectrum.iter().enumerate() {
            let dst = if k <= n / 2 { k } else { len - (n - k) };
            bins[dst] = v;
        }
        FftPlanner::new().plan_fft_inverse(len).process(&mut bins);
        let scale = T::one() / T::from_usize_lossy(n);
        WaveformBuffer::new(bins.into_iter().map(|v| v * scale).collect(), factor)
    }
}

/// Treats the `M = N / U` waveform samples as data symbols: `M`-point DFT,
/// mapping onto subcarriers `user_index + U m`, `N`-point inverse DFT.
pub fn ifdma_precode<T: Real>(
    waveform: &WaveformBuffer<T>,
    total_subcarriers: usize,
    num_users: usize,
    user_index: usize,
) -> Result<IfdmaBurst<T>> {
    if num_users == 0 || total_subcarriers % num_users != 0 {
        return Err(Error::invalid(format!(
            "{total_subcarriers} subcarriers cannot be split among {num_users} users"
        )));
    }
    if user_index >= num_users {
        return Err(Error::invalid(format!("user index {user_index} out of {num_users}")));
    }
    let m = total_subcarriers / num_users;
    if waveform.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: waveform.len(),
        });
    }
    let mut planner = FftPlanner::new();
    let mut freq = waveform.samples().to_vec();
    planner.plan_fft_forward(m).process(&mut freq);
    let mut spectrum = vec![Complex::new(T::zero(), T::zero()); total_subcarriers];
    for (j, v) in freq.into_iter().enumerate() {
        spectrum[user_index + num_users * j] = v;
    }
    let mut time = spectrum.clone();
    planner.plan_fft_inverse(total_subcarriers).process(&mut time);
    let scale = T::one() / T::from_usize_lossy(m);
    let burst = WaveformBuffer::new(time.into_iter().map(|v| v * scale).collect(), 1)?;
    Ok(IfdmaBurst { spectrum, burst })
}

/// Per-sample noise giving the requested `Eb/N0` for a unit-modulus CPM
/// waveform with `Q` samples per bit: `n0 = Q / (Eb/N0)`.
pub fn noise_for_ebn0(spec: &CpmSpec, ebn0_db: f64) -> Result<NoiseSpec> {
    NoiseSpec::from_n0(spec.samples_per_symbol as f64 * 10f64.powf(-ebn0_db / 10.0))
}

/// Viterbi detection over the `2p` symbol-boundary phase states with a
/// correlation branch metric. The start phase is 0; the best final state is
/// traced back.
pub fn mlse_detect<T: Real>(received: &WaveformBuffer<T>, spec: &CpmSpec, noise_variance: f64) -> Result<Vec<bool>> {
    if !(noise_variance >= 0.0) {
        return Err(Error::invalid("noise variance must be >= 0"));
    }
    let q = spec.samples_per_symbol;
    if received.len() % q != 0 {
        return Err(Error::invalid(format!(
            "{} samples is not a whole number of {q}-sample symbols",
            received.len()
        )));
    }
    let n = received.len() / q;
    let states = spec.num_phase_states();
    // reference[s][b][i]: conjugated sample i of symbol b (0 -> -1, 1 -> +1) from state s
    let reference: Vec<[Vec<Complex<T>>; 2]> = (0..states)
        .map(|s| {
            [-1i64, 1].map(|a| (0..q).map(|i| spec.phasor::<T>(spec.sample_phase(s, a, i)).conj()).collect())
        })
        .collect();
    let mut metric = vec![f64::NEG_INFINITY; states];
    metric[0] = 0.0;
    let mut from = vec![vec![(0usize, 0u8); states]; n];
    let r = received.samples();
    for t in 0..n {
        let block = &r[t * q..(t + 1) * q];
        let mut next = vec![f64::NEG_INFINITY; states];
        for s in 0..states {
            if metric[s] == f64::NEG_INFINITY {
                continue;
            }
            for (b, a) in [(0u8, -1i64), (1, 1)] {
                let corr: Complex<T> = block.iter().zip(&reference[s][b as usize]).map(|(x, c)| x * c).sum();
                let m = metric[s] + corr.re.to_f64_lossy();
                let d = spec.next_state(s, a);
                if m > next[d] {
                    next[d] = m;
                    from[t][d] = (s, b);
                }
            }
        }
        metric = next;
    }
    let mut state = (0..states)
        .max_by(|&a, &b| metric[a].partial_cmp(&metric[b]).unwrap().then(b.cmp(&a)))
        .unwrap();
    let mut symbols = vec![0i64; n];
    for t in (0..n).rev() {
        let (prev, b) = from[t][state];
        symbols[t] = if b == 1 { 1 } else { -1 };
        state = prev;
    }
    Ok(spec.unprecode(&symbols))
}

/// Random-QPSK multicarrier burst of `symbols_per_burst` consecutive
/// multicarrier symbols on `num_subcarriers` adjacent bins, each
/// interpolated by `oversampling`.
pub fn multicarrier_burst<T: Real>(
    num_subcarriers: usize,
    symbols_per_burst: usize,
    oversampling: usize,
    rng: &mut RngStream,
) -> Result<WaveformBuffer<T>> {
    if symbols_per_burst == 0 {
        return Err(Error::invalid("a burst needs at least one symbol"));
    }
    let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let sign = |b: bool| if b { s } else { -s };
    let mut samples = Vec::with_capacity(num_subcarriers * oversampling * symbols_per_burst);
    for _ in 0..symbols_per_burst {
        let symbols: Vec<Complex<T>> = (0..num_subcarriers)
            .map(|_| Complex::new(sign(rng.bernoulli(0.5)), sign(rng.bernoulli(0.5))))
            .collect();
        samples.extend_from_slice(multicarrier_from_symbols(&symbols, oversampling)?.samples());
    }
    WaveformBuffer::new(samples, oversampling)
}

/// Multicarrier burst carrying the given subcarrier symbols.
pub fn multicarrier_from_symbols<T: Real>(symbols: &[Complex<T>], oversampling: usize) -> Result<WaveformBuffer<T>> {
    if symbols.len() < 2 {
        return Err(Error::invalid("need at least 2 subcarriers"));
    }
    if oversampling == 0 {
        return Err(Error::invalid("oversampling factor must be >= 1"));
    }
    let len = symbols.len() * oversampling;
    let mut bins = vec![Complex::new(T::zero(), T::zero()); len];
    bins[..symbols.len()].copy_from_slice(symbols);
    FftPlanner::new().plan_fft_inverse(len).process(&mut bins);
    WaveformBuffer::new(bins, oversampling)
}

/// Distribution summary of multicarrier envelope metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MulticarrierStats {
    pub bursts: usize,
    pub papr_mean_db: f64,
    pub papr_p99_db: f64,
    pub rcm_mean_db: f64,
    pub rcm_p99_db: f64,
}

/// Oversampling used for multicarrier envelope measurements.
pub const MULTICARRIER_OVERSAMPLING: usize = 4;

/// Multicarrier symbols per reference burst.
pub const MULTICARRIER_SYMBOLS_PER_BURST: usize = 4;

pub fn multicarrier_reference(num_subcarriers: usize, bursts: usize, rng: &mut RngStream) -> Result<MulticarrierStats> {
    if bursts == 0 {
        return Err(Error::invalid("need at least one burst"));
    }
    let mut papr = Vec::with_capacity(bursts);
    let mut rcm = Vec::with_capacity(bursts);
    for _ in 0..bursts {
        let w = multicarrier_burst::<f64>(num_subcarriers, MULTICARRIER_SYMBOLS_PER_BURST, MULTICARRIER_OVERSAMPLING, rng)?;
        let e = envelope_metrics(&w)?;
        papr.push(e.papr_db);
        rcm.push(e.rcm_db);
    }
    Ok(MulticarrierStats {
        bursts,
        papr_mean_db: mean(&papr),
        papr_p99_db: percentile(&mut papr, 0.99),
        rcm_mean_db: mean(&rcm),
        rcm_p99_db: percentile(&mut rcm, 0.99),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Nearest-rank percentile.
fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
