//! Value types, seeded randomness and error accounting shared by every
//! simulation module.
//!
//! Randomness comes from [`RngStream`], a ChaCha8 keystream addressed by a
//! `(seed, stream_id)` pair. ChaCha is counter based, so independent trials
//! can each own a stream without any shared state, and the draw sequence of a
//! trial does not depend on which worker ran it or in what order.

use std::ops::{Add, AddAssign};

use num_complex::Complex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A complex baseband sample.
pub type ComplexSample<T> = Complex<T>;

/// Deterministic, splittable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// Opens the stream identified by `(seed, stream_id)`.
pub fn split_rng(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    RngStream {
        seed,
        stream_id,
        rng,
    }
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives a child stream from this stream's seed. Child ids live in the
    /// upper half of the id space so they never alias top-level trial ids.
    pub fn child(&self, tag: u64) -> RngStream {
        let id = (1u64 << 63) | (self.stream_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag);
        split_rng(self.seed, id)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn complex_gaussian<T: Real>(&mut self, variance: f64) -> Complex<T> {
        let sigma = (variance / 2.0).sqrt();
        let re = self.normal() * sigma;
        let im = self.normal() * sigma;
        Complex::new(T::lit(re), T::lit(im))
    }

    /// Bernoulli draw; `p` is clamped to `[0, 1]`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p.clamp(0.0, 1.0)
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bits(&mut self, n: usize) -> Vec<bool> {
        (0..n).map(|_| self.rng.random::<bool>()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Raw error tally behind an error-rate estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub errors: u64,
    pub total: u64,
}

impl ErrorCount {
    pub fn new(errors: u64, total: u64) -> Result<Self> {
        if errors > total {
            return Err(Error::invalid(format!(
                "error count {errors} exceeds total {total}"
            )));
        }
        Ok(ErrorCount { errors, total })
    }

    /// Records one Bernoulli outcome.
    pub fn record(&mut self, error: bool) {
        self.total += 1;
        if error {
            self.errors += 1;
        }
    }

    /// `errors / total`, undefined for an empty tally.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.errors as f64 / self.total as f64)
    }

    /// Binomial standard error of [`rate`](Self::rate).
    pub fn std_error(&self) -> Option<f64> {
        self.rate()
            .map(|r| (r * (1.0 - r) / self.total as f64).sqrt())
    }
}

impl Add for ErrorCount {
    type Output = ErrorCount;

    fn add(self, rhs: ErrorCount) -> ErrorCount {
        ErrorCount {
            errors: self.errors + rhs.errors,
            total: self.total + rhs.total,
        }
    }
}

impl AddAssign for ErrorCount {
    fn add_assign(&mut self, rhs: ErrorCount) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ErrorCount {
    fn sum<I: Iterator<Item = ErrorCount>>(iter: I) -> ErrorCount {
        iter.fold(ErrorCount::default(), Add::add)
    }
}

/// Hamming distance between two equally long bit sequences.
pub fn count_bit_errors(sent: &[bool], received: &[bool]) -> Result<ErrorCount> {
    if sent.len() != received.len() {
        return Err(Error::LengthMismatch {
            expected: sent.len(),
            got: received.len(),
        });
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(ErrorCount {
        errors: errors as u64,
        total: sent.len() as u64,
    })
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Index of the largest element; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if *v > values[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Maps bits to an integer, most significant bit first.
pub fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// Inverse of [`bits_to_index`] for a fixed width.
pub fn index_to_bits(index: usize, width: usize) -> Vec<bool> {
    (0..width).rev().map(|k| (index >> k) & 1 == 1).collect()
}
