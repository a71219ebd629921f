//! Block-fading uplink channel and additive white Gaussian noise.
//!
//! SNR convention: every transmitter sends unit average energy per symbol
//! (per codeword for SCMA), so `Es/N0 = 1 / n0` where `n0 = E|w|^2` is the
//! complex noise variance per resource element.

use num_complex::Complex;

use crate::common::RngStream;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Complex gains indexed by `(user, resource)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization<T> {
    num_users: usize,
    num_resources: usize,
    gains: Vec<Complex<T>>,
}

impl<T: Real> ChannelRealization<T> {
    pub fn new(num_users: usize, num_resources: usize, gains: Vec<Complex<T>>) -> Result<Self> {
        if gains.len() != num_users * num_resources {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for a {num_users}x{num_resources} channel",
                gains.len()
            )));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::invalid("channel gains must be finite"));
        }
        Ok(ChannelRealization {
            num_users,
            num_resources,
            gains,
        })
    }

    /// All-ones channel (pure AWGN).
    pub fn unit(num_users: usize, num_resources: usize) -> Self {
        ChannelRealization {
            num_users,
            num_resources,
            gains: vec![Complex::new(T::one(), T::zero()); num_users * num_resources],
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_resources(&self) -> usize {
        self.num_resources
    }

    pub fn gain(&self, user: usize, resource: usize) -> Complex<T> {
        self.gains[user * self.num_resources + resource]
    }

    pub fn user_gains(&self, user: usize) -> &[Complex<T>] {
        &self.gains[user * self.num_resources..(user + 1) * self.num_resources]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.gains
    }
}

/// Noise level of a link, kept together with the SNR it was derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    n0: f64,
    snr_db: f64,
}

impl NoiseSpec {
    /// `n0 = 10^(-snr_db / 10)` for unit-energy signals.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
        }
        Ok(NoiseSpec {
            n0: 10f64.powf(-snr_db / 10.0),
            snr_db,
        })
    }

    pub fn from_n0(n0: f64) -> Result<Self> {
        if !(n0.is_finite() && n0 > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive and finite, got {n0}"
            )));
        }
        Ok(NoiseSpec {
            n0,
            snr_db: -10.0 * n0.log10(),
        })
    }

    /// The zero-noise limit; `snr_db` is `+inf`.
    pub fn noiseless() -> Self {
        NoiseSpec {
            n0: 0.0,
            snr_db: f64::INFINITY,
        }
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn is_noiseless(&self) -> bool {
        self.n0 == 0.0
    }
}

/// I.i.d. `CN(0, 1)` gains for every `(user, resource)` pair.
pub fn rayleigh_block<T: Real>(
    num_users: usize,
    num_resources: usize,
    rng: &mut RngStream,
) -> ChannelRealization<T> {
    let gains = (0..num_users * num_resources)
        .map(|_| rng.complex_gaussian(1.0))
        .collect();
    ChannelRealization {
        num_users,
        num_resources,
        gains,
    }
}

/// Adds `CN(0, n0)` noise to every sample.
pub fn awgn<T: Real>(signal: &[Complex<T>], noise: &NoiseSpec, rng: &mut RngStream) -> Vec<Complex<T>> {
    if noise.is_noiseless() {
        return signal.to_vec();
    }
    signal
        .iter()
        .map(|&s| s + rng.complex_gaussian::<T>(noise.n0))
        .collect()
}

/// Resource-wise superposition `y_k = sum_j h_{j,k} x_{j,k}`.
pub fn superpose<T: Real>(
    codewords: &[Vec<Complex<T>>],
    gains: &ChannelRealization<T>,
) -> Result<Vec<Complex<T>>> {
    if codewords.len() != gains.num_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} user sequences but gains for {} users",
            codewords.len(),
            gains.num_users()
        )));
    }
    let len = gains.num_resources();
    let mut y = vec![Complex::new(T::zero(), T::zero()); len];
    for (j, x) in codewords.iter().enumerate() {
        if x.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "user {j} sends {} samples over {len} resources",
                x.len()
            )));
        }
        for (k, (yk, &xk)) in y.iter_mut().zip(x).enumerate() {
            *yk += gains.gain(j, k) * xk;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::common::split_rng;

    type C = Complex<f64>;

    #[test]
    fn rayleigh_is_reproducible() {
        let a = rayleigh_block::<f64>(1, 1, &mut split_rng(5, 0));
        let b = rayleigh_block::<f64>(1, 1, &mut split_rng(5, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn rayleigh_has_unit_power() {
        let h = rayleigh_block::<f64>(1000, 4, &mut split_rng(1, 0));
        let p = h.as_slice().iter().map(|g| g.norm_sqr()).sum::<f64>() / 4000.0;
        assert!((0.9..=1.1).contains(&p), "mean |h|^2 = {p}");
    }

    #[test]
    fn rayleigh_users_uncorrelated() {
        let mut rng = split_rng(2, 0);
        let mut cross = C::new(0.0, 0.0);
        let (mut p1, mut p2) = (0.0, 0.0);
        for _ in 0..10_000 {
            let h = rayleigh_block::<f64>(2, 4, &mut rng);
            for k in 0..4 {
                let (a, b) = (h.gain(0, k), h.gain(1, k));
                cross += a * b.conj();
                p1 += a.norm_sqr();
                p2 += b.norm_sqr();
            }
        }
        let rho = cross.norm() / (p1 * p2).sqrt();
        assert!(rho < 0.1, "rho = {rho}");
    }

    #[test]
    fn snr_to_noise_variance() {
        let n = NoiseSpec::from_snr_db(10.0).unwrap();
        assert!((n.n0() - 0.1).abs() < 1e-15);
        assert!(NoiseSpec::from_n0(0.0).is_err());
        assert!((NoiseSpec::from_n0(0.1).unwrap().snr_db() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn awgn_zero_noise_limit() {
        let x = vec![C::new(1.0, -2.0), C::new(0.5, 0.25)];
        let mut rng = split_rng(0, 0);
        assert_eq!(awgn(&x, &NoiseSpec::noiseless(), &mut rng), x);
        let tiny = NoiseSpec::from_n0(1e-30).unwrap();
        for (a, b) in awgn(&x, &tiny, &mut rng).iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn awgn_variance_and_whiteness() {
        let n = 100_000;
        let x = vec![C::new(0.0, 0.0); n];
        let w = awgn(&x, &NoiseSpec::from_n0(1.0).unwrap(), &mut split_rng(3, 0));
        assert_eq!(w.len(), n);
        let var = w.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
        assert!((0.95..=1.05).contains(&var), "var = {var}");
        let lag: C = w.windows(2).map(|p| p[1] * p[0].conj()).sum();
        let rho = lag.norm() / (n as f64 * var);
        assert!(rho < 0.05, "rho = {rho}");
    }

    #[test]
    fn superpose_examples() {
        let x = vec![vec![C::new(1.0, 2.0), C::new(-1.0, 0.0)]];
        assert_eq!(superpose(&x, &ChannelRealization::unit(1, 2)).unwrap(), x[0]);

        let a = vec![C::new(0.3, -0.7), C::new(1.0, 1.0)];
        let neg: Vec<C> = a.iter().map(|v| -v).collect();
        let y = superpose(&[a, neg], &ChannelRealization::unit(2, 2)).unwrap();
        assert!(y.iter().all(|v| v.norm() == 0.0));

        assert!(superpose(&x, &ChannelRealization::unit(2, 2)).is_err());
        assert!(superpose(&x, &ChannelRealization::unit(1, 3)).is_err());
    }

    #[test]
    fn superpose_is_linear() {
        let mut rng = split_rng(9, 9);
        let h = rayleigh_block::<f64>(3, 5, &mut rng);
        let draw = |rng: &mut RngStream| -> Vec<Vec<C>> {
            (0..3)
                .map(|_| (0..5).map(|_| rng.complex_gaussian(1.0)).collect())
                .collect()
        };
        let (xs, ys) = (draw(&mut rng), draw(&mut rng));
        let (a, b) = (C::new(0.7, -1.1), C::new(-2.0, 0.4));
        let mix: Vec<Vec<C>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect())
            .collect();
        let lhs = superpose(&mix, &h).unwrap();
        let sx = superpose(&xs, &h).unwrap();
        let sy = superpose(&ys, &h).unwrap();
        for k in 0..5 {
            assert!((lhs[k] - (a * sx[k] + b * sy[k])).norm() < 1e-12);
        }
    }
}
