//! Band-limited Gaussian white noise, Johnson scaling and periodograms.
//!
//! Everything in the simulator is carried as a [`SampledTrace`]: a uniformly
//! sampled real sequence plus its sample rate. Noise is produced at the
//! Nyquist rate of the noise bandwidth (`f_s = 2 f_B`) by a spectral method:
//! i.i.d. Gaussian draws are transformed, brick-wall limited to `f_B`,
//! zero-padded to twice the bandwidth and transformed back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{config_err, Error, Result};
use crate::fft;
use crate::BOLTZMANN;

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl SampledTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(config_err(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.is_empty() {
            return Err(config_err("trace must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(config_err(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Internal constructor for samples produced by arithmetic on valid traces.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: f64) -> Self {
        debug_assert!(!samples.is_empty() && sample_rate > 0.0);
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.mean_square().sqrt()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_parts(self.samples.iter().map(|x| x * factor).collect(), self.sample_rate)
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Errors unless `other` has the same length and sample rate.
    pub fn ensure_aligned(&self, other: &SampledTrace) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "trace lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::Shape(format!(
                "sample rates differ: {} Hz vs {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// Parameters of one unit-variance noise draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub n_samples: usize,
    pub sample_rate: f64,
    pub noise_bandwidth: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Spec sampled at the Nyquist rate `2 * noise_bandwidth`.
    pub fn new(n_samples: usize, noise_bandwidth: f64, seed: u64) -> Self {
        Self {
            n_samples,
            sample_rate: 2.0 * noise_bandwidth,
            noise_bandwidth,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(config_err(format!(
                "noise trace needs at least 2 samples, got {}",
                self.n_samples
            )));
        }
        if !(self.noise_bandwidth > 0.0 && self.noise_bandwidth.is_finite()) {
            return Err(config_err(format!(
                "noise bandwidth must be positive, got {}",
                self.noise_bandwidth
            )));
        }
        if self.sample_rate != 2.0 * self.noise_bandwidth {
            return Err(config_err(format!(
                "sample rate {} Hz must equal twice the noise bandwidth {} Hz",
                self.sample_rate, self.noise_bandwidth
            )));
        }
        Ok(())
    }
}

/// Unit-variance band-limited noise at twice the requested sample rate.
///
/// Returns `2 * n_samples` values at `2 * sample_rate`; all spectral content
/// lies at or below `noise_bandwidth`. [`generate_unit_gbwn`] resamples this
/// interpolant back onto the Nyquist grid.
pub fn generate_oversampled_gbwn(spec: &NoiseSpec) -> Result<SampledTrace> {
    spec.validate()?;
    let n = spec.n_samples;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let draws: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut spectrum = fft::forward_real(&draws);

    let bin_width = spec.sample_rate / n as f64;
    let even = n % 2 == 0;
    let mut retained = 0usize;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let f = fft::signed_bin(k, n).unsigned_abs() as f64 * bin_width;
        if f > spec.noise_bandwidth * (1.0 + 1e-12) {
            *bin = Complex64::new(0.0, 0.0);
        } else if !(even && 2 * k == n) {
            retained += 1;
        }
    }
    if retained == 0 {
        return Err(config_err("noise bandwidth leaves no frequency bins"));
    }

    let mut padded = pad_spectrum(&spectrum);
    fft::inverse(&mut padded);
    // Off-grid samples of the interpolant carry no Nyquist-bin power, so the
    // expected variance is retained / n before rescaling.
    let scale = (n as f64 / retained as f64).sqrt() / n as f64;
    let samples = padded.iter().map(|c| c.re * scale).collect();
    Ok(SampledTrace::from_parts(samples, 2.0 * spec.sample_rate))
}

/// Zero-pads an `n`-point spectrum to `2n` points, splitting the Nyquist bin.
fn pad_spectrum(spectrum: &[Complex64]) -> Vec<Complex64> {
    let n = spectrum.len();
    let len = 2 * n;
    let mut padded = vec![Complex64::new(0.0, 0.0); len];
    for (k, &bin) in spectrum.iter().enumerate() {
        if n % 2 == 0 && 2 * k == n {
            padded[k] += bin * 0.5;
            padded[len - k] += bin * 0.5;
        } else {
            let s = fft::signed_bin(k, n);
            let idx = if s >= 0 { s as usize } else { (len as i64 + s) as usize };
            padded[idx] = bin;
        }
    }
    padded
}

/// Zero-mean, unit-variance Gaussian band-limited white noise.
///
/// Deterministic in `spec`: the same spec and seed always produce the same
/// samples on every platform.
pub fn generate_unit_gbwn(spec: &NoiseSpec) -> Result<SampledTrace> {
    let oversampled = generate_oversampled_gbwn(spec)?;
    // Half-sample offset: take the interpolated points between the draws.
    let samples = oversampled.samples().iter().skip(1).step_by(2).copied().collect();
    Ok(SampledTrace::from_parts(samples, spec.sample_rate))
}

/// RMS voltage of Johnson noise, `sqrt(4 k T R f_B)`.
pub fn johnson_rms(resistance: f64, t_eff: f64, noise_bandwidth: f64) -> f64 {
    (4.0 * BOLTZMANN * t_eff * resistance * noise_bandwidth).sqrt()
}

/// Scales a unit-variance trace to the Johnson noise level of `resistance`.
pub fn johnson_scale(
    trace: &SampledTrace,
    resistance: f64,
    t_eff: f64,
    noise_bandwidth: f64,
) -> Result<SampledTrace> {
    if !(resistance >= 0.0) {
        return Err(config_err(format!("resistance must be non-negative, got {resistance}")));
    }
    if !(t_eff >= 0.0) {
        return Err(config_err(format!("temperature must be non-negative, got {t_eff}")));
    }
    if !(noise_bandwidth > 0.0) {
        return Err(config_err(format!(
            "noise bandwidth must be positive, got {noise_bandwidth}"
        )));
    }
    Ok(trace.scaled(johnson_rms(resistance, t_eff, noise_bandwidth)))
}

/// One-sided squared-magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<f64>,
    pub bin_width: f64,
    pub band: (f64, f64),
    /// Length of the transform the bins came from.
    pub transform_len: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    /// Indices of the non-DC bins whose frequency lies in `[lo, hi]`.
    pub fn band_bins(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let tol = 1e-9 * self.bin_width;
        let first = ((lo - tol) / self.bin_width).ceil().max(1.0) as usize;
        let last_f = ((hi + tol) / self.bin_width).floor();
        let last = if last_f < 0.0 {
            0
        } else {
            (last_f as usize).min(self.bins.len().saturating_sub(1))
        };
        first..=last
    }

    /// Mean over the non-DC bins in `[lo, hi]`; `None` if the band is empty.
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let range = self.band_bins(lo, hi);
        if range.is_empty() {
            return None;
        }
        let count = range.end() - range.start() + 1;
        Some(self.bins[range].iter().sum::<f64>() / count as f64)
    }

    /// Total power with interior bins counted twice; equals the trace's mean
    /// square for a periodogram.
    pub fn parseval_power(&self) -> f64 {
        let n = self.transform_len;
        self.bins
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let edge = m == 0 || (n % 2 == 0 && 2 * m == n);
                if edge {
                    *b
                } else {
                    2.0 * b
                }
            })
            .sum()
    }

    /// One-sided power spectral density estimate at `bin`, in units²/Hz.
    pub fn one_sided_psd(&self, bin: usize) -> f64 {
        2.0 * self.bins[bin] / self.bin_width
    }

    /// Bin-wise `self - other`. Results may be negative.
    pub fn subtract(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.bins.len() != other.bins.len() || self.bin_width != other.bin_width {
            return Err(Error::Shape(format!(
                "spectra differ: {} bins at {} Hz vs {} bins at {} Hz",
                self.bins.len(),
                self.bin_width,
                other.bins.len(),
                other.bin_width
            )));
        }
        Ok(Spectrum {
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a - b).collect(),
            ..self.clone()
        })
    }
}

/// Rectangular-window periodogram with forward `1/N` normalization.
///
/// `bins[m] = |(1/N) sum_n x[n] exp(-i 2 pi m n / N)|^2` for `m = 0..=N/2`.
pub fn periodogram(trace: &SampledTrace) -> Spectrum {
    let n = trace.len();
    let spectrum = fft::forward_real(trace.samples());
    let norm = 1.0 / (n as f64 * n as f64);
    let bins: Vec<f64> = spectrum[..=n / 2].iter().map(|c| c.norm_sqr() * norm).collect();
    let bin_width = trace.sample_rate() / n as f64;
    Spectrum {
        band: (0.0, (bins.len() - 1) as f64 * bin_width),
        bins,
        bin_width,
        transform_len: n,
    }
}
