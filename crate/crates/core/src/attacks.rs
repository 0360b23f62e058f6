//! Eve's passive attacks on an AC-compromised loop.
//!
//! * Low-frequency attack: count wire samples above a per-period threshold
//!   derived from the known source waveform, then read the secure situation
//!   off the sign of the threshold and whether the count exceeds one half.
//! * High-frequency attack: subtract a simulated noise background from the
//!   per-period periodogram and compare the remaining band power against the
//!   midpoint of the LH and HL AC powers.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::channel::{
    divider_ac, draw_end_noise, wire_noise, BitSituation, KljnConfig, PeriodicSource,
};
use crate::error::{config_err, Error, Result};
use crate::noise::{periodogram, SampledTrace, Spectrum};
use crate::seed;

/// Minimum ensemble size for a usable noise background.
pub const MIN_ENSEMBLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackMode {
    LowFreq,
    HighFreq,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::LowFreq => "low_freq",
            AttackMode::HighFreq => "high_freq",
        }
    }
}

/// Eve's verdict on one secure period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guess {
    LH,
    HL,
    Undetermined,
}

impl Guess {
    pub fn situation(self) -> Option<BitSituation> {
        match self {
            Guess::LH => Some(BitSituation::LH),
            Guess::HL => Some(BitSituation::HL),
            Guess::Undetermined => None,
        }
    }
}

/// Frequency band `[lo, hi]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// Eleven clock-width bins centred on the source frequency, clipped to
    /// `[0, f_b]`.
    pub fn around_source(f_a: f64, f_c: f64, f_b: f64) -> Band {
        Band {
            lo: (f_a - 5.0 * f_c).max(0.0),
            hi: f_b.min(f_a + 5.0 * f_c),
        }
    }

    pub fn full(f_b: f64) -> Band {
        Band { lo: 0.0, hi: f_b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Scale of the low-frequency threshold relative to the source average.
    pub kappa: f64,
    /// Number of simulated periods in the high-frequency noise background.
    pub ensemble_size: usize,
    /// High-frequency averaging band; `None` means [`Band::around_source`].
    pub band: Option<Band>,
    /// If false Eve models the source as a cosine of `assumed_amplitude`
    /// at the true frequency and zero phase.
    pub eve_knows_source: bool,
    pub assumed_amplitude: f64,
}

impl AttackConfig {
    pub fn low_freq() -> Self {
        Self {
            mode: AttackMode::LowFreq,
            kappa: 0.5,
            ensemble_size: 1000,
            band: None,
            eve_knows_source: true,
            assumed_amplitude: 1.0,
        }
    }

    pub fn high_freq() -> Self {
        Self { mode: AttackMode::HighFreq, ..Self::low_freq() }
    }

    pub fn validate(&self, config: &KljnConfig) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(config_err(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.assumed_amplitude >= 0.0 && self.assumed_amplitude.is_finite()) {
            return Err(config_err(format!(
                "assumed_amplitude must be non-negative, got {}",
                self.assumed_amplitude
            )));
        }
        if self.mode == AttackMode::HighFreq {
            if self.ensemble_size < MIN_ENSEMBLE {
                return Err(config_err(format!(
                    "ensemble_size must be at least {MIN_ENSEMBLE}, got {}",
                    self.ensemble_size
                )));
            }
            let band = self.band_for(config);
            if !(band.lo >= 0.0 && band.lo < band.hi && band.hi <= config.f_b) {
                return Err(config_err(format!(
                    "band [{}, {}] Hz must satisfy 0 <= lo < hi <= f_b = {}",
                    band.lo, band.hi, config.f_b
                )));
            }
        }
        Ok(())
    }

    pub fn band_for(&self, config: &KljnConfig) -> Band {
        self.band
            .unwrap_or_else(|| Band::around_source(config.source.frequency, config.f_c, config.f_b))
    }

    /// The source waveform Eve uses in her computations.
    pub fn eve_source(&self, config: &KljnConfig) -> PeriodicSource {
        if self.eve_knows_source {
            config.source
        } else {
            PeriodicSource {
                amplitude: self.assumed_amplitude,
                frequency: config.source.frequency,
                phase: 0.0,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfDecision {
    pub guess: Guess,
    pub gamma: f64,
    pub threshold: f64,
}

/// `sin(pi x)`, exactly zero at integers.
fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    if r == r.round() {
        0.0
    } else {
        (PI * r).sin()
    }
}

/// `cos(pi x + phase)` with `x` reduced modulo 2 first.
fn cos_pi_shifted(x: f64, phase: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor();
    (PI * r + phase).cos()
}

/// Per-period threshold: `kappa` times the source average over period
/// `period_index` (1-based, spanning `[(i-1) tau, i tau]`).
pub fn lf_threshold(source: &PeriodicSource, period_index: u64, tau: f64, kappa: f64) -> f64 {
    assert!(tau > 0.0, "tau must be positive");
    let a = source.amplitude;
    if a == 0.0 {
        return 0.0;
    }
    if source.frequency == 0.0 {
        return kappa * a * source.phase.cos();
    }
    // sin(b) - sin(a) = 2 cos((a+b)/2) sin((b-a)/2)
    let cycles = source.frequency * tau;
    let mid = source.frequency * tau * (2 * period_index - 1) as f64;
    let s = sin_pi(cycles);
    if s == 0.0 {
        return 0.0;
    }
    kappa * a * 2.0 * cos_pi_shifted(mid, source.phase) * s / (2.0 * PI * cycles)
}

/// Fraction of samples strictly above `threshold`.
pub fn lf_gamma(wire: &[f64], threshold: f64) -> f64 {
    assert!(!wire.is_empty(), "wire trace must not be empty");
    let above = wire.iter().filter(|&&x| x > threshold).count();
    above as f64 / wire.len() as f64
}

pub fn lf_decide(threshold: f64, gamma: f64) -> LfDecision {
    let guess = if threshold == 0.0 || gamma == 0.5 {
        Guess::Undetermined
    } else if (threshold > 0.0) == (gamma > 0.5) {
        Guess::LH
    } else {
        Guess::HL
    };
    LfDecision { guess, gamma, threshold }
}

/// Complete low-frequency attack on one observed period.
pub fn lf_attack_period(
    source: &PeriodicSource,
    period_index: u64,
    tau: f64,
    kappa: f64,
    wire: &SampledTrace,
) -> LfDecision {
    let threshold = lf_threshold(source, period_index, tau, kappa);
    lf_decide(threshold, lf_gamma(wire.samples(), threshold))
}

/// Eve's precomputed noise background and AC decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct HfPreparation {
    pub noise_background: Spectrum,
    pub ac_threshold: f64,
    pub band: Band,
    pub ensemble_size: usize,
}

/// Band-averaged AC periodogram power for the LH and HL dividers, averaged
/// over periods `1..=periods`.
pub fn hf_ac_band_powers(
    config: &KljnConfig,
    source: &PeriodicSource,
    band: Band,
    periods: usize,
) -> Result<(f64, f64)> {
    let spb = config.samples_per_bit;
    let rate = config.sample_rate();
    let (rl, rh) = (config.resistors.r_low, config.resistors.r_high);
    let mut lh = 0.0;
    let mut hl = 0.0;
    for i in 0..periods as u64 {
        let src = source.sample(i * spb as u64, spb, rate)?;
        lh += band_mean(&periodogram(&divider_ac(rl, rh, &src)?), band)?;
        hl += band_mean(&periodogram(&divider_ac(rh, rl, &src)?), band)?;
    }
    Ok((lh / periods as f64, hl / periods as f64))
}

fn band_mean(spectrum: &Spectrum, band: Band) -> Result<f64> {
    spectrum.band_mean(band.lo, band.hi).ok_or_else(|| {
        config_err(format!(
            "band [{}, {}] Hz contains no non-DC bin at {} Hz resolution",
            band.lo, band.hi, spectrum.bin_width
        ))
    })
}

/// Runs Eve's own simulations of the system to build the high-frequency
/// attack's noise background and AC threshold.
///
/// The simulations use a seed space disjoint from the victim session.
pub fn hf_prepare(config: &KljnConfig, attack: &AttackConfig) -> Result<HfPreparation> {
    if attack.mode != AttackMode::HighFreq {
        return Err(config_err("hf_prepare requires attack mode high_freq"));
    }
    config.validate()?;
    attack.validate(config)?;
    let band = attack.band_for(config);
    let m = attack.ensemble_size;

    let mut rng = ChaCha20Rng::seed_from_u64(seed::mix(config.seed, &[seed::EVE_PREPARATION]));
    let mut sum: Option<Vec<f64>> = None;
    let mut template: Option<Spectrum> = None;
    for _ in 0..m {
        let situation = if rng.random::<bool>() {
            BitSituation::LH
        } else {
            BitSituation::HL
        };
        let (r_a, r_b) = situation.resistances(&config.resistors);
        let noise = draw_end_noise(config, situation, &mut rng)?;
        let spec = periodogram(&wire_noise(r_a, r_b, &noise.alice, &noise.bob)?);
        match &mut sum {
            Some(acc) => acc.iter_mut().zip(&spec.bins).for_each(|(a, b)| *a += b),
            None => sum = Some(spec.bins.clone()),
        }
        template.get_or_insert(spec);
    }
    let mut background = template.expect("ensemble is non-empty");
    background.bins = sum
        .expect("ensemble is non-empty")
        .into_iter()
        .map(|s| s / m as f64)
        .collect();

    let source = attack.eve_source(config);
    let (lh, hl) = hf_ac_band_powers(config, &source, band, m)?;
    Ok(HfPreparation {
        noise_background: background,
        ac_threshold: 0.5 * (lh + hl),
        band,
        ensemble_size: m,
    })
}

/// Band average of the background-subtracted periodogram of `wire`.
pub fn hf_ac_power(wire: &SampledTrace, prep: &HfPreparation) -> Result<f64> {
    let bg = &prep.noise_background;
    if wire.len() != bg.transform_len {
        return Err(Error::Shape(format!(
            "wire has {} samples but the background was built from {}-point periodograms",
            wire.len(),
            bg.transform_len
        )));
    }
    let residual = periodogram(wire).subtract(bg)?;
    band_mean(&residual, prep.band)
}

/// LH above the threshold, HL below; exact ties go to a fair coin.
pub fn hf_decide(ac_power: f64, prep: &HfPreparation, tie_break: &mut impl Rng) -> Guess {
    if ac_power > prep.ac_threshold {
        Guess::LH
    } else if ac_power < prep.ac_threshold {
        Guess::HL
    } else if tie_break.random::<bool>() {
        Guess::LH
    } else {
        Guess::HL
    }
}

impl HfPreparation {
    /// Writes the preparation as a one-line scalar header followed by the
    /// background spectrum as `frequency_hz,background_v2` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# ac_threshold_v2={:.16e},f_lo_hz={:.16e},f_hi_hz={:.16e},m={},n_fft={}",
            self.ac_threshold,
            self.band.lo,
            self.band.hi,
            self.ensemble_size,
            self.noise_background.transform_len
        )?;
        writeln!(out, "frequency_hz,background_v2")?;
        for (k, b) in self.noise_background.bins.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.noise_background.frequency(k), b)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty preparation file".into()))??;
        let fields = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("line 1: expected '# key=value,...' header".into()))?;

        let mut threshold = None;
        let mut lo = None;
        let mut hi = None;
        let mut m = None;
        let mut n_fft = None;
        for kv in fields.trim().split(',') {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line 1: malformed field '{kv}'")))?;
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line 1: {key}: {e}")))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line 1: {key}: {e}")))
            };
            match key.trim() {
                "ac_threshold_v2" => threshold = Some(float()?),
                "f_lo_hz" => lo = Some(float()?),
                "f_hi_hz" => hi = Some(float()?),
                "m" => m = Some(int()?),
                "n_fft" => n_fft = Some(int()?),
                other => return Err(Error::Parse(format!("line 1: unknown field '{other}'"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("line 1: missing field '{name}'"));
        let threshold = threshold.ok_or_else(|| missing("ac_threshold_v2"))?;
        let band = Band {
            lo: lo.ok_or_else(|| missing("f_lo_hz"))?,
            hi: hi.ok_or_else(|| missing("f_hi_hz"))?,
        };
        let m = m.ok_or_else(|| missing("m"))?;
        let n_fft = n_fft.ok_or_else(|| missing("n_fft"))?;

        match lines.next() {
            Some(Ok(l)) if l.trim() == "frequency_hz,background_v2" => {}
            _ => return Err(Error::Parse("line 2: expected 'frequency_hz,background_v2'".into())),
        }
        let mut freqs = Vec::new();
        let mut bins = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k + 3;
            let (f, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {lineno}: expected two columns")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))
            };
            freqs.push(parse(f)?);
            bins.push(parse(b)?);
        }
        if bins.len() != n_fft / 2 + 1 || bins.len() < 2 {
            return Err(Error::Parse(format!(
                "expected {} spectrum rows for n_fft={n_fft}, found {}",
                n_fft / 2 + 1,
                bins.len()
            )));
        }
        let bin_width = freqs[1] - freqs[0];
        Ok(HfPreparation {
            noise_background: Spectrum {
                band: (0.0, freqs[freqs.len() - 1]),
                bins,
                bin_width,
                transform_len: n_fft,
            },
            ac_threshold: threshold,
            band,
            ensemble_size: m,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ResistorPair;
    use crate::noise::johnson_rms;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fig6_config(amplitude: f64, f_a: f64, t_eff: f64) -> KljnConfig {
        KljnConfig::new(
            ResistorPair::new(1e3, 10e3).unwrap(),
            t_eff,
            100e3,
            500.0,
            PeriodicSource::new(amplitude, f_a, 0.0).unwrap(),
            21,
            100,
        )
        .unwrap()
    }

    /// Direct evaluation of the source average with the antiderivative.
    fn threshold_oracle(a: f64, f: f64, phase: f64, i: u64, tau: f64) -> f64 {
        let w = 2.0 * PI * f;
        let t1 = i as f64 * tau;
        let t0 = (i - 1) as f64 * tau;
        a * ((w * t1 + phase).sin() - (w * t0 + phase).sin()) / (w * tau)
    }

    /// Composite Simpson quadrature of the source over the period.
    fn threshold_quadrature(a: f64, f: f64, phase: f64, i: u64, tau: f64) -> f64 {
        let n = 20_000;
        let t0 = (i - 1) as f64 * tau;
        let h = tau / n as f64;
        let g = |t: f64| a * (2.0 * PI * f * t + phase).cos();
        let mut s = g(t0) + g(t0 + tau);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(t0 + k as f64 * h);
        }
        s * h / 3.0 / tau
    }

    #[test]
    fn lf_threshold_example() {
        let src = PeriodicSource::new(1.0, 318.30, 0.0).unwrap();
        let th = lf_threshold(&src, 1, 1e-3, 1.0);
        let x = 2.0 * PI * 318.30 * 1e-3;
        assert_relative_eq!(th, x.sin() / x, max_relative = 1e-9);
        assert_relative_eq!(th, 0.4547, max_relative = 2e-4);
        assert_relative_eq!(th, threshold_quadrature(1.0, 318.30, 0.0, 1, 1e-3), max_relative = 1e-9);
    }

    #[test]
    fn lf_threshold_matches_oracles_over_many_periods() {
        for &(f, phase) in &[(318.30, 0.0), (101.32, 0.7), (32.25, -2.0), (777.0, 3.0)] {
            let src = PeriodicSource::new(1.3, f, phase).unwrap();
            for i in [1u64, 2, 17, 250, 1999] {
                let th = lf_threshold(&src, i, 1e-3, 1.0);
                let quad = threshold_quadrature(1.3, f, phase, i, 1e-3);
                assert!((th - quad).abs() < 1e-9 * 1.3, "f={f} i={i}: {th} vs {quad}");
                let direct = threshold_oracle(1.3, f, phase, i, 1e-3);
                assert!((th - direct).abs() < 1e-9, "f={f} i={i}");
            }
        }
    }

    #[test]
    fn lf_threshold_trivial_cases() {
        let full_cycles = PeriodicSource::new(1.0, 2000.0, 0.3).unwrap();
        for i in 1..50 {
            assert_eq!(lf_threshold(&full_cycles, i, 1e-3, 1.0), 0.0);
        }
        let silent = PeriodicSource::new(0.0, 318.3, 0.0).unwrap();
        assert_eq!(lf_threshold(&silent, 7, 1e-3, 0.5), 0.0);
        let dc = PeriodicSource::new(2.0, 0.0, 0.0).unwrap();
        assert_eq!(lf_threshold(&dc, 3, 1e-3, 0.5), 1.0);
    }

    #[test]
    fn lf_gamma_examples() {
        assert_eq!(lf_gamma(&[0.2, -0.1, 0.5, 0.3], 0.25), 0.5);
        assert_eq!(lf_gamma(&[1.0, 2.0, 3.0], 0.0), 1.0);
        assert_eq!(lf_gamma(&[1.0, 2.0, 3.0], 3.0), 0.0);
    }

    #[test]
    fn lf_decide_examples() {
        assert_eq!(lf_decide(0.4547, 0.9).guess, Guess::LH);
        assert_eq!(lf_decide(0.4547, 0.1).guess, Guess::HL);
        assert_eq!(lf_decide(-0.3, 0.9).guess, Guess::HL);
        assert_eq!(lf_decide(-0.3, 0.1).guess, Guess::LH);
        assert_eq!(lf_decide(0.0, 0.7).guess, Guess::Undetermined);
        assert_eq!(lf_decide(0.2, 0.5).guess, Guess::Undetermined);
    }

    #[test]
    fn lf_attack_is_exact_without_noise() {
        let cfg = KljnConfig::new(
            ResistorPair::new(1e3, 10e3).unwrap(),
            0.0,
            100e3,
            1e3,
            PeriodicSource::new(1.0, 318.30, 0.0).unwrap(),
            1,
            200,
        )
        .unwrap();
        let recs = crate::channel::simulate_session(&cfg).unwrap();
        let mut discarded = 0;
        for r in recs.iter().filter(|r| r.situation.is_secure()) {
            let d = lf_attack_period(&cfg.source, r.index, cfg.tau(), 0.5, &r.wire_voltage);
            match d.guess.situation() {
                // an even split of a 200-sample window is a legitimate discard
                None => discarded += 1,
                Some(s) => assert_eq!(s, r.situation, "period {}", r.index),
            }
        }
        assert!(discarded < 10, "{discarded} discarded");
    }

    #[test]
    fn hf_prepare_rejects_small_ensembles_and_wrong_mode() {
        let cfg = fig6_config(1.0, 2000.0, 1e12);
        let mut attack = AttackConfig::high_freq();
        attack.ensemble_size = 99;
        assert!(hf_prepare(&cfg, &attack).is_err());
        assert!(hf_prepare(&cfg, &AttackConfig::low_freq()).is_err());
        let mut attack = AttackConfig::high_freq();
        attack.band = Some(Band { lo: 10.0, hi: 200e3 });
        assert!(hf_prepare(&cfg, &attack).is_err());
    }

    #[test]
    fn hf_silent_source_has_zero_threshold() {
        let cfg = fig6_config(0.0, 2000.0, 1e12);
        let prep = hf_prepare(&cfg, &AttackConfig::high_freq()).unwrap();
        assert_eq!(prep.ac_threshold, 0.0);
    }

    #[test]
    fn hf_ac_power_ratio_is_divider_squared() {
        for f_a in [2000.0, 16e3, 32e3] {
            let cfg = fig6_config(1.0, f_a, 1e12);
            let band = Band::around_source(f_a, cfg.f_c, cfg.f_b);
            let (lh, hl) = hf_ac_band_powers(&cfg, &cfg.source, band, 10).unwrap();
            assert_relative_eq!(lh / hl, 100.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn hf_background_matches_johnson_level() {
        let t_eff = 9e15;
        let cfg = fig6_config(1.0, 16e3, t_eff);
        let prep = hf_prepare(&cfg, &AttackConfig::high_freq()).unwrap();
        let sigma = johnson_rms(cfg.resistors.parallel(), t_eff, cfg.f_b);
        let expected_bin = sigma * sigma / cfg.samples_per_bit as f64;
        let band = prep.band;
        let measured = prep.noise_background.band_mean(band.lo, band.hi).unwrap();
        assert!((measured / expected_bin - 1.0).abs() < 0.05, "{measured} vs {expected_bin}");
    }

    #[test]
    fn hf_ac_power_of_noise_free_cosine() {
        let cfg = fig6_config(1.0, 2000.0, 0.0);
        let src = cfg.source.sample(0, cfg.samples_per_bit, cfg.sample_rate()).unwrap();
        let wire = divider_ac(1e3, 10e3, &src).unwrap();
        let band = Band::around_source(2000.0, cfg.f_c, cfg.f_b);
        let background = Spectrum {
            bins: vec![0.0; cfg.samples_per_bit / 2 + 1],
            ..periodogram(&wire)
        };
        let n_bins = background.band_bins(band.lo, band.hi).count();
        assert_eq!(n_bins, 9);
        let prep = HfPreparation { noise_background: background, ac_threshold: 0.0, band, ensemble_size: 100 };
        let power = hf_ac_power(&wire, &prep).unwrap();
        let expected = (10.0f64 / 11.0).powi(2) / 4.0 / n_bins as f64;
        assert_relative_eq!(power, expected, max_relative = 1e-9);

        let zero = SampledTrace::zeros(cfg.samples_per_bit, cfg.sample_rate()).unwrap();
        assert_eq!(hf_ac_power(&zero, &prep).unwrap(), 0.0);
        let short = SampledTrace::zeros(10, cfg.sample_rate()).unwrap();
        assert!(matches!(hf_ac_power(&short, &prep), Err(Error::Shape(_))));
    }

    #[test]
    fn hf_background_subtraction_is_unbiased() {
        let cfg = fig6_config(0.0, 16e3, 9e15);
        let prep = hf_prepare(&cfg, &AttackConfig::high_freq()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut sum = 0.0;
        let n = 1000;
        for k in 0..n {
            let s = if k % 2 == 0 { BitSituation::LH } else { BitSituation::HL };
            let (r_a, r_b) = s.resistances(&cfg.resistors);
            let noise = draw_end_noise(&cfg, s, &mut rng).unwrap();
            let wire = wire_noise(r_a, r_b, &noise.alice, &noise.bob).unwrap();
            sum += hf_ac_power(&wire, &prep).unwrap();
        }
        let mean = sum / n as f64;
        let bg = prep.noise_background.band_mean(prep.band.lo, prep.band.hi).unwrap();
        // A band mean of 11 exponential bins has relative sd 1/sqrt(11);
        // over n periods plus background error that is ~1.1% of the level.
        assert!(mean.abs() < 0.05 * bg, "mean residual {mean} vs background {bg}");
    }

    #[test]
    fn hf_decide_examples() {
        let cfg = fig6_config(1.0, 2000.0, 0.0);
        let mut attack = AttackConfig::high_freq();
        attack.ensemble_size = 100;
        let prep = hf_prepare(&cfg, &attack).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(prep.ac_threshold > 0.0);
        assert_eq!(hf_decide(2.0 * prep.ac_threshold, &prep, &mut rng), Guess::LH);
        assert_eq!(hf_decide(0.0, &prep, &mut rng), Guess::HL);
        let ties: Vec<Guess> = (0..64).map(|_| hf_decide(prep.ac_threshold, &prep, &mut rng)).collect();
        assert!(ties.contains(&Guess::LH) && ties.contains(&Guess::HL));
    }

    #[test]
    fn hf_noise_free_classification_is_perfect() {
        for amplitude in [1e-3, 1.0, 50.0] {
            for f_a in [2000.0, 16e3, 32e3, 3100.0] {
                let cfg = fig6_config(amplitude, f_a, 0.0);
                let mut attack = AttackConfig::high_freq();
                attack.ensemble_size = 100;
                let prep = hf_prepare(&cfg, &attack).unwrap();
                let mut rng = ChaCha20Rng::seed_from_u64(1);
                for (i, s) in [(1u64, BitSituation::LH), (2, BitSituation::HL), (3, BitSituation::LH)] {
                    let (r_a, r_b) = s.resistances(&cfg.resistors);
                    let spb = cfg.samples_per_bit;
                    let src = cfg.source.sample((i - 1) * spb as u64, spb, cfg.sample_rate()).unwrap();
                    let wire = divider_ac(r_a, r_b, &src).unwrap();
                    let p = hf_ac_power(&wire, &prep).unwrap();
                    assert_eq!(hf_decide(p, &prep, &mut rng).situation(), Some(s));
                }
            }
        }
    }

    #[test]
    fn preparation_csv_round_trip() {
        let cfg = fig6_config(1.0, 16e3, 9e15);
        let prep = hf_prepare(&cfg, &AttackConfig::high_freq()).unwrap();
        let mut buf = Vec::new();
        prep.write_csv(&mut buf).unwrap();
        let back = HfPreparation::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.ac_threshold, prep.ac_threshold);
        assert_eq!(back.band, prep.band);
        assert_eq!(back.ensemble_size, prep.ensemble_size);
        assert_eq!(back.noise_background.bins, prep.noise_background.bins);
        assert_eq!(back.noise_background.transform_len, prep.noise_background.transform_len);

        let bad = String::from_utf8(buf).unwrap().replace("m=1000", "q=1000");
        assert!(HfPreparation::read_csv(std::io::Cursor::new(bad)).is_err());
    }

    proptest! {
        #[test]
        fn gamma_is_a_monotone_fraction(
            xs in prop::collection::vec(-10.0f64..10.0, 1..64),
            a in -12.0f64..12.0,
            b in -12.0f64..12.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let g_lo = lf_gamma(&xs, lo);
            let g_hi = lf_gamma(&xs, hi);
            prop_assert!((0.0..=1.0).contains(&g_lo));
            prop_assert!(g_hi <= g_lo);
        }

        #[test]
        fn threshold_is_linear_in_amplitude_and_kappa(
            amp in 0.0f64..10.0,
            f in 1.0f64..900.0,
            kappa in 0.01f64..3.0,
            i in 1u64..5000,
        ) {
            let unit = PeriodicSource::new(1.0, f, 0.0).unwrap();
            let scaled = PeriodicSource::new(amp, f, 0.0).unwrap();
            let base = lf_threshold(&unit, i, 1e-3, 1.0);
            let th = lf_threshold(&scaled, i, 1e-3, kappa);
            prop_assert!((th - amp * kappa * base).abs() <= 1e-12 * (1.0 + amp * kappa));
        }

        #[test]
        fn sign_flip_preserves_decision(
            xs in prop::collection::vec(-3.0f64..3.0, 8..128),
            f in 1.0f64..900.0,
            phase in -3.0f64..3.0,
            i in 1u64..3000,
        ) {
            let src = PeriodicSource::new(1.0, f, phase).unwrap();
            let flipped = PeriodicSource::new(1.0, f, phase + PI).unwrap();
            let th = lf_threshold(&src, i, 1e-3, 0.5);
            let th_neg = lf_threshold(&flipped, i, 1e-3, 0.5);
            prop_assume!(th.abs() > 1e-9);
            prop_assume!(xs.iter().all(|x| (x - th).abs() > 1e-6));
            let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
            let d = lf_decide(th, lf_gamma(&xs, th));
            let d_neg = lf_decide(th_neg, lf_gamma(&neg, th_neg));
            prop_assert_eq!(d.guess, d_neg.guess);
        }
    }
}
