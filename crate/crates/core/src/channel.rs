//! The KLJN loop with a parasitic periodic source at Alice's end.
//!
//! Each clock period Alice and Bob independently connect the low or high
//! resistor together with its Johnson noise generator. The wire voltage is the
//! superposition of the divided AC source and the divided noise voltages.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{config_err, Result};
use crate::noise::{generate_unit_gbwn, johnson_scale, NoiseSpec, SampledTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Resistor {
    Low,
    High,
}

impl Resistor {
    pub fn letter(self) -> char {
        match self {
            Resistor::Low => 'L',
            Resistor::High => 'H',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistorPair {
    pub r_low: f64,
    pub r_high: f64,
}

impl ResistorPair {
    pub fn new(r_low: f64, r_high: f64) -> Result<Self> {
        let pair = Self { r_low, r_high };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_low > 0.0 && self.r_low < self.r_high && self.r_high.is_finite()) {
            return Err(config_err(format!(
                "resistors must satisfy 0 < r_low < r_high, got r_low={} r_high={}",
                self.r_low, self.r_high
            )));
        }
        Ok(())
    }

    pub fn value(&self, r: Resistor) -> f64 {
        match r {
            Resistor::Low => self.r_low,
            Resistor::High => self.r_high,
        }
    }

    /// Parallel resistance of the secure (LH/HL) situations.
    pub fn parallel(&self) -> f64 {
        self.r_low * self.r_high / (self.r_low + self.r_high)
    }
}

/// Resistor choice of both ends; Alice first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitSituation {
    pub alice: Resistor,
    pub bob: Resistor,
}

impl BitSituation {
    pub const LL: Self = Self { alice: Resistor::Low, bob: Resistor::Low };
    pub const LH: Self = Self { alice: Resistor::Low, bob: Resistor::High };
    pub const HL: Self = Self { alice: Resistor::High, bob: Resistor::Low };
    pub const HH: Self = Self { alice: Resistor::High, bob: Resistor::High };

    pub fn is_secure(self) -> bool {
        self.alice != self.bob
    }

    /// Publicly agreed key bit: LH is 0, HL is 1, LL/HH carry no bit.
    pub fn key_bit(self) -> Option<u8> {
        match (self.alice, self.bob) {
            (Resistor::Low, Resistor::High) => Some(0),
            (Resistor::High, Resistor::Low) => Some(1),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        format!("{}{}", self.alice.letter(), self.bob.letter())
    }

    pub fn resistances(self, pair: &ResistorPair) -> (f64, f64) {
        (pair.value(self.alice), pair.value(self.bob))
    }
}

impl fmt::Display for BitSituation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.alice.letter(), self.bob.letter())
    }
}

/// Free-running cosine source `A cos(2 pi f t + phase)` in the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicSource {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl PeriodicSource {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        let s = Self { amplitude, frequency, phase };
        s.validate()?;
        Ok(s)
    }

    pub fn silent() -> Self {
        Self { amplitude: 0.0, frequency: 0.0, phase: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(config_err(format!(
                "source amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if !(self.frequency >= 0.0 && self.frequency.is_finite()) {
            return Err(config_err(format!(
                "source frequency must be non-negative, got {}",
                self.frequency
            )));
        }
        if !self.phase.is_finite() {
            return Err(config_err("source phase must be finite"));
        }
        Ok(())
    }

    /// Source voltage at global sample `index` of a stream sampled at `rate`.
    ///
    /// The cycle count is reduced modulo 1 before scaling by 2 pi so that
    /// late samples keep full phase precision.
    pub fn value_at_sample(&self, index: u64, rate: f64) -> f64 {
        let cycles = self.frequency / rate * index as f64;
        let frac = cycles - cycles.floor();
        self.amplitude * (2.0 * PI * frac + self.phase).cos()
    }

    /// `len` consecutive samples starting at global sample `start`.
    pub fn sample(&self, start: u64, len: usize, rate: f64) -> Result<SampledTrace> {
        let samples = (0..len as u64)
            .map(|n| self.value_at_sample(start + n, rate))
            .collect();
        SampledTrace::new(samples, rate)
    }
}

/// Physical and protocol parameters of one simulated session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KljnConfig {
    pub resistors: ResistorPair,
    pub t_eff: f64,
    /// Noise bandwidth, Hz.
    pub f_b: f64,
    /// Clock (bit exchange) frequency, Hz.
    pub f_c: f64,
    pub source: PeriodicSource,
    pub samples_per_bit: usize,
    pub seed: u64,
    pub n_secure_bits: usize,
}

impl KljnConfig {
    /// Builds a config with `samples_per_bit` derived from Nyquist sampling.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        resistors: ResistorPair,
        t_eff: f64,
        f_b: f64,
        f_c: f64,
        source: PeriodicSource,
        seed: u64,
        n_secure_bits: usize,
    ) -> Result<Self> {
        let cfg = Self {
            resistors,
            t_eff,
            f_b,
            f_c,
            source,
            samples_per_bit: Self::nyquist_samples_per_bit(f_b, f_c),
            seed,
            n_secure_bits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn nyquist_samples_per_bit(f_b: f64, f_c: f64) -> usize {
        (2.0 * f_b / f_c).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.resistors.validate()?;
        self.source.validate()?;
        if !(self.t_eff >= 0.0 && self.t_eff.is_finite()) {
            return Err(config_err(format!("t_eff must be non-negative, got {}", self.t_eff)));
        }
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return Err(config_err(format!("f_c must be positive, got {}", self.f_c)));
        }
        if !(self.f_b > self.f_c && self.f_b.is_finite()) {
            return Err(config_err(format!(
                "f_b ({}) must exceed f_c ({})",
                self.f_b, self.f_c
            )));
        }
        let expected = Self::nyquist_samples_per_bit(self.f_b, self.f_c);
        if self.samples_per_bit != expected {
            return Err(config_err(format!(
                "samples_per_bit must be round(2 f_b / f_c) = {expected}, got {}",
                self.samples_per_bit
            )));
        }
        if self.n_secure_bits == 0 {
            return Err(config_err("n_secure_bits must be at least 1"));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        2.0 * self.f_b
    }

    /// Bit exchange period duration, seconds.
    pub fn tau(&self) -> f64 {
        1.0 / self.f_c
    }

    pub fn with_t_eff(mut self, t_eff: f64) -> Self {
        self.t_eff = t_eff;
        self
    }
}

/// One clock period as seen on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPeriodRecord {
    /// 1-based period index `i`; the period spans `[(i-1) tau, i tau)`.
    pub index: u64,
    pub situation: BitSituation,
    pub wire_voltage: SampledTrace,
    pub ac_part: SampledTrace,
    pub noise_part: SampledTrace,
    pub wire_current: Option<SampledTrace>,
}

/// AC voltage on the wire: `r_b * source / (r_a + r_b)`.
pub fn divider_ac(r_a: f64, r_b: f64, source: &SampledTrace) -> Result<SampledTrace> {
    check_positive(r_a, r_b)?;
    Ok(source.scaled(r_b / (r_a + r_b)))
}

/// Noise voltage on the wire: `(r_a u_bn + r_b u_an) / (r_a + r_b)`.
pub fn wire_noise(
    r_a: f64,
    r_b: f64,
    u_an: &SampledTrace,
    u_bn: &SampledTrace,
) -> Result<SampledTrace> {
    check_positive(r_a, r_b)?;
    u_an.ensure_aligned(u_bn)?;
    let total = r_a + r_b;
    let samples = u_an
        .samples()
        .iter()
        .zip(u_bn.samples())
        .map(|(a, b)| (r_a * b + r_b * a) / total)
        .collect();
    Ok(SampledTrace::from_parts(samples, u_an.sample_rate()))
}

/// Loop current, positive from Alice to Bob: `(source + u_an - u_bn) / (r_a + r_b)`.
pub fn wire_current(
    r_a: f64,
    r_b: f64,
    source: &SampledTrace,
    u_an: &SampledTrace,
    u_bn: &SampledTrace,
) -> Result<SampledTrace> {
    check_positive(r_a, r_b)?;
    source.ensure_aligned(u_an)?;
    u_an.ensure_aligned(u_bn)?;
    let total = r_a + r_b;
    let samples = source
        .samples()
        .iter()
        .zip(u_an.samples())
        .zip(u_bn.samples())
        .map(|((s, a), b)| (s + a - b) / total)
        .collect();
    Ok(SampledTrace::from_parts(samples, source.sample_rate()))
}

fn check_positive(r_a: f64, r_b: f64) -> Result<()> {
    if !(r_a > 0.0 && r_b > 0.0) {
        return Err(config_err(format!(
            "loop resistances must be positive, got r_a={r_a} r_b={r_b}"
        )));
    }
    Ok(())
}

/// Johnson-scaled noise segments of both ends for one period.
pub(crate) struct EndNoise {
    pub alice: SampledTrace,
    pub bob: SampledTrace,
}

pub(crate) fn draw_end_noise(
    config: &KljnConfig,
    situation: BitSituation,
    rng: &mut impl RngCore,
) -> Result<EndNoise> {
    let (r_a, r_b) = situation.resistances(&config.resistors);
    let n = config.samples_per_bit;
    let unit_a = generate_unit_gbwn(&NoiseSpec::new(n, config.f_b, rng.next_u64()))?;
    let unit_b = generate_unit_gbwn(&NoiseSpec::new(n, config.f_b, rng.next_u64()))?;
    Ok(EndNoise {
        alice: johnson_scale(&unit_a, r_a, config.t_eff, config.f_b)?,
        bob: johnson_scale(&unit_b, r_b, config.t_eff, config.f_b)?,
    })
}

fn coin(rng: &mut impl Rng) -> Resistor {
    if rng.random::<bool>() {
        Resistor::High
    } else {
        Resistor::Low
    }
}

/// Options for [`simulate_session_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    pub record_current: bool,
}

/// Runs clock periods until `n_secure_bits` LH/HL periods have occurred.
///
/// Non-secure periods stay in the output; filter on
/// [`BitSituation::is_secure`] to recover the key-bearing ones.
pub fn simulate_session(config: &KljnConfig) -> Result<Vec<BitPeriodRecord>> {
    simulate_session_with(config, SessionOptions::default())
}

pub fn simulate_session_with(
    config: &KljnConfig,
    options: SessionOptions,
) -> Result<Vec<BitPeriodRecord>> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let spb = config.samples_per_bit;
    let rate = config.sample_rate();
    let mut records = Vec::with_capacity(2 * config.n_secure_bits + 64);
    let mut secure = 0usize;
    let mut index = 0u64;

    while secure < config.n_secure_bits {
        index += 1;
        let situation = BitSituation { alice: coin(&mut rng), bob: coin(&mut rng) };
        let (r_a, r_b) = situation.resistances(&config.resistors);
        let noise = draw_end_noise(config, situation, &mut rng)?;
        let source = config.source.sample((index - 1) * spb as u64, spb, rate)?;

        let ac_part = divider_ac(r_a, r_b, &source)?;
        let noise_part = wire_noise(r_a, r_b, &noise.alice, &noise.bob)?;
        let wire = ac_part
            .samples()
            .iter()
            .zip(noise_part.samples())
            .map(|(a, n)| a + n)
            .collect();
        let wire_current = if options.record_current {
            Some(wire_current(r_a, r_b, &source, &noise.alice, &noise.bob)?)
        } else {
            None
        };

        if situation.is_secure() {
            secure += 1;
        }
        records.push(BitPeriodRecord {
            index,
            situation,
            wire_voltage: SampledTrace::from_parts(wire, rate),
            ac_part,
            noise_part,
            wire_current,
        });
    }
    Ok(records)
}

/// Writes the session as CSV, one row per sample, 17 significant digits.
pub fn write_session_csv<W: Write>(records: &[BitPeriodRecord], mut out: W) -> Result<()> {
    writeln!(out, "period_index,situation,sample_index,u_wire,u_ac,u_noise")?;
    for rec in records {
        let rows = rec
            .wire_voltage
            .samples()
            .iter()
            .zip(rec.ac_part.samples())
            .zip(rec.noise_part.samples())
            .enumerate();
        for (n, ((u, ac), noise)) in rows {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e}",
                rec.index, rec.situation, n, u, ac, noise
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::johnson_rms;
    use approx::assert_relative_eq;

    fn cosine(amplitude: f64, n: usize) -> SampledTrace {
        PeriodicSource::new(amplitude, 1e3, 0.0).unwrap().sample(0, n, 200e3).unwrap()
    }

    fn peak(t: &SampledTrace) -> f64 {
        t.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    fn base_config(amplitude: f64, seed: u64, n_secure: usize) -> KljnConfig {
        KljnConfig::new(
            ResistorPair::new(1e3, 10e3).unwrap(),
            9e15,
            100e3,
            1e3,
            PeriodicSource::new(amplitude, 318.30, 0.0).unwrap(),
            seed,
            n_secure,
        )
        .unwrap()
    }

    #[test]
    fn divider_examples() {
        let src = cosine(1.0, 400);
        assert_relative_eq!(peak(&divider_ac(5e3, 5e3, &src).unwrap()), 0.5, max_relative = 1e-12);
        assert_relative_eq!(
            peak(&divider_ac(1e3, 10e3, &src).unwrap()),
            10.0 / 11.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            peak(&divider_ac(10e3, 1e3, &src).unwrap()),
            1.0 / 11.0,
            max_relative = 1e-12
        );
        assert!(divider_ac(0.0, 1e3, &src).is_err());
    }

    #[test]
    fn wire_noise_examples() {
        let x = generate_unit_gbwn(&NoiseSpec::new(512, 100e3, 5)).unwrap();
        let zero = SampledTrace::zeros(512, 200e3).unwrap();
        let half = wire_noise(2e3, 2e3, &x, &zero).unwrap();
        for (h, v) in half.samples().iter().zip(x.samples()) {
            assert_relative_eq!(*h, v / 2.0, max_relative = 1e-15);
        }
        let same = wire_noise(1e3, 10e3, &x, &x).unwrap();
        for (s, v) in same.samples().iter().zip(x.samples()) {
            assert_relative_eq!(*s, *v, max_relative = 1e-14);
        }
        let short = SampledTrace::zeros(10, 200e3).unwrap();
        assert!(wire_noise(1e3, 1e3, &x, &short).is_err());
    }

    #[test]
    fn wire_noise_rms_matches_parallel_resistance() {
        let (t, fb) = (9e15, 100e3);
        let n = 1 << 18;
        let ua = johnson_scale(&generate_unit_gbwn(&NoiseSpec::new(n, fb, 11)).unwrap(), 1e3, t, fb)
            .unwrap();
        let ub = johnson_scale(&generate_unit_gbwn(&NoiseSpec::new(n, fb, 12)).unwrap(), 10e3, t, fb)
            .unwrap();
        let wire = wire_noise(1e3, 10e3, &ua, &ub).unwrap();
        let expected = johnson_rms(1e3 * 10e3 / 11e3, t, fb);
        assert!((wire.rms() / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn wire_current_examples() {
        let zero = SampledTrace::zeros(64, 200e3).unwrap();
        let i0 = wire_current(1e3, 10e3, &zero, &zero, &zero).unwrap();
        assert!(i0.samples().iter().all(|&x| x == 0.0));

        let dc = SampledTrace::new(vec![1.0; 64], 200e3).unwrap();
        let i1 = wire_current(1e3, 10e3, &dc, &zero, &zero).unwrap();
        for x in i1.samples() {
            assert_relative_eq!(*x, 1.0 / 11000.0, max_relative = 1e-15);
        }
        // Alice's generator drives current toward Bob, Bob's the other way.
        let i2 = wire_current(1e3, 1e3, &zero, &dc, &zero).unwrap();
        assert!(i2.samples()[0] > 0.0);
        let i3 = wire_current(1e3, 1e3, &zero, &zero, &dc).unwrap();
        assert!(i3.samples()[0] < 0.0);
    }

    #[test]
    fn situations() {
        assert!(BitSituation::LH.is_secure() && BitSituation::HL.is_secure());
        assert!(!BitSituation::LL.is_secure() && !BitSituation::HH.is_secure());
        assert_eq!(BitSituation::LH.key_bit(), Some(0));
        assert_eq!(BitSituation::HL.key_bit(), Some(1));
        assert_eq!(BitSituation::HH.key_bit(), None);
        assert_eq!(BitSituation::HL.to_string(), "HL");
    }

    #[test]
    fn config_invariants() {
        let cfg = base_config(1.0, 1, 10);
        assert_eq!(cfg.samples_per_bit, 200);
        assert!(ResistorPair::new(10e3, 1e3).is_err());
        assert!(ResistorPair::new(0.0, 1e3).is_err());
        let mut bad = cfg;
        bad.f_b = 500.0;
        bad.samples_per_bit = 1;
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("f_b") && err.contains("f_c"), "{err}");
        let mut bad = cfg;
        bad.samples_per_bit = 100;
        assert!(bad.validate().is_err());
        assert!(PeriodicSource::new(-1.0, 1.0, 0.0).is_err());
        assert!(PeriodicSource::new(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn session_counts_and_structure() {
        let cfg = base_config(1.0, 7, 1000);
        let recs = simulate_session(&cfg).unwrap();
        let secure = recs.iter().filter(|r| r.situation.is_secure()).count();
        assert_eq!(secure, 1000);
        assert!(recs.last().unwrap().situation.is_secure());
        assert!((1850..=2150).contains(&recs.len()), "{} periods", recs.len());
        for (k, r) in recs.iter().enumerate() {
            assert_eq!(r.index, k as u64 + 1);
            assert_eq!(r.wire_voltage.len(), 200);
            assert!(r.wire_current.is_none());
        }
        for s in [BitSituation::LL, BitSituation::LH, BitSituation::HL, BitSituation::HH] {
            assert!(recs.iter().any(|r| r.situation == s));
        }
    }

    #[test]
    fn session_is_deterministic() {
        let cfg = base_config(1.0, 99, 50);
        assert_eq!(simulate_session(&cfg).unwrap(), simulate_session(&cfg).unwrap());
    }

    #[test]
    fn silent_source_gives_zero_ac() {
        let recs = simulate_session(&base_config(0.0, 3, 100)).unwrap();
        assert!(recs.iter().all(|r| r.ac_part.samples().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn ac_phase_is_continuous_across_periods() {
        let cfg = base_config(1.0, 4, 20);
        let recs = simulate_session(&cfg).unwrap();
        let rate = cfg.sample_rate();
        for r in &recs {
            let (_, r_b) = r.situation.resistances(&cfg.resistors);
            let (r_a, _) = r.situation.resistances(&cfg.resistors);
            let start = (r.index - 1) * 200;
            let t0 = start as f64 / rate;
            let expected = (2.0 * PI * 318.30 * t0).cos() * r_b / (r_a + r_b);
            assert_relative_eq!(r.ac_part.samples()[0], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn session_csv_layout() {
        let recs = simulate_session(&base_config(1.0, 5, 1)).unwrap();
        let mut buf = Vec::new();
        write_session_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "period_index,situation,sample_index,u_wire,u_ac,u_noise"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[0], "1");
        // 17 significant digits: d.dddddddddddddddde±x
        let mantissa = first[3].split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.replace('.', "").len(), 17);
        assert_eq!(text.lines().count(), 1 + 200 * recs.len());
    }
}
