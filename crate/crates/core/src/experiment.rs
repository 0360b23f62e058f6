//! End-to-end attack runs, noise-level sweeps and defenses.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::attacks::{
    hf_ac_power, hf_decide, hf_prepare, lf_attack_period, AttackConfig, AttackMode, Guess,
};
use crate::channel::{simulate_session, KljnConfig, ResistorPair};
use crate::error::{config_err, Result};
use crate::fft;
use crate::noise::SampledTrace;
use crate::seed;
use crate::BOLTZMANN;

/// Tally of Eve's guesses over the secure periods of one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttackOutcome {
    pub n_secure: usize,
    /// Secure periods minus the ones Eve discarded as undetermined.
    pub n_guessed: usize,
    pub n_correct: usize,
    /// All simulated clock periods, secure or not.
    pub n_periods: usize,
}

impl AttackOutcome {
    /// Fraction of correct guesses among the determined ones.
    ///
    /// With nothing guessed Eve learns nothing, which is reported as 0.5.
    pub fn p(&self) -> f64 {
        if self.n_guessed == 0 {
            0.5
        } else {
            self.n_correct as f64 / self.n_guessed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub t_eff: f64,
    pub u_eff: f64,
    pub f_a: f64,
    pub f_c: f64,
    pub f_b: f64,
    pub mode: AttackMode,
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefenseKind {
    None,
    Notch,
    RaiseTemperature,
}

impl DefenseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Notch => "notch",
            DefenseKind::RaiseTemperature => "raise_temperature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseSpec {
    pub kind: DefenseKind,
    /// Notch center; `None` tracks the source frequency.
    pub notch_center: Option<f64>,
    /// Notch half-width; `None` means one clock frequency.
    pub notch_halfwidth: Option<f64>,
    pub target_t_eff: f64,
}

impl DefenseSpec {
    pub fn none() -> Self {
        Self {
            kind: DefenseKind::None,
            notch_center: None,
            notch_halfwidth: None,
            target_t_eff: 0.0,
        }
    }

    pub fn notch(center: Option<f64>, halfwidth: Option<f64>) -> Self {
        Self { kind: DefenseKind::Notch, notch_center: center, notch_halfwidth: halfwidth, ..Self::none() }
    }

    pub fn raise_temperature(target_t_eff: f64) -> Self {
        Self { kind: DefenseKind::RaiseTemperature, target_t_eff, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DefenseKind::None => Ok(()),
            DefenseKind::Notch => {
                for (name, v) in [("notch_center", self.notch_center), ("notch_halfwidth", self.notch_halfwidth)] {
                    if let Some(v) = v {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(config_err(format!("defense.{name} must be positive, got {v}")));
                        }
                    }
                }
                Ok(())
            }
            DefenseKind::RaiseTemperature => {
                if !(self.target_t_eff > 0.0 && self.target_t_eff.is_finite()) {
                    return Err(config_err(format!(
                        "defense.target_t_eff must be positive, got {}",
                        self.target_t_eff
                    )));
                }
                Ok(())
            }
        }
    }
}

/// RMS wire noise of the secure situations at temperature `t_eff`.
pub fn u_eff_of_teff(t_eff: f64, pair: &ResistorPair, f_b: f64) -> f64 {
    (4.0 * BOLTZMANN * t_eff * f_b * pair.parallel()).sqrt()
}

/// Inverse of [`u_eff_of_teff`].
pub fn teff_of_ueff(u_eff: f64, pair: &ResistorPair, f_b: f64) -> f64 {
    u_eff * u_eff / (4.0 * BOLTZMANN * f_b * pair.parallel())
}

/// `n` geometrically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi / lo).ln() / (n - 1) as f64;
            (0..n)
                .map(|k| match k {
                    0 => lo,
                    k if k == n - 1 => hi,
                    k => lo * (step * k as f64).exp(),
                })
                .collect()
        }
    }
}

/// Brick-wall notch: zeroes every bin within `halfwidth` of `center`.
pub fn notch_filter(trace: &SampledTrace, center: f64, halfwidth: f64) -> Result<SampledTrace> {
    let nyquist = trace.sample_rate() / 2.0;
    if !(center > 0.0 && center < nyquist) {
        return Err(config_err(format!(
            "notch center {center} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if !(halfwidth > 0.0) {
        return Err(config_err(format!("notch half-width must be positive, got {halfwidth}")));
    }
    let n = trace.len();
    let bin_width = trace.sample_rate() / n as f64;
    let mut spectrum = fft::forward_real(trace.samples());
    let tol = 1e-9 * bin_width;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let f = fft::signed_bin(k, n).unsigned_abs() as f64 * bin_width;
        if (f - center).abs() <= halfwidth + tol {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    fft::inverse(&mut spectrum);
    let samples = spectrum.iter().map(|c| c.re / n as f64).collect();
    Ok(SampledTrace::from_parts(samples, trace.sample_rate()))
}

/// Simulates one session and scores Eve's attack on every secure period.
///
/// Key bits follow LH = 0, HL = 1, so a guess is correct exactly when it
/// names the true situation.
pub fn run_point(
    config: &KljnConfig,
    attack: &AttackConfig,
    defense: &DefenseSpec,
) -> Result<AttackOutcome> {
    defense.validate()?;
    let mut config = *config;
    if defense.kind == DefenseKind::RaiseTemperature {
        config.t_eff = config.t_eff.max(defense.target_t_eff);
    }
    config.validate()?;
    attack.validate(&config)?;

    let notch = match defense.kind {
        DefenseKind::Notch => Some((
            defense.notch_center.unwrap_or(config.source.frequency),
            defense.notch_halfwidth.unwrap_or(config.f_c),
        )),
        _ => None,
    };
    let eve_source = attack.eve_source(&config);
    let prep = match attack.mode {
        AttackMode::HighFreq => Some(hf_prepare(&config, attack)?),
        AttackMode::LowFreq => None,
    };
    let mut tie_rng = ChaCha20Rng::seed_from_u64(seed::mix(config.seed, &[seed::TIE_BREAK]));

    let records = simulate_session(&config)?;
    let mut outcome = AttackOutcome { n_periods: records.len(), ..Default::default() };
    for rec in records.iter().filter(|r| r.situation.is_secure()) {
        let filtered;
        let observed = match notch {
            Some((center, halfwidth)) => {
                filtered = notch_filter(&rec.wire_voltage, center, halfwidth)?;
                &filtered
            }
            None => &rec.wire_voltage,
        };
        let guess = match &prep {
            None => lf_attack_period(&eve_source, rec.index, config.tau(), attack.kappa, observed).guess,
            Some(prep) => hf_decide(hf_ac_power(observed, prep)?, prep, &mut tie_rng),
        };
        outcome.n_secure += 1;
        if guess != Guess::Undetermined {
            outcome.n_guessed += 1;
            if guess.situation() == Some(rec.situation) {
                outcome.n_correct += 1;
            }
        }
    }
    Ok(outcome)
}

/// Seed of the sweep cell at (`u_index`, `f_index`).
pub fn cell_seed(base_seed: u64, u_index: usize, f_index: usize) -> u64 {
    seed::mix(base_seed, &[u_index as u64, f_index as u64])
}

/// Configuration of one sweep cell.
pub fn cell_config(base: &KljnConfig, u_eff: f64, f_a: f64, u_index: usize, f_index: usize) -> KljnConfig {
    let mut cfg = *base;
    cfg.t_eff = teff_of_ueff(u_eff, &base.resistors, base.f_b);
    cfg.source.frequency = f_a;
    cfg.seed = cell_seed(base.seed, u_index, f_index);
    cfg
}

/// Evaluates every (`f_a`, `u_eff`) cell, ordered by `f_a` then `u_eff` in
/// grid order. Cells run in parallel on the current rayon pool; the result
/// does not depend on the pool size.
pub fn sweep(
    base: &KljnConfig,
    attack: &AttackConfig,
    defense: &DefenseSpec,
    u_eff_grid: &[f64],
    f_a_grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if u_eff_grid.is_empty() || f_a_grid.is_empty() {
        return Err(config_err("sweep grids must be non-empty"));
    }
    if let Some(u) = u_eff_grid.iter().find(|u| !(**u >= 0.0 && u.is_finite())) {
        return Err(config_err(format!("u_eff grid values must be non-negative, got {u}")));
    }
    let cells: Vec<(usize, usize)> = (0..f_a_grid.len())
        .flat_map(|fi| (0..u_eff_grid.len()).map(move |ui| (fi, ui)))
        .collect();
    cells
        .into_par_iter()
        .map(|(fi, ui)| {
            let cfg = cell_config(base, u_eff_grid[ui], f_a_grid[fi], ui, fi);
            let outcome = run_point(&cfg, attack, defense)?;
            Ok(SweepPoint {
                t_eff: cfg.t_eff,
                u_eff: u_eff_grid[ui],
                f_a: f_a_grid[fi],
                f_c: cfg.f_c,
                f_b: cfg.f_b,
                mode: attack.mode,
                outcome,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "mode,f_a_hz,f_c_hz,f_b_hz,u_eff_vrms,t_eff_k,n_secure,n_guessed,n_correct,p";

/// One CSV row; floats carry 10 significant digits.
pub fn sweep_csv_row(p: &SweepPoint) -> String {
    format!(
        "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{},{:.9e}",
        p.mode.as_str(),
        p.f_a,
        p.f_c,
        p.f_b,
        p.u_eff,
        p.t_eff,
        p.outcome.n_secure,
        p.outcome.n_guessed,
        p.outcome.n_correct,
        p.outcome.p()
    )
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{}", sweep_csv_row(p))?;
    }
    out.flush()?;
    Ok(())
}
