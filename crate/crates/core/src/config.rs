//! TOML run configuration and compiled-in presets.
//!
//! A configuration is resolved in layers: a preset supplies every value, a
//! config file overrides some of them, command-line flags override the file.
//! Unknown keys are rejected.
//!
//! | key                        | meaning                                        |
//! |----------------------------|------------------------------------------------|
//! | `run.preset`               | `fig5` or `fig6` (base layer, default `fig5`)  |
//! | `run.out`                  | output path (stdout when absent)               |
//! | `run.force`                | allow overwriting `run.out`                    |
//! | `run.threads`              | worker threads for sweeps                      |
//! | `channel.r_low`, `r_high`  | resistor pair, ohms                            |
//! | `channel.t_eff`            | noise temperature, K (exclusive with `u_eff`)  |
//! | `channel.u_eff`            | wire noise rms, V (exclusive with `t_eff`)     |
//! | `channel.f_b`, `f_c`       | noise bandwidth and clock frequency, Hz        |
//! | `channel.f_a`              | parasitic source frequency, Hz                 |
//! | `channel.source_amplitude` | source amplitude, V                            |
//! | `channel.source_phase`     | source phase at t = 0, rad                     |
//! | `channel.n_secure_bits`    | secure bits per session                        |
//! | `channel.seed`             | base seed                                      |
//! | `attack.mode`              | `low_freq` or `high_freq`                      |
//! | `attack.kappa`             | low-frequency threshold scale                  |
//! | `attack.ensemble_size`     | high-frequency background ensemble size        |
//! | `attack.band_lo`, `band_hi`| high-frequency band, Hz (both or neither)      |
//! | `attack.eve_knows_source`  | Eve uses the true source waveform              |
//! | `attack.assumed_amplitude` | source amplitude Eve assumes otherwise, V      |
//! | `defense.kind`             | `none`, `notch` or `raise_temperature`         |
//! | `defense.notch_center`     | Hz, defaults to the source frequency           |
//! | `defense.notch_halfwidth`  | Hz, defaults to `f_c`                          |
//! | `defense.target_t_eff`     | K                                              |
//! | `grids.u_eff`              | explicit list of wire noise levels, V          |
//! | `grids.u_eff_min`, `u_eff_max`, `u_eff_points` | log-spaced grid        |
//! | `grids.f_a`                | list of source frequencies, Hz                 |

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackMode, Band};
use crate::channel::{KljnConfig, PeriodicSource, ResistorPair};
use crate::error::{config_err, Error, Result};
use crate::experiment::{log_grid, teff_of_ueff, u_eff_of_teff, DefenseKind, DefenseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig5,
    Fig6,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fig5" => Ok(Preset::Fig5),
            "fig6" => Ok(Preset::Fig6),
            other => Err(config_err(format!(
                "run.preset: unknown preset '{other}' (expected fig5 or fig6)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
        }
    }

    /// Every key populated with the preset's values.
    pub fn layer(self) -> ConfigFile {
        let (f_c, f_a, mode) = match self {
            Preset::Fig5 => (1e3, vec![318.30, 101.32, 32.25], "low_freq"),
            Preset::Fig6 => (500.0, vec![2e3, 16e3, 32e3], "high_freq"),
        };
        ConfigFile {
            run: Some(RunSection {
                preset: Some(self.name().into()),
                out: None,
                force: Some(false),
                threads: None,
            }),
            channel: Some(ChannelSection {
                r_low: Some(1e3),
                r_high: Some(10e3),
                t_eff: Some(9e15),
                u_eff: None,
                f_b: Some(100e3),
                f_c: Some(f_c),
                f_a: Some(f_a[0]),
                source_amplitude: Some(1.0),
                source_phase: Some(0.0),
                n_secure_bits: Some(1000),
                seed: Some(1),
            }),
            attack: Some(AttackSection {
                mode: Some(mode.into()),
                kappa: Some(0.5),
                ensemble_size: Some(1000),
                band_lo: None,
                band_hi: None,
                eve_knows_source: Some(true),
                assumed_amplitude: Some(1.0),
            }),
            defense: Some(DefenseSection {
                kind: Some("none".into()),
                notch_center: None,
                notch_halfwidth: None,
                target_t_eff: None,
            }),
            grids: Some(GridSection {
                u_eff: None,
                u_eff_min: Some(0.01),
                u_eff_max: Some(100.0),
                u_eff_points: Some(25),
                f_a: Some(f_a),
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grids: Option<GridSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_phase: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_secure_bits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eve_knows_source: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumed_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notch_center: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notch_halfwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_t_eff: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_eff: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_eff_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_eff_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_eff_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_a: Option<Vec<f64>>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a config file; errors name the path and the offending line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Preset named in this layer, if any.
    pub fn preset_name(&self) -> Option<&str> {
        self.run.as_ref().and_then(|r| r.preset.as_deref())
    }

    /// Overrides every key present in `top`.
    pub fn overlay(&mut self, top: &ConfigFile) -> Result<()> {
        if let Some(src) = &top.run {
            let dst = self.run.get_or_insert_with(Default::default);
            overlay!(dst, src, [preset, out, force, threads]);
        }
        if let Some(src) = &top.channel {
            if src.t_eff.is_some() && src.u_eff.is_some() {
                return Err(config_err("channel.t_eff and channel.u_eff are mutually exclusive"));
            }
            let dst = self.channel.get_or_insert_with(Default::default);
            if src.t_eff.is_some() {
                dst.u_eff = None;
            }
            if src.u_eff.is_some() {
                dst.t_eff = None;
            }
            overlay!(dst, src, [
                r_low, r_high, t_eff, u_eff, f_b, f_c, f_a, source_amplitude, source_phase,
                n_secure_bits, seed,
            ]);
        }
        if let Some(src) = &top.attack {
            let dst = self.attack.get_or_insert_with(Default::default);
            overlay!(dst, src, [
                mode, kappa, ensemble_size, band_lo, band_hi, eve_knows_source, assumed_amplitude,
            ]);
        }
        if let Some(src) = &top.defense {
            let dst = self.defense.get_or_insert_with(Default::default);
            overlay!(dst, src, [kind, notch_center, notch_halfwidth, target_t_eff]);
        }
        if let Some(src) = &top.grids {
            let dst = self.grids.get_or_insert_with(Default::default);
            if src.u_eff.is_some() {
                dst.u_eff_min = None;
                dst.u_eff_max = None;
                dst.u_eff_points = None;
            }
            if src.u_eff_min.is_some() || src.u_eff_max.is_some() || src.u_eff_points.is_some() {
                dst.u_eff = None;
            }
            overlay!(dst, src, [u_eff, u_eff_min, u_eff_max, u_eff_points, f_a]);
        }
        Ok(())
    }
}

/// Sweep axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub u_eff: Vec<f64>,
    pub f_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub preset: Preset,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub threads: Option<usize>,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub channel: KljnConfig,
    pub attack: AttackConfig,
    pub defense: DefenseSpec,
    pub grids: Grids,
    pub run: RunOptions,
}

fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| config_err(format!("{key}: missing value")))
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("{key}: must be positive, got {v}")))
    }
}

fn non_negative(v: f64, key: &str) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("{key}: must be non-negative, got {v}")))
    }
}

impl Settings {
    /// Resolves `layers` over the preset named by the last layer that names
    /// one (`fig5` when none does).
    pub fn resolve(layers: &[&ConfigFile]) -> Result<Self> {
        let preset_name = layers.iter().rev().find_map(|l| l.preset_name()).unwrap_or("fig5");
        let preset = Preset::from_name(preset_name)?;
        let mut merged = preset.layer();
        for layer in layers {
            merged.overlay(layer)?;
        }
        Self::from_merged(preset, &merged)
    }

    fn from_merged(preset: Preset, file: &ConfigFile) -> Result<Self> {
        let run = file.run.clone().unwrap_or_default();
        let ch = file.channel.clone().unwrap_or_default();
        let at = file.attack.clone().unwrap_or_default();
        let de = file.defense.clone().unwrap_or_default();
        let gr = file.grids.clone().unwrap_or_default();

        let r_low = positive(need(&ch.r_low, "channel.r_low")?, "channel.r_low")?;
        let r_high = positive(need(&ch.r_high, "channel.r_high")?, "channel.r_high")?;
        if r_low >= r_high {
            return Err(config_err(format!(
                "channel.r_low ({r_low}) must be below channel.r_high ({r_high})"
            )));
        }
        let resistors = ResistorPair::new(r_low, r_high)?;
        let f_b = positive(need(&ch.f_b, "channel.f_b")?, "channel.f_b")?;
        let f_c = positive(need(&ch.f_c, "channel.f_c")?, "channel.f_c")?;
        if f_b <= f_c {
            return Err(config_err(format!(
                "channel.f_b ({f_b}) must exceed channel.f_c ({f_c})"
            )));
        }
        let t_eff = match (ch.t_eff, ch.u_eff) {
            (Some(t), None) => non_negative(t, "channel.t_eff")?,
            (None, Some(u)) => teff_of_ueff(non_negative(u, "channel.u_eff")?, &resistors, f_b),
            _ => return Err(config_err("exactly one of channel.t_eff and channel.u_eff is required")),
        };
        let source = PeriodicSource {
            amplitude: non_negative(
                need(&ch.source_amplitude, "channel.source_amplitude")?,
                "channel.source_amplitude",
            )?,
            frequency: non_negative(need(&ch.f_a, "channel.f_a")?, "channel.f_a")?,
            phase: need(&ch.source_phase, "channel.source_phase")?,
        };
        let n_secure_bits = need(&ch.n_secure_bits, "channel.n_secure_bits")?;
        if n_secure_bits == 0 {
            return Err(config_err("channel.n_secure_bits: must be at least 1"));
        }
        let channel = KljnConfig::new(
            resistors,
            t_eff,
            f_b,
            f_c,
            source,
            need(&ch.seed, "channel.seed")?,
            n_secure_bits,
        )?;

        let mode = match need(&at.mode, "attack.mode")?.as_str() {
            "low_freq" => AttackMode::LowFreq,
            "high_freq" => AttackMode::HighFreq,
            other => {
                return Err(config_err(format!(
                    "attack.mode: expected low_freq or high_freq, got '{other}'"
                )))
            }
        };
        let band = match (at.band_lo, at.band_hi) {
            (None, None) => None,
            (Some(lo), Some(hi)) => {
                if !(lo >= 0.0 && lo < hi && hi <= f_b) {
                    return Err(config_err(format!(
                        "attack.band_lo ({lo}) and attack.band_hi ({hi}) must satisfy 0 <= lo < hi <= channel.f_b ({f_b})"
                    )));
                }
                Some(Band { lo, hi })
            }
            _ => return Err(config_err("attack.band_lo and attack.band_hi must be given together")),
        };
        let ensemble_size = need(&at.ensemble_size, "attack.ensemble_size")?;
        if mode == AttackMode::HighFreq && ensemble_size < crate::attacks::MIN_ENSEMBLE {
            return Err(config_err(format!(
                "attack.ensemble_size: must be at least {}, got {ensemble_size}",
                crate::attacks::MIN_ENSEMBLE
            )));
        }
        let attack = AttackConfig {
            mode,
            kappa: positive(need(&at.kappa, "attack.kappa")?, "attack.kappa")?,
            ensemble_size,
            band,
            eve_knows_source: need(&at.eve_knows_source, "attack.eve_knows_source")?,
            assumed_amplitude: non_negative(
                need(&at.assumed_amplitude, "attack.assumed_amplitude")?,
                "attack.assumed_amplitude",
            )?,
        };
        attack.validate(&channel)?;

        let kind = match need(&de.kind, "defense.kind")?.as_str() {
            "none" => DefenseKind::None,
            "notch" => DefenseKind::Notch,
            "raise_temperature" => DefenseKind::RaiseTemperature,
            other => {
                return Err(config_err(format!(
                    "defense.kind: expected none, notch or raise_temperature, got '{other}'"
                )))
            }
        };
        if let Some(c) = de.notch_center {
            positive(c, "defense.notch_center")?;
        }
        if let Some(w) = de.notch_halfwidth {
            positive(w, "defense.notch_halfwidth")?;
        }
        let target_t_eff = match (kind, de.target_t_eff) {
            (DefenseKind::RaiseTemperature, None) => {
                return Err(config_err("defense.target_t_eff: required for raise_temperature"))
            }
            (_, Some(t)) => positive(t, "defense.target_t_eff")?,
            (_, None) => 0.0,
        };
        let defense = DefenseSpec {
            kind,
            notch_center: de.notch_center,
            notch_halfwidth: de.notch_halfwidth,
            target_t_eff,
        };

        let u_eff = match (&gr.u_eff, gr.u_eff_min, gr.u_eff_max, gr.u_eff_points) {
            (Some(list), None, None, None) => {
                for u in list {
                    non_negative(*u, "grids.u_eff")?;
                }
                list.clone()
            }
            (None, Some(lo), Some(hi), Some(n)) => {
                positive(lo, "grids.u_eff_min")?;
                positive(hi, "grids.u_eff_max")?;
                if n == 0 {
                    return Err(config_err("grids.u_eff_points: must be at least 1"));
                }
                if lo > hi {
                    return Err(config_err(format!(
                        "grids.u_eff_min ({lo}) must not exceed grids.u_eff_max ({hi})"
                    )));
                }
                log_grid(lo, hi, n)
            }
            _ => {
                return Err(config_err(
                    "grids: give either u_eff or all of u_eff_min, u_eff_max, u_eff_points",
                ))
            }
        };
        if u_eff.is_empty() {
            return Err(config_err("grids.u_eff: must not be empty"));
        }
        let f_a = need(&gr.f_a, "grids.f_a")?;
        if f_a.is_empty() {
            return Err(config_err("grids.f_a: must not be empty"));
        }
        for f in &f_a {
            non_negative(*f, "grids.f_a")?;
        }

        if run.threads == Some(0) {
            return Err(config_err("run.threads: must be at least 1"));
        }
        Ok(Settings {
            channel,
            attack,
            defense,
            grids: Grids { u_eff, f_a },
            run: RunOptions {
                preset,
                out: run.out,
                force: run.force.unwrap_or(false),
                threads: run.threads,
            },
        })
    }

    /// The resolved settings as a config file that reproduces them.
    pub fn to_config_file(&self) -> ConfigFile {
        let c = &self.channel;
        ConfigFile {
            run: Some(RunSection {
                preset: Some(self.run.preset.name().into()),
                out: self.run.out.clone(),
                force: Some(self.run.force),
                threads: self.run.threads,
            }),
            channel: Some(ChannelSection {
                r_low: Some(c.resistors.r_low),
                r_high: Some(c.resistors.r_high),
                t_eff: Some(c.t_eff),
                u_eff: None,
                f_b: Some(c.f_b),
                f_c: Some(c.f_c),
                f_a: Some(c.source.frequency),
                source_amplitude: Some(c.source.amplitude),
                source_phase: Some(c.source.phase),
                n_secure_bits: Some(c.n_secure_bits),
                seed: Some(c.seed),
            }),
            attack: Some(AttackSection {
                mode: Some(self.attack.mode.as_str().into()),
                kappa: Some(self.attack.kappa),
                ensemble_size: Some(self.attack.ensemble_size),
                band_lo: self.attack.band.map(|b| b.lo),
                band_hi: self.attack.band.map(|b| b.hi),
                eve_knows_source: Some(self.attack.eve_knows_source),
                assumed_amplitude: Some(self.attack.assumed_amplitude),
            }),
            defense: Some(DefenseSection {
                kind: Some(self.defense.kind.as_str().into()),
                notch_center: self.defense.notch_center,
                notch_halfwidth: self.defense.notch_halfwidth,
                target_t_eff: (self.defense.kind == DefenseKind::RaiseTemperature)
                    .then_some(self.defense.target_t_eff),
            }),
            grids: Some(GridSection {
                u_eff: Some(self.grids.u_eff.clone()),
                u_eff_min: None,
                u_eff_max: None,
                u_eff_points: None,
                f_a: Some(self.grids.f_a.clone()),
            }),
        }
    }

    /// Wire noise rms implied by the channel temperature.
    pub fn u_eff(&self) -> f64 {
        u_eff_of_teff(self.channel.t_eff, &self.channel.resistors, self.channel.f_b)
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match toml::to_string(&self.to_config_file()) {
            Ok(s) => f.write_str(&s),
            Err(_) => Err(fmt::Error),
        }
    }
}

/// Loads `path` and resolves it over its preset.
pub fn parse_config(path: &Path) -> Result<Settings> {
    let file = ConfigFile::load(path)?;
    Settings::resolve(&[&file])
}
