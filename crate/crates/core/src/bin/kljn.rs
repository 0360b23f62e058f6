//! `kljn`: simulate the AC-compromised KLJN loop, attack it, sweep noise
//! levels and evaluate defenses.

use std::fs::OpenOptions;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use kljn_ac::channel::{simulate_session, write_session_csv};
use kljn_ac::config::{ChannelSection, ConfigFile, GridSection, RunSection, Settings};
use kljn_ac::experiment::{
    run_point, sweep, sweep_csv_row, write_sweep_csv, DefenseKind, DefenseSpec, SweepPoint,
    SWEEP_CSV_HEADER,
};
use kljn_ac::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "kljn", version, about = "KLJN key exchange under AC ground-loop attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump one simulated session as CSV
    Simulate(Common),
    /// Attack a single (u_eff, f_a) point and print its outcome row
    Attack(Common),
    /// Sweep the u_eff x f_a grid without defenses
    Sweep(Common),
    /// Sweep the grid with the configured defense (a notch at f_a by default)
    Defend(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Compiled-in parameter set: fig5 or fig6
    #[arg(long)]
    preset: Option<String>,
    /// Base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output file
    #[arg(long)]
    force: bool,
    /// Worker threads for sweeps
    #[arg(long)]
    threads: Option<usize>,
    /// Wire noise rms in volts (sets the temperature; a one-point grid for sweeps)
    #[arg(long = "u-eff")]
    u_eff: Option<f64>,
    /// Source frequency in Hz (a one-point grid for sweeps)
    #[arg(long = "f-a")]
    f_a: Option<f64>,
}

impl Common {
    fn flag_layer(&self, sweeping: bool) -> ConfigFile {
        let run = RunSection {
            preset: self.preset.clone(),
            out: self.out.clone(),
            force: self.force.then_some(true),
            threads: self.threads,
        };
        let channel = ChannelSection {
            seed: self.seed,
            u_eff: self.u_eff,
            f_a: self.f_a,
            ..Default::default()
        };
        let grids = sweeping.then(|| GridSection {
            u_eff: self.u_eff.map(|u| vec![u]),
            f_a: self.f_a.map(|f| vec![f]),
            ..Default::default()
        });
        ConfigFile {
            run: Some(run),
            channel: Some(channel),
            grids,
            ..Default::default()
        }
    }

    fn settings(&self, sweeping: bool) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Settings::resolve(&[&file, &self.flag_layer(sweeping)])
    }
}

/// Opens the output; an existing file is only replaced with `force`.
fn open_output(path: Option<&Path>, force: bool) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            let mut opts = OpenOptions::new();
            opts.write(true);
            if force {
                opts.create(true).truncate(true);
            } else {
                opts.create_new(true);
            }
            let file = opts.open(p).map_err(|e| {
                let hint = if e.kind() == io::ErrorKind::AlreadyExists {
                    " (use --force to overwrite)"
                } else {
                    ""
                };
                Error::Io(io::Error::new(e.kind(), format!("{}: {e}{hint}", p.display())))
            })?;
            Ok(Box::new(BufWriter::new(file)))
        }
    }
}

fn run_sweep(settings: &Settings, defense: &DefenseSpec) -> Result<Vec<SweepPoint>> {
    let job = || {
        sweep(
            &settings.channel,
            &settings.attack,
            defense,
            &settings.grids.u_eff,
            &settings.grids.f_a,
        )
    };
    match settings.run.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("run.threads: {e}")))?
            .install(job),
        None => job(),
    }
}

fn dispatch(command: &Command) -> Result<u64> {
    let (common, sweeping) = match command {
        Command::Simulate(c) | Command::Attack(c) => (c, false),
        Command::Sweep(c) | Command::Defend(c) => (c, true),
    };
    let settings = common.settings(sweeping)?;
    eprintln!("# resolved configuration\n{settings}");

    let out_path = settings.run.out.as_deref();
    match command {
        Command::Simulate(_) => {
            let records = simulate_session(&settings.channel)?;
            let out = open_output(out_path, settings.run.force)?;
            write_session_csv(&records, out)?;
            Ok(records.len() as u64)
        }
        Command::Attack(_) => {
            let outcome = run_point(&settings.channel, &settings.attack, &settings.defense)?;
            let point = SweepPoint {
                t_eff: settings.channel.t_eff,
                u_eff: settings.u_eff(),
                f_a: settings.channel.source.frequency,
                f_c: settings.channel.f_c,
                f_b: settings.channel.f_b,
                mode: settings.attack.mode,
                outcome,
            };
            let mut out = open_output(out_path, settings.run.force)?;
            writeln!(out, "{SWEEP_CSV_HEADER}")?;
            writeln!(out, "{}", sweep_csv_row(&point))?;
            out.flush()?;
            Ok(outcome.n_periods as u64)
        }
        Command::Sweep(_) | Command::Defend(_) => {
            let defense = match command {
                Command::Sweep(_) => DefenseSpec::none(),
                _ if settings.defense.kind == DefenseKind::None => DefenseSpec::notch(None, None),
                _ => settings.defense,
            };
            // Fail on an existing output before spending minutes on the sweep.
            if let Some(p) = out_path {
                if p.exists() && !settings.run.force {
                    return Err(Error::Io(io::Error::new(
                        io::ErrorKind::AlreadyExists,
                        format!("{}: file exists (use --force to overwrite)", p.display()),
                    )));
                }
            }
            let points = run_sweep(&settings, &defense)?;
            write_sweep_csv(&points, open_output(out_path, settings.run.force)?)?;
            Ok(points.iter().map(|p| p.outcome.n_periods as u64).sum())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match dispatch(&cli.command) {
        Ok(bits) => {
            eprintln!(
                "wall time {:.3} s, {bits} bits simulated",
                start.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
