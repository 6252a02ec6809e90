//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::atmosphere::total_atmospheric_loss;
use crate::channel_trace::{self, coherence_time, trace_stats_of, ChannelTrace, TraceGenerator};
use crate::config::{self, presets, SimConfig};
use crate::error::{FsoError, Result, StageExt};
use crate::linkbudget::{received_power_dbm, write_budget_csv, write_budget_table};
use crate::pat::run_tracking_loop;
use crate::pipeline::{payload_roundtrip, run_endtoend, scenario_sweep, select_fading, RunReport};
use crate::spatial_filter::{filtered_snr, filtering_ber_demo, solar_noise_power, ApertureGrid};

#[derive(Debug, Parser)]
#[command(name = "fso-sim", version, about = "Free-space optical link simulator and channel emulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Weather preset (see `scenarios`).
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// JSON config file merged over the preset.
    #[arg(long, global = true, env = "FSO_SIM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `weather.visibility_km=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Master random seed (same as `--set run.seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Report format; each command has its own default.
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Leave wall-clock timings out of reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
    /// Binary trace file (`trace` only).
    Binary,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Atmospheric loss breakdown and received-power budget.
    Budget,
    /// Generate a fading trace for the configured link.
    Trace {
        /// Trace length in seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Sample rate in Hz.
        #[arg(long, default_value_t = 10_000.0)]
        rate: f64,
    },
    /// End-to-end PAM-4 transmission over the emulated channel.
    Transmit {
        /// Send this file instead of random bits.
        #[arg(long)]
        payload: Option<PathBuf>,
        /// Where to write the recovered payload (default: `<payload>.rx`).
        #[arg(long)]
        recovered: Option<PathBuf>,
        /// Random-payload symbol count (same as `--set run.symbols=N`).
        #[arg(long)]
        symbols: Option<u64>,
    },
    /// Closed-loop quadrant-detector tracking simulation.
    PatSim {
        /// Samples per correction.
        #[arg(long)]
        m: Option<usize>,
        /// Proportional controller gain.
        #[arg(long)]
        gain: Option<f64>,
        /// Disturbance RMS in metres.
        #[arg(long)]
        disturbance_rms: Option<f64>,
        /// Simulated time in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Also write the residual trace CSV here.
        #[arg(long)]
        residual_csv: Option<PathBuf>,
    },
    /// Spatial selective filtering: SNR gain and paired BER runs.
    FilterSim {
        /// Partition order n (n×n cells).
        #[arg(long)]
        n: Option<usize>,
        /// Headerless CSV matrix of cell intensities; reports the SNR gain only.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Symbols per BER run.
        #[arg(long, default_value_t = 10_000_000)]
        symbols: u64,
    },
    /// Repeat a run over values of one numeric config key.
    Sweep {
        /// Dotted config key, e.g. `weather.visibility_km` or `pat.m`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; empty runs nothing and prints the header.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
    /// List built-in weather presets.
    Scenarios,
}

/// Parse `args`, run the command and return the process exit status:
/// 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                FsoError::UnknownKey(_) | FsoError::UnknownPreset(_) | FsoError::UnknownAxis { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn resolve_config(g: &GlobalOpts, extra: &[String]) -> Result<SimConfig> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    overrides.extend_from_slice(extra);
    config::resolve(g.scenario.as_deref(), g.config.as_deref(), &overrides)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| FsoError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out).map_err(|e| FsoError::io("<output>", e))
}

fn finish(mut out: Box<dyn Write>) -> Result<()> {
    out.flush().map_err(|e| FsoError::io("<output>", e))
}

fn bad_format(cmd: &str, f: Format) -> FsoError {
    FsoError::InvalidValue {
        key: "--format".into(),
        reason: format!("{f:?} is not supported by `{cmd}`").to_lowercase(),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Scenarios => {
            let mut out = open_output(g.output.as_deref())?;
            match g.format.unwrap_or(Format::Text) {
                Format::Text => {
                    for (name, desc) in presets::describe() {
                        writeln!(out, "{name:<8} {desc}").map_err(|e| FsoError::io("<output>", e))?;
                    }
                }
                Format::Json => {
                    let all: Vec<SimConfig> = presets::NAMES.iter().map(|n| presets::by_name(n)).collect::<Result<_>>()?;
                    write_json(&mut out, &all)?;
                }
                f => return Err(bad_format("scenarios", f)),
            }
            finish(out)
        }
        Command::Budget => {
            let cfg = resolve_config(g, &[])?;
            let losses = total_atmospheric_loss(&cfg.weather, &cfg.geometry, &cfg.atmosphere).stage("atmosphere")?;
            let budget = received_power_dbm(&cfg.optics, &cfg.geometry, &losses).stage("linkbudget")?;
            let mut out = open_output(g.output.as_deref())?;
            match g.format.unwrap_or(Format::Text) {
                Format::Text => write_budget_table(&mut out, &losses, &budget).map_err(|e| FsoError::io("<output>", e))?,
                Format::Csv => write_budget_csv(&mut out, &losses, &budget)?,
                Format::Json => write_json(&mut out, &serde_json::json!({ "losses": losses, "budget": budget }))?,
                f => return Err(bad_format("budget", f)),
            }
            finish(out)
        }
        Command::Trace { duration, rate } => {
            let cfg = resolve_config(g, &[])?;
            let losses = total_atmospheric_loss(&cfg.weather, &cfg.geometry, &cfg.atmosphere).stage("atmosphere")?;
            let trace = match select_fading(&cfg, losses.rytov_variance).stage("fading")? {
                Some(model) => {
                    let tau = coherence_time(&cfg.geometry, cfg.weather.wind_speed_mps).stage("coherence_time")?;
                    TraceGenerator::new(&model, tau, *rate, *duration, cfg.run.seed)
                        .and_then(|t| t.collect(cfg.run.max_trace_samples))
                        .stage("trace")?
                }
                None => ChannelTrace::constant(*rate, (rate * duration).ceil().max(1.0) as usize),
            };
            let format = g.format.unwrap_or(Format::Csv);
            match (format, g.output.as_deref()) {
                (Format::Csv | Format::Binary, Some(path)) => {
                    channel_trace::save(&trace, path, format == Format::Binary)?;
                    if let Ok(s) = trace_stats_of(&trace) {
                        eprintln!(
                            "{} samples, mean {:.6}, scintillation index {:.6}, coherence time {}",
                            s.samples,
                            s.mean,
                            s.scintillation_index,
                            s.coherence_time_s.map_or("n/a".into(), |t| format!("{t:.6} s"))
                        );
                    }
                    Ok(())
                }
                (Format::Csv, None) => {
                    let mut out = open_output(None)?;
                    channel_trace::write_csv(&trace, &mut out)?;
                    finish(out)
                }
                (Format::Binary, None) => Err(FsoError::InvalidValue {
                    key: "--output".into(),
                    reason: "binary traces need an output file".into(),
                }),
                (f, _) => Err(bad_format("trace", f)),
            }
        }
        Command::Transmit { payload, recovered, symbols } => {
            let extra: Vec<String> = symbols.iter().map(|n| format!("run.symbols={n}")).collect();
            let cfg = resolve_config(g, &extra)?;
            let mut report = match payload {
                Some(input) => {
                    let out_path = recovered.clone().unwrap_or_else(|| {
                        let mut p = input.clone().into_os_string();
                        p.push(".rx");
                        PathBuf::from(p)
                    });
                    payload_roundtrip(input, &cfg, &out_path)?
                }
                None => run_endtoend(&cfg)?,
            };
            if g.no_timestamp {
                report.wall_clock_s = None;
            }
            let mut out = open_output(g.output.as_deref())?;
            match g.format.unwrap_or(Format::Json) {
                Format::Json => write_json(&mut out, &report)?,
                Format::Text => write_run_text(&mut out, &report).map_err(|e| FsoError::io("<output>", e))?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut out);
                    w.write_record(RunReport::CSV_HEADER)?;
                    w.write_record(report.csv_row())?;
                    w.flush().map_err(csv::Error::from)?;
                }
                f => return Err(bad_format("transmit", f)),
            }
            finish(out)
        }
        Command::PatSim { m, gain, disturbance_rms, duration, residual_csv } => {
            let mut extra = Vec::new();
            extra.extend(m.map(|v| format!("pat.m={v}")));
            extra.extend(gain.map(|v| format!("pat.controller_gain={v}")));
            extra.extend(disturbance_rms.map(|v| format!("pat.disturbance.rms_m={v}")));
            extra.extend(duration.map(|v| format!("pat.duration_s={v}")));
            let cfg = resolve_config(g, &extra)?;
            let result = run_tracking_loop(&cfg.pat, cfg.run.seed).stage("pat")?;
            if let Some(path) = residual_csv {
                let file = File::create(path).map_err(|e| FsoError::io(path, e))?;
                result.write_csv(BufWriter::new(file))?;
            }
            let mut out = open_output(g.output.as_deref())?;
            let s = &result.summary;
            match g.format.unwrap_or(Format::Text) {
                Format::Text => writeln!(
                    out,
                    "m = {}\nsteps = {}\nestimator_gain_m = {:e}\nresidual_rms_m = {:e}\nresidual_rms_x_m = {:e}\nresidual_max_m = {:e}",
                    s.m, s.steps, s.estimator_gain, s.residual_rms_m, s.residual_rms_x_m, s.residual_max_m
                )
                .map_err(|e| FsoError::io("<output>", e))?,
                Format::Json => write_json(&mut out, &serde_json::json!({ "config": cfg.pat, "summary": s }))?,
                Format::Csv => result.write_csv(&mut out)?,
                f => return Err(bad_format("pat-sim", f)),
            }
            finish(out)
        }
        Command::FilterSim { n, grid, symbols } => {
            let extra: Vec<String> = n.iter().map(|v| format!("filter.n={v}")).collect();
            let cfg = resolve_config(g, &extra)?;
            let mut out = open_output(g.output.as_deref())?;
            let format = g.format.unwrap_or(Format::Json);
            if let Some(path) = grid {
                let file = File::open(path).map_err(|e| FsoError::io(path, e))?;
                let grid = ApertureGrid::from_csv(file, solar_noise_power(&cfg.filter.solar)?)?;
                let snr = filtered_snr(&grid)?;
                match format {
                    Format::Json => write_json(&mut out, &snr)?,
                    Format::Text => writeln!(
                        out,
                        "selected = ({}, {})\nsnr_unfiltered = {:e}\nsnr_filtered = {:e}\ngain_db = {:.4}",
                        snr.selected.0, snr.selected.1, snr.snr_unfiltered, snr.snr_filtered, snr.gain_db
                    )
                    .map_err(|e| FsoError::io("<output>", e))?,
                    f => return Err(bad_format("filter-sim --grid", f)),
                }
                return finish(out);
            }
            let report = filtering_ber_demo(&cfg.filter, &cfg.modem, *symbols, cfg.run.seed).stage("filter")?;
            match format {
                Format::Json => write_json(&mut out, &report)?,
                Format::Csv => report.write_csv(&mut out)?,
                Format::Text => writeln!(
                    out,
                    "gain_db = {:.4}\nber_unfiltered = {:e}\nber_filtered = {:e}",
                    report.snr.gain_db, report.unfiltered.ber_counted, report.filtered.ber_counted
                )
                .map_err(|e| FsoError::io("<output>", e))?,
                f => return Err(bad_format("filter-sim", f)),
            }
            finish(out)
        }
        Command::Sweep { axis, values } => {
            let values = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| {
                    v.parse::<f64>().map_err(|_| FsoError::InvalidValue {
                        key: "--values".into(),
                        reason: format!("`{v}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = resolve_config(g, &[])?;
            match g.format.unwrap_or(Format::Csv) {
                Format::Csv => {}
                f => return Err(bad_format("sweep", f)),
            }
            let mut out = open_output(g.output.as_deref())?;
            scenario_sweep(&cfg, axis, &values, &mut out)?;
            finish(out)
        }
    }
}

fn write_run_text(out: &mut dyn Write, r: &RunReport) -> io::Result<()> {
    writeln!(out, "scenario          {}", r.scenario)?;
    writeln!(out, "l_total_db        {:.4}", r.losses.l_total_db)?;
    writeln!(out, "p_r_dbm           {:.4}", r.budget.p_r_dbm)?;
    writeln!(out, "rytov_variance    {:.6}", r.losses.rytov_variance)?;
    if let Some(f) = &r.fading {
        writeln!(out, "fading            {:?}", f.kind)?;
    }
    writeln!(out, "noise_std         {:e}", r.noise_std)?;
    writeln!(out, "symbols           {}", r.symbols)?;
    writeln!(out, "bit_errors        {}", r.ber.bit_errors)?;
    writeln!(out, "ber_counted       {:e}", r.ber.ber_counted)?;
    if let Some(e) = r.ber.ber_estimated {
        writeln!(out, "ber_estimated     {e:e}")?;
    }
    if let Some(p) = &r.payload {
        writeln!(out, "byte_errors       {}", p.byte_errors)?;
    }
    if let Some(t) = r.wall_clock_s {
        writeln!(out, "wall_clock_s      {t:.3}")?;
    }
    Ok(())
}
