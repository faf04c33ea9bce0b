//! `arls` command line: render, track, simulate and bench.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors (including
//! usage errors), 2 when `track` never saw the vehicle.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::controller::{control_step, LampBank};
use crate::harness::{report_csv, report_row, run_trials, summarize, sweep_cells, BatchSummary, Pairing, TraversePlan};
use crate::imaging::{load_frame, read_sequence, write_sequence, Frame};
use crate::kinematics::{update_track, TrackState};

#[derive(Debug, Parser)]
#[command(name = "arls", version, about = "Automatic road lighting simulator")]
pub struct Cli {
    /// Config file (`key = value` lines).
    #[arg(long, global = true, env = "ARLS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path: a directory for `render`, a CSV file for `simulate` and `bench`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for trial batches (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Extra `key=value` config overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct SceneFlags {
    /// Vehicle speed in m/s.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Fraction of frames that are blurred.
    #[arg(long)]
    pub blur: Option<f64>,
    /// Sensor noise amplitude in intensity units.
    #[arg(long)]
    pub noise: Option<u8>,
    /// Simulated processing latency in seconds.
    #[arg(long)]
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairingArg {
    Cross,
    Zip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render one traverse as a numbered PGM sequence.
    Render {
        #[command(flatten)]
        scene: SceneFlags,
        /// Number of frames (default: one full traverse).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Detect and track the vehicle through a directory of PGM frames.
    Track {
        frames_dir: PathBuf,
        /// Background image (default: the first frame of the sequence).
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Run a Monte-Carlo batch and write the report CSV.
    Simulate {
        #[command(flatten)]
        scene: SceneFlags,
        #[arg(long)]
        trials: Option<usize>,
        /// Directory for per-trial lamp event logs.
        #[arg(long)]
        dump_events: Option<PathBuf>,
    },
    /// Sweep speeds and blur levels into a report table.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        speeds: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        blurs: Vec<f64>,
        #[arg(long, value_enum, default_value = "cross")]
        pairing: PairingArg,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        latency: Option<f64>,
    },
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    EmptyTrack,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    for assignment in &cli.overrides {
        config.apply_override(assignment)?;
    }
    Ok(config)
}

fn apply_scene_flags(config: &mut RunConfig, flags: &SceneFlags) {
    if let Some(v) = flags.speed {
        config.scene.true_speed = v;
    }
    if let Some(b) = flags.blur {
        config.scene.blur_fraction = b;
    }
    if let Some(n) = flags.noise {
        config.scene.noise_amplitude = n;
    }
    if let Some(l) = flags.latency {
        config.controller.processing_latency = l;
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build().context("starting worker pool")?.install(f))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn cmd_render(config: &RunConfig, out_dir: &Path) -> Result<usize> {
    config.validate()?;
    let scene = &config.scene;
    if !out_dir.is_dir() {
        bail!("output directory {} does not exist", out_dir.display());
    }
    let plan = TraversePlan::new(scene, config.seed, false, config.frames);
    let frames = (0..plan.len())
        .map(|k| plan.frame(scene, k))
        .collect::<Result<Vec<Frame>, _>>()
        .context("rendering traverse")?;
    write_sequence(out_dir, &frames).context("writing frames")?;
    Ok(frames.len())
}

/// Per-frame track log plus the final mean speed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    pub lines: Vec<String>,
    pub detections: usize,
    pub v_mean: Option<f64>,
}

pub fn cmd_track(config: &RunConfig, frames_dir: &Path, background: Option<&Path>) -> Result<TrackReport> {
    let scenario = config.scenario()?;
    let frames = read_sequence(frames_dir)?;
    let Some(first) = frames.first() else {
        bail!("no frame_NNNNNN.pgm files in {}", frames_dir.display());
    };
    let (reference, rest) = match background {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let bg = load_frame(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            (bg, &frames[..])
        }
        None => (first.clone(), &frames[1..]),
    };

    let detector = scenario.detector;
    let mut track = TrackState::new();
    let mut bank = LampBank::new(scenario.lamp_positions)?;
    let mut lines = Vec::new();
    let mut detections = 0;
    for frame in rest {
        let d = detector
            .detect(frame, &reference)
            .with_context(|| format!("frame {}", frame.index()))?;
        track = update_track(&track, &d, &scenario.calibration)?;
        control_step(&mut bank, &track, &scenario.controller, frame.index());
        let line = match d.blob {
            Some(b) => {
                detections += 1;
                let v = track.v.map_or("-".to_string(), |v| format!("{v:.4}"));
                format!(
                    "frame {}: centroid ({:.2}, {:.2}) area {} r {:.4} m v {} m/s lamps 0x{:02X}",
                    frame.index(),
                    b.centroid_x,
                    b.centroid_y,
                    b.area,
                    track.r.unwrap_or(0.0),
                    v,
                    bank.port_register()
                )
            }
            None => format!("frame {}: no detection lamps 0x{:02X}", frame.index(), bank.port_register()),
        };
        lines.push(line);
    }
    Ok(TrackReport {
        lines,
        detections,
        v_mean: track.v_mean,
    })
}

fn failure_summary(summary: &BatchSummary) -> String {
    summary
        .failures
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(r, n)| format!("{r}={n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs the batch; returns the report CSV and the summary.
pub fn cmd_simulate(config: &RunConfig, jobs: Option<usize>, dump_events: Option<&Path>) -> Result<(String, BatchSummary)> {
    let scenario = config.scenario()?;
    let reports = with_pool(jobs, || run_trials(&scenario))??;
    if let Some(dir) = dump_events {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &reports {
            let mut bank_csv = String::from("frame_index,lamp_index,action,register_hex\n");
            for e in &r.events {
                bank_csv.push_str(&format!("{},{},{},0x{:02X}\n", e.frame_index, e.lamp, e.action, e.register));
            }
            let path = dir.join(format!("events_trial_{:06}.csv", r.trial_index));
            fs::write(&path, bank_csv).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let summary = summarize(&scenario, &reports);
    Ok((report_csv(std::slice::from_ref(&summary)), summary))
}

pub fn cmd_bench(
    config: &RunConfig,
    jobs: Option<usize>,
    speeds: &[f64],
    blurs: &[f64],
    pairing: Pairing,
    mut on_cell: impl FnMut(&BatchSummary, f64),
) -> Result<String> {
    let base = config.scenario()?;
    let cells = sweep_cells(speeds, blurs, pairing)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (v, b) in cells {
        let scenario = base.with_speed_and_blur(v, b);
        scenario.validate()?;
        let started = Instant::now();
        let reports = with_pool(jobs, || run_trials(&scenario))??;
        let summary = summarize(&scenario, &reports);
        on_cell(&summary, started.elapsed().as_secs_f64());
        rows.push(summary);
    }
    Ok(report_csv(&rows))
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Render { scene, frames } => {
            apply_scene_flags(&mut config, scene);
            if frames.is_some() {
                config.frames = *frames;
            }
            let out = cli.out.as_deref().context("render needs --out <dir>")?;
            let n = cmd_render(&config, out)?;
            println!("rendered {n} frames into {}", out.display());
        }
        Command::Track {
            frames_dir,
            background,
        } => {
            let report = cmd_track(&config, frames_dir, background.as_deref())?;
            for line in &report.lines {
                println!("{line}");
            }
            match report.v_mean {
                Some(v) => println!("v_mean = {v:.4} m/s over {} detections", report.detections),
                None => println!("v_mean = - over {} detections", report.detections),
            }
            if report.detections == 0 {
                return Ok(Outcome::EmptyTrack);
            }
        }
        Command::Simulate {
            scene,
            trials,
            dump_events,
        } => {
            apply_scene_flags(&mut config, scene);
            if let Some(t) = trials {
                config.trials = *t;
            }
            let (csv, summary) = cmd_simulate(&config, cli.jobs, dump_events.as_deref())?;
            write_output(cli.out.as_deref(), &csv)?;
            let text = format!(
                "performance {:.2}% ({} of {} trials)\nfailures: {}\n",
                summary.performance_pct,
                summary.successes,
                summary.trials,
                match failure_summary(&summary) {
                    s if s.is_empty() => "none".to_string(),
                    s => s,
                }
            );
            if cli.out.is_some() {
                print!("{text}");
            } else {
                eprint!("{text}");
            }
        }
        Command::Bench {
            speeds,
            blurs,
            pairing,
            trials,
            latency,
        } => {
            if let Some(t) = trials {
                config.trials = *t;
            }
            if let Some(l) = latency {
                config.controller.processing_latency = *l;
            }
            let pairing = match pairing {
                PairingArg::Cross => Pairing::Cross,
                PairingArg::Zip => Pairing::Zip,
            };
            let csv = cmd_bench(&config, cli.jobs, speeds, blurs, pairing, |s, secs| {
                eprintln!("{}  [{secs:.3} s]", report_row(s));
            })?;
            write_output(cli.out.as_deref(), &csv)?;
        }
    }
    Ok(Outcome::Done)
}

pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::EmptyTrack) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
