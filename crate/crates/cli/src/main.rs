use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tsfreq::distributor::{compare_structures, P2SComparison};
use tsfreq::fitting::write_estimates_csv;
use tsfreq::framing::write_frames_csv;
use tsfreq::harness::{
    amplitude_campaign, emit_report, frame_record, run_pipeline, snr_campaign, sweep, AmplitudeCampaign,
    CampaignResult, Check, ExperimentResult, ReportFormat, Summary, SweepConfig,
};
use tsfreq::signal_gen::{acquire, write_csv, write_raw_i16};
use tsfreq::transfer_sim::{
    max_survivable_stall, run_simulation, write_trace_csv, DatapathConfig, InjectedStall, SimOptions, GIB, MIB,
};

/// Everything a run can be configured with. Loaded from TOML, then
/// overridden by command-line flags, then written into the run directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    sweep: SweepConfig,
    snr: SnrSettings,
    amplitude: AmplitudeCampaign,
    transfer: TransferSettings,
    checks: CheckSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SnrSettings {
    levels_db: Vec<f64>,
    range_limit: f64,
}

impl Default for SnrSettings {
    fn default() -> Self {
        SnrSettings { levels_db: vec![60.0, 40.0, 20.0], range_limit: 5e6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TransferSettings {
    datapath: DatapathConfig,
    /// Simulated seconds.
    duration: f64,
    stall: Option<InjectedStall>,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings { datapath: DatapathConfig::default(), duration: 600.0, stall: None }
    }
}

/// Bounds for the clean sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CheckSettings {
    max_deviation: f64,
    range_limit: f64,
    range_fraction: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { max_deviation: 1.2e6, range_limit: 1.5e6, range_fraction: 0.95 }
    }
}

#[derive(Parser)]
#[command(name = "tsfreq", version, about = "Frequency measurement model for time-stretched pulsed carriers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Exact run directory, instead of a timestamped one under --out.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format, default_value = "csv")]
    format: ReportFormat,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a digitized pulse train and its frames.
    Generate(PointArgs),
    /// Run the full pipeline at one frequency.
    Measure(PointArgs),
    /// Sweep the carrier frequency.
    Sweep(SweepArgs),
    /// Repeat the sweep at several SNR levels.
    Snr {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated levels in dB.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Repeat the sweep at several source amplitudes.
    Amplitude {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated levels in volts peak-to-peak.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        attenuation_db: Option<f64>,
        /// Front-end SNR at the largest level, in dB.
        #[arg(long)]
        front_end_snr: Option<f64>,
    },
    /// Simulate the acquisition-to-host transfer datapath.
    TransferSim {
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// DDR capacity per channel in GiB.
        #[arg(long)]
        ddr_gib: Option<f64>,
        #[arg(long, requires = "stall_duration")]
        stall_start: Option<f64>,
        #[arg(long, requires = "stall_start")]
        stall_duration: Option<f64>,
        /// Also write the per-event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Compare the single- and two-stage serial-to-parallel structures.
    Resources,
}

#[derive(Args)]
struct PointArgs {
    /// Carrier frequency in Hz.
    #[arg(long, default_value_t = 2e9)]
    freq: f64,
    #[arg(long)]
    pulses: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    f_start: Option<f64>,
    #[arg(long)]
    f_stop: Option<f64>,
    #[arg(long)]
    f_step: Option<f64>,
    #[arg(long)]
    frames_per_point: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    /// Skip the pass/fail checks.
    #[arg(long)]
    no_check: bool,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        _ => Err(format!("unknown format {s:?}, expected csv or json")),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl SweepArgs {
    fn apply(&self, cfg: &mut SweepConfig) {
        if let Some(v) = self.f_start {
            cfg.f_start = v;
        }
        if let Some(v) = self.f_stop {
            cfg.f_stop = v;
        }
        if let Some(v) = self.f_step {
            cfg.f_step = v;
        }
        if let Some(v) = self.frames_per_point {
            cfg.frames_per_point = v;
        }
        if self.snr.is_some() {
            cfg.snr_db = self.snr;
        }
    }
}

impl PointArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let stim = &mut cfg.sweep.pipeline.stimulus;
        stim.carrier_freq = self.freq;
        stim.amplitude_fullscale_fraction = cfg.sweep.amplitude_fraction;
        stim.seed = cfg.sweep.seed;
        if let Some(n) = self.pulses {
            stim.n_pulses = n;
        }
        if self.snr.is_some() {
            stim.snr_db = self.snr;
        }
    }
}

fn make_run_dir(common: &Common, name: &str) -> Result<PathBuf> {
    let dir = match &common.run_dir {
        Some(d) => d.clone(),
        None => {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
            common.out.join(format!("{name}-{}-{:03}", now.as_secs(), now.subsec_millis()))
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn sweep_checks(result: &ExperimentResult, bounds: &CheckSettings) -> Vec<Check> {
    let s = &result.summary;
    let frac = Summary::fraction_with_range_within(&result.points, bounds.range_limit);
    vec![
        Check {
            name: "max deviation".into(),
            passed: s.max_deviation <= bounds.max_deviation,
            detail: format!("{:.3} MHz (limit {:.3} MHz)", s.max_deviation / 1e6, bounds.max_deviation / 1e6),
        },
        Check {
            name: "range".into(),
            passed: frac >= bounds.range_fraction,
            detail: format!(
                "{:.1}% of points within {:.3} MHz (need {:.1}%)",
                frac * 100.0,
                bounds.range_limit / 1e6,
                bounds.range_fraction * 100.0
            ),
        },
    ]
}

fn print_summary(label: &str, s: &Summary) {
    println!(
        "{label}: {} points, max deviation {:.3} MHz, max range {:.3} MHz, mean range {:.3} MHz, {} flagged frames",
        s.points,
        s.max_deviation / 1e6,
        s.max_range / 1e6,
        s.mean_range / 1e6,
        s.flagged_frames
    );
}

fn emit_campaign(result: &CampaignResult, dir: &Path, format: ReportFormat) -> Result<()> {
    for level in &result.levels {
        let mut r = level.result.clone();
        r.name = format!("{}_{}", result.name, level.label.replace(' ', "").replace('.', "p"));
        emit_report(&r, dir, format)?;
        print_summary(&level.label, &r.summary);
    }
    write_json(&dir.join(format!("{}_campaign.json", result.name)), result)
}

fn print_resources(cmp: &P2SComparison) {
    for r in [&cmp.single_stage, &cmp.two_stage] {
        println!("{}: {} demux nodes, FIFO {} KiB", r.structure, r.demux_nodes, r.fifo_kbytes());
        for st in &r.stages {
            println!(
                "  {}: {} FIFOs x {} bit, depth {} of {} ({:.2}% used)",
                st.name,
                st.fifo_count,
                st.fifo_width_bits,
                st.required_depth,
                st.fifo_depth,
                st.fifo_utilization * 100.0
            );
        }
    }
    println!(
        "node reduction {:.2}% (quoted {:.1}%), FIFO savings {:.2}%",
        cmp.node_reduction * 100.0,
        cmp.quoted_node_reduction * 100.0,
        cmp.fifo_savings * 100.0
    );
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.sweep.seed = seed;
        cfg.transfer.datapath.seed = seed;
    }

    match &cli.command {
        Command::Generate(args) => {
            args.apply(&mut cfg);
            let dir = make_run_dir(common, "generate")?;
            write_snapshot(&dir, &cfg)?;
            let stim = &cfg.sweep.pipeline.stimulus;
            let acq = acquire(stim)?;
            write_csv(&dir.join("samples.csv"), &acq.codes)?;
            write_raw_i16(&dir.join("samples.i16"), &acq.codes)?;
            let (frames, dropped, period) = frame_record(&acq.codes, cfg.sweep.pipeline.min_frame_len)?;
            write_frames_csv(&dir.join("frames.csv"), &frames)?;
            println!(
                "{} samples, {} clipped, period {:.3} samples, {} frames ({} partial dropped) -> {}",
                acq.codes.len(),
                acq.clipped,
                period,
                frames.len(),
                dropped,
                dir.display()
            );
            Ok(true)
        }
        Command::Measure(args) => {
            args.apply(&mut cfg);
            let dir = make_run_dir(common, "measure")?;
            write_snapshot(&dir, &cfg)?;
            let run = run_pipeline(&cfg.sweep.pipeline)?;
            match common.format {
                ReportFormat::Csv => write_estimates_csv(&dir.join("estimates.csv"), &run.estimates)?,
                ReportFormat::Json => write_json(&dir.join("estimates.json"), &run)?,
            }
            let freqs: Vec<f64> = run.estimates.iter().map(|e| e.freq_hz).collect();
            let mean = freqs.iter().sum::<f64>() / freqs.len().max(1) as f64;
            let truth = cfg.sweep.pipeline.stimulus.carrier_freq;
            let dev = freqs.iter().map(|f| (f - truth).abs()).fold(0.0, f64::max);
            println!(
                "{} estimates ({} dropped), mean {:.6} GHz, max deviation {:.3} MHz, range {:.3} MHz -> {}",
                freqs.len(),
                run.frames_dropped,
                mean / 1e9,
                dev / 1e6,
                tsfreq::harness::range(&freqs) / 1e6,
                dir.display()
            );
            Ok(true)
        }
        Command::Sweep(args) => {
            args.apply(&mut cfg.sweep);
            let dir = make_run_dir(common, "sweep")?;
            write_snapshot(&dir, &cfg)?;
            let result = sweep(&cfg.sweep)?;
            let path = emit_report(&result, &dir, common.format)?;
            print_summary("sweep", &result.summary);
            println!("report: {}", path.display());
            if args.no_check || cfg.sweep.snr_db.is_some() {
                return Ok(true);
            }
            let checks = sweep_checks(&result, &cfg.checks);
            write_json(&dir.join("checks.json"), &checks)?;
            Ok(report_checks(&checks))
        }
        Command::Snr { sweep: args, levels } => {
            args.apply(&mut cfg.sweep);
            if let Some(l) = levels {
                cfg.snr.levels_db = l.clone();
            }
            let dir = make_run_dir(common, "snr")?;
            write_snapshot(&dir, &cfg)?;
            let result = snr_campaign(&cfg.sweep, &cfg.snr.levels_db, cfg.snr.range_limit)?;
            emit_campaign(&result, &dir, common.format)?;
            Ok(args.no_check || report_checks(&result.checks))
        }
        Command::Amplitude { sweep: args, levels, attenuation_db, front_end_snr } => {
            args.apply(&mut cfg.sweep);
            if let Some(l) = levels {
                cfg.amplitude.levels_vpp = l.clone();
            }
            if let Some(a) = attenuation_db {
                cfg.amplitude.attenuation_db = *a;
            }
            if front_end_snr.is_some() {
                cfg.amplitude.front_end_snr_db = *front_end_snr;
            }
            let dir = make_run_dir(common, "amplitude")?;
            write_snapshot(&dir, &cfg)?;
            let result = amplitude_campaign(&cfg.sweep, &cfg.amplitude)?;
            emit_campaign(&result, &dir, common.format)?;
            Ok(args.no_check || report_checks(&result.checks))
        }
        Command::TransferSim { duration, ddr_gib, stall_start, stall_duration, trace } => {
            let t = &mut cfg.transfer;
            if let Some(d) = duration {
                t.duration = *d;
            }
            if let Some(g) = ddr_gib {
                t.datapath.ddr_capacity = g * GIB;
            }
            if let (Some(start), Some(duration)) = (stall_start, stall_duration) {
                t.stall = Some(InjectedStall { start: *start, duration: *duration });
            }
            let dir = make_run_dir(common, "transfer-sim")?;
            write_snapshot(&dir, &cfg)?;
            let t = &cfg.transfer;
            let opts = SimOptions { stall: t.stall, trace: *trace };
            let report = run_simulation(&t.datapath, t.duration, &opts)?;
            if *trace {
                write_trace_csv(&dir.join("trace.csv"), &report.trace)?;
            }
            let mut summary = report.clone();
            summary.trace.clear();
            write_json(&dir.join("report.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            let dp = &t.datapath;
            println!(
                "cycle {:.2} ms, FIFO accrual {:.4} MiB per read, survivable stall {:.2} s",
                dp.cycle_time() * 1e3,
                dp.fifo_accrual_per_read() / MIB,
                max_survivable_stall(dp)
            );
            let mut checks = vec![Check {
                name: "byte conservation".into(),
                passed: report.conservation_ok,
                detail: format!("max relative error {:.2e}", report.max_conservation_error),
            }];
            if t.stall.is_none() {
                checks.push(Check {
                    name: "lossless".into(),
                    passed: report.lost_bytes == 0.0,
                    detail: format!("{} bytes lost", report.lost_bytes),
                });
            }
            Ok(report_checks(&checks))
        }
        Command::Resources => {
            let dir = make_run_dir(common, "resources")?;
            write_snapshot(&dir, &cfg)?;
            let cmp = compare_structures(&cfg.sweep.pipeline.p2s)?;
            write_json(&dir.join("resources.json"), &cmp)?;
            print_resources(&cmp);
            Ok(true)
        }
    }
}

fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg).context("serializing config snapshot")?;
    let path = dir.join("config.toml");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(true) => std::process::ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            std::process::ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(2)
        }
    }
}
