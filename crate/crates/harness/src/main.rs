//! Command-line entry point.
//!
//! Exit codes: 0 all verdicts pass, 1 any verdict failed, 2 configuration
//! error.

use clap::{Args, Parser, Subcommand};
use pmbuf_harness::config::{
    self, parse_checksum_policy, parse_consistency, parse_crash_mode, parse_period,
    parse_restart_mode, TrialConfig,
};
use pmbuf_harness::{run_oracle_enumeration, run_suite, run_trial_with_dump, EnumConfig, SweepSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pmbuf-harness",
    about = "Crash-injection trials for a persistent buffer pool with optimistic NVM consistency"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded workload/crash/restart trial and verify it.
    RunTrial(RunTrialArgs),
    /// Run many seeded trials, optionally sweeping DRAM share and cleaner period.
    RunSuite(RunSuiteArgs),
    /// Exhaustive crash-image classification check over small pages.
    OracleEnum(OracleEnumArgs),
    /// Write a freshly formatted SSD store image to a file.
    FormatStore(FormatStoreArgs),
}

#[derive(Args, Clone)]
struct TrialFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4096)]
    page_size: usize,
    #[arg(long, default_value_t = 1024)]
    cache_capacity_lines: usize,
    #[arg(long, default_value_t = 64)]
    dram_frames: usize,
    #[arg(long, default_value_t = 512)]
    nvm_slots: usize,
    #[arg(long, default_value_t = 4096)]
    ssd_pages: u64,
    #[arg(long, default_value = "every-update")]
    checksum_policy: String,
    #[arg(long, default_value_t = 2)]
    promote_after: u32,
    /// Admit cold loads to DRAM instead of NVM.
    #[arg(long, default_value_t = false)]
    admit_to_dram: bool,
    #[arg(long, default_value_t = 2)]
    cleaner_budget: usize,
    /// Run the cleaner every N ops ("inf" disables it).
    #[arg(long, default_value = "32")]
    cleaner_period: String,
    #[arg(long, default_value_t = 6)]
    insert_weight: u32,
    #[arg(long, default_value_t = 2)]
    delete_weight: u32,
    #[arg(long, default_value_t = 2)]
    lookup_weight: u32,
    #[arg(long, default_value_t = 4)]
    ops_per_txn: u32,
    #[arg(long, default_value_t = 400)]
    ops_before_crash: u32,
    #[arg(long, default_value_t = 3000)]
    preload_keys: u32,
    #[arg(long, default_value_t = 4000)]
    key_space: u32,
    #[arg(long, default_value_t = 32)]
    value_len_min: usize,
    #[arg(long, default_value_t = 160)]
    value_len_max: usize,
    /// Background cache write-back every N ops ("inf" disables it).
    #[arg(long, default_value = "2")]
    evict_period: String,
    #[arg(long, default_value_t = 8)]
    evict_lines: usize,
    #[arg(long, default_value = "random-point")]
    crash_mode: String,
    #[arg(long, default_value = "on-demand")]
    restart_mode: String,
    #[arg(long, default_value = "optimistic")]
    consistency_mode: String,
}

impl TrialFlags {
    fn to_config(&self) -> pmbuf::Result<TrialConfig> {
        let cfg = TrialConfig {
            seed: self.seed,
            page_size: self.page_size,
            cache_capacity_lines: self.cache_capacity_lines,
            dram_frames: self.dram_frames,
            nvm_slots: self.nvm_slots,
            ssd_pages: self.ssd_pages,
            checksum_policy: parse_checksum_policy(&self.checksum_policy)?,
            promote_after: self.promote_after,
            admit_to_dram: self.admit_to_dram,
            cleaner_budget: self.cleaner_budget,
            cleaner_period: parse_period(&self.cleaner_period)?,
            insert_weight: self.insert_weight,
            delete_weight: self.delete_weight,
            lookup_weight: self.lookup_weight,
            ops_per_txn: self.ops_per_txn,
            ops_before_crash: self.ops_before_crash,
            preload_keys: self.preload_keys,
            key_space: self.key_space,
            value_len_min: self.value_len_min,
            value_len_max: self.value_len_max,
            evict_period: parse_period(&self.evict_period)?,
            evict_lines: self.evict_lines,
            crash_mode: parse_crash_mode(&self.crash_mode)?,
            restart_mode: parse_restart_mode(&self.restart_mode)?,
            consistency: parse_consistency(&self.consistency_mode)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunTrialArgs {
    #[command(flatten)]
    flags: TrialFlags,
    /// Write the report (key=value lines) here as well as stdout.
    #[arg(long)]
    report_path: Option<PathBuf>,
    /// Dump the crash images and oracle to this directory at the crash point.
    #[arg(long)]
    crash_dump_dir: Option<PathBuf>,
    /// Skip the workload: reload a dumped crash state, restart and verify.
    #[arg(long, conflicts_with = "crash_dump_dir")]
    resume_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunSuiteArgs {
    #[command(flatten)]
    flags: TrialFlags,
    /// Trials per sweep point.
    #[arg(long, default_value_t = 100)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Comma-separated DRAM frame counts to sweep, e.g. "0,16,64,256".
    #[arg(long)]
    sweep_dram: Option<String>,
    /// Comma-separated cleaner periods to sweep, e.g. "inf,64,16,4".
    #[arg(long)]
    sweep_cleaner: Option<String>,
    #[arg(long)]
    report_path: Option<PathBuf>,
}

#[derive(Args)]
struct OracleEnumArgs {
    #[arg(long, default_value_t = 100)]
    histories: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    page_size: usize,
    #[arg(long)]
    report_path: Option<PathBuf>,
}

#[derive(Args)]
struct FormatStoreArgs {
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 4096)]
    ssd_pages: u64,
    #[arg(long, default_value_t = 4096)]
    page_size: usize,
    #[arg(long, default_value = "every-update")]
    checksum_policy: String,
}

fn emit(lines: &[String], report_path: Option<&PathBuf>) -> anyhow::Result<()> {
    for line in lines {
        println!("{line}");
    }
    if let Some(path) = report_path {
        std::fs::write(path, lines.join("\n") + "\n")?;
    }
    Ok(())
}

fn config_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("configuration error: {err}");
    ExitCode::from(2)
}

fn run_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::RunTrial(args) => {
            if let Some(dir) = &args.resume_dir {
                let report = match pmbuf_harness::resume_trial(dir) {
                    Ok(r) => r,
                    Err(e) => return run_error(e),
                };
                if emit(&report.lines(), args.report_path.as_ref()).is_err() {
                    return ExitCode::from(1);
                }
                return if report.verdict { ExitCode::SUCCESS } else { ExitCode::from(1) };
            }
            let cfg = match args.flags.to_config() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let report = match run_trial_with_dump(&cfg, args.crash_dump_dir.as_deref()) {
                Ok(r) => r,
                Err(e) => return run_error(e),
            };
            if emit(&report.lines(), args.report_path.as_ref()).is_err() {
                return ExitCode::from(1);
            }
            if report.verdict {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::RunSuite(args) => {
            let base = match args.flags.to_config() {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let dram_points = match args
                .sweep_dram
                .as_deref()
                .map(parse_usize_list)
                .transpose()
            {
                Ok(v) => v.unwrap_or_default(),
                Err(e) => return config_error(e),
            };
            let cleaner_points = match args
                .sweep_cleaner
                .as_deref()
                .map(parse_period_list)
                .transpose()
            {
                Ok(v) => v.unwrap_or_default(),
                Err(e) => return config_error(e),
            };
            let spec = SweepSpec {
                base,
                trials_per_point: args.trials,
                seed_base: args.seed_base,
                dram_points,
                cleaner_points,
            };
            let report = match run_suite(&spec) {
                Ok(r) => r,
                Err(e) => return run_error(e),
            };
            let mut lines: Vec<String> =
                report.table().lines().map(|s| s.to_string()).collect();
            for p in &report.points {
                for f in &p.failures {
                    lines.push(format!("failure\t{f}"));
                }
            }
            if emit(&lines, args.report_path.as_ref()).is_err() {
                return ExitCode::from(1);
            }
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::OracleEnum(args) => {
            let cfg = EnumConfig {
                histories: args.histories,
                seed: args.seed,
                page_size: args.page_size,
            };
            let report = match run_oracle_enumeration(&cfg) {
                Ok(r) => r,
                Err(e) => return config_error(e),
            };
            if emit(&report.lines(), args.report_path.as_ref()).is_err() {
                return ExitCode::from(1);
            }
            if report.verdict() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::FormatStore(args) => {
            let policy = match parse_checksum_policy(&args.checksum_policy) {
                Ok(p) => p,
                Err(e) => return config_error(e),
            };
            let store = match pmbuf::pool::SsdStore::formatted(args.ssd_pages, args.page_size, policy)
            {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            if let Err(e) = store.save(&args.path) {
                return run_error(e);
            }
            println!(
                "formatted {} pages of {} bytes ({}) -> {}",
                args.ssd_pages,
                args.page_size,
                config::checksum_policy_name(policy),
                args.path.display()
            );
            ExitCode::SUCCESS
        }
    }
}

fn parse_usize_list(s: &str) -> pmbuf::Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| pmbuf::Error::Config(format!("bad list entry '{p}'")))
        })
        .collect()
}

fn parse_period_list(s: &str) -> pmbuf::Result<Vec<Option<u32>>> {
    s.split(',').map(|p| parse_period(p.trim())).collect()
}
