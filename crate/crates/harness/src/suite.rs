//! Suites: many seeded trials per sweep point, aggregated into a table.
//!
//! Sweep axes are the DRAM:NVM split (the persistency bar) and the cleaner
//! period. Trials share no state, so each point runs its seeds in parallel.

use crate::config::{period_name, TrialConfig};
use crate::trial::{run_trial, TrialReport};
use pmbuf::Result;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: TrialConfig,
    pub trials_per_point: u32,
    pub seed_base: u64,
    /// DRAM frame counts to sweep; empty means "just the base config".
    pub dram_points: Vec<usize>,
    /// Cleaner periods to sweep; empty means "just the base config".
    pub cleaner_points: Vec<Option<u32>>,
}

impl SweepSpec {
    pub fn single_point(base: TrialConfig, trials: u32, seed_base: u64) -> SweepSpec {
        SweepSpec {
            base,
            trials_per_point: trials,
            seed_base,
            dram_points: Vec::new(),
            cleaner_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointReport {
    pub dram_frames: usize,
    pub cleaner_period: Option<u32>,
    pub trials: u32,
    pub passes: u32,
    pub mean_recovery_us: f64,
    pub mean_work_units: f64,
    /// Mean of records replayed per repaired page, over trials that
    /// repaired anything.
    pub mean_replayed_per_repaired: f64,
    pub dram_hit_ratio: f64,
    pub nvm_hit_ratio: f64,
    pub total_fetches: u64,
    pub total_wal_violations: u64,
    pub state_histogram: [u64; 4],
    pub failures: Vec<String>,
}

impl PointReport {
    pub fn pass_rate(&self) -> f64 {
        if self.trials == 0 {
            1.0
        } else {
            self.passes as f64 / self.trials as f64
        }
    }
}

#[derive(Debug)]
pub struct SuiteReport {
    pub points: Vec<PointReport>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.passes == p.trials)
    }

    /// Tab-separated table, one row per sweep point.
    pub fn table(&self) -> String {
        let mut out = String::from(
            "dram_frames\tcleaner_period\ttrials\tpasses\tdram_hit_ratio\tnvm_hit_ratio\t\
             mean_recovery_us\tmean_work_units\treplayed_per_repaired\tssd_fetches\t\
             corrupted\tbehind\tcurrent\tahead\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.1}\t{:.2}\t{:.3}\t{}\t{}\t{}\t{}\t{}\n",
                p.dram_frames,
                period_name(p.cleaner_period),
                p.trials,
                p.passes,
                p.dram_hit_ratio,
                p.nvm_hit_ratio,
                p.mean_recovery_us,
                p.mean_work_units,
                p.mean_replayed_per_repaired,
                p.total_fetches,
                p.state_histogram[0],
                p.state_histogram[1],
                p.state_histogram[2],
                p.state_histogram[3],
            ));
        }
        out
    }
}

fn aggregate(
    dram_frames: usize,
    cleaner_period: Option<u32>,
    reports: &[TrialReport],
) -> PointReport {
    let trials = reports.len() as u32;
    let passes = reports.iter().filter(|r| r.verdict).count() as u32;
    let mut histogram = [0u64; 4];
    let mut hits_d = 0u64;
    let mut hits_n = 0u64;
    let mut accesses = 0u64;
    let mut recovery = 0f64;
    let mut work = 0f64;
    let mut per_repaired = Vec::new();
    let mut fetches = 0u64;
    let mut violations = 0u64;
    let mut failures = Vec::new();
    for r in reports {
        for i in 0..4 {
            histogram[i] += r.pages_by_state[i];
        }
        hits_d += r.dram_hits;
        hits_n += r.nvm_hits;
        accesses += r.accesses();
        recovery += r.recovery_us as f64;
        work += r.recovery_work_units as f64;
        if r.pages_repaired > 0 {
            per_repaired.push(r.records_replayed as f64 / r.pages_repaired as f64);
        }
        fetches += r.ssd_fetches_for_repair;
        violations += r.wal_violations;
        if let Some(m) = &r.mismatch {
            failures.push(m.clone());
        }
    }
    PointReport {
        dram_frames,
        cleaner_period,
        trials,
        passes,
        mean_recovery_us: if trials == 0 { 0.0 } else { recovery / trials as f64 },
        mean_work_units: if trials == 0 { 0.0 } else { work / trials as f64 },
        mean_replayed_per_repaired: if per_repaired.is_empty() {
            0.0
        } else {
            per_repaired.iter().sum::<f64>() / per_repaired.len() as f64
        },
        dram_hit_ratio: if accesses == 0 { 0.0 } else { hits_d as f64 / accesses as f64 },
        nvm_hit_ratio: if accesses == 0 { 0.0 } else { hits_n as f64 / accesses as f64 },
        total_fetches: fetches,
        total_wal_violations: violations,
        state_histogram: histogram,
        failures,
    }
}

/// Run one sweep point: `trials_per_point` seeded trials in parallel.
pub fn run_point(base: &TrialConfig, trials: u32, seed_base: u64) -> Result<PointReport> {
    let reports: Result<Vec<TrialReport>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut cfg = base.clone();
            cfg.seed = seed_base + i as u64;
            run_trial(&cfg)
        })
        .collect();
    let reports = reports?;
    Ok(aggregate(base.dram_frames, base.cleaner_period, &reports))
}

/// Run the full sweep. Stops scheduling further points once a point fails,
/// so the report ends with the first failing point and its reproductions.
pub fn run_suite(spec: &SweepSpec) -> Result<SuiteReport> {
    let dram_axis: Vec<usize> = if spec.dram_points.is_empty() {
        vec![spec.base.dram_frames]
    } else {
        spec.dram_points.clone()
    };
    let cleaner_axis: Vec<Option<u32>> = if spec.cleaner_points.is_empty() {
        vec![spec.base.cleaner_period]
    } else {
        spec.cleaner_points.clone()
    };
    let mut points = Vec::new();
    'outer: for &dram in &dram_axis {
        for &cleaner in &cleaner_axis {
            let mut cfg = spec.base.clone();
            cfg.dram_frames = dram;
            cfg.cleaner_period = cleaner;
            let point = run_point(&cfg, spec.trials_per_point, spec.seed_base)?;
            let failed = point.passes != point.trials;
            points.push(point);
            if failed {
                break 'outer;
            }
        }
    }
    Ok(SuiteReport { points })
}
