//! Trial configuration: one struct per seeded workload/crash/restart cycle,
//! mirrored by the CLI flags.

use pmbuf::page::ChecksumPolicy;
use pmbuf::pool::{AdmissionTier, ConsistencyMode, PlacementConfig, PoolConfig};
use pmbuf::recovery::RestartMode;
use pmbuf::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashMode {
    /// Crash at a random operation boundary drawn from the trial seed.
    RandomPoint,
    /// Finish the workload, commit everything, flush the log, then crash.
    AfterQuiesce,
    /// No crash: pure workload replay.
    None,
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub seed: u64,
    pub page_size: usize,
    pub cache_capacity_lines: usize,
    pub dram_frames: usize,
    pub nvm_slots: usize,
    pub ssd_pages: u64,
    pub checksum_policy: ChecksumPolicy,
    pub promote_after: u32,
    pub admit_to_dram: bool,
    pub cleaner_budget: usize,
    /// Run the cleaner every this many operations; `None` disables it.
    pub cleaner_period: Option<u32>,
    pub insert_weight: u32,
    pub delete_weight: u32,
    pub lookup_weight: u32,
    pub ops_per_txn: u32,
    pub ops_before_crash: u32,
    /// Rows inserted, committed and cleaned before the measured phase.
    pub preload_keys: u32,
    pub key_space: u32,
    pub value_len_min: usize,
    pub value_len_max: usize,
    /// Background cache write-back every this many operations.
    pub evict_period: Option<u32>,
    pub evict_lines: usize,
    pub crash_mode: CrashMode,
    pub restart_mode: RestartMode,
    pub consistency: ConsistencyMode,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            seed: 0,
            page_size: 4096,
            cache_capacity_lines: 1024,
            dram_frames: 64,
            nvm_slots: 512,
            ssd_pages: 4096,
            checksum_policy: ChecksumPolicy::EveryUpdate,
            promote_after: 2,
            admit_to_dram: false,
            cleaner_budget: 2,
            cleaner_period: Some(32),
            insert_weight: 6,
            delete_weight: 2,
            lookup_weight: 2,
            ops_per_txn: 4,
            ops_before_crash: 400,
            preload_keys: 3000,
            key_space: 4000,
            value_len_min: 32,
            value_len_max: 160,
            evict_period: Some(2),
            evict_lines: 8,
            crash_mode: CrashMode::RandomPoint,
            restart_mode: RestartMode::OnDemand,
            consistency: ConsistencyMode::Optimistic,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.pool_config().validate()?;
        if self.insert_weight + self.delete_weight + self.lookup_weight == 0 {
            return Err(Error::Config("operation weights sum to zero".into()));
        }
        if self.ops_per_txn == 0 {
            return Err(Error::Config("transactions need at least one operation".into()));
        }
        if self.value_len_min > self.value_len_max {
            return Err(Error::Config("value length bounds inverted".into()));
        }
        if self.key_space == 0 {
            return Err(Error::Config("key space must be positive".into()));
        }
        Ok(())
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            page_size: self.page_size,
            dram_frames: self.dram_frames,
            nvm_slots: self.nvm_slots,
            ssd_pages: self.ssd_pages,
            cache_capacity_lines: self.cache_capacity_lines,
            checksum_policy: self.checksum_policy,
            placement: PlacementConfig {
                promote_after: self.promote_after,
                admission: if self.admit_to_dram {
                    AdmissionTier::Dram
                } else {
                    AdmissionTier::Nvm
                },
                probation_capacity: 4096,
            },
            consistency: self.consistency,
            pmem_seed: self.seed ^ 0x9E37_79B9_7F4A_7C15,
        }
    }
}

pub fn parse_checksum_policy(s: &str) -> Result<ChecksumPolicy> {
    let bad = || Error::Config(format!("bad checksum policy '{s}' (every-update | every-k:K | per-fragment:F)"));
    if s == "every-update" {
        return Ok(ChecksumPolicy::EveryUpdate);
    }
    if let Some(k) = s.strip_prefix("every-k:") {
        return k.parse().map(ChecksumPolicy::EveryK).map_err(|_| bad());
    }
    if let Some(f) = s.strip_prefix("per-fragment:") {
        return f.parse().map(ChecksumPolicy::PerFragment).map_err(|_| bad());
    }
    Err(bad())
}

pub fn checksum_policy_name(p: ChecksumPolicy) -> String {
    match p {
        ChecksumPolicy::EveryUpdate => "every-update".into(),
        ChecksumPolicy::EveryK(k) => format!("every-k:{k}"),
        ChecksumPolicy::PerFragment(f) => format!("per-fragment:{f}"),
    }
}

pub fn parse_crash_mode(s: &str) -> Result<CrashMode> {
    match s {
        "random-point" => Ok(CrashMode::RandomPoint),
        "after-quiesce" => Ok(CrashMode::AfterQuiesce),
        "none" => Ok(CrashMode::None),
        _ => Err(Error::Config(format!(
            "bad crash mode '{s}' (random-point | after-quiesce | none)"
        ))),
    }
}

pub fn crash_mode_name(m: CrashMode) -> &'static str {
    match m {
        CrashMode::RandomPoint => "random-point",
        CrashMode::AfterQuiesce => "after-quiesce",
        CrashMode::None => "none",
    }
}

pub fn parse_restart_mode(s: &str) -> Result<RestartMode> {
    match s {
        "eager" => Ok(RestartMode::Eager),
        "on-demand" | "on_demand" => Ok(RestartMode::OnDemand),
        _ => Err(Error::Config(format!("bad restart mode '{s}' (eager | on-demand)"))),
    }
}

pub fn restart_mode_name(m: RestartMode) -> &'static str {
    match m {
        RestartMode::Eager => "eager",
        RestartMode::OnDemand => "on-demand",
    }
}

pub fn parse_consistency(s: &str) -> Result<ConsistencyMode> {
    match s {
        "optimistic" => Ok(ConsistencyMode::Optimistic),
        "pessimistic" => Ok(ConsistencyMode::Pessimistic),
        _ => Err(Error::Config(format!(
            "bad consistency mode '{s}' (optimistic | pessimistic)"
        ))),
    }
}

pub fn consistency_name(m: ConsistencyMode) -> &'static str {
    match m {
        ConsistencyMode::Optimistic => "optimistic",
        ConsistencyMode::Pessimistic => "pessimistic",
    }
}

/// "inf"/"none" parse to `None`; anything else must be a number.
pub fn parse_period(s: &str) -> Result<Option<u32>> {
    match s {
        "inf" | "none" | "never" => Ok(None),
        _ => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad period '{s}' (number | inf)"))),
    }
}

pub fn period_name(p: Option<u32>) -> String {
    p.map_or_else(|| "inf".into(), |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrialConfig::default().validate().unwrap();
    }

    #[test]
    fn policy_strings_roundtrip() {
        for s in ["every-update", "every-k:4", "per-fragment:2"] {
            assert_eq!(checksum_policy_name(parse_checksum_policy(s).unwrap()), s);
        }
        assert!(parse_checksum_policy("every-k:x").is_err());
        assert!(parse_checksum_policy("bogus").is_err());
    }

    #[test]
    fn zero_weights_rejected() {
        let cfg = TrialConfig {
            insert_weight: 0,
            delete_weight: 0,
            lookup_weight: 0,
            ..TrialConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
