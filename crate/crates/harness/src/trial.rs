//! One trial: seeded workload against the engine, optional crash injection,
//! restart, and verification against an independent committed-operations
//! oracle.
//!
//! The oracle is a plain map maintained outside the engine; a transaction's
//! operations are folded into it only once the engine acknowledges the
//! commit, so it never sees uncommitted data. At the end, a full tree scan
//! must equal the oracle exactly.

use crate::config::{CrashMode, TrialConfig};
use pmbuf::btree::BTree;
use pmbuf::engine::Engine;
use pmbuf::pool::{BufferPool, SsdStore};
use pmbuf::recovery::PageState;
use pmbuf::wal::LogDevice;
use pmbuf::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Committed key-value state, updated atomically per committed transaction.
#[derive(Debug, Default, Clone)]
pub struct OracleState {
    pub committed: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl OracleState {
    fn apply(&mut self, ops: &[PendingOp]) {
        for op in ops {
            match op {
                PendingOp::Insert(k, v) => {
                    self.committed.insert(k.clone(), v.clone());
                }
                PendingOp::Delete(k) => {
                    self.committed.remove(k);
                }
            }
        }
    }

    /// Value visible to the open transaction: committed state overlaid by
    /// its own pending operations.
    fn overlay(&self, pending: &[PendingOp], key: &[u8]) -> Option<Vec<u8>> {
        for op in pending.iter().rev() {
            match op {
                PendingOp::Insert(k, v) if k == key => return Some(v.clone()),
                PendingOp::Delete(k) if k == key => return None,
                _ => {}
            }
        }
        self.committed.get(key).cloned()
    }
}

#[derive(Debug, Clone)]
enum PendingOp {
    Insert(Vec<u8>, Vec<u8>),
    Delete(Vec<u8>),
}

#[derive(Debug, Clone, Default)]
pub struct TrialReport {
    pub seed: u64,
    pub verdict: bool,
    pub crash_happened: bool,
    pub crash_at_op: Option<u32>,
    pub committed_txns: u64,
    pub oracle_keys: usize,
    pub pages_by_state: [u64; 4],
    pub records_replayed: u64,
    pub ssd_fetches_for_repair: u64,
    pub pages_repaired: u64,
    pub recovery_us: u64,
    pub recovery_work_units: u64,
    pub dram_hits: u64,
    pub nvm_hits: u64,
    pub misses: u64,
    pub promotions: u64,
    pub demotions: u64,
    pub page_writes_nvm: u64,
    pub pmem_evictions: u64,
    pub explicit_flushes: u64,
    pub fences: u64,
    pub ssd_reads: u64,
    pub ssd_writes: u64,
    pub wal_violations: u64,
    /// Some NVM-resident page ran ahead of the durable log at crash time
    /// (the tolerated write-ahead violation on the NVM tier).
    pub nvm_ahead_of_durable_seen: bool,
    pub orphan_slots_kept: u64,
    pub orphan_slots_dropped: u64,
    /// First divergence, as a minimized reproduction (seed + op index).
    pub mismatch: Option<String>,
}

impl TrialReport {
    pub fn accesses(&self) -> u64 {
        self.dram_hits + self.nvm_hits + self.misses
    }

    pub fn dram_hit_ratio(&self) -> f64 {
        if self.accesses() == 0 {
            0.0
        } else {
            self.dram_hits as f64 / self.accesses() as f64
        }
    }

    pub fn nvm_hit_ratio(&self) -> f64 {
        if self.accesses() == 0 {
            0.0
        } else {
            self.nvm_hits as f64 / self.accesses() as f64
        }
    }

    /// Everything, including wall-clock recovery time.
    pub fn lines(&self) -> Vec<String> {
        let mut out = self.stable_lines();
        out.push(format!("recovery_us={}", self.recovery_us));
        out
    }

    /// The deterministic projection: identical for identical seeds.
    pub fn stable_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push(format!("{k}={v}"));
        push("seed", self.seed.to_string());
        push("verdict", if self.verdict { "pass".into() } else { "fail".into() });
        push("crash", self.crash_happened.to_string());
        push(
            "crash_at_op",
            self.crash_at_op.map_or("none".into(), |v| v.to_string()),
        );
        push("committed_txns", self.committed_txns.to_string());
        push("oracle_keys", self.oracle_keys.to_string());
        push("pages_corrupted", self.pages_by_state[0].to_string());
        push("pages_behind", self.pages_by_state[1].to_string());
        push("pages_current", self.pages_by_state[2].to_string());
        push("pages_ahead", self.pages_by_state[3].to_string());
        push("records_replayed", self.records_replayed.to_string());
        push("ssd_fetches_for_repair", self.ssd_fetches_for_repair.to_string());
        push("pages_repaired", self.pages_repaired.to_string());
        push("recovery_work_units", self.recovery_work_units.to_string());
        push("dram_hits", self.dram_hits.to_string());
        push("nvm_hits", self.nvm_hits.to_string());
        push("misses", self.misses.to_string());
        push("promotions", self.promotions.to_string());
        push("demotions", self.demotions.to_string());
        push("page_writes_nvm", self.page_writes_nvm.to_string());
        push("pmem_evictions", self.pmem_evictions.to_string());
        push("explicit_flushes", self.explicit_flushes.to_string());
        push("fences", self.fences.to_string());
        push("ssd_reads", self.ssd_reads.to_string());
        push("ssd_writes", self.ssd_writes.to_string());
        push("wal_violations", self.wal_violations.to_string());
        push(
            "nvm_ahead_of_durable_seen",
            self.nvm_ahead_of_durable_seen.to_string(),
        );
        push("orphan_slots_kept", self.orphan_slots_kept.to_string());
        push("orphan_slots_dropped", self.orphan_slots_dropped.to_string());
        if let Some(m) = &self.mismatch {
            push("mismatch", m.clone());
        }
        out
    }
}

fn key_bytes(i: u32) -> Vec<u8> {
    format!("k{i:06}").into_bytes()
}

fn gen_value(rng: &mut ChaCha8Rng, cfg: &TrialConfig) -> Vec<u8> {
    let len = rng.gen_range(cfg.value_len_min..=cfg.value_len_max);
    (0..len).map(|_| rng.gen()).collect()
}

struct TrialRun {
    cfg: TrialConfig,
    engine: Engine,
    tree: BTree,
    oracle: OracleState,
    rng: ChaCha8Rng,
    committed_txns: u64,
}

impl TrialRun {
    fn new(cfg: &TrialConfig) -> Result<TrialRun> {
        cfg.validate()?;
        let engine = Engine::new(cfg.pool_config())?;
        Ok(TrialRun {
            cfg: cfg.clone(),
            engine,
            tree: BTree::default(),
            oracle: OracleState::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            committed_txns: 0,
        })
    }

    /// Build the tree and load the initial rows; everything committed,
    /// cleaned to SSD and flushed, so the measured phase starts warm.
    fn preload(&mut self) -> Result<()> {
        self.tree.create(&mut self.engine)?;
        let mut pending = Vec::new();
        let mut i = 0;
        while i < self.cfg.preload_keys {
            let txn = self.engine.begin_txn()?;
            for _ in 0..50 {
                if i >= self.cfg.preload_keys {
                    break;
                }
                let k = key_bytes(i);
                let v = gen_value(&mut self.rng, &self.cfg);
                self.tree.insert(&mut self.engine, txn, &k, &v)?;
                pending.push(PendingOp::Insert(k, v));
                i += 1;
            }
            self.engine.commit_txn(txn)?;
            self.oracle.apply(&pending);
            pending.clear();
            self.committed_txns += 1;
        }
        self.engine.clean_to_quiescence()?;
        self.engine.evict_cache_lines(usize::MAX);
        Ok(())
    }

    /// Run the measured phase. Returns the op index at which a crash was
    /// injected, or `None` when the workload ran to completion, plus the
    /// first divergence seen by inline lookup verification.
    fn workload(&mut self) -> Result<(Option<u32>, Option<String>)> {
        let crash_at = match self.cfg.crash_mode {
            CrashMode::RandomPoint => Some(self.rng.gen_range(0..self.cfg.ops_before_crash)),
            _ => None,
        };
        let total_weight = self.cfg.insert_weight + self.cfg.delete_weight + self.cfg.lookup_weight;
        let mut txn = None;
        let mut pending: Vec<PendingOp> = Vec::new();
        let mut txn_ops = 0;
        for op_index in 0..self.cfg.ops_before_crash {
            if crash_at == Some(op_index) {
                // Crash between operations; the open transaction is lost.
                return Ok((Some(op_index), None));
            }
            let t = match txn {
                Some(t) => t,
                None => {
                    let t = self.engine.begin_txn()?;
                    txn = Some(t);
                    t
                }
            };
            let k = key_bytes(self.rng.gen_range(0..self.cfg.key_space));
            let dice = self.rng.gen_range(0..total_weight);
            if dice < self.cfg.insert_weight {
                let v = gen_value(&mut self.rng, &self.cfg);
                self.tree.insert(&mut self.engine, t, &k, &v)?;
                pending.push(PendingOp::Insert(k, v));
            } else if dice < self.cfg.insert_weight + self.cfg.delete_weight {
                self.tree.delete(&mut self.engine, t, &k)?;
                pending.push(PendingOp::Delete(k));
            } else {
                let got = self.tree.lookup(&mut self.engine, &k)?;
                let expected = self.oracle.overlay(&pending, &k);
                if got != expected {
                    let repro = format!(
                        "seed={} op={op_index} key={} expected={} got={}",
                        self.cfg.seed,
                        String::from_utf8_lossy(&k),
                        expected.as_deref().map_or("absent".into(), hex),
                        got.as_deref().map_or("absent".into(), hex),
                    );
                    return Ok((None, Some(repro)));
                }
            }
            txn_ops += 1;
            if txn_ops >= self.cfg.ops_per_txn {
                self.engine.commit_txn(t)?;
                self.oracle.apply(&pending);
                pending.clear();
                txn = None;
                txn_ops = 0;
                self.committed_txns += 1;
            }
            if let Some(p) = self.cfg.evict_period {
                if p > 0 && op_index % p == 0 {
                    self.engine.evict_cache_lines(self.cfg.evict_lines);
                }
            }
            if let Some(p) = self.cfg.cleaner_period {
                if p > 0 && op_index % p == p - 1 {
                    self.engine.cleaner_step(self.cfg.cleaner_budget)?;
                }
            }
        }
        // Ran to completion: commit the trailing transaction.
        if let Some(t) = txn {
            self.engine.commit_txn(t)?;
            self.oracle.apply(&pending);
            self.committed_txns += 1;
        }
        Ok((None, None))
    }

    /// Compare a full scan of the tree against the oracle.
    fn verify(&mut self) -> Result<Option<String>> {
        self.tree.check_invariants(&mut self.engine)?;
        let scanned = self.tree.scan(&mut self.engine)?;
        let expected: Vec<(Vec<u8>, Vec<u8>)> =
            self.oracle.committed.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        if scanned == expected {
            return Ok(None);
        }
        // Minimize: report the first differing entry.
        let mut detail = format!(
            "seed={} scan has {} entries, oracle {}",
            self.cfg.seed,
            scanned.len(),
            expected.len()
        );
        for (i, pair) in scanned.iter().zip(expected.iter()).enumerate() {
            if pair.0 != pair.1 {
                detail = format!(
                    "seed={} first divergence at entry {i}: scan {}={} oracle {}={}",
                    self.cfg.seed,
                    String::from_utf8_lossy(&pair.0 .0),
                    hex(&pair.0 .1),
                    String::from_utf8_lossy(&pair.1 .0),
                    hex(&pair.1 .1),
                );
                break;
            }
        }
        Ok(Some(detail))
    }

    fn report(&mut self, crash_at: Option<u32>, mismatch: Option<String>) -> TrialReport {
        let stats = self.engine.pool.stats;
        let pmem = self.engine.pool.pmem_counters();
        let mut r = TrialReport {
            seed: self.cfg.seed,
            verdict: mismatch.is_none(),
            crash_happened: !matches!(self.cfg.crash_mode, CrashMode::None) ,
            crash_at_op: crash_at,
            committed_txns: self.committed_txns,
            oracle_keys: self.oracle.committed.len(),
            dram_hits: stats.dram_hits,
            nvm_hits: stats.nvm_hits,
            misses: stats.misses,
            promotions: stats.promotions,
            demotions: stats.demotions,
            page_writes_nvm: stats.page_writes_nvm,
            pmem_evictions: pmem.evictions,
            explicit_flushes: pmem.explicit_flushes,
            fences: pmem.fences,
            ssd_reads: self.engine.pool.ssd.reads,
            ssd_writes: self.engine.pool.ssd.writes,
            wal_violations: self.engine.pool.ssd.wal_violations,
            mismatch,
            ..TrialReport::default()
        };
        if let Some(ctx) = self.engine.restart_context() {
            r.pages_by_state = ctx.pages_by_state;
            r.records_replayed = ctx.records_replayed;
            r.ssd_fetches_for_repair = ctx.ssd_fetches_for_repair;
            r.pages_repaired = ctx.pages_repaired();
            r.recovery_us = ctx.recovery_us;
            r.recovery_work_units = ctx.work_units();
            r.orphan_slots_kept = ctx.orphan_slots_kept;
            r.orphan_slots_dropped = ctx.orphan_slots_dropped;
        }
        r
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Any NVM-resident page whose LSN is past the durable log watermark.
fn nvm_runs_ahead(engine: &mut Engine) -> bool {
    let durable = engine.log.durable_lsn();
    let residents = engine.pool.nvm_resident_pages();
    residents
        .into_iter()
        .any(|id| engine.pool.resident_page_lsn(id).map_or(false, |l| l > durable))
}

/// Run one full trial: build, preload, workload, crash, restart, verify.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialReport> {
    run_trial_with_dump(cfg, None)
}

/// Like `run_trial`, but optionally dump the crash images (and the oracle)
/// to a directory at the crash point, for cross-process resume.
pub fn run_trial_with_dump(cfg: &TrialConfig, dump_dir: Option<&Path>) -> Result<TrialReport> {
    let mut run = TrialRun::new(cfg)?;
    run.preload()?;
    let (crash_at, workload_mismatch) = run.workload()?;
    if let Some(m) = workload_mismatch {
        let mut report = run.report(None, Some(m));
        report.verdict = false;
        return Ok(report);
    }

    match cfg.crash_mode {
        CrashMode::None => {
            let mismatch = run.verify()?;
            return Ok(run.report(None, mismatch));
        }
        CrashMode::AfterQuiesce => {
            run.engine.log.flush_all()?;
        }
        CrashMode::RandomPoint => {}
    }

    let ahead_seen = nvm_runs_ahead(&mut run.engine);
    run.engine.crash();
    if let Some(dir) = dump_dir {
        dump_crash_state(dir, cfg, &mut run.engine, &run.oracle)?;
    }
    run.engine.restart(cfg.restart_mode)?;
    let mismatch = run.verify()?;
    let mut report = run.report(crash_at, mismatch);
    report.nvm_ahead_of_durable_seen = ahead_seen;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Crash-state persistence: the three device images plus the oracle, enough
// to restart and verify in another process.
// ---------------------------------------------------------------------------

pub fn dump_crash_state(
    dir: &Path,
    cfg: &TrialConfig,
    engine: &mut Engine,
    oracle: &OracleState,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    engine.pool.ssd.save(&dir.join("store.img"))?;
    std::fs::write(dir.join("nvm.img"), engine.pool.pmem().image_bytes())?;
    engine.log.save(&dir.join("wal.log"))?;
    let mut manifest = String::new();
    manifest.push_str(&format!("seed={}\n", cfg.seed));
    manifest.push_str(&format!("page_size={}\n", cfg.page_size));
    manifest.push_str(&format!("cache_capacity_lines={}\n", cfg.cache_capacity_lines));
    manifest.push_str(&format!("dram_frames={}\n", cfg.dram_frames));
    manifest.push_str(&format!("nvm_slots={}\n", cfg.nvm_slots));
    manifest.push_str(&format!("ssd_pages={}\n", cfg.ssd_pages));
    manifest.push_str(&format!(
        "checksum_policy={}\n",
        crate::config::checksum_policy_name(cfg.checksum_policy)
    ));
    manifest.push_str(&format!(
        "restart_mode={}\n",
        crate::config::restart_mode_name(cfg.restart_mode)
    ));
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    let mut lines = String::new();
    for (k, v) in &oracle.committed {
        lines.push_str(&format!("{}\t{}\n", hex(k), hex(v)));
    }
    std::fs::write(dir.join("oracle.tsv"), lines)?;
    Ok(())
}

fn unhex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::Format("odd hex length".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::Format(format!("bad hex '{s}'")))
        })
        .collect()
}

/// Reload dumped crash state, restart the engine, and verify against the
/// dumped oracle. The other half of `dump_crash_state`.
pub fn resume_trial(dir: &Path) -> Result<TrialReport> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut cfg = TrialConfig::default();
    for line in manifest.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k {
            "seed" => cfg.seed = v.parse().map_err(|_| Error::Format("bad seed".into()))?,
            "page_size" => cfg.page_size = v.parse().map_err(|_| Error::Format("bad page_size".into()))?,
            "cache_capacity_lines" => {
                cfg.cache_capacity_lines =
                    v.parse().map_err(|_| Error::Format("bad cache_capacity_lines".into()))?
            }
            "dram_frames" => cfg.dram_frames = v.parse().map_err(|_| Error::Format("bad dram_frames".into()))?,
            "nvm_slots" => cfg.nvm_slots = v.parse().map_err(|_| Error::Format("bad nvm_slots".into()))?,
            "ssd_pages" => cfg.ssd_pages = v.parse().map_err(|_| Error::Format("bad ssd_pages".into()))?,
            "checksum_policy" => cfg.checksum_policy = crate::config::parse_checksum_policy(v)?,
            "restart_mode" => cfg.restart_mode = crate::config::parse_restart_mode(v)?,
            _ => {}
        }
    }
    let pool_cfg = cfg.pool_config();
    let ssd = SsdStore::load(&dir.join("store.img"), pool_cfg.page_size, pool_cfg.checksum_policy)?;
    let mut pool = BufferPool::with_store(pool_cfg, ssd)?;
    let nvm_bytes = std::fs::read(dir.join("nvm.img"))?;
    pool.pmem().load_image(&nvm_bytes)?;
    pool.reset_volatile_for_crash();
    let log = LogDevice::load(&dir.join("wal.log"))?;
    let mut engine = Engine::from_parts(pool, log);
    engine.restart(cfg.restart_mode)?;

    let mut oracle = OracleState::default();
    for line in std::fs::read_to_string(dir.join("oracle.tsv"))?.lines() {
        let Some((k, v)) = line.split_once('\t') else { continue };
        oracle.committed.insert(unhex(k)?, unhex(v)?);
    }

    let tree = BTree::default();
    tree.check_invariants(&mut engine)?;
    let scanned = tree.scan(&mut engine)?;
    let expected: Vec<(Vec<u8>, Vec<u8>)> =
        oracle.committed.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let verdict = scanned == expected;

    let ctx = engine.restart_context().expect("restart ran");
    Ok(TrialReport {
        seed: cfg.seed,
        verdict,
        crash_happened: true,
        oracle_keys: oracle.committed.len(),
        pages_by_state: ctx.pages_by_state,
        records_replayed: ctx.records_replayed,
        ssd_fetches_for_repair: ctx.ssd_fetches_for_repair,
        pages_repaired: ctx.pages_repaired(),
        recovery_us: ctx.recovery_us,
        recovery_work_units: ctx.work_units(),
        mismatch: if verdict { None } else { Some("resumed scan differs from dumped oracle".into()) },
        ..TrialReport::default()
    })
}

/// A page-state histogram across the events of one report.
pub fn state_histogram(reports: &[TrialReport]) -> [u64; 4] {
    let mut out = [0u64; 4];
    for r in reports {
        for (i, v) in r.pages_by_state.iter().enumerate() {
            out[i] += v;
        }
    }
    out
}

pub fn state_index(state: PageState) -> usize {
    match state {
        PageState::Corrupted => 0,
        PageState::Behind => 1,
        PageState::Current => 2,
        PageState::Ahead => 3,
    }
}
