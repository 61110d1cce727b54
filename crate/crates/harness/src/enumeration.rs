//! Exhaustive classification check over small pages.
//!
//! A scripted update history runs against one page on a cache-line device
//! without forced write-back, so every update's lines stay dirty. Every
//! subset of those dirty lines then becomes a candidate crash image. Ground
//! truth is byte equality against the registry of sealed versions the
//! history produced: an image equal to a sealed version must classify by
//! that version's LSN against the chosen durable point; anything else is a
//! line mixture and must classify as corrupted.

use crate::config::checksum_policy_name;
use pmbuf::page::{ChecksumPolicy, Lsn, Page, PageId, PageType};
use pmbuf::pmem::SimPmem;
use pmbuf::recovery::{classify_page, PageState};
use pmbuf::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct EnumConfig {
    pub histories: u32,
    pub seed: u64,
    pub page_size: usize,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig {
            histories: 100,
            seed: 7,
            page_size: 256,
        }
    }
}

#[derive(Debug, Default)]
pub struct EnumReport {
    pub histories: u32,
    pub images_checked: u64,
    /// Ground-truth states encountered (corrupted/behind/current/ahead).
    pub states_seen: [u64; 4],
    pub mismatches: Vec<String>,
}

impl EnumReport {
    pub fn verdict(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("histories={}", self.histories),
            format!("images_checked={}", self.images_checked),
            format!("truth_corrupted={}", self.states_seen[0]),
            format!("truth_behind={}", self.states_seen[1]),
            format!("truth_current={}", self.states_seen[2]),
            format!("truth_ahead={}", self.states_seen[3]),
            format!("mismatches={}", self.mismatches.len()),
            format!("verdict={}", if self.verdict() { "pass" } else { "fail" }),
        ];
        out.extend(self.mismatches.iter().take(10).cloned());
        out
    }
}

fn state_index(s: PageState) -> usize {
    match s {
        PageState::Corrupted => 0,
        PageState::Behind => 1,
        PageState::Current => 2,
        PageState::Ahead => 3,
    }
}

const POLICIES: [ChecksumPolicy; 5] = [
    ChecksumPolicy::EveryUpdate,
    ChecksumPolicy::EveryK(2),
    ChecksumPolicy::EveryK(3),
    ChecksumPolicy::PerFragment(2),
    ChecksumPolicy::PerFragment(4),
];

pub fn run_oracle_enumeration(cfg: &EnumConfig) -> Result<EnumReport> {
    if cfg.page_size > 256 {
        return Err(Error::Config(format!(
            "enumeration supports page sizes up to 256 bytes, got {}",
            cfg.page_size
        )));
    }
    if cfg.page_size % pmbuf::pmem::DEFAULT_LINE_SIZE != 0 {
        return Err(Error::Config("page size must be a multiple of 64".into()));
    }
    let mut report = EnumReport {
        histories: cfg.histories,
        ..EnumReport::default()
    };
    for h in 0..cfg.histories {
        let policy = POLICIES[h as usize % POLICIES.len()];
        run_history(cfg, h, policy, &mut report)?;
    }
    Ok(report)
}

fn run_history(
    cfg: &EnumConfig,
    history: u32,
    policy: ChecksumPolicy,
    report: &mut EnumReport,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(history as u64));
    // Plenty of cache capacity: nothing is written back unless we say so.
    let mut dev = SimPmem::new(cfg.page_size, 64, cfg.seed ^ history as u64)?;

    // Sealed baseline, fully persistent.
    let mut logical = Page::formatted(cfg.page_size, PageId(1), PageType::BtreeLeaf, policy)?;
    dev.write(0, logical.bytes())?;
    dev.evict_random(usize::MAX);

    // Registry of byte-exact sealed versions: image bytes -> pageLSN.
    let mut registry: Vec<(Vec<u8>, Lsn)> = vec![(logical.bytes().to_vec(), Lsn::NULL)];

    let layout = logical.layout()?;
    let content = layout.content_range();
    let mut counter = 0u32;
    let n_updates = rng.gen_range(1..=4u32);
    let mut lsns = Vec::new();
    for u in 0..n_updates {
        let lsn = Lsn(10 * (u as u64 + 1));
        let len = rng.gen_range(1..=24usize);
        let offset = rng.gen_range(content.start..=content.end - len);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let before = logical.bytes().to_vec();
        logical.apply_delta(offset, &bytes, lsn, policy, &mut counter)?;
        // Mirror exactly the changed bytes through the cache, like the
        // engine's NVM write path.
        let after = logical.bytes();
        let mut i = 0;
        while i < after.len() {
            if before[i] != after[i] {
                let start = i;
                while i < after.len() && before[i] != after[i] {
                    i += 1;
                }
                dev.write(start, &after[start..i])?;
            } else {
                i += 1;
            }
        }
        lsns.push(lsn);
        if logical.verify(policy) {
            registry.push((logical.bytes().to_vec(), lsn));
        }
        // Occasional mid-history write-back shifts the persistent baseline.
        if rng.gen_bool(0.3) {
            dev.evict_random(rng.gen_range(0..=1));
        }
    }

    // Durable cut: the first `durable_updates` records reached the log.
    let durable_updates = rng.gen_range(0..=n_updates) as usize;
    let expected = if durable_updates == 0 {
        Lsn::NULL
    } else {
        lsns[durable_updates - 1]
    };

    for (i, image) in dev.enumerate_crash_images(0, cfg.page_size)?.iter().enumerate() {
        let page = Page::from_bytes(image.bytes().to_vec())?;
        let truth = match registry.iter().find(|(bytes, _)| bytes == image.bytes()) {
            Some((_, lsn)) => match lsn.cmp(&expected) {
                std::cmp::Ordering::Less => PageState::Behind,
                std::cmp::Ordering::Equal => PageState::Current,
                std::cmp::Ordering::Greater => PageState::Ahead,
            },
            None => PageState::Corrupted,
        };
        let got = classify_page(&page, policy, expected);
        report.images_checked += 1;
        report.states_seen[state_index(truth)] += 1;
        if got != truth {
            report.mismatches.push(format!(
                "history={history} policy={} image={i} truth={} got={}",
                checksum_policy_name(policy),
                truth.name(),
                got.name()
            ));
        }
    }
    Ok(())
}
