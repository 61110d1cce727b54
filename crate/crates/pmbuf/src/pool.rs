//! Three-tier buffer pool: DRAM frames over an NVM region over an SSD page
//! store.
//!
//! Pages live primarily on SSD. A miss loads the page into the admission
//! tier (NVM by default). NVM-resident pages that heat up — reach the 2Q
//! probation threshold — are promoted to DRAM and their NVM slot is freed.
//! Updates are applied in place on whichever tier holds the page: plain
//! memory writes in DRAM, cache-line writes through `SimPmem` on NVM with no
//! flush or fence in optimistic mode.
//!
//! SSD write-back respects the write-ahead rule: the log is flushed up to
//! the page's LSN before the image is written. NVM-resident images are
//! allowed to run ahead of the durable log; the store is instrumented to
//! record any violation that would reach SSD.

use crate::error::{Error, Result};
use crate::page::{
    self, apply_delta_bytes, page_lsn_of, seal_bytes, verify_bytes, ChecksumPolicy, Lsn, Page,
    PageId, PageType,
};
use crate::pmem::SimPmem;
use crate::wal::LogDevice;
use indexmap::IndexMap;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Dram,
    Nvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// Never flush or fence; consistency is restored by repair after a crash.
    Optimistic,
    /// Flush the whole page image (plus a fence) after every NVM page write.
    Pessimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionTier {
    Nvm,
    Dram,
}

#[derive(Debug, Clone, Copy)]
pub struct PlacementConfig {
    /// Accesses while on the probation queue before a page is promoted.
    pub promote_after: u32,
    /// Tier that receives cold loads from SSD.
    pub admission: AdmissionTier,
    /// Probation queue capacity; oldest entries fall off beyond this.
    pub probation_capacity: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            promote_after: 2,
            admission: AdmissionTier::Nvm,
            probation_capacity: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoolConfig {
    pub page_size: usize,
    pub dram_frames: usize,
    pub nvm_slots: usize,
    pub ssd_pages: u64,
    pub cache_capacity_lines: usize,
    pub checksum_policy: ChecksumPolicy,
    pub placement: PlacementConfig,
    pub consistency: ConsistencyMode,
    pub pmem_seed: u64,
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        self.checksum_policy.validate(self.page_size)?;
        if self.page_size % crate::pmem::DEFAULT_LINE_SIZE != 0 {
            return Err(Error::Config(format!(
                "page size {} must be a multiple of the 64-byte line",
                self.page_size
            )));
        }
        if self.ssd_pages == 0 {
            return Err(Error::Config("store needs at least one page".into()));
        }
        if self.cache_capacity_lines == 0 {
            return Err(Error::Config("cache capacity must be positive".into()));
        }
        if self.nvm_slots == 0 && self.placement.admission == AdmissionTier::Nvm {
            return Err(Error::Config(
                "NVM admission requires at least one NVM slot".into(),
            ));
        }
        if self.placement.promote_after == 0 {
            return Err(Error::Config("promotion threshold must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            page_size: 4096,
            dram_frames: 64,
            nvm_slots: 512,
            ssd_pages: 4096,
            cache_capacity_lines: 1024,
            checksum_policy: ChecksumPolicy::EveryUpdate,
            placement: PlacementConfig::default(),
            consistency: ConsistencyMode::Optimistic,
            pmem_seed: 0,
        }
    }
}

/// Pinned reference to a buffered page. Explicitly returned via `unfix`.
#[derive(Debug)]
pub struct PageHandle {
    id: PageId,
    tier: Tier,
    intent: Intent,
}

impl PageHandle {
    pub fn id(&self) -> PageId {
        self.id
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn intent(&self) -> Intent {
        self.intent
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PoolStats {
    pub dram_hits: u64,
    pub nvm_hits: u64,
    pub misses: u64,
    pub promotions: u64,
    pub demotions: u64,
    pub dram_evictions: u64,
    pub nvm_evictions: u64,
    /// Logical page writes against the NVM tier (updates and whole-image
    /// installs); the pessimistic baseline flushes once per such write.
    pub page_writes_nvm: u64,
    pub pages_cleaned: u64,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RescanStats {
    pub suspects: u64,
    pub orphans_kept: u64,
    pub orphans_dropped: u64,
}

// ---------------------------------------------------------------------------
// SSD store
// ---------------------------------------------------------------------------

/// Durable page store. Writes are whole-page and atomic; the store is
/// instrumented to count any write that would violate the write-ahead rule.
#[derive(Debug)]
pub struct SsdStore {
    page_size: usize,
    policy: ChecksumPolicy,
    data: Vec<u8>,
    pub reads: u64,
    pub writes: u64,
    pub wal_violations: u64,
}

impl SsdStore {
    /// A store of `page_count` freshly formatted (sealed, empty) pages.
    pub fn formatted(page_count: u64, page_size: usize, policy: ChecksumPolicy) -> Result<SsdStore> {
        policy.validate(page_size)?;
        let mut data = vec![0u8; page_count as usize * page_size];
        for id in 0..page_count {
            let start = id as usize * page_size;
            page::format_bytes(
                &mut data[start..start + page_size],
                PageId(id),
                PageType::Free,
                policy.fragment_count(),
                Lsn::NULL,
            )?;
        }
        Ok(SsdStore {
            page_size,
            policy,
            data,
            reads: 0,
            writes: 0,
            wal_violations: 0,
        })
    }

    pub fn page_count(&self) -> u64 {
        (self.data.len() / self.page_size) as u64
    }

    fn range_of(&self, id: PageId) -> Result<std::ops::Range<usize>> {
        if id.0 >= self.page_count() {
            return Err(Error::Bounds(format!(
                "{id} out of range (store holds {})",
                self.page_count()
            )));
        }
        let start = id.0 as usize * self.page_size;
        Ok(start..start + self.page_size)
    }

    pub fn read_page(&mut self, id: PageId) -> Result<Page> {
        let range = self.range_of(id)?;
        self.reads += 1;
        Page::from_bytes(self.data[range].to_vec())
    }

    /// Peek a page image without counting a device read (verification use).
    pub fn peek_page(&self, id: PageId) -> Result<Page> {
        let range = self.range_of(id)?;
        Page::from_bytes(self.data[range].to_vec())
    }

    pub fn write_page(&mut self, id: PageId, image: &Page, durable_lsn: Lsn) -> Result<()> {
        let range = self.range_of(id)?;
        if image.page_size() != self.page_size {
            return Err(Error::Format("page image size mismatch".into()));
        }
        if image.page_lsn() > durable_lsn {
            self.wal_violations += 1;
        }
        debug_assert!(
            image.verify(self.policy),
            "only sealed images reach the store"
        );
        self.writes += 1;
        self.data[range].copy_from_slice(image.bytes());
        Ok(())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.data)?;
        Ok(())
    }

    pub fn load(path: &Path, page_size: usize, policy: ChecksumPolicy) -> Result<SsdStore> {
        let data = std::fs::read(path)?;
        if data.is_empty() || data.len() % page_size != 0 {
            return Err(Error::Format(format!(
                "store file length {} is not a multiple of page size {page_size}",
                data.len()
            )));
        }
        Ok(SsdStore {
            page_size,
            policy,
            data,
            reads: 0,
            writes: 0,
            wal_violations: 0,
        })
    }
}

// ---------------------------------------------------------------------------
// Tier bookkeeping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SlotMeta {
    page_id: PageId,
    dirty: bool,
    /// Set after a crash until the page is classified and repaired; suspect
    /// slots are never written back and never served to normal fixes.
    suspect: bool,
    pins: u32,
    seal_counter: u32,
    ref_bit: bool,
}

#[derive(Debug, Clone)]
struct FrameMeta {
    page_id: PageId,
    dirty: bool,
    pins: u32,
    seal_counter: u32,
    last_access: u64,
}

#[derive(Debug)]
struct NvmRegion {
    dev: SimPmem,
    page_size: usize,
    slots: Vec<Option<SlotMeta>>,
    map: HashMap<PageId, usize>,
    free: Vec<usize>,
    clock: usize,
}

impl NvmRegion {
    fn new(slot_count: usize, page_size: usize, cache_capacity_lines: usize, seed: u64) -> Result<NvmRegion> {
        let dev = SimPmem::new(slot_count.max(1) * page_size, cache_capacity_lines, seed)?;
        Ok(NvmRegion {
            dev,
            page_size,
            slots: vec![None; slot_count],
            map: HashMap::new(),
            free: (0..slot_count).rev().collect(),
            clock: 0,
        })
    }

    fn addr(&self, slot: usize) -> usize {
        slot * self.page_size
    }

    fn read_full(&mut self, slot: usize) -> Result<Vec<u8>> {
        self.dev.read(self.addr(slot), self.page_size)
    }

    fn release(&mut self, slot: usize) {
        if let Some(meta) = self.slots[slot].take() {
            self.map.remove(&meta.page_id);
            self.free.push(slot);
        }
    }

    fn reset_volatile(&mut self) {
        for s in self.slots.iter_mut() {
            *s = None;
        }
        self.map.clear();
        self.free = (0..self.slots.len()).rev().collect();
        self.clock = 0;
    }
}

#[derive(Debug)]
struct DramPool {
    page_size: usize,
    frames: Vec<u8>,
    meta: Vec<Option<FrameMeta>>,
    map: HashMap<PageId, usize>,
    free: Vec<usize>,
    tick: u64,
}

impl DramPool {
    fn new(frame_count: usize, page_size: usize) -> DramPool {
        DramPool {
            page_size,
            frames: vec![0u8; frame_count * page_size],
            meta: vec![None; frame_count],
            map: HashMap::new(),
            free: (0..frame_count).rev().collect(),
            tick: 0,
        }
    }

    fn buf(&self, frame: usize) -> &[u8] {
        &self.frames[frame * self.page_size..(frame + 1) * self.page_size]
    }

    fn buf_mut(&mut self, frame: usize) -> &mut [u8] {
        &mut self.frames[frame * self.page_size..(frame + 1) * self.page_size]
    }

    fn touch(&mut self, frame: usize) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(meta) = self.meta[frame].as_mut() {
            meta.last_access = tick;
        }
    }

    /// Least-recently-used unpinned frame.
    fn victim(&self) -> Option<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
            .filter(|(_, m)| m.pins == 0)
            .min_by_key(|(_, m)| m.last_access)
            .map(|(i, _)| i)
    }

    fn release(&mut self, frame: usize) {
        if let Some(meta) = self.meta[frame].take() {
            self.map.remove(&meta.page_id);
            self.free.push(frame);
        }
    }

    fn reset_volatile(&mut self) {
        for m in self.meta.iter_mut() {
            *m = None;
        }
        self.map.clear();
        self.free = (0..self.meta.len()).rev().collect();
        self.tick = 0;
    }
}

/// Simplified 2Q: a probation queue with access counts drives promotion;
/// pages promote to DRAM exactly when their count reaches the threshold.
#[derive(Debug)]
struct Placement {
    probation: IndexMap<PageId, u32>,
    cfg: PlacementConfig,
}

impl Placement {
    fn new(cfg: PlacementConfig) -> Placement {
        Placement {
            probation: IndexMap::new(),
            cfg,
        }
    }

    /// Record an NVM-tier access; true means the page is heating up and
    /// should be promoted now.
    fn note_nvm_access(&mut self, id: PageId) -> bool {
        let count = self.probation.entry(id).or_insert(0);
        *count += 1;
        if *count >= self.cfg.promote_after {
            self.probation.shift_remove(&id);
            return true;
        }
        while self.probation.len() > self.cfg.probation_capacity {
            self.probation.shift_remove_index(0);
        }
        false
    }

    fn forget(&mut self, id: PageId) {
        self.probation.shift_remove(&id);
    }

    fn clear(&mut self) {
        self.probation.clear();
    }
}

// ---------------------------------------------------------------------------
// The pool
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct BufferPool {
    cfg: PoolConfig,
    dram: DramPool,
    nvm: NvmRegion,
    pub ssd: SsdStore,
    placement: Placement,
    cleaner_cursor: usize,
    pub stats: PoolStats,
}

impl BufferPool {
    pub fn new(cfg: PoolConfig) -> Result<BufferPool> {
        cfg.validate()?;
        let ssd = SsdStore::formatted(cfg.ssd_pages, cfg.page_size, cfg.checksum_policy)?;
        Self::with_store(cfg, ssd)
    }

    /// Build the pool over an existing store (e.g. one reloaded from a file).
    pub fn with_store(cfg: PoolConfig, ssd: SsdStore) -> Result<BufferPool> {
        cfg.validate()?;
        if ssd.page_count() != cfg.ssd_pages || ssd.page_size != cfg.page_size {
            return Err(Error::Config("store geometry does not match config".into()));
        }
        Ok(BufferPool {
            dram: DramPool::new(cfg.dram_frames, cfg.page_size),
            nvm: NvmRegion::new(cfg.nvm_slots, cfg.page_size, cfg.cache_capacity_lines, cfg.pmem_seed)?,
            ssd,
            placement: Placement::new(cfg.placement),
            cleaner_cursor: 0,
            cfg,
            stats: PoolStats::default(),
        })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    pub fn policy(&self) -> ChecksumPolicy {
        self.cfg.checksum_policy
    }

    pub fn pmem(&mut self) -> &mut SimPmem {
        &mut self.nvm.dev
    }

    pub fn pmem_counters(&self) -> crate::pmem::PmemCounters {
        self.nvm.dev.counters
    }

    pub fn dram_resident(&self, id: PageId) -> bool {
        self.dram.map.contains_key(&id)
    }

    pub fn nvm_resident(&self, id: PageId) -> bool {
        self.nvm.map.contains_key(&id)
    }

    pub fn nvm_is_suspect(&self, id: PageId) -> bool {
        self.nvm
            .map
            .get(&id)
            .and_then(|&s| self.nvm.slots[s].as_ref())
            .map_or(false, |m| m.suspect)
    }

    /// NVM-resident page ids in slot order.
    pub fn nvm_resident_pages(&self) -> Vec<PageId> {
        self.nvm
            .slots
            .iter()
            .filter_map(|s| s.as_ref().map(|m| m.page_id))
            .collect()
    }

    pub fn pinned_total(&self) -> u64 {
        let d: u64 = self.dram.meta.iter().flatten().map(|m| m.pins as u64).sum();
        let n: u64 = self.nvm.slots.iter().flatten().map(|m| m.pins as u64).sum();
        d + n
    }

    // -- NVM write helpers: every logical page write to NVM funnels through
    //    these so the consistency mode applies uniformly.

    fn nvm_write_ranges(&mut self, slot: usize, image: &[u8], ranges: &[std::ops::Range<usize>]) -> Result<()> {
        let base = self.nvm.addr(slot);
        for r in ranges {
            self.nvm.dev.write(base + r.start, &image[r.clone()])?;
        }
        self.stats.page_writes_nvm += 1;
        self.pessimistic_point(slot)?;
        Ok(())
    }

    fn nvm_write_full(&mut self, slot: usize, image: &[u8]) -> Result<()> {
        let base = self.nvm.addr(slot);
        self.nvm.dev.write(base, image)?;
        self.stats.page_writes_nvm += 1;
        self.pessimistic_point(slot)?;
        Ok(())
    }

    fn pessimistic_point(&mut self, slot: usize) -> Result<()> {
        if self.cfg.consistency == ConsistencyMode::Pessimistic {
            let base = self.nvm.addr(slot);
            self.nvm.dev.flush(base, self.cfg.page_size)?;
            self.nvm.dev.fence();
        }
        Ok(())
    }

    // -- fixing --------------------------------------------------------------

    /// Resolve a page to a tier, loading and promoting as the placement
    /// policy dictates, and pin it there until `unfix`.
    pub fn fix_page(&mut self, log: &mut LogDevice, id: PageId, intent: Intent) -> Result<PageHandle> {
        if id.0 >= self.cfg.ssd_pages {
            return Err(Error::Bounds(format!(
                "{id} out of range (store holds {})",
                self.cfg.ssd_pages
            )));
        }
        if let Some(&frame) = self.dram.map.get(&id) {
            self.stats.dram_hits += 1;
            self.dram.touch(frame);
            self.dram.meta[frame].as_mut().expect("mapped frame").pins += 1;
            return Ok(PageHandle { id, tier: Tier::Dram, intent });
        }
        if let Some(&slot) = self.nvm.map.get(&id) {
            let meta = self.nvm.slots[slot].as_ref().expect("mapped slot");
            if meta.suspect {
                return Err(Error::Protocol(format!(
                    "{id} is unclassified after a crash; repair must run before it is fixed"
                )));
            }
            self.stats.nvm_hits += 1;
            let pins = meta.pins;
            self.nvm.slots[slot].as_mut().expect("mapped slot").ref_bit = true;
            let wants_promotion = self.cfg.dram_frames > 0
                && pins == 0
                && self.placement.note_nvm_access(id);
            if wants_promotion {
                if let Some(frame) = self.promote_to_dram(log, id, slot)? {
                    self.dram.meta[frame].as_mut().expect("promoted frame").pins += 1;
                    self.dram.touch(frame);
                    return Ok(PageHandle { id, tier: Tier::Dram, intent });
                }
            }
            self.nvm.slots[slot].as_mut().expect("mapped slot").pins += 1;
            return Ok(PageHandle { id, tier: Tier::Nvm, intent });
        }
        // Miss: load from SSD into the admission tier.
        self.stats.misses += 1;
        let image = self.ssd.read_page(id)?;
        match self.cfg.placement.admission {
            AdmissionTier::Nvm => {
                let slot = self
                    .make_room_nvm(log)?
                    .ok_or_else(|| Error::Capacity("all NVM slots pinned".into()))?;
                self.nvm_write_full(slot, image.bytes())?;
                self.nvm.slots[slot] = Some(SlotMeta {
                    page_id: id,
                    dirty: false,
                    suspect: false,
                    pins: 0,
                    seal_counter: 0,
                    ref_bit: true,
                });
                self.nvm.map.insert(id, slot);
                // The load itself counts as the first probation access.
                let promote = self.cfg.dram_frames > 0 && self.placement.note_nvm_access(id);
                if promote {
                    if let Some(frame) = self.promote_to_dram(log, id, slot)? {
                        self.dram.meta[frame].as_mut().expect("promoted frame").pins += 1;
                        self.dram.touch(frame);
                        return Ok(PageHandle { id, tier: Tier::Dram, intent });
                    }
                }
                self.nvm.slots[slot].as_mut().expect("installed slot").pins += 1;
                Ok(PageHandle { id, tier: Tier::Nvm, intent })
            }
            AdmissionTier::Dram => {
                let frame = self
                    .make_room_dram(log)?
                    .ok_or_else(|| Error::Capacity("all DRAM frames pinned".into()))?;
                self.dram.buf_mut(frame).copy_from_slice(image.bytes());
                self.dram.meta[frame] = Some(FrameMeta {
                    page_id: id,
                    dirty: false,
                    pins: 1,
                    seal_counter: 0,
                    last_access: 0,
                });
                self.dram.map.insert(id, frame);
                self.dram.touch(frame);
                Ok(PageHandle { id, tier: Tier::Dram, intent })
            }
        }
    }

    pub fn unfix(&mut self, handle: PageHandle) {
        match handle.tier {
            Tier::Dram => {
                if let Some(&frame) = self.dram.map.get(&handle.id) {
                    let meta = self.dram.meta[frame].as_mut().expect("mapped frame");
                    debug_assert!(meta.pins > 0);
                    meta.pins = meta.pins.saturating_sub(1);
                }
            }
            Tier::Nvm => {
                if let Some(&slot) = self.nvm.map.get(&handle.id) {
                    let meta = self.nvm.slots[slot].as_mut().expect("mapped slot");
                    debug_assert!(meta.pins > 0);
                    meta.pins = meta.pins.saturating_sub(1);
                }
            }
        }
    }

    /// Copy of the page as seen through the handle's tier.
    pub fn materialize(&mut self, handle: &PageHandle) -> Result<Page> {
        match handle.tier {
            Tier::Dram => {
                let frame = *self
                    .dram
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not in DRAM", handle.id)))?;
                Page::from_bytes(self.dram.buf(frame).to_vec())
            }
            Tier::Nvm => {
                let slot = *self
                    .nvm
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not on NVM", handle.id)))?;
                Page::from_bytes(self.nvm.read_full(slot)?)
            }
        }
    }

    pub fn read_range(&mut self, handle: &PageHandle, offset: usize, len: usize) -> Result<Vec<u8>> {
        if offset + len > self.cfg.page_size {
            return Err(Error::Bounds(format!(
                "read [{offset}, {}) past page end",
                offset + len
            )));
        }
        match handle.tier {
            Tier::Dram => {
                let frame = *self
                    .dram
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not in DRAM", handle.id)))?;
                Ok(self.dram.buf(frame)[offset..offset + len].to_vec())
            }
            Tier::Nvm => {
                let slot = *self
                    .nvm
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not on NVM", handle.id)))?;
                let addr = self.nvm.addr(slot) + offset;
                self.nvm.dev.read(addr, len)
            }
        }
    }

    // -- mutation ------------------------------------------------------------

    /// Log an update and apply it through the handle's tier. The caller's
    /// `before` must match the current content. Returns the record's LSN.
    /// The log record is appended, not flushed.
    pub fn update_fixed(
        &mut self,
        log: &mut LogDevice,
        handle: &PageHandle,
        offset: usize,
        before: &[u8],
        after: &[u8],
        txn_id: u64,
    ) -> Result<Lsn> {
        if handle.intent != Intent::Write {
            return Err(Error::Protocol("update through a read handle".into()));
        }
        let current = self.read_range(handle, offset, before.len())?;
        if current != before {
            return Err(Error::Protocol(format!(
                "before-image mismatch at {} offset {offset}",
                handle.id
            )));
        }
        let lsn = log.append(crate::wal::RecordBody::update(
            txn_id,
            handle.id,
            offset as u32,
            before.to_vec(),
            after.to_vec(),
        ))?;
        self.apply_update_fixed(handle, offset, after, lsn)?;
        Ok(lsn)
    }

    /// Apply an already-logged delta (update or CLR redo) through the
    /// handle's tier, maintaining checksums per the pool policy.
    pub fn apply_update_fixed(
        &mut self,
        handle: &PageHandle,
        offset: usize,
        after: &[u8],
        lsn: Lsn,
    ) -> Result<()> {
        let policy = self.cfg.checksum_policy;
        match handle.tier {
            Tier::Dram => {
                let frame = *self
                    .dram
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not in DRAM", handle.id)))?;
                let mut counter = self.dram.meta[frame].as_ref().expect("mapped").seal_counter;
                apply_delta_bytes(self.dram.buf_mut(frame), offset, after, lsn, policy, &mut counter)?;
                let meta = self.dram.meta[frame].as_mut().expect("mapped");
                meta.seal_counter = counter;
                meta.dirty = true;
            }
            Tier::Nvm => {
                let slot = *self
                    .nvm
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not on NVM", handle.id)))?;
                let mut image = self.nvm.read_full(slot)?;
                let mut counter = self.nvm.slots[slot].as_ref().expect("mapped").seal_counter;
                let ranges =
                    apply_delta_bytes(&mut image, offset, after, lsn, policy, &mut counter)?;
                self.nvm_write_ranges(slot, &image, &ranges)?;
                let meta = self.nvm.slots[slot].as_mut().expect("mapped");
                meta.seal_counter = counter;
                meta.dirty = true;
            }
        }
        Ok(())
    }

    /// Reinitialize a fixed page as freshly formatted (the redo action of a
    /// page-format record).
    pub fn format_fixed(&mut self, handle: &PageHandle, page_type: PageType, lsn: Lsn) -> Result<()> {
        if handle.intent != Intent::Write {
            return Err(Error::Protocol("format through a read handle".into()));
        }
        let fc = self.cfg.checksum_policy.fragment_count();
        match handle.tier {
            Tier::Dram => {
                let frame = *self
                    .dram
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not in DRAM", handle.id)))?;
                page::format_bytes(self.dram.buf_mut(frame), handle.id, page_type, fc, lsn)?;
                let meta = self.dram.meta[frame].as_mut().expect("mapped");
                meta.dirty = true;
                meta.seal_counter = 0;
            }
            Tier::Nvm => {
                let slot = *self
                    .nvm
                    .map
                    .get(&handle.id)
                    .ok_or_else(|| Error::Protocol(format!("{} not on NVM", handle.id)))?;
                let mut image = vec![0u8; self.cfg.page_size];
                page::format_bytes(&mut image, handle.id, page_type, fc, lsn)?;
                self.nvm_write_full(slot, &image)?;
                let meta = self.nvm.slots[slot].as_mut().expect("mapped");
                meta.dirty = true;
                meta.seal_counter = 0;
            }
        }
        Ok(())
    }

    // -- room making and eviction ---------------------------------------------

    fn promote_to_dram(&mut self, log: &mut LogDevice, id: PageId, slot: usize) -> Result<Option<usize>> {
        let frame = match self.make_room_dram(log)? {
            Some(f) => f,
            None => return Ok(None), // all frames pinned: stay on NVM
        };
        let image = self.nvm.read_full(slot)?;
        let src = self.nvm.slots[slot].as_ref().expect("mapped slot").clone();
        self.dram.buf_mut(frame).copy_from_slice(&image);
        self.dram.meta[frame] = Some(FrameMeta {
            page_id: id,
            dirty: src.dirty,
            pins: 0,
            seal_counter: src.seal_counter,
            last_access: 0,
        });
        self.dram.map.insert(id, frame);
        self.nvm.release(slot);
        self.placement.forget(id);
        self.stats.promotions += 1;
        Ok(Some(frame))
    }

    /// A free DRAM frame, evicting the LRU unpinned page if necessary.
    fn make_room_dram(&mut self, log: &mut LogDevice) -> Result<Option<usize>> {
        if let Some(f) = self.dram.free.pop() {
            return Ok(Some(f));
        }
        let victim = match self.dram.victim() {
            Some(v) => v,
            None => return Ok(None),
        };
        self.evict_dram_frame(log, victim)?;
        Ok(self.dram.free.pop())
    }

    /// Evict one DRAM frame: dirty pages demote to NVM, clean pages drop.
    fn evict_dram_frame(&mut self, log: &mut LogDevice, frame: usize) -> Result<()> {
        let meta = self.dram.meta[frame].as_ref().expect("occupied frame").clone();
        debug_assert_eq!(meta.pins, 0);
        if meta.dirty {
            let mut image = self.dram.buf(frame).to_vec();
            if !verify_bytes(&image, self.cfg.checksum_policy) {
                seal_bytes(&mut image)?;
            }
            match self.make_room_nvm(log)? {
                Some(slot) => {
                    self.nvm_write_full(slot, &image)?;
                    self.nvm.slots[slot] = Some(SlotMeta {
                        page_id: meta.page_id,
                        dirty: true,
                        suspect: false,
                        pins: 0,
                        seal_counter: 0,
                        ref_bit: true,
                    });
                    self.nvm.map.insert(meta.page_id, slot);
                    self.stats.demotions += 1;
                }
                None => {
                    // No NVM room at all: write straight to SSD and drop.
                    let page = Page::from_bytes(image)?;
                    if page.page_lsn() > log.durable_lsn() {
                        log.flush(page.page_lsn())?;
                    }
                    self.ssd.write_page(meta.page_id, &page, log.durable_lsn())?;
                }
            }
        }
        self.dram.release(frame);
        self.stats.dram_evictions += 1;
        Ok(())
    }

    /// A free NVM slot, evicting a CLOCK victim if necessary.
    fn make_room_nvm(&mut self, log: &mut LogDevice) -> Result<Option<usize>> {
        if self.nvm.slots.is_empty() {
            return Ok(None);
        }
        if let Some(s) = self.nvm.free.pop() {
            return Ok(Some(s));
        }
        if self.evict_nvm_one(log)?.is_none() {
            return Ok(None);
        }
        Ok(self.nvm.free.pop())
    }

    /// Evict one NVM slot chosen by CLOCK. Dirty pages are written back to
    /// SSD first (write-ahead rule respected); suspect pages are dropped
    /// without write-back, since SSD plus the log can always rebuild them.
    fn evict_nvm_one(&mut self, log: &mut LogDevice) -> Result<Option<usize>> {
        let n = self.nvm.slots.len();
        if n == 0 {
            return Ok(None);
        }
        let mut scanned = 0;
        while scanned < 2 * n {
            let idx = self.nvm.clock % n;
            self.nvm.clock = (self.nvm.clock + 1) % n;
            scanned += 1;
            let (id, dirty, suspect) = match self.nvm.slots[idx].as_ref() {
                Some(m) if m.pins == 0 => {
                    if m.ref_bit {
                        self.nvm.slots[idx].as_mut().expect("occupied").ref_bit = false;
                        continue;
                    }
                    (m.page_id, m.dirty, m.suspect)
                }
                _ => continue,
            };
            if dirty && !suspect {
                self.write_back_nvm_slot(log, idx)?;
            }
            self.placement.forget(id);
            self.nvm.release(idx);
            self.stats.nvm_evictions += 1;
            return Ok(Some(idx));
        }
        Ok(None)
    }

    /// Seal (if the every-k window is open) and write one NVM slot's page to
    /// SSD, flushing the log first per the write-ahead rule.
    fn write_back_nvm_slot(&mut self, log: &mut LogDevice, slot: usize) -> Result<()> {
        let mut image = self.nvm.read_full(slot)?;
        if !verify_bytes(&image, self.cfg.checksum_policy) {
            let ranges = seal_bytes(&mut image)?;
            self.nvm_write_ranges(slot, &image, &ranges)?;
            self.nvm.slots[slot].as_mut().expect("occupied").seal_counter = 0;
        }
        let page = Page::from_bytes(image)?;
        if page.page_lsn() > log.durable_lsn() {
            log.flush(page.page_lsn())?;
        }
        let id = self.nvm.slots[slot].as_ref().expect("occupied").page_id;
        self.ssd.write_page(id, &page, log.durable_lsn())?;
        self.nvm.slots[slot].as_mut().expect("occupied").dirty = false;
        Ok(())
    }

    /// Evict up to `n` pages from a tier; pinned pages are skipped.
    pub fn evict(&mut self, log: &mut LogDevice, tier: Tier, n: usize) -> Result<usize> {
        let mut evicted = 0;
        for _ in 0..n {
            match tier {
                Tier::Dram => match self.dram.victim() {
                    Some(frame) => {
                        self.evict_dram_frame(log, frame)?;
                        evicted += 1;
                    }
                    None => break,
                },
                Tier::Nvm => match self.evict_nvm_one(log)? {
                    Some(_) => evicted += 1,
                    None => break,
                },
            }
        }
        Ok(evicted)
    }

    /// Write one resident page's image back to SSD if dirty (no-op if clean).
    pub fn write_to_ssd(&mut self, log: &mut LogDevice, id: PageId) -> Result<()> {
        if let Some(&slot) = self.nvm.map.get(&id) {
            let meta = self.nvm.slots[slot].as_ref().expect("mapped slot");
            if meta.suspect {
                return Err(Error::Protocol(format!("{id} is suspect; repair before write-back")));
            }
            if !meta.dirty {
                return Ok(());
            }
            self.write_back_nvm_slot(log, slot)?;
            self.stats.pages_cleaned += 1;
            return Ok(());
        }
        if let Some(&frame) = self.dram.map.get(&id) {
            if !self.dram.meta[frame].as_ref().expect("mapped frame").dirty {
                return Ok(());
            }
            if !verify_bytes(self.dram.buf(frame), self.cfg.checksum_policy) {
                seal_bytes(self.dram.buf_mut(frame))?;
                self.dram.meta[frame].as_mut().expect("mapped frame").seal_counter = 0;
            }
            let page = Page::from_bytes(self.dram.buf(frame).to_vec())?;
            if page.page_lsn() > log.durable_lsn() {
                log.flush(page.page_lsn())?;
            }
            self.ssd.write_page(id, &page, log.durable_lsn())?;
            self.dram.meta[frame].as_mut().expect("mapped frame").dirty = false;
            self.stats.pages_cleaned += 1;
            return Ok(());
        }
        Err(Error::Protocol(format!("{id} is not resident")))
    }

    /// One cleaner round: advance the round-robin cursor across NVM slots
    /// and DRAM frames, writing back up to `budget` dirty unpinned pages.
    pub fn cleaner_step(&mut self, log: &mut LogDevice, budget: usize) -> Result<usize> {
        let domain = self.nvm.slots.len() + self.dram.meta.len();
        if domain == 0 || budget == 0 {
            return Ok(0);
        }
        let mut cleaned = 0;
        let mut scanned = 0;
        while cleaned < budget && scanned < domain {
            let pos = self.cleaner_cursor % domain;
            self.cleaner_cursor = (self.cleaner_cursor + 1) % domain;
            scanned += 1;
            let id = if pos < self.nvm.slots.len() {
                match self.nvm.slots[pos].as_ref() {
                    Some(m) if m.dirty && !m.suspect && m.pins == 0 => m.page_id,
                    _ => continue,
                }
            } else {
                match self.dram.meta[pos - self.nvm.slots.len()].as_ref() {
                    Some(m) if m.dirty && m.pins == 0 => m.page_id,
                    _ => continue,
                }
            };
            self.write_to_ssd(log, id)?;
            cleaned += 1;
        }
        Ok(cleaned)
    }

    /// Dirty, unpinned, non-suspect resident pages (cleaner work remaining).
    pub fn dirty_resident_count(&self) -> usize {
        let n = self
            .nvm
            .slots
            .iter()
            .flatten()
            .filter(|m| m.dirty && !m.suspect && m.pins == 0)
            .count();
        let d = self
            .dram
            .meta
            .iter()
            .flatten()
            .filter(|m| m.dirty && m.pins == 0)
            .count();
        n + d
    }

    // -- crash and rescan ------------------------------------------------------

    /// Drop all volatile pool state: DRAM contents, the NVM slot directory
    /// and dirty flags, and placement bookkeeping. The NVM device itself is
    /// crashed by the caller (its shadow is the simulated CPU cache).
    pub fn reset_volatile_for_crash(&mut self) {
        self.dram.reset_volatile();
        self.nvm.reset_volatile();
        self.placement.clear();
        self.cleaner_cursor = 0;
    }

    /// Rebuild the NVM slot directory from surviving slot images. Slots whose
    /// claimed page appears in the analysis become suspect residents awaiting
    /// classification. Slots claiming pages absent from the durable log keep
    /// their residency only if they verify (they are unreachable leftovers;
    /// kept clean so they can never flow to SSD with an unlogged LSN);
    /// anything else is dropped.
    pub fn post_crash_rescan(&mut self, expected: &HashMap<PageId, Lsn>) -> RescanStats {
        let mut stats = RescanStats::default();
        let policy = self.cfg.checksum_policy;
        let mut chosen: HashMap<PageId, (usize, bool)> = HashMap::new();
        let slot_count = self.nvm.slots.len();
        for slot in 0..slot_count {
            let image = match self.nvm.read_full(slot) {
                Ok(i) => i,
                Err(_) => continue,
            };
            if image.iter().all(|&b| b == 0) {
                continue; // never used
            }
            let claimed = page::page_id_of(&image);
            if claimed.0 >= self.cfg.ssd_pages {
                stats.orphans_dropped += 1;
                continue;
            }
            let verifies = verify_bytes(&image, policy);
            if !expected.contains_key(&claimed) {
                if verifies {
                    // Kept below via `chosen` so duplicates resolve uniformly.
                } else {
                    stats.orphans_dropped += 1;
                    continue;
                }
            }
            match chosen.get(&claimed) {
                Some(&(_, existing_verifies)) if existing_verifies || !verifies => {
                    // Existing claim wins (it verifies, or neither does and
                    // it has the lower slot index).
                    stats.orphans_dropped += 1;
                }
                _ => {
                    if let Some((old_slot, _)) = chosen.insert(claimed, (slot, verifies)) {
                        let _ = old_slot;
                        stats.orphans_dropped += 1;
                    }
                }
            }
        }
        for (claimed, (slot, verifies)) in chosen {
            let in_log = expected.contains_key(&claimed);
            let suspect = in_log;
            if in_log {
                stats.suspects += 1;
            } else {
                debug_assert!(verifies);
                stats.orphans_kept += 1;
            }
            self.nvm.slots[slot] = Some(SlotMeta {
                page_id: claimed,
                dirty: false,
                suspect,
                pins: 0,
                seal_counter: 0,
                ref_bit: false,
            });
            self.nvm.map.insert(claimed, slot);
        }
        self.nvm.free = (0..slot_count)
            .rev()
            .filter(|s| self.nvm.slots[*s].is_none())
            .collect();
        stats
    }

    // -- repair support ---------------------------------------------------------

    /// Read the full image of a DRAM-resident page.
    pub fn dram_read_page(&self, id: PageId) -> Result<Page> {
        let frame = *self
            .dram
            .map
            .get(&id)
            .ok_or_else(|| Error::Protocol(format!("{id} not in DRAM")))?;
        Page::from_bytes(self.dram.buf(frame).to_vec())
    }

    /// Read the full image of an NVM-resident page regardless of suspicion.
    pub fn nvm_read_page(&mut self, id: PageId) -> Result<Page> {
        let slot = *self
            .nvm
            .map
            .get(&id)
            .ok_or_else(|| Error::Protocol(format!("{id} not on NVM")))?;
        Page::from_bytes(self.nvm.read_full(slot)?)
    }

    /// Logical page LSN of a resident page, any tier.
    pub fn resident_page_lsn(&mut self, id: PageId) -> Option<Lsn> {
        if let Some(&frame) = self.dram.map.get(&id) {
            return Some(page_lsn_of(self.dram.buf(frame)));
        }
        if let Some(&slot) = self.nvm.map.get(&id) {
            let addr = self.nvm.addr(slot);
            if let Ok(hdr) = self.nvm.dev.read(addr, crate::page::PAGE_HEADER_SIZE) {
                return Some(page_lsn_of(&hdr));
            }
        }
        None
    }

    /// Overwrite an NVM-resident page with a repaired image and clear its
    /// suspect flag. The write goes through the simulated cache like any
    /// other page write.
    pub fn nvm_overwrite_resident(&mut self, id: PageId, image: &Page, dirty: bool) -> Result<()> {
        let slot = *self
            .nvm
            .map
            .get(&id)
            .ok_or_else(|| Error::Protocol(format!("{id} not on NVM")))?;
        self.nvm_write_full(slot, image.bytes())?;
        let meta = self.nvm.slots[slot].as_mut().expect("mapped slot");
        meta.dirty = dirty;
        meta.suspect = false;
        meta.seal_counter = 0;
        Ok(())
    }

    /// Clear the suspect flag without rewriting (classification found the
    /// image usable as-is).
    pub fn nvm_mark_classified(&mut self, id: PageId, dirty: bool) -> Result<()> {
        let slot = *self
            .nvm
            .map
            .get(&id)
            .ok_or_else(|| Error::Protocol(format!("{id} not on NVM")))?;
        let meta = self.nvm.slots[slot].as_mut().expect("mapped slot");
        meta.suspect = false;
        meta.dirty = dirty;
        Ok(())
    }

    /// Drop an NVM resident without any write-back (repair decided the SSD
    /// copy is authoritative).
    pub fn nvm_drop_resident(&mut self, id: PageId) {
        if let Some(&slot) = self.nvm.map.get(&id) {
            self.nvm.release(slot);
            self.placement.forget(id);
        }
    }

    /// Install a repaired image for a page with no residency, using the
    /// admission tier. Used by repair when the base came from SSD.
    pub fn install_repaired(&mut self, log: &mut LogDevice, image: Page, dirty: bool) -> Result<Tier> {
        let id = image.page_id();
        debug_assert!(!self.dram_resident(id) && !self.nvm_resident(id));
        match self.cfg.placement.admission {
            AdmissionTier::Nvm => {
                let slot = self
                    .make_room_nvm(log)?
                    .ok_or_else(|| Error::Capacity("all NVM slots pinned".into()))?;
                self.nvm_write_full(slot, image.bytes())?;
                self.nvm.slots[slot] = Some(SlotMeta {
                    page_id: id,
                    dirty,
                    suspect: false,
                    pins: 0,
                    seal_counter: 0,
                    ref_bit: true,
                });
                self.nvm.map.insert(id, slot);
                Ok(Tier::Nvm)
            }
            AdmissionTier::Dram => {
                let frame = self
                    .make_room_dram(log)?
                    .ok_or_else(|| Error::Capacity("all DRAM frames pinned".into()))?;
                self.dram.buf_mut(frame).copy_from_slice(image.bytes());
                self.dram.meta[frame] = Some(FrameMeta {
                    page_id: id,
                    dirty,
                    pins: 0,
                    seal_counter: 0,
                    last_access: 0,
                });
                self.dram.map.insert(id, frame);
                self.dram.touch(frame);
                Ok(Tier::Dram)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PoolConfig {
        PoolConfig {
            page_size: 256,
            dram_frames: 2,
            nvm_slots: 4,
            ssd_pages: 32,
            cache_capacity_lines: 64,
            ..PoolConfig::default()
        }
    }

    fn pool_and_log(cfg: PoolConfig) -> (BufferPool, LogDevice) {
        (BufferPool::new(cfg).unwrap(), LogDevice::new())
    }

    #[test]
    fn miss_loads_to_nvm_with_one_ssd_read() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(5), Intent::Read).unwrap();
        assert_eq!(h.tier(), Tier::Nvm);
        assert_eq!(pool.ssd.reads, 1);
        assert_eq!(pool.stats.misses, 1);
        pool.unfix(h);
    }

    #[test]
    fn second_access_promotes_to_dram_and_frees_slot() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(5), Intent::Read).unwrap();
        assert_eq!(h.tier(), Tier::Nvm);
        pool.unfix(h);
        let h = pool.fix_page(&mut log, PageId(5), Intent::Read).unwrap();
        assert_eq!(h.tier(), Tier::Dram, "second access reaches the threshold");
        assert!(!pool.nvm_resident(PageId(5)), "NVM slot released after promotion");
        assert!(pool.dram_resident(PageId(5)));
        assert_eq!(pool.stats.promotions, 1);
        pool.unfix(h);
    }

    #[test]
    fn dram_hit_costs_no_device_io() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        for _ in 0..2 {
            let h = pool.fix_page(&mut log, PageId(5), Intent::Read).unwrap();
            pool.unfix(h);
        }
        let reads_before = pool.ssd.reads;
        let pmem_before = pool.pmem_counters();
        let h = pool.fix_page(&mut log, PageId(5), Intent::Read).unwrap();
        assert_eq!(h.tier(), Tier::Dram);
        assert_eq!(pool.ssd.reads, reads_before);
        assert_eq!(pool.pmem_counters().reads, pmem_before.reads);
        assert_eq!(pool.stats.dram_hits, 1);
        pool.unfix(h);
    }

    #[test]
    fn nvm_update_leaves_no_flushes_in_optimistic_mode() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(3), Intent::Write).unwrap();
        assert_eq!(h.tier(), Tier::Nvm);
        pool.update_fixed(&mut log, &h, 40, &[0, 0], &[7, 8], 1).unwrap();
        pool.unfix(h);
        assert_eq!(pool.pmem_counters().explicit_flushes, 0);
        assert_eq!(pool.pmem_counters().fences, 0);
    }

    #[test]
    fn pessimistic_mode_flushes_every_page_write() {
        let mut cfg = small_cfg();
        cfg.consistency = ConsistencyMode::Pessimistic;
        let (mut pool, mut log) = pool_and_log(cfg);
        let h = pool.fix_page(&mut log, PageId(3), Intent::Write).unwrap();
        pool.update_fixed(&mut log, &h, 40, &[0, 0], &[7, 8], 1).unwrap();
        pool.unfix(h);
        let counters = pool.pmem_counters();
        assert!(counters.explicit_flushes >= pool.stats.page_writes_nvm);
        assert!(counters.fences >= pool.stats.page_writes_nvm);
    }

    #[test]
    fn dram_update_touches_no_device() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        for _ in 0..2 {
            let h = pool.fix_page(&mut log, PageId(9), Intent::Read).unwrap();
            pool.unfix(h);
        }
        let before = pool.pmem_counters();
        let h = pool.fix_page(&mut log, PageId(9), Intent::Write).unwrap();
        assert_eq!(h.tier(), Tier::Dram);
        pool.update_fixed(&mut log, &h, 50, &[0], &[1], 1).unwrap();
        pool.unfix(h);
        let after = pool.pmem_counters();
        assert_eq!(before.writes, after.writes);
        assert_eq!(pool.ssd.writes, 0);
    }

    #[test]
    fn before_image_mismatch_rejected() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(3), Intent::Write).unwrap();
        let err = pool
            .update_fixed(&mut log, &h, 40, &[9, 9], &[7, 8], 1)
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        pool.unfix(h);
    }

    #[test]
    fn write_back_respects_wal_rule() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(3), Intent::Write).unwrap();
        let lsn = pool.update_fixed(&mut log, &h, 40, &[0], &[1], 1).unwrap();
        pool.unfix(h);
        assert!(log.durable_lsn() < lsn, "update alone does not flush the log");
        pool.write_to_ssd(&mut log, PageId(3)).unwrap();
        assert!(log.durable_lsn() >= lsn, "write-back flushed the log first");
        assert_eq!(pool.ssd.wal_violations, 0);
        let stored = pool.ssd.peek_page(PageId(3)).unwrap();
        assert!(stored.verify(pool.policy()));
        assert_eq!(stored.page_lsn(), lsn);
        // Clean page: write-back is a no-op.
        let writes = pool.ssd.writes;
        pool.write_to_ssd(&mut log, PageId(3)).unwrap();
        assert_eq!(pool.ssd.writes, writes);
    }

    #[test]
    fn evict_clean_dram_page_is_silent() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        for _ in 0..2 {
            let h = pool.fix_page(&mut log, PageId(1), Intent::Read).unwrap();
            pool.unfix(h);
        }
        assert!(pool.dram_resident(PageId(1)));
        let ssd_writes = pool.ssd.writes;
        let pmem_writes = pool.pmem_counters().writes;
        assert_eq!(pool.evict(&mut log, Tier::Dram, 1).unwrap(), 1);
        assert_eq!(pool.ssd.writes, ssd_writes);
        assert_eq!(pool.pmem_counters().writes, pmem_writes);
        assert!(!pool.dram_resident(PageId(1)));
    }

    #[test]
    fn evict_dirty_dram_page_demotes_to_nvm_sealed() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        for _ in 0..2 {
            let h = pool.fix_page(&mut log, PageId(1), Intent::Read).unwrap();
            pool.unfix(h);
        }
        let h = pool.fix_page(&mut log, PageId(1), Intent::Write).unwrap();
        pool.update_fixed(&mut log, &h, 40, &[0], &[5], 1).unwrap();
        pool.unfix(h);
        assert_eq!(pool.evict(&mut log, Tier::Dram, 1).unwrap(), 1);
        assert!(pool.nvm_resident(PageId(1)), "dirty page demoted, not dropped");
        let img = pool.nvm_read_page(PageId(1)).unwrap();
        assert!(img.verify(pool.policy()));
        assert_eq!(img.bytes()[40], 5);
    }

    #[test]
    fn evict_dirty_nvm_page_writes_back_within_wal_rule() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(2), Intent::Write).unwrap();
        let lsn = pool.update_fixed(&mut log, &h, 48, &[0], &[9], 1).unwrap();
        pool.unfix(h);
        assert_eq!(pool.evict(&mut log, Tier::Nvm, 1).unwrap(), 1);
        assert!(!pool.nvm_resident(PageId(2)));
        let stored = pool.ssd.peek_page(PageId(2)).unwrap();
        assert_eq!(stored.page_lsn(), lsn);
        assert!(stored.page_lsn() <= log.durable_lsn());
        assert_eq!(pool.ssd.wal_violations, 0);
    }

    #[test]
    fn all_pinned_pool_evicts_nothing() {
        let mut cfg = small_cfg();
        cfg.dram_frames = 0;
        cfg.nvm_slots = 2;
        let (mut pool, mut log) = pool_and_log(cfg);
        let h1 = pool.fix_page(&mut log, PageId(1), Intent::Read).unwrap();
        let h2 = pool.fix_page(&mut log, PageId(2), Intent::Read).unwrap();
        assert_eq!(pool.evict(&mut log, Tier::Nvm, 5).unwrap(), 0);
        let err = pool.fix_page(&mut log, PageId(3), Intent::Read).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        pool.unfix(h1);
        pool.unfix(h2);
    }

    #[test]
    fn cleaner_writes_back_dirty_pages_round_robin() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        assert_eq!(pool.cleaner_step(&mut log, 8).unwrap(), 0, "nothing dirty yet");
        for id in [1u64, 2, 3] {
            let h = pool.fix_page(&mut log, PageId(id), Intent::Write).unwrap();
            pool.update_fixed(&mut log, &h, 40, &[0], &[id as u8], 1).unwrap();
            pool.unfix(h);
        }
        let cleaned = pool.cleaner_step(&mut log, 2).unwrap();
        assert_eq!(cleaned, 2, "budget caps the round");
        assert_eq!(pool.cleaner_step(&mut log, 8).unwrap(), 1, "cursor resumes");
        assert_eq!(pool.dirty_resident_count(), 0);
        assert_eq!(pool.ssd.wal_violations, 0);
    }

    #[test]
    fn dram_zero_keeps_everything_on_nvm() {
        let mut cfg = small_cfg();
        cfg.dram_frames = 0;
        let (mut pool, mut log) = pool_and_log(cfg);
        for _ in 0..5 {
            let h = pool.fix_page(&mut log, PageId(7), Intent::Read).unwrap();
            assert_eq!(h.tier(), Tier::Nvm);
            pool.unfix(h);
        }
        assert_eq!(pool.stats.promotions, 0);
        assert_eq!(pool.stats.nvm_hits, 4);
    }

    #[test]
    fn tier_exclusivity_holds_after_operations() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        for i in 0..20u64 {
            let id = PageId(i % 6);
            let h = pool.fix_page(&mut log, id, Intent::Write).unwrap();
            let cur = pool.read_range(&h, 40, 1).unwrap();
            pool.update_fixed(&mut log, &h, 40, &cur, &[i as u8], 1).unwrap();
            pool.unfix(h);
            for p in 0..6u64 {
                assert!(
                    !(pool.dram_resident(PageId(p)) && pool.nvm_resident(PageId(p))),
                    "page {p} resident in both tiers"
                );
            }
        }
        assert_eq!(pool.pinned_total(), 0);
    }

    #[test]
    fn nvm_page_can_run_ahead_of_durable_log() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        let h = pool.fix_page(&mut log, PageId(4), Intent::Write).unwrap();
        let lsn = pool.update_fixed(&mut log, &h, 40, &[0], &[1], 1).unwrap();
        pool.unfix(h);
        let page_lsn = pool.resident_page_lsn(PageId(4)).unwrap();
        assert_eq!(page_lsn, lsn);
        assert!(
            page_lsn > log.durable_lsn(),
            "tolerated write-ahead violation on the NVM tier"
        );
    }

    #[test]
    fn out_of_range_page_rejected() {
        let (mut pool, mut log) = pool_and_log(small_cfg());
        assert!(matches!(
            pool.fix_page(&mut log, PageId(99), Intent::Read),
            Err(Error::Bounds(_))
        ));
    }
}
