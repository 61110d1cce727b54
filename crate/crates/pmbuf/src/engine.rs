//! Facade over the buffer pool, the log and restart state.
//!
//! The engine enforces the single-writer discipline (one open transaction),
//! owns the commit protocol (commit record + log flush), and routes every
//! fix through on-demand repair while a restart context is active, so normal
//! processing only ever observes current pages.

use crate::error::{Error, Result};
use crate::page::{Lsn, Page, PageId, PageType};
use crate::pool::{BufferPool, Intent, PageHandle, PoolConfig, Tier};
use crate::recovery::{self, RestartContext, RestartMode};
use crate::wal::{LogDevice, RecordBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Txn {
    pub id: u64,
}

#[derive(Debug)]
pub struct Engine {
    pub pool: BufferPool,
    pub log: LogDevice,
    restart_ctx: Option<RestartContext>,
    active_txn: Option<u64>,
}

impl Engine {
    pub fn new(cfg: PoolConfig) -> Result<Engine> {
        Ok(Engine {
            pool: BufferPool::new(cfg)?,
            log: LogDevice::new(),
            restart_ctx: None,
            active_txn: None,
        })
    }

    pub fn from_parts(pool: BufferPool, log: LogDevice) -> Engine {
        Engine {
            pool,
            log,
            restart_ctx: None,
            active_txn: None,
        }
    }

    pub fn restart_context(&self) -> Option<&RestartContext> {
        self.restart_ctx.as_ref()
    }

    pub fn take_restart_context(&mut self) -> Option<RestartContext> {
        self.restart_ctx.take()
    }

    // -- transactions ----------------------------------------------------------

    pub fn begin_txn(&mut self) -> Result<Txn> {
        if let Some(active) = self.active_txn {
            return Err(Error::Protocol(format!(
                "transaction {active} still open (single-writer engine)"
            )));
        }
        let id = self.log.alloc_txn_id();
        self.active_txn = Some(id);
        Ok(Txn { id })
    }

    /// Append the commit record and flush the log through it.
    pub fn commit_txn(&mut self, txn: Txn) -> Result<()> {
        if self.active_txn != Some(txn.id) {
            return Err(Error::Protocol(format!("transaction {} is not open", txn.id)));
        }
        let lsn = self.log.append(RecordBody::commit(txn.id))?;
        self.log.flush(lsn)?;
        self.active_txn = None;
        Ok(())
    }

    // -- page access -------------------------------------------------------------

    pub fn fix_page(&mut self, id: PageId, intent: Intent) -> Result<PageHandle> {
        if let Some(ctx) = self.restart_ctx.as_mut() {
            recovery::ensure_repaired(ctx, &mut self.pool, &mut self.log, id)?;
        }
        self.pool.fix_page(&mut self.log, id, intent)
    }

    pub fn unfix(&mut self, handle: PageHandle) {
        self.pool.unfix(handle);
    }

    pub fn materialize(&mut self, handle: &PageHandle) -> Result<Page> {
        self.pool.materialize(handle)
    }

    pub fn read_range(&mut self, handle: &PageHandle, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.pool.read_range(handle, offset, len)
    }

    pub fn update_fixed(
        &mut self,
        handle: &PageHandle,
        offset: usize,
        before: &[u8],
        after: &[u8],
        txn: Txn,
    ) -> Result<Lsn> {
        self.pool
            .update_fixed(&mut self.log, handle, offset, before, after, txn.id)
    }

    /// Log and apply a page format: the page becomes a freshly initialized
    /// node of the given type.
    pub fn format_page(&mut self, txn: Txn, id: PageId, page_type: PageType) -> Result<Lsn> {
        let fc = self.pool.policy().fragment_count();
        let lsn = self.log.append(RecordBody::page_format(
            txn.id,
            id,
            page_type as u8,
            fc,
        ))?;
        let handle = self.fix_page(id, Intent::Write)?;
        let res = self.pool.format_fixed(&handle, page_type, lsn);
        self.unfix(handle);
        res?;
        Ok(lsn)
    }

    // -- maintenance --------------------------------------------------------------

    pub fn cleaner_step(&mut self, budget: usize) -> Result<usize> {
        self.pool.cleaner_step(&mut self.log, budget)
    }

    pub fn evict(&mut self, tier: Tier, n: usize) -> Result<usize> {
        self.pool.evict(&mut self.log, tier, n)
    }

    /// Background cache write-back: up to `n` dirty lines leave the
    /// simulated CPU cache at a random (seeded) choice.
    pub fn evict_cache_lines(&mut self, n: usize) -> usize {
        self.pool.pmem().evict_random(n)
    }

    /// Run the cleaner until no dirty unpinned page remains.
    pub fn clean_to_quiescence(&mut self) -> Result<usize> {
        let mut total = 0;
        while self.pool.dirty_resident_count() > 0 {
            let cleaned = self.pool.cleaner_step(&mut self.log, 64)?;
            if cleaned == 0 {
                break;
            }
            total += cleaned;
        }
        Ok(total)
    }

    // -- crash and restart ----------------------------------------------------------

    /// Simulated system failure: the volatile log tail, the simulated CPU
    /// cache and all DRAM contents are gone. Any open transaction is
    /// implicitly abandoned (it becomes a loser if its records were durable).
    pub fn crash(&mut self) {
        self.log.crash();
        self.pool.pmem().crash();
        self.pool.reset_volatile_for_crash();
        self.restart_ctx = None;
        self.active_txn = None;
    }

    /// Post-crash restart: analysis, rescan, repair per mode, loser undo.
    /// The context stays active so on-demand repairs keep routing through
    /// first fixes for the rest of the engine's life.
    pub fn restart(&mut self, mode: RestartMode) -> Result<()> {
        let ctx = recovery::restart(&mut self.pool, &mut self.log, mode)?;
        self.restart_ctx = Some(ctx);
        Ok(())
    }
}
