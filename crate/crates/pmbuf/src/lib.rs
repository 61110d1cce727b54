//! A storage engine that buffers pages across three tiers (DRAM frames, a
//! simulated byte-addressable NVM region, and an SSD page store) and keeps
//! NVM-resident pages consistent without ordered writes or eager cache-line
//! flushes. Updates to NVM pages go straight through the simulated CPU
//! cache; after a crash, per-page checksums plus expected LSNs from log
//! analysis classify each surviving page image, and single-page repair
//! replays the per-page log chain to bring it current.
//!
//! Modules:
//! - [`page`]: page layout, checksum policies, sealing and verification
//! - [`pmem`]: cache-line-granular persistent memory simulation
//! - [`wal`]: physiological write-ahead log with per-page record chains
//! - [`pool`]: the three-tier buffer pool and cleaner
//! - [`recovery`]: post-crash classification, single-page repair, undo
//! - [`btree`]: a B+Tree whose nodes are pages, driving realistic updates
//! - [`engine`]: facade tying the pieces together for callers

pub mod btree;
pub mod checksum;
pub mod engine;
pub mod error;
pub mod page;
pub mod pmem;
pub mod pool;
pub mod recovery;
pub mod wal;

pub use error::{Error, Result};
pub use page::{ChecksumPolicy, Lsn, Page, PageId, PageType};
