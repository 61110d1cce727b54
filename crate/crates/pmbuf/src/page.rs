//! Page layout, identifiers, LSNs and checksum maintenance.
//!
//! A page is a fixed-size byte region. The first 32 bytes are the header:
//!
//! ```text
//! offset  size  field
//! ------  ----  -----
//! 0       8     page id        (little-endian u64)
//! 8       8     page LSN       (little-endian u64)
//! 16      8     checksum       (little-endian u64, CRC-64/ECMA-182)
//! 24      1     page type tag
//! 25      1     fragment count (1 = whole-page checksum mode)
//! 26      6     reserved, zero
//! ```
//!
//! In whole-page mode the checksum field covers the entire page image with
//! the checksum field itself zeroed. With `f >= 2` fragments, a table of `f`
//! 8-byte checksums sits at offset 32; each entry covers an equal slice of
//! the content region behind the table, and the header checksum field covers
//! the header plus the table (again with the field zeroed while computing).

use crate::checksum::compute_checksum;
use crate::error::{Error, Result};
use std::ops::Range;

pub const PAGE_HEADER_SIZE: usize = 32;
pub const MAX_FRAGMENTS: u8 = 16;

const OFF_PAGE_ID: usize = 0;
const OFF_PAGE_LSN: usize = 8;
const OFF_CHECKSUM: usize = 16;
const OFF_PAGE_TYPE: usize = 24;
const OFF_FRAGMENT_COUNT: usize = 25;

/// 0-based index of a page in the SSD store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageId(pub u64);

impl PageId {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for PageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Byte offset into the log's logical address space. `Lsn(0)` is the
/// reserved null value; real records always start past the log file magic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Lsn(pub u64);

impl Lsn {
    pub const NULL: Lsn = Lsn(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for Lsn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "lsn:{}", self.0)
    }
}

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageType {
    /// Unallocated page, the state produced by store formatting.
    Free = 0,
    BtreeLeaf = 1,
    BtreeInner = 2,
    Meta = 3,
}

impl PageType {
    pub fn from_u8(v: u8) -> Option<PageType> {
        match v {
            0 => Some(PageType::Free),
            1 => Some(PageType::BtreeLeaf),
            2 => Some(PageType::BtreeInner),
            3 => Some(PageType::Meta),
            _ => None,
        }
    }
}

/// When and at what granularity page checksums are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChecksumPolicy {
    /// Reseal the whole page after every update.
    EveryUpdate,
    /// Reseal only every k-th update, leaving the checksum stale in between.
    EveryK(u32),
    /// Keep one checksum per content fragment and reseal only touched
    /// fragments. `PerFragment(1)` degenerates to whole-page mode.
    PerFragment(u8),
}

impl ChecksumPolicy {
    /// Number of per-fragment checksums a page carries under this policy.
    /// 1 means whole-page mode (no fragment table).
    pub fn fragment_count(self) -> u8 {
        match self {
            ChecksumPolicy::EveryUpdate | ChecksumPolicy::EveryK(_) => 1,
            ChecksumPolicy::PerFragment(f) => f.max(1),
        }
    }

    pub fn validate(self, page_size: usize) -> Result<()> {
        if page_size < PAGE_HEADER_SIZE + 32 {
            return Err(Error::Config(format!("page size {page_size} too small")));
        }
        match self {
            ChecksumPolicy::EveryUpdate => Ok(()),
            ChecksumPolicy::EveryK(k) if k >= 1 => Ok(()),
            ChecksumPolicy::EveryK(k) => {
                Err(Error::Config(format!("every-k requires k >= 1, got {k}")))
            }
            ChecksumPolicy::PerFragment(f) => {
                if f < 1 || f > MAX_FRAGMENTS {
                    return Err(Error::Config(format!(
                        "fragment count must be in 1..={MAX_FRAGMENTS}, got {f}"
                    )));
                }
                layout_for(page_size, f).map(|_| ())
            }
        }
    }
}

/// Geometry of a page image for a given fragment count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageLayout {
    pub page_size: usize,
    pub fragment_count: u8,
    /// First byte usable by callers (past header and fragment table).
    pub content_start: usize,
    /// Length of one content fragment (whole content region when f == 1).
    pub fragment_len: usize,
}

impl PageLayout {
    pub fn content_len(&self) -> usize {
        self.page_size - self.content_start
    }

    pub fn content_range(&self) -> Range<usize> {
        self.content_start..self.page_size
    }

    fn table_entry_range(&self, idx: u8) -> Range<usize> {
        let start = PAGE_HEADER_SIZE + idx as usize * 8;
        start..start + 8
    }

    fn fragment_range(&self, idx: u8) -> Range<usize> {
        let start = self.content_start + idx as usize * self.fragment_len;
        start..start + self.fragment_len
    }

    /// Content fragments overlapping the byte range, empty for whole-page mode.
    fn touched_fragments(&self, range: &Range<usize>) -> Range<u8> {
        if self.fragment_count <= 1 || range.is_empty() {
            return 0..0;
        }
        let first = (range.start - self.content_start) / self.fragment_len;
        let last = (range.end - 1 - self.content_start) / self.fragment_len;
        first as u8..last as u8 + 1
    }
}

/// Compute the layout for a page of `page_size` bytes carrying `f` checksums.
pub fn layout_for(page_size: usize, f: u8) -> Result<PageLayout> {
    if f == 0 || f > MAX_FRAGMENTS {
        return Err(Error::Format(format!("invalid fragment count {f}")));
    }
    if f == 1 {
        return Ok(PageLayout {
            page_size,
            fragment_count: 1,
            content_start: PAGE_HEADER_SIZE,
            fragment_len: page_size - PAGE_HEADER_SIZE,
        });
    }
    let table = f as usize * 8;
    let content_start = PAGE_HEADER_SIZE + table;
    if content_start >= page_size {
        return Err(Error::Format(format!(
            "fragment table does not fit: {f} fragments in {page_size} bytes"
        )));
    }
    let content_len = page_size - content_start;
    if content_len % f as usize != 0 {
        return Err(Error::Format(format!(
            "{f} fragments do not divide the {content_len}-byte content region evenly"
        )));
    }
    Ok(PageLayout {
        page_size,
        fragment_count: f,
        content_start,
        fragment_len: content_len / f as usize,
    })
}

/// Decoded view of the 32-byte page header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageHeader {
    pub page_id: PageId,
    pub page_lsn: Lsn,
    pub checksum: u64,
    pub page_type: u8,
    pub fragment_count: u8,
}

impl PageHeader {
    pub fn decode(buf: &[u8]) -> Result<PageHeader> {
        if buf.len() < PAGE_HEADER_SIZE {
            return Err(Error::Format("buffer shorter than page header".into()));
        }
        Ok(PageHeader {
            page_id: PageId(read_u64(buf, OFF_PAGE_ID)),
            page_lsn: Lsn(read_u64(buf, OFF_PAGE_LSN)),
            checksum: read_u64(buf, OFF_CHECKSUM),
            page_type: buf[OFF_PAGE_TYPE],
            fragment_count: buf[OFF_FRAGMENT_COUNT],
        })
    }

    pub fn encode(&self) -> [u8; PAGE_HEADER_SIZE] {
        let mut out = [0u8; PAGE_HEADER_SIZE];
        out[OFF_PAGE_ID..OFF_PAGE_ID + 8].copy_from_slice(&self.page_id.0.to_le_bytes());
        out[OFF_PAGE_LSN..OFF_PAGE_LSN + 8].copy_from_slice(&self.page_lsn.0.to_le_bytes());
        out[OFF_CHECKSUM..OFF_CHECKSUM + 8].copy_from_slice(&self.checksum.to_le_bytes());
        out[OFF_PAGE_TYPE] = self.page_type;
        out[OFF_FRAGMENT_COUNT] = self.fragment_count;
        out
    }
}

fn read_u64(buf: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
}

fn write_u64(buf: &mut [u8], off: usize, v: u64) {
    buf[off..off + 8].copy_from_slice(&v.to_le_bytes());
}

// ---------------------------------------------------------------------------
// Byte-level operations. These work on raw page buffers so the buffer pool
// can mutate DRAM frames in place; `Page` wraps them for owned images.
// ---------------------------------------------------------------------------

pub fn page_id_of(buf: &[u8]) -> PageId {
    PageId(read_u64(buf, OFF_PAGE_ID))
}

pub fn page_lsn_of(buf: &[u8]) -> Lsn {
    Lsn(read_u64(buf, OFF_PAGE_LSN))
}

pub fn stored_checksum_of(buf: &[u8]) -> u64 {
    read_u64(buf, OFF_CHECKSUM)
}

pub fn page_type_of(buf: &[u8]) -> u8 {
    buf[OFF_PAGE_TYPE]
}

pub fn fragment_count_of(buf: &[u8]) -> u8 {
    buf[OFF_FRAGMENT_COUNT]
}

fn set_page_lsn(buf: &mut [u8], lsn: Lsn) {
    write_u64(buf, OFF_PAGE_LSN, lsn.0);
}

/// Checksum of the whole image with the header checksum field zeroed.
fn whole_page_checksum(buf: &[u8]) -> u64 {
    let mut crc = crate::checksum::Crc64Stream::new();
    crc.update(&buf[..OFF_CHECKSUM]);
    crc.update(&[0u8; 8]);
    crc.update(&buf[OFF_CHECKSUM + 8..]);
    crc.finish()
}

/// Checksum of the header-plus-table prefix with the checksum field zeroed.
fn header_fragment_checksum(buf: &[u8], layout: &PageLayout) -> u64 {
    let mut crc = crate::checksum::Crc64Stream::new();
    crc.update(&buf[..OFF_CHECKSUM]);
    crc.update(&[0u8; 8]);
    crc.update(&buf[OFF_CHECKSUM + 8..layout.content_start]);
    crc.finish()
}

/// Recompute and store all checksums for the image. Returns the byte ranges
/// that were rewritten, so the caller can propagate exactly those to a
/// cache-line device. Errors if the fragment count byte is malformed.
pub fn seal_bytes(buf: &mut [u8]) -> Result<Vec<Range<usize>>> {
    let f = fragment_count_of(buf);
    let layout = layout_for(buf.len(), f)?;
    let mut dirtied = Vec::new();
    if f <= 1 {
        let crc = whole_page_checksum(buf);
        write_u64(buf, OFF_CHECKSUM, crc);
        dirtied.push(OFF_CHECKSUM..OFF_CHECKSUM + 8);
        return Ok(dirtied);
    }
    for i in 0..f {
        let frag = layout.fragment_range(i);
        let crc = compute_checksum(&buf[frag]);
        let entry = layout.table_entry_range(i);
        write_u64(buf, entry.start, crc);
        dirtied.push(entry);
    }
    let crc = header_fragment_checksum(buf, &layout);
    write_u64(buf, OFF_CHECKSUM, crc);
    dirtied.push(OFF_CHECKSUM..OFF_CHECKSUM + 8);
    Ok(dirtied)
}

/// True iff every stored checksum matches recomputation under `policy`.
/// Never panics on garbage images; any inconsistency reads as false.
pub fn verify_bytes(buf: &[u8], policy: ChecksumPolicy) -> bool {
    if buf.len() < PAGE_HEADER_SIZE {
        return false;
    }
    let expected_f = policy.fragment_count();
    if fragment_count_of(buf) != expected_f {
        return false;
    }
    let layout = match layout_for(buf.len(), expected_f) {
        Ok(l) => l,
        Err(_) => return false,
    };
    if expected_f <= 1 {
        return whole_page_checksum(buf) == stored_checksum_of(buf);
    }
    if header_fragment_checksum(buf, &layout) != stored_checksum_of(buf) {
        return false;
    }
    (0..expected_f).all(|i| verify_fragment_bytes(buf, &layout, i))
}

fn verify_fragment_bytes(buf: &[u8], layout: &PageLayout, idx: u8) -> bool {
    let stored = read_u64(buf, layout.table_entry_range(idx).start);
    compute_checksum(&buf[layout.fragment_range(idx)]) == stored
}

/// Apply a redo delta without resealing: payload bytes plus pageLSN only.
/// Used by log replay, which seals once at the end of the chain.
pub fn apply_redo_bytes(buf: &mut [u8], offset: usize, after: &[u8], lsn: Lsn) -> Result<()> {
    check_delta_bounds(buf, offset, after.len())?;
    if lsn <= page_lsn_of(buf) {
        return Err(Error::Protocol(format!(
            "non-monotonic LSN: {} applied over {}",
            lsn,
            page_lsn_of(buf)
        )));
    }
    buf[offset..offset + after.len()].copy_from_slice(after);
    set_page_lsn(buf, lsn);
    Ok(())
}

fn check_delta_bounds(buf: &[u8], offset: usize, len: usize) -> Result<()> {
    let f = fragment_count_of(buf);
    let layout = layout_for(buf.len(), f)?;
    if offset < layout.content_start {
        return Err(Error::Bounds(format!(
            "delta offset {offset} overlaps header or checksum table (content starts at {})",
            layout.content_start
        )));
    }
    if offset + len > buf.len() {
        return Err(Error::Bounds(format!(
            "delta [{offset}, {}) past page end {}",
            offset + len,
            buf.len()
        )));
    }
    Ok(())
}

/// Apply an update delta and maintain checksums per `policy`.
///
/// `updates_since_seal` is the caller's per-frame counter for the every-k
/// policy; it is incremented here and reset whenever the page is resealed.
/// Returns the byte ranges the operation rewrote (payload, pageLSN field and
/// any checksum bytes) so tiered storage can write back exactly those.
pub fn apply_delta_bytes(
    buf: &mut [u8],
    offset: usize,
    after: &[u8],
    lsn: Lsn,
    policy: ChecksumPolicy,
    updates_since_seal: &mut u32,
) -> Result<Vec<Range<usize>>> {
    let f = fragment_count_of(buf);
    if f != policy.fragment_count() {
        return Err(Error::Format(format!(
            "page carries {f} checksums but policy expects {}",
            policy.fragment_count()
        )));
    }
    apply_redo_bytes(buf, offset, after, lsn)?;
    let mut dirtied = vec![
        OFF_PAGE_LSN..OFF_PAGE_LSN + 8,
        offset..offset + after.len(),
    ];
    match policy {
        ChecksumPolicy::EveryUpdate => {
            dirtied.extend(seal_bytes(buf)?);
            *updates_since_seal = 0;
        }
        ChecksumPolicy::EveryK(k) => {
            *updates_since_seal += 1;
            if *updates_since_seal >= k {
                dirtied.extend(seal_bytes(buf)?);
                *updates_since_seal = 0;
            }
        }
        ChecksumPolicy::PerFragment(f) if f <= 1 => {
            dirtied.extend(seal_bytes(buf)?);
            *updates_since_seal = 0;
        }
        ChecksumPolicy::PerFragment(f) => {
            let layout = layout_for(buf.len(), f)?;
            let delta = offset..offset + after.len();
            for i in layout.touched_fragments(&delta) {
                let crc = compute_checksum(&buf[layout.fragment_range(i)]);
                let entry = layout.table_entry_range(i);
                write_u64(buf, entry.start, crc);
                dirtied.push(entry);
            }
            // The pageLSN changed, so the header fragment is always resealed.
            let crc = header_fragment_checksum(buf, &layout);
            write_u64(buf, OFF_CHECKSUM, crc);
            dirtied.push(OFF_CHECKSUM..OFF_CHECKSUM + 8);
            *updates_since_seal = 0;
        }
    }
    Ok(dirtied)
}

/// Reinitialize a buffer as a freshly formatted page: zero payload, header
/// set, sealed. This is the redo action of a page-format log record.
pub fn format_bytes(
    buf: &mut [u8],
    page_id: PageId,
    page_type: PageType,
    fragment_count: u8,
    lsn: Lsn,
) -> Result<()> {
    layout_for(buf.len(), fragment_count)?;
    buf.fill(0);
    let header = PageHeader {
        page_id,
        page_lsn: lsn,
        checksum: 0,
        page_type: page_type as u8,
        fragment_count,
    };
    buf[..PAGE_HEADER_SIZE].copy_from_slice(&header.encode());
    seal_bytes(buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Owned page image.
// ---------------------------------------------------------------------------

/// An owned page image; the unit of movement, fault containment and repair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    data: Vec<u8>,
}

impl Page {
    /// A freshly formatted, sealed page.
    pub fn formatted(
        page_size: usize,
        page_id: PageId,
        page_type: PageType,
        policy: ChecksumPolicy,
    ) -> Result<Page> {
        policy.validate(page_size)?;
        let mut data = vec![0u8; page_size];
        format_bytes(
            &mut data,
            page_id,
            page_type,
            policy.fragment_count(),
            Lsn::NULL,
        )?;
        Ok(Page { data })
    }

    pub fn from_bytes(data: Vec<u8>) -> Result<Page> {
        if data.len() < PAGE_HEADER_SIZE {
            return Err(Error::Format("page image shorter than header".into()));
        }
        Ok(Page { data })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn page_size(&self) -> usize {
        self.data.len()
    }

    pub fn header(&self) -> PageHeader {
        PageHeader::decode(&self.data).expect("page shorter than header")
    }

    pub fn page_id(&self) -> PageId {
        page_id_of(&self.data)
    }

    pub fn page_lsn(&self) -> Lsn {
        page_lsn_of(&self.data)
    }

    pub fn page_type(&self) -> u8 {
        page_type_of(&self.data)
    }

    pub fn fragment_count(&self) -> u8 {
        fragment_count_of(&self.data)
    }

    pub fn layout(&self) -> Result<PageLayout> {
        layout_for(self.data.len(), self.fragment_count().max(1))
    }

    /// Recompute and store all checksums; idempotent.
    pub fn seal(&mut self) -> Result<()> {
        seal_bytes(&mut self.data).map(|_| ())
    }

    /// True iff all stored checksums match recomputation under `policy`.
    pub fn verify(&self, policy: ChecksumPolicy) -> bool {
        verify_bytes(&self.data, policy)
    }

    /// Check one content fragment in per-fragment mode.
    pub fn verify_fragment(&self, idx: u8) -> bool {
        let f = self.fragment_count();
        match layout_for(self.data.len(), f) {
            Ok(layout) if f >= 2 && idx < f => verify_fragment_bytes(&self.data, &layout, idx),
            _ => false,
        }
    }

    pub fn apply_delta(
        &mut self,
        offset: usize,
        after: &[u8],
        lsn: Lsn,
        policy: ChecksumPolicy,
        updates_since_seal: &mut u32,
    ) -> Result<()> {
        apply_delta_bytes(&mut self.data, offset, after, lsn, policy, updates_since_seal)
            .map(|_| ())
    }

    pub fn apply_redo(&mut self, offset: usize, after: &[u8], lsn: Lsn) -> Result<()> {
        apply_redo_bytes(&mut self.data, offset, after, lsn)
    }
}
