//! Page-level physiological write-ahead log.
//!
//! Records are byte-range before/after deltas bound to one page, chained per
//! page (`prev_page_lsn`) and per transaction (`prev_txn_lsn`). An LSN is the
//! byte offset of the record in the log's address space; offset 0 is the
//! reserved null LSN, so real records start past the 8-byte file magic.
//!
//! The device models a log on durable ordered storage: appends go to a
//! volatile tail and become crash-proof only once `flush` advances the
//! durable watermark. A crash discards everything past the watermark;
//! `recover_tail` rescans the surviving bytes and stops at the first
//! incomplete or CRC-invalid record.

use crate::checksum::crc32;
use crate::error::{Error, Result};
use crate::page::{Lsn, PageId};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

pub const LOG_MAGIC: [u8; 8] = *b"PMBFLOG1";

/// Fixed-width part of an encoded record, starting at the length field.
const RECORD_FIXED: usize = 4 + 1 + 8 + 8 + 8 + 8 + 8 + 4 + 4 + 4;
const RECORD_TRAILER: usize = 4;

/// Sentinel for "no page" in the on-disk encoding (commit/abort records).
const NO_PAGE: u64 = u64::MAX;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Update = 1,
    Clr = 2,
    Commit = 3,
    Abort = 4,
    PageFormat = 5,
    EndCheckpoint = 6,
}

impl RecordKind {
    fn from_u8(v: u8) -> Option<RecordKind> {
        match v {
            1 => Some(RecordKind::Update),
            2 => Some(RecordKind::Clr),
            3 => Some(RecordKind::Commit),
            4 => Some(RecordKind::Abort),
            5 => Some(RecordKind::PageFormat),
            6 => Some(RecordKind::EndCheckpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub lsn: Lsn,
    pub kind: RecordKind,
    pub txn_id: u64,
    pub page_id: Option<PageId>,
    /// Previous record for the same page; null if first.
    pub prev_page_lsn: Lsn,
    /// Previous record of the same transaction; null if first.
    pub prev_txn_lsn: Lsn,
    /// CLR only: where undo resumes after this compensation.
    pub undo_next_lsn: Lsn,
    pub offset: u32,
    pub before: Vec<u8>,
    pub after: Vec<u8>,
}

/// A record as handed to `append`: everything except the LSN and the chain
/// links, which the device assigns.
#[derive(Debug, Clone)]
pub struct RecordBody {
    pub kind: RecordKind,
    pub txn_id: u64,
    pub page_id: Option<PageId>,
    pub undo_next_lsn: Lsn,
    pub offset: u32,
    pub before: Vec<u8>,
    pub after: Vec<u8>,
}

impl RecordBody {
    pub fn update(
        txn_id: u64,
        page_id: PageId,
        offset: u32,
        before: Vec<u8>,
        after: Vec<u8>,
    ) -> RecordBody {
        RecordBody {
            kind: RecordKind::Update,
            txn_id,
            page_id: Some(page_id),
            undo_next_lsn: Lsn::NULL,
            offset,
            before,
            after,
        }
    }

    pub fn clr(
        txn_id: u64,
        page_id: PageId,
        offset: u32,
        after: Vec<u8>,
        undo_next_lsn: Lsn,
    ) -> RecordBody {
        RecordBody {
            kind: RecordKind::Clr,
            txn_id,
            page_id: Some(page_id),
            undo_next_lsn,
            offset,
            before: Vec::new(),
            after,
        }
    }

    pub fn commit(txn_id: u64) -> RecordBody {
        RecordBody {
            kind: RecordKind::Commit,
            txn_id,
            page_id: None,
            undo_next_lsn: Lsn::NULL,
            offset: 0,
            before: Vec::new(),
            after: Vec::new(),
        }
    }

    pub fn abort(txn_id: u64) -> RecordBody {
        RecordBody {
            kind: RecordKind::Abort,
            txn_id,
            page_id: None,
            undo_next_lsn: Lsn::NULL,
            offset: 0,
            before: Vec::new(),
            after: Vec::new(),
        }
    }

    /// Format descriptor: `after` carries [page_type, fragment_count].
    pub fn page_format(txn_id: u64, page_id: PageId, page_type: u8, fragment_count: u8) -> RecordBody {
        RecordBody {
            kind: RecordKind::PageFormat,
            txn_id,
            page_id: Some(page_id),
            undo_next_lsn: Lsn::NULL,
            offset: 0,
            before: Vec::new(),
            after: vec![page_type, fragment_count],
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            RecordKind::Update => {
                if self.page_id.is_none() {
                    return Err(Error::Format("update record without page id".into()));
                }
                if self.before.len() != self.after.len() {
                    return Err(Error::Format(format!(
                        "update before/after lengths differ: {} vs {}",
                        self.before.len(),
                        self.after.len()
                    )));
                }
            }
            RecordKind::PageFormat => {
                if self.page_id.is_none() {
                    return Err(Error::Format("page-format record without page id".into()));
                }
                if !self.before.is_empty() || self.after.len() != 2 {
                    return Err(Error::Format(
                        "page-format record must carry an empty before image and a 2-byte descriptor"
                            .into(),
                    ));
                }
            }
            RecordKind::Clr => {
                if self.page_id.is_none() {
                    return Err(Error::Format("CLR without page id".into()));
                }
                if !self.before.is_empty() {
                    return Err(Error::Format("CLR carries only a redo image".into()));
                }
            }
            RecordKind::Commit | RecordKind::Abort | RecordKind::EndCheckpoint => {
                if self.page_id.is_some() || !self.before.is_empty() || !self.after.is_empty() {
                    return Err(Error::Format(
                        "transaction-completion records carry no page or images".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-page expected LSNs plus transaction outcomes from a forward scan of
/// the durable log.
#[derive(Debug, Clone, Default)]
pub struct AnalysisResult {
    /// Last durable record LSN per page, over update/CLR/format records.
    pub expected_lsn: HashMap<PageId, Lsn>,
    /// Transactions appearing in the durable log with no durable commit or
    /// abort completion; these must be undone.
    pub losers: BTreeSet<u64>,
    /// Last durable record LSN per transaction (undo starts here).
    pub last_txn_lsn: HashMap<u64, Lsn>,
    /// Transactions with a durable commit record.
    pub committed: BTreeSet<u64>,
}

fn encode_record(rec: &LogRecord) -> Vec<u8> {
    let body_len = RECORD_FIXED - 4 + rec.before.len() + rec.after.len() + RECORD_TRAILER;
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.push(rec.kind as u8);
    out.extend_from_slice(&rec.txn_id.to_le_bytes());
    out.extend_from_slice(&rec.page_id.map_or(NO_PAGE, |p| p.0).to_le_bytes());
    out.extend_from_slice(&rec.prev_page_lsn.0.to_le_bytes());
    out.extend_from_slice(&rec.prev_txn_lsn.0.to_le_bytes());
    out.extend_from_slice(&rec.undo_next_lsn.0.to_le_bytes());
    out.extend_from_slice(&rec.offset.to_le_bytes());
    out.extend_from_slice(&(rec.before.len() as u32).to_le_bytes());
    out.extend_from_slice(&(rec.after.len() as u32).to_le_bytes());
    out.extend_from_slice(&rec.before);
    out.extend_from_slice(&rec.after);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decode one record at `at`. Returns `None` for anything torn: truncated,
/// CRC-invalid or structurally nonsensical bytes all read as "end of log".
fn decode_record(buf: &[u8], at: usize) -> Option<(LogRecord, usize)> {
    if at + 4 > buf.len() {
        return None;
    }
    let body_len = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
    let total = 4 + body_len;
    if body_len < RECORD_FIXED - 4 + RECORD_TRAILER || at + total > buf.len() {
        return None;
    }
    let stored_crc = u32::from_le_bytes(buf[at + total - 4..at + total].try_into().unwrap());
    if crc32(&buf[at..at + total - 4]) != stored_crc {
        return None;
    }
    let mut p = at + 4;
    let mut take = |n: usize| {
        let s = &buf[p..p + n];
        p += n;
        s
    };
    let kind = RecordKind::from_u8(take(1)[0])?;
    let txn_id = u64::from_le_bytes(take(8).try_into().unwrap());
    let page_raw = u64::from_le_bytes(take(8).try_into().unwrap());
    let prev_page_lsn = Lsn(u64::from_le_bytes(take(8).try_into().unwrap()));
    let prev_txn_lsn = Lsn(u64::from_le_bytes(take(8).try_into().unwrap()));
    let undo_next_lsn = Lsn(u64::from_le_bytes(take(8).try_into().unwrap()));
    let offset = u32::from_le_bytes(take(4).try_into().unwrap());
    let before_len = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
    let after_len = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
    if RECORD_FIXED - 4 + before_len + after_len + RECORD_TRAILER != body_len {
        return None;
    }
    let before = take(before_len).to_vec();
    let after = take(after_len).to_vec();
    let rec = LogRecord {
        lsn: Lsn(at as u64),
        kind,
        txn_id,
        page_id: if page_raw == NO_PAGE { None } else { Some(PageId(page_raw)) },
        prev_page_lsn,
        prev_txn_lsn,
        undo_next_lsn,
        offset,
        before,
        after,
    };
    Some((rec, total))
}

#[derive(Debug)]
pub struct LogDevice {
    /// Encoded log, magic included: durable prefix plus volatile tail.
    buf: Vec<u8>,
    durable_len: usize,
    durable_lsn: Lsn,
    /// Decoded view of everything in `buf`, ascending by LSN.
    records: Vec<LogRecord>,
    page_tail: HashMap<PageId, Lsn>,
    txn_tail: HashMap<u64, Lsn>,
    next_txn_id: u64,
}

impl Default for LogDevice {
    fn default() -> Self {
        Self::new()
    }
}

impl LogDevice {
    pub fn new() -> LogDevice {
        LogDevice {
            buf: LOG_MAGIC.to_vec(),
            durable_len: LOG_MAGIC.len(),
            durable_lsn: Lsn::NULL,
            records: Vec::new(),
            page_tail: HashMap::new(),
            txn_tail: HashMap::new(),
            next_txn_id: 1,
        }
    }

    /// Rebuild a device from raw log bytes (e.g. a file); the tail is
    /// recovered immediately, so torn bytes at the end are truncated.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<LogDevice> {
        if bytes.len() < LOG_MAGIC.len() || bytes[..8] != LOG_MAGIC {
            return Err(Error::Format("log file magic mismatch".into()));
        }
        let mut dev = LogDevice::new();
        dev.buf = bytes;
        dev.durable_len = dev.buf.len();
        dev.recover_tail();
        Ok(dev)
    }

    pub fn durable_lsn(&self) -> Lsn {
        self.durable_lsn
    }

    pub fn last_lsn(&self) -> Lsn {
        self.records.last().map_or(Lsn::NULL, |r| r.lsn)
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    /// Durable prefix of the encoded log; what survives a crash.
    pub fn durable_bytes(&self) -> &[u8] {
        &self.buf[..self.durable_len]
    }

    pub fn alloc_txn_id(&mut self) -> u64 {
        let id = self.next_txn_id;
        self.next_txn_id += 1;
        id
    }

    /// Assign the next LSN, link the per-page and per-transaction chains,
    /// and append to the volatile tail. Not durable until flushed.
    pub fn append(&mut self, body: RecordBody) -> Result<Lsn> {
        body.validate()?;
        let lsn = Lsn(self.buf.len() as u64);
        let prev_page_lsn = body
            .page_id
            .and_then(|p| self.page_tail.get(&p).copied())
            .unwrap_or(Lsn::NULL);
        let prev_txn_lsn = self.txn_tail.get(&body.txn_id).copied().unwrap_or(Lsn::NULL);
        let rec = LogRecord {
            lsn,
            kind: body.kind,
            txn_id: body.txn_id,
            page_id: body.page_id,
            prev_page_lsn,
            prev_txn_lsn,
            undo_next_lsn: body.undo_next_lsn,
            offset: body.offset,
            before: body.before,
            after: body.after,
        };
        self.buf.extend_from_slice(&encode_record(&rec));
        if let Some(p) = rec.page_id {
            self.page_tail.insert(p, lsn);
        }
        self.txn_tail.insert(rec.txn_id, lsn);
        self.next_txn_id = self.next_txn_id.max(rec.txn_id + 1);
        self.records.push(rec);
        Ok(lsn)
    }

    /// Make all records with `lsn <= up_to` durable.
    pub fn flush(&mut self, up_to: Lsn) -> Result<()> {
        if up_to.is_null() || up_to <= self.durable_lsn {
            return Ok(());
        }
        if up_to > self.last_lsn() {
            return Err(Error::Protocol(format!(
                "flush {} beyond last appended {}",
                up_to,
                self.last_lsn()
            )));
        }
        let idx = match self.records.binary_search_by_key(&up_to, |r| r.lsn) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let rec = &self.records[idx];
        self.durable_lsn = rec.lsn;
        self.durable_len = rec.lsn.0 as usize + encoded_len(rec);
        Ok(())
    }

    pub fn flush_all(&mut self) -> Result<()> {
        let last = self.last_lsn();
        if last.is_null() {
            return Ok(());
        }
        self.flush(last)
    }

    /// Crash: the volatile tail is gone; rescan what survived.
    pub fn crash(&mut self) {
        self.buf.truncate(self.durable_len);
        self.recover_tail();
    }

    /// Scan from the origin, stopping at the first incomplete or CRC-invalid
    /// record; truncates there and rebuilds all in-memory state. Returns the
    /// last valid LSN (null for an empty log).
    pub fn recover_tail(&mut self) -> Lsn {
        self.records.clear();
        self.page_tail.clear();
        self.txn_tail.clear();
        self.next_txn_id = 1;
        let mut pos = LOG_MAGIC.len();
        while let Some((rec, total)) = decode_record(&self.buf, pos) {
            self.next_txn_id = self.next_txn_id.max(rec.txn_id + 1);
            if let Some(p) = rec.page_id {
                self.page_tail.insert(p, rec.lsn);
            }
            self.txn_tail.insert(rec.txn_id, rec.lsn);
            self.records.push(rec);
            pos += total;
        }
        self.buf.truncate(pos);
        self.durable_len = pos;
        self.durable_lsn = self.last_lsn();
        self.durable_lsn
    }

    /// Forward scan of the durable log: per-page expected LSNs, loser and
    /// committed transaction sets, per-transaction last LSNs.
    pub fn analyze(&self) -> AnalysisResult {
        let mut out = AnalysisResult::default();
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        let mut completed: BTreeSet<u64> = BTreeSet::new();
        for rec in self.records.iter().filter(|r| r.lsn <= self.durable_lsn) {
            seen.insert(rec.txn_id);
            out.last_txn_lsn.insert(rec.txn_id, rec.lsn);
            match rec.kind {
                RecordKind::Update | RecordKind::Clr | RecordKind::PageFormat => {
                    let page = rec.page_id.expect("validated on append");
                    out.expected_lsn.insert(page, rec.lsn);
                }
                RecordKind::Commit => {
                    completed.insert(rec.txn_id);
                    out.committed.insert(rec.txn_id);
                }
                RecordKind::Abort => {
                    completed.insert(rec.txn_id);
                }
                RecordKind::EndCheckpoint => {}
            }
        }
        out.losers = seen.difference(&completed).copied().collect();
        out
    }

    pub fn record_at(&self, lsn: Lsn) -> Result<&LogRecord> {
        self.records
            .binary_search_by_key(&lsn, |r| r.lsn)
            .map(|i| &self.records[i])
            .map_err(|_| Error::LogIntegrity(format!("no record at {lsn}")))
    }

    /// Records for `page` with `from_exclusive < lsn <= to_inclusive`, in
    /// ascending order, found by walking the per-page chain backwards.
    pub fn page_chain(
        &self,
        page: PageId,
        from_exclusive: Lsn,
        to_inclusive: Lsn,
    ) -> Result<Vec<LogRecord>> {
        let mut out = Vec::new();
        let mut cur = self.page_tail.get(&page).copied().unwrap_or(Lsn::NULL);
        // Skip past records newer than the requested window.
        while !cur.is_null() && cur > to_inclusive {
            cur = self.record_at(cur)?.prev_page_lsn;
        }
        while !cur.is_null() && cur > from_exclusive {
            let rec = self.record_at(cur)?;
            if rec.page_id != Some(page) {
                return Err(Error::LogIntegrity(format!(
                    "page chain for {page} reached record {} of {:?}",
                    rec.lsn, rec.page_id
                )));
            }
            if !rec.prev_page_lsn.is_null() && rec.prev_page_lsn >= cur {
                return Err(Error::LogIntegrity(format!(
                    "page chain link {} not decreasing at {}",
                    rec.prev_page_lsn, cur
                )));
            }
            out.push(rec.clone());
            cur = rec.prev_page_lsn;
        }
        out.reverse();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.durable_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LogDevice> {
        LogDevice::from_bytes(std::fs::read(path)?)
    }
}

fn encoded_len(rec: &LogRecord) -> usize {
    RECORD_FIXED + rec.before.len() + rec.after.len() + RECORD_TRAILER
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(txn: u64, page: u64, n: u8) -> RecordBody {
        RecordBody::update(txn, PageId(page), 40, vec![0; n as usize], vec![n; n as usize])
    }

    #[test]
    fn first_record_for_page_has_null_prev() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 7, 3)).unwrap();
        let rec = log.record_at(l1).unwrap();
        assert_eq!(rec.prev_page_lsn, Lsn::NULL);
        assert_eq!(rec.prev_txn_lsn, Lsn::NULL);
    }

    #[test]
    fn page_chain_links_to_previous_record() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 7, 3)).unwrap();
        let l2 = log.append(update(1, 7, 4)).unwrap();
        assert_eq!(log.record_at(l2).unwrap().prev_page_lsn, l1);
        assert_eq!(log.record_at(l2).unwrap().prev_txn_lsn, l1);
    }

    #[test]
    fn lsns_strictly_increase() {
        let mut log = LogDevice::new();
        let mut prev = Lsn::NULL;
        for i in 0..20 {
            let l = log.append(update(1, i % 3, (i % 7) as u8)).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn flush_to_durable_lsn_is_noop() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 1, 2)).unwrap();
        log.flush(l1).unwrap();
        let durable = log.durable_lsn();
        log.flush(l1).unwrap();
        assert_eq!(log.durable_lsn(), durable);
        log.flush(Lsn::NULL).unwrap();
        assert_eq!(log.durable_lsn(), durable);
    }

    #[test]
    fn commit_then_flush_makes_winner() {
        let mut log = LogDevice::new();
        log.append(update(1, 1, 2)).unwrap();
        let c = log.append(RecordBody::commit(1)).unwrap();
        log.flush(c).unwrap();
        log.crash();
        let analysis = log.analyze();
        assert!(analysis.committed.contains(&1));
        assert!(analysis.losers.is_empty());
    }

    #[test]
    fn crash_before_flush_leaves_empty_log() {
        let mut log = LogDevice::new();
        log.append(update(1, 1, 2)).unwrap();
        log.append(RecordBody::commit(1)).unwrap();
        log.crash();
        assert_eq!(log.record_count(), 0);
        assert_eq!(log.durable_lsn(), Lsn::NULL);
        let analysis = log.analyze();
        assert!(analysis.expected_lsn.is_empty());
        assert!(analysis.losers.is_empty());
    }

    #[test]
    fn recover_tail_stops_at_corrupted_record() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 1, 2)).unwrap();
        let l2 = log.append(update(1, 2, 2)).unwrap();
        log.flush_all().unwrap();
        let mut bytes = log.durable_bytes().to_vec();
        // Corrupt a byte inside the second record's payload.
        let mid = l2.0 as usize + 20;
        bytes[mid] ^= 0xFF;
        let recovered = LogDevice::from_bytes(bytes).unwrap();
        assert_eq!(recovered.durable_lsn(), l1);
        assert_eq!(recovered.record_count(), 1);
    }

    #[test]
    fn recover_tail_truncates_mid_record() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 1, 8)).unwrap();
        log.append(update(1, 2, 8)).unwrap();
        log.flush_all().unwrap();
        let bytes = log.durable_bytes().to_vec();
        let cut = bytes.len() - 5; // inside the last record
        let recovered = LogDevice::from_bytes(bytes[..cut].to_vec()).unwrap();
        assert_eq!(recovered.durable_lsn(), l1);
    }

    #[test]
    fn recover_tail_of_empty_log_returns_null() {
        let mut log = LogDevice::new();
        assert_eq!(log.recover_tail(), Lsn::NULL);
    }

    #[test]
    fn analyze_basic_example() {
        let mut log = LogDevice::new();
        let u1 = log.append(update(1, 1, 2)).unwrap();
        let c = log.append(RecordBody::commit(1)).unwrap();
        log.flush(c).unwrap();
        let analysis = log.analyze();
        assert_eq!(analysis.expected_lsn[&PageId(1)], u1);
        assert!(analysis.losers.is_empty());
    }

    #[test]
    fn uncommitted_durable_update_defines_expected_lsn() {
        let mut log = LogDevice::new();
        let u1 = log.append(update(9, 1, 2)).unwrap();
        log.flush(u1).unwrap();
        log.crash();
        let analysis = log.analyze();
        assert!(analysis.losers.contains(&9));
        assert_eq!(analysis.expected_lsn[&PageId(1)], u1);
    }

    #[test]
    fn analyze_matches_bruteforce_oracle_over_random_history() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        let mut log = LogDevice::new();
        for txn in 1..=100u64 {
            for _ in 0..rng.gen_range(1..5) {
                let page = rng.gen_range(0..10u64);
                log.append(update(txn, page, rng.gen_range(1..6) as u8)).unwrap();
            }
            if rng.gen_bool(0.8) {
                let c = log.append(RecordBody::commit(txn)).unwrap();
                if rng.gen_bool(0.9) {
                    log.flush(c).unwrap();
                }
            }
        }
        log.crash();
        let analysis = log.analyze();

        // Independent oracle: fold over the decoded durable records directly.
        let mut expected: HashMap<PageId, Lsn> = HashMap::new();
        let mut seen = BTreeSet::new();
        let mut done = BTreeSet::new();
        let mut pos = LOG_MAGIC.len();
        let bytes = log.durable_bytes().to_vec();
        while let Some((rec, total)) = decode_record(&bytes, pos) {
            seen.insert(rec.txn_id);
            match rec.kind {
                RecordKind::Commit | RecordKind::Abort => {
                    done.insert(rec.txn_id);
                }
                _ => {
                    expected.insert(rec.page_id.unwrap(), rec.lsn);
                }
            }
            pos += total;
        }
        assert_eq!(analysis.expected_lsn, expected);
        let losers: BTreeSet<u64> = seen.difference(&done).copied().collect();
        assert_eq!(analysis.losers, losers);
    }

    #[test]
    fn analyze_is_pure() {
        let mut log = LogDevice::new();
        for t in 1..10u64 {
            log.append(update(t, t % 4, 3)).unwrap();
        }
        log.flush_all().unwrap();
        let a = log.analyze();
        let b = log.analyze();
        assert_eq!(a.expected_lsn, b.expected_lsn);
        assert_eq!(a.losers, b.losers);
        assert_eq!(a.last_txn_lsn, b.last_txn_lsn);
    }

    #[test]
    fn page_chain_window_semantics() {
        let mut log = LogDevice::new();
        let l1 = log.append(update(1, 5, 1)).unwrap();
        let l2 = log.append(update(1, 5, 2)).unwrap();
        let _ = log.append(update(1, 6, 9)).unwrap();
        let l3 = log.append(update(2, 5, 3)).unwrap();
        log.flush_all().unwrap();

        // from == to: empty.
        assert!(log.page_chain(PageId(5), l3, l3).unwrap().is_empty());
        // Full chain from null.
        let all = log.page_chain(PageId(5), Lsn::NULL, l3).unwrap();
        assert_eq!(all.iter().map(|r| r.lsn).collect::<Vec<_>>(), vec![l1, l2, l3]);
        // Missing suffix only.
        let suffix = log.page_chain(PageId(5), l1, l3).unwrap();
        assert_eq!(suffix.iter().map(|r| r.lsn).collect::<Vec<_>>(), vec![l2, l3]);
    }

    #[test]
    fn page_chains_partition_page_records() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(777);
        let mut log = LogDevice::new();
        for t in 1..=30u64 {
            for _ in 0..rng.gen_range(1..4) {
                log.append(update(t, rng.gen_range(0..6u64), 2)).unwrap();
            }
            log.append(RecordBody::commit(t)).unwrap();
        }
        log.flush_all().unwrap();
        let analysis = log.analyze();
        let mut chained = 0;
        for (&page, &to) in &analysis.expected_lsn {
            chained += log.page_chain(page, Lsn::NULL, to).unwrap().len();
        }
        let total_page_records = log
            .records
            .iter()
            .filter(|r| r.page_id.is_some())
            .count();
        assert_eq!(chained, total_page_records);
    }

    #[test]
    fn malformed_bodies_rejected() {
        let mut log = LogDevice::new();
        let bad = RecordBody {
            kind: RecordKind::Update,
            txn_id: 1,
            page_id: Some(PageId(0)),
            undo_next_lsn: Lsn::NULL,
            offset: 0,
            before: vec![1, 2],
            after: vec![1],
        };
        assert!(matches!(log.append(bad), Err(Error::Format(_))));
        let bad_commit = RecordBody {
            kind: RecordKind::Commit,
            txn_id: 1,
            page_id: Some(PageId(0)),
            undo_next_lsn: Lsn::NULL,
            offset: 0,
            before: vec![],
            after: vec![],
        };
        assert!(matches!(log.append(bad_commit), Err(Error::Format(_))));
    }

    #[test]
    fn durable_prefix_survives_roundtrip_through_bytes() {
        let mut log = LogDevice::new();
        for t in 1..=5u64 {
            log.append(update(t, t, 4)).unwrap();
            log.append(RecordBody::commit(t)).unwrap();
        }
        log.flush_all().unwrap();
        log.append(update(99, 0, 4)).unwrap(); // volatile tail
        let reloaded = LogDevice::from_bytes(log.durable_bytes().to_vec()).unwrap();
        assert_eq!(reloaded.record_count(), 10);
        assert_eq!(reloaded.durable_lsn(), log.durable_lsn());
        assert_eq!(reloaded.analyze().committed, log.analyze().committed);
    }
}
