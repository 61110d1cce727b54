//! B+Tree over buffer-pool pages.
//!
//! Nodes are slotted pages. Every structural mutation is expressed as a
//! byte-range delta logged through `update_fixed`: a node is parsed, edited
//! in entry form, re-serialized canonically, and the minimal changed span
//! becomes one update record. Splits allocate a fresh page (watermark bump
//! on the meta page plus a page-format record) inside the enclosing user
//! transaction. Deletes are lazy; empty leaves persist.
//!
//! Node content layout, relative to the page's content region:
//!
//! ```text
//! 0   u16  entry count
//! 2   u16  cell region start (cells pack toward the region's end)
//! 4   u64  leftmost child (inner nodes; zero for leaves)
//! 12  u16 × count   slot directory: cell offsets, ascending key order
//! ...
//! cells: leaf  [klen u16][vlen u16][key][value]
//!        inner [klen u16][child u64][key]
//! ```
//!
//! An inner entry `(k, c)` routes keys `>= k` (up to the next entry); the
//! leftmost child routes keys below the first entry.

use crate::engine::{Engine, Txn};
use crate::error::{Error, Result};
use crate::page::{layout_for, PageId, PageType, PAGE_HEADER_SIZE};
use crate::pool::{Intent, PageHandle};

pub const META_PAGE: PageId = PageId(0);

const NODE_HDR: usize = 12;
const OFF_COUNT: usize = 0;
const OFF_CELL_START: usize = 2;
const OFF_LEFTMOST: usize = 4;

/// Meta page content layout: root page, tree height, allocation watermark.
const META_ROOT: usize = 0;
const META_HEIGHT: usize = 8;
const META_NEXT_FREE: usize = 16;
const META_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
struct LeafEntry {
    key: Vec<u8>,
    value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct InnerEntry {
    key: Vec<u8>,
    child: PageId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Leaf(Vec<LeafEntry>),
    Inner {
        leftmost: PageId,
        entries: Vec<InnerEntry>,
    },
}

fn read_u16(buf: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(buf[off..off + 2].try_into().unwrap())
}

fn write_u16(buf: &mut [u8], off: usize, v: u16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn read_u64(buf: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
}

fn write_u64(buf: &mut [u8], off: usize, v: u64) {
    buf[off..off + 8].copy_from_slice(&v.to_le_bytes());
}

fn parse_node(content: &[u8], page_type: u8) -> Result<Node> {
    let count = read_u16(content, OFF_COUNT) as usize;
    let bad = |what: &str| Error::Format(format!("node parse: {what}"));
    if NODE_HDR + 2 * count > content.len() {
        return Err(bad("slot directory past content end"));
    }
    let is_leaf = match PageType::from_u8(page_type) {
        Some(PageType::BtreeLeaf) => true,
        Some(PageType::BtreeInner) => false,
        _ => return Err(bad("not a tree node")),
    };
    let cell = |slot: usize| -> Result<usize> {
        let off = read_u16(content, NODE_HDR + 2 * slot) as usize;
        if off >= content.len() {
            return Err(bad("cell offset past content end"));
        }
        Ok(off)
    };
    if is_leaf {
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let at = cell(i)?;
            if at + 4 > content.len() {
                return Err(bad("leaf cell header truncated"));
            }
            let klen = read_u16(content, at) as usize;
            let vlen = read_u16(content, at + 2) as usize;
            if at + 4 + klen + vlen > content.len() {
                return Err(bad("leaf cell truncated"));
            }
            entries.push(LeafEntry {
                key: content[at + 4..at + 4 + klen].to_vec(),
                value: content[at + 4 + klen..at + 4 + klen + vlen].to_vec(),
            });
        }
        Ok(Node::Leaf(entries))
    } else {
        let leftmost = PageId(read_u64(content, OFF_LEFTMOST));
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let at = cell(i)?;
            if at + 10 > content.len() {
                return Err(bad("inner cell header truncated"));
            }
            let klen = read_u16(content, at) as usize;
            let child = PageId(read_u64(content, at + 2));
            if at + 10 + klen > content.len() {
                return Err(bad("inner cell truncated"));
            }
            entries.push(InnerEntry {
                key: content[at + 10..at + 10 + klen].to_vec(),
                child,
            });
        }
        Ok(Node::Inner { leftmost, entries })
    }
}

fn node_cell_bytes(node: &Node) -> usize {
    match node {
        Node::Leaf(entries) => entries.iter().map(|e| 4 + e.key.len() + e.value.len()).sum(),
        Node::Inner { entries, .. } => entries.iter().map(|e| 10 + e.key.len()).sum(),
    }
}

fn node_count(node: &Node) -> usize {
    match node {
        Node::Leaf(entries) => entries.len(),
        Node::Inner { entries, .. } => entries.len(),
    }
}

fn node_fits(node: &Node, content_len: usize) -> bool {
    NODE_HDR + 2 * node_count(node) + node_cell_bytes(node) <= content_len
}

/// Contiguous differing byte ranges between two equal-length buffers, with
/// nearby runs merged so one logical edit stays a handful of log records.
fn diff_runs(old: &[u8], new: &[u8]) -> Vec<std::ops::Range<usize>> {
    const MERGE_GAP: usize = 24;
    let mut runs: Vec<std::ops::Range<usize>> = Vec::new();
    let mut i = 0;
    while i < old.len() {
        if old[i] == new[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < old.len() && old[i] != new[i] {
            i += 1;
        }
        match runs.last_mut() {
            Some(prev) if start - prev.end <= MERGE_GAP => prev.end = i,
            _ => runs.push(start..i),
        }
    }
    runs
}

// Raw in-place accessors for the hot paths (descend, lookup, point edits).
// Structural operations and verification still go through `parse_node`.

fn raw_count(content: &[u8]) -> usize {
    read_u16(content, OFF_COUNT) as usize
}

fn raw_slot(content: &[u8], i: usize) -> Result<usize> {
    let off = read_u16(content, NODE_HDR + 2 * i) as usize;
    if off + 4 > content.len() {
        return Err(Error::Format("cell offset past content end".into()));
    }
    Ok(off)
}

fn raw_leaf_key(content: &[u8], i: usize) -> Result<&[u8]> {
    let at = raw_slot(content, i)?;
    let klen = read_u16(content, at) as usize;
    content
        .get(at + 4..at + 4 + klen)
        .ok_or_else(|| Error::Format("leaf cell truncated".into()))
}

fn raw_leaf_value(content: &[u8], i: usize) -> Result<&[u8]> {
    let at = raw_slot(content, i)?;
    let klen = read_u16(content, at) as usize;
    let vlen = read_u16(content, at + 2) as usize;
    content
        .get(at + 4 + klen..at + 4 + klen + vlen)
        .ok_or_else(|| Error::Format("leaf cell truncated".into()))
}

fn raw_inner_key(content: &[u8], i: usize) -> Result<&[u8]> {
    let at = raw_slot(content, i)?;
    let klen = read_u16(content, at) as usize;
    content
        .get(at + 10..at + 10 + klen)
        .ok_or_else(|| Error::Format("inner cell truncated".into()))
}

fn raw_inner_child(content: &[u8], i: usize) -> Result<PageId> {
    let at = raw_slot(content, i)?;
    if at + 10 > content.len() {
        return Err(Error::Format("inner cell truncated".into()));
    }
    Ok(PageId(read_u64(content, at + 2)))
}

/// Binary search the slot directory of a leaf.
fn raw_leaf_search(content: &[u8], key: &[u8]) -> Result<std::result::Result<usize, usize>> {
    let mut lo = 0usize;
    let mut hi = raw_count(content);
    if NODE_HDR + 2 * hi > content.len() {
        return Err(Error::Format("slot directory past content end".into()));
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        match raw_leaf_key(content, mid)?.cmp(key) {
            std::cmp::Ordering::Less => lo = mid + 1,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => return Ok(Ok(mid)),
        }
    }
    Ok(Err(lo))
}

/// Route through an inner node: rightmost separator `<= key`, else leftmost.
fn raw_inner_route(content: &[u8], key: &[u8]) -> Result<PageId> {
    let count = raw_count(content);
    if NODE_HDR + 2 * count > content.len() {
        return Err(Error::Format("slot directory past content end".into()));
    }
    let mut lo = 0usize;
    let mut hi = count;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if raw_inner_key(content, mid)? <= key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        Ok(PageId(read_u64(content, OFF_LEFTMOST)))
    } else {
        raw_inner_child(content, lo - 1)
    }
}

/// Cell region floor; a zero field (fresh page) means "no cells yet".
fn effective_cell_start(content: &[u8]) -> usize {
    match read_u16(content, OFF_CELL_START) as usize {
        0 => content.len(),
        v => v,
    }
}

fn leaf_cell(key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut cell = Vec::with_capacity(4 + key.len() + value.len());
    cell.extend_from_slice(&(key.len() as u16).to_le_bytes());
    cell.extend_from_slice(&(value.len() as u16).to_le_bytes());
    cell.extend_from_slice(key);
    cell.extend_from_slice(value);
    cell
}

fn inner_cell(key: &[u8], child: PageId) -> Vec<u8> {
    let mut cell = Vec::with_capacity(10 + key.len());
    cell.extend_from_slice(&(key.len() as u16).to_le_bytes());
    cell.extend_from_slice(&child.0.to_le_bytes());
    cell.extend_from_slice(key);
    cell
}

/// Place a cell in the gap below the cell region and splice its slot in at
/// `at`. Returns false when the gap is too small (compact or split first);
/// dead cells from previous removals stay where they were.
fn raw_insert(content: &mut [u8], at: usize, cell: &[u8]) -> bool {
    let count = read_u16(content, OFF_COUNT) as usize;
    let cell_start = effective_cell_start(content);
    let dir_end = NODE_HDR + 2 * (count + 1);
    if cell_start < dir_end + cell.len() {
        return false;
    }
    let new_off = cell_start - cell.len();
    content[new_off..cell_start].copy_from_slice(cell);
    content.copy_within(NODE_HDR + 2 * at..NODE_HDR + 2 * count, NODE_HDR + 2 * at + 2);
    write_u16(content, NODE_HDR + 2 * at, new_off as u16);
    write_u16(content, OFF_COUNT, (count + 1) as u16);
    write_u16(content, OFF_CELL_START, new_off as u16);
    true
}

/// Drop one slot; the cell bytes linger as a hole until compaction.
fn raw_remove(content: &mut [u8], at: usize) {
    let count = read_u16(content, OFF_COUNT) as usize;
    debug_assert!(at < count);
    content.copy_within(NODE_HDR + 2 * (at + 1)..NODE_HDR + 2 * count, NODE_HDR + 2 * at);
    write_u16(content, OFF_COUNT, (count - 1) as u16);
}

/// Canonical serialization over a copy of the old content: header and slot
/// directory from the start, cells packed tightly at the end, untouched gap
/// bytes preserved so the changed span stays minimal.
fn serialize_node(node: &Node, old_content: &[u8]) -> Result<Vec<u8>> {
    let mut out = old_content.to_vec();
    let count = node_count(node);
    if !node_fits(node, out.len()) {
        return Err(Error::Capacity("node overflow".into()));
    }
    write_u16(&mut out, OFF_COUNT, count as u16);
    match node {
        Node::Leaf(_) => write_u64(&mut out, OFF_LEFTMOST, 0),
        Node::Inner { leftmost, .. } => write_u64(&mut out, OFF_LEFTMOST, leftmost.0),
    }
    let mut pos = out.len();
    match node {
        Node::Leaf(entries) => {
            for (i, e) in entries.iter().enumerate() {
                pos -= 4 + e.key.len() + e.value.len();
                write_u16(&mut out, pos, e.key.len() as u16);
                write_u16(&mut out, pos + 2, e.value.len() as u16);
                out[pos + 4..pos + 4 + e.key.len()].copy_from_slice(&e.key);
                out[pos + 4 + e.key.len()..pos + 4 + e.key.len() + e.value.len()]
                    .copy_from_slice(&e.value);
                write_u16(&mut out, NODE_HDR + 2 * i, pos as u16);
            }
        }
        Node::Inner { entries, .. } => {
            for (i, e) in entries.iter().enumerate() {
                pos -= 10 + e.key.len();
                write_u16(&mut out, pos, e.key.len() as u16);
                write_u64(&mut out, pos + 2, e.child.0);
                out[pos + 10..pos + 10 + e.key.len()].copy_from_slice(&e.key);
                write_u16(&mut out, NODE_HDR + 2 * i, pos as u16);
            }
        }
    }
    write_u16(&mut out, OFF_CELL_START, pos as u16);
    Ok(out)
}

/// Keyed page store: a B+Tree whose nodes live in the buffer pool and whose
/// every mutation flows through logged page deltas.
#[derive(Debug, Clone, Copy)]
pub struct BTree {
    pub max_key: usize,
    pub max_value: usize,
}

impl Default for BTree {
    fn default() -> Self {
        BTree {
            max_key: 128,
            max_value: 256,
        }
    }
}

struct FixedNode {
    handle: PageHandle,
    content_start: usize,
    content: Vec<u8>,
    page_type: u8,
}

impl BTree {
    fn fix_node(&self, engine: &mut Engine, id: PageId, intent: Intent) -> Result<FixedNode> {
        let handle = engine.fix_page(id, intent)?;
        let header = engine.read_range(&handle, 0, PAGE_HEADER_SIZE)?;
        let page_type = header[24];
        let fragment_count = header[25].max(1);
        let layout = layout_for(engine.pool.config().page_size, fragment_count)?;
        let content = engine.read_range(&handle, layout.content_start, layout.content_len())?;
        Ok(FixedNode {
            handle,
            content_start: layout.content_start,
            content,
            page_type,
        })
    }

    /// Log the changed byte runs between the node's old and new content,
    /// one update record per run.
    fn rewrite_node(
        &self,
        engine: &mut Engine,
        txn: Txn,
        fixed: &FixedNode,
        new_content: &[u8],
    ) -> Result<()> {
        debug_assert_eq!(fixed.content.len(), new_content.len());
        let old = &fixed.content;
        for run in diff_runs(old, new_content) {
            engine.update_fixed(
                &fixed.handle,
                fixed.content_start + run.start,
                &old[run.clone()],
                &new_content[run],
                txn,
            )?;
        }
        Ok(())
    }

    // -- meta page ---------------------------------------------------------------

    fn read_meta(&self, engine: &mut Engine) -> Result<(PageId, u64, u64)> {
        let fixed = self.fix_node_raw(engine, META_PAGE, Intent::Read)?;
        let root = PageId(read_u64(&fixed.content, META_ROOT));
        let height = read_u64(&fixed.content, META_HEIGHT);
        let next_free = read_u64(&fixed.content, META_NEXT_FREE);
        engine.unfix(fixed.handle);
        if root.0 == 0 || height == 0 {
            return Err(Error::Format("tree not initialized".into()));
        }
        Ok((root, height, next_free))
    }

    /// Fix a page without interpreting it as a tree node (meta access).
    fn fix_node_raw(&self, engine: &mut Engine, id: PageId, intent: Intent) -> Result<FixedNode> {
        let handle = engine.fix_page(id, intent)?;
        let page = engine.materialize(&handle)?;
        let layout = page.layout()?;
        Ok(FixedNode {
            handle,
            content_start: layout.content_start,
            content: page.bytes()[layout.content_range()].to_vec(),
            page_type: page.page_type(),
        })
    }

    fn write_meta_field(
        &self,
        engine: &mut Engine,
        txn: Txn,
        fixed: &FixedNode,
        off: usize,
        value: u64,
    ) -> Result<()> {
        let before = fixed.content[off..off + 8].to_vec();
        engine.update_fixed(
            &fixed.handle,
            fixed.content_start + off,
            &before,
            &value.to_le_bytes(),
            txn,
        )?;
        Ok(())
    }

    /// Bump the allocation watermark and return the new page's id.
    fn alloc_page(&self, engine: &mut Engine, txn: Txn) -> Result<PageId> {
        let fixed = self.fix_node_raw(engine, META_PAGE, Intent::Write)?;
        let next_free = read_u64(&fixed.content, META_NEXT_FREE);
        if next_free >= engine.pool.config().ssd_pages {
            engine.unfix(fixed.handle);
            return Err(Error::Capacity(format!(
                "store full: watermark {next_free} of {}",
                engine.pool.config().ssd_pages
            )));
        }
        let res = self.write_meta_field(engine, txn, &fixed, META_NEXT_FREE, next_free + 1);
        engine.unfix(fixed.handle);
        res?;
        Ok(PageId(next_free))
    }

    // -- public operations ----------------------------------------------------------

    /// Initialize an empty tree: meta page plus a root leaf, all logged and
    /// committed so every reachable page has a durable format record.
    pub fn create(&self, engine: &mut Engine) -> Result<()> {
        let txn = engine.begin_txn()?;
        engine.format_page(txn, META_PAGE, PageType::Meta)?;
        engine.format_page(txn, PageId(1), PageType::BtreeLeaf)?;
        let fixed = self.fix_node_raw(engine, META_PAGE, Intent::Write)?;
        let mut new_content = fixed.content.clone();
        write_u64(&mut new_content, META_ROOT, 1);
        write_u64(&mut new_content, META_HEIGHT, 1);
        write_u64(&mut new_content, META_NEXT_FREE, 2);
        let res = (|| {
            let before = fixed.content[..META_LEN].to_vec();
            engine.update_fixed(
                &fixed.handle,
                fixed.content_start,
                &before,
                &new_content[..META_LEN],
                txn,
            )
        })();
        engine.unfix(fixed.handle);
        res?;
        engine.commit_txn(txn)
    }

    pub fn insert(&self, engine: &mut Engine, txn: Txn, key: &[u8], value: &[u8]) -> Result<()> {
        if key.is_empty() || key.len() > self.max_key {
            return Err(Error::Size(format!("key length {} not in 1..={}", key.len(), self.max_key)));
        }
        if value.len() > self.max_value {
            return Err(Error::Size(format!(
                "value length {} exceeds {}",
                value.len(),
                self.max_value
            )));
        }
        let (root, height, _) = self.read_meta(engine)?;
        if let Some((sep, new_child)) = self.insert_rec(engine, txn, root, height - 1, key, value)? {
            // Root split: new inner root above the old one.
            let new_root = self.alloc_page(engine, txn)?;
            engine.format_page(txn, new_root, PageType::BtreeInner)?;
            let fixed = self.fix_node(engine, new_root, Intent::Write)?;
            let node = Node::Inner {
                leftmost: root,
                entries: vec![InnerEntry { key: sep, child: new_child }],
            };
            let new_content = serialize_node(&node, &fixed.content)?;
            let res = self.rewrite_node(engine, txn, &fixed, &new_content);
            engine.unfix(fixed.handle);
            res?;
            let meta = self.fix_node_raw(engine, META_PAGE, Intent::Write)?;
            let res = self
                .write_meta_field(engine, txn, &meta, META_ROOT, new_root.0)
                .and_then(|_| self.write_meta_field(engine, txn, &meta, META_HEIGHT, height + 1));
            engine.unfix(meta.handle);
            res?;
        }
        Ok(())
    }

    /// Returns `(separator, new_page)` when this subtree split.
    fn insert_rec(
        &self,
        engine: &mut Engine,
        txn: Txn,
        page: PageId,
        depth_remaining: u64,
        key: &[u8],
        value: &[u8],
    ) -> Result<Option<(Vec<u8>, PageId)>> {
        if depth_remaining == 0 {
            return self.insert_into_leaf(engine, txn, page, key, value);
        }
        let fixed = self.fix_node(engine, page, Intent::Read)?;
        if fixed.page_type != PageType::BtreeInner as u8 {
            engine.unfix(fixed.handle);
            return Err(Error::Format(format!("{page}: leaf at inner depth")));
        }
        let child = raw_inner_route(&fixed.content, key)?;
        engine.unfix(fixed.handle);

        let split = self.insert_rec(engine, txn, child, depth_remaining - 1, key, value)?;
        let Some((sep, new_child)) = split else {
            return Ok(None);
        };

        // Re-fix for mutation and install the separator.
        let fixed = self.fix_node(engine, page, Intent::Write)?;
        let node = parse_node(&fixed.content, fixed.page_type)?;
        let Node::Inner { leftmost, mut entries } = node else {
            engine.unfix(fixed.handle);
            return Err(Error::Format(format!("{page}: node changed shape mid-insert")));
        };
        let at = entries.partition_point(|e| e.key.as_slice() <= sep.as_slice());

        // In-place fast path.
        let mut edited = fixed.content.clone();
        if raw_insert(&mut edited, at, &inner_cell(&sep, new_child)) {
            let res = self.rewrite_node(engine, txn, &fixed, &edited);
            engine.unfix(fixed.handle);
            res?;
            return Ok(None);
        }

        entries.insert(at, InnerEntry { key: sep, child: new_child });
        let node = Node::Inner { leftmost, entries };
        if node_fits(&node, fixed.content.len()) {
            let new_content = serialize_node(&node, &fixed.content)?;
            let res = self.rewrite_node(engine, txn, &fixed, &new_content);
            engine.unfix(fixed.handle);
            res?;
            return Ok(None);
        }
        // Inner split: promote the middle separator.
        let Node::Inner { leftmost, entries } = node else { unreachable!() };
        if entries.len() < 3 {
            engine.unfix(fixed.handle);
            return Err(Error::Size("separators too large to split an inner node".into()));
        }
        let mid = entries.len() / 2;
        let promoted = entries[mid].key.clone();
        let right_leftmost = entries[mid].child;
        let right_entries: Vec<InnerEntry> = entries[mid + 1..].to_vec();
        let left_entries: Vec<InnerEntry> = entries[..mid].to_vec();

        let new_page = self.alloc_page(engine, txn)?;
        engine.format_page(txn, new_page, PageType::BtreeInner)?;
        let new_fixed = self.fix_node(engine, new_page, Intent::Write)?;
        let right = Node::Inner { leftmost: right_leftmost, entries: right_entries };
        let right_content = serialize_node(&right, &new_fixed.content)?;
        let res = self.rewrite_node(engine, txn, &new_fixed, &right_content);
        engine.unfix(new_fixed.handle);
        res?;

        let left = Node::Inner { leftmost, entries: left_entries };
        let left_content = serialize_node(&left, &fixed.content)?;
        let res = self.rewrite_node(engine, txn, &fixed, &left_content);
        engine.unfix(fixed.handle);
        res?;
        Ok(Some((promoted, new_page)))
    }

    fn insert_into_leaf(
        &self,
        engine: &mut Engine,
        txn: Txn,
        page: PageId,
        key: &[u8],
        value: &[u8],
    ) -> Result<Option<(Vec<u8>, PageId)>> {
        let fixed = self.fix_node(engine, page, Intent::Write)?;
        if fixed.page_type != PageType::BtreeLeaf as u8 {
            engine.unfix(fixed.handle);
            return Err(Error::Format(format!("{page}: inner node at leaf depth")));
        }
        let cell = leaf_cell(key, value);

        // In-place fast path: edit the slot directory and gap directly.
        let found = raw_leaf_search(&fixed.content, key)?;
        let mut edited = fixed.content.clone();
        let fast = match found {
            Ok(i) => {
                if raw_leaf_value(&fixed.content, i)?.len() == value.len() {
                    // Same-length replace: overwrite the cell's value bytes.
                    let off = raw_slot(&edited, i)?;
                    let klen = read_u16(&edited, off) as usize;
                    edited[off + 4 + klen..off + 4 + klen + value.len()].copy_from_slice(value);
                    true
                } else {
                    raw_remove(&mut edited, i);
                    raw_insert(&mut edited, i, &cell)
                }
            }
            Err(i) => raw_insert(&mut edited, i, &cell),
        };
        if fast {
            let res = self.rewrite_node(engine, txn, &fixed, &edited);
            engine.unfix(fixed.handle);
            res?;
            return Ok(None);
        }

        // The gap is too small. Work out the would-be entry list.
        let node = parse_node(&fixed.content, fixed.page_type)?;
        let Node::Leaf(mut entries) = node else {
            engine.unfix(fixed.handle);
            return Err(Error::Format(format!("{page}: inner node at leaf depth")));
        };
        match entries.binary_search_by(|e| e.key.as_slice().cmp(key)) {
            Ok(i) => entries[i].value = value.to_vec(),
            Err(i) => entries.insert(
                i,
                LeafEntry {
                    key: key.to_vec(),
                    value: value.to_vec(),
                },
            ),
        }
        let node = Node::Leaf(entries);
        if node_fits(&node, fixed.content.len()) {
            // Enough total free space once holes are squeezed out: compact.
            let new_content = serialize_node(&node, &fixed.content)?;
            let res = self.rewrite_node(engine, txn, &fixed, &new_content);
            engine.unfix(fixed.handle);
            res?;
            return Ok(None);
        }
        let Node::Leaf(entries) = node else { unreachable!() };
        if entries.len() < 2 {
            engine.unfix(fixed.handle);
            return Err(Error::Size("entry too large for an empty leaf".into()));
        }
        let mid = entries.len() / 2;
        let right_entries: Vec<LeafEntry> = entries[mid..].to_vec();
        let left_entries: Vec<LeafEntry> = entries[..mid].to_vec();
        let sep = right_entries[0].key.clone();

        let new_page = self.alloc_page(engine, txn)?;
        engine.format_page(txn, new_page, PageType::BtreeLeaf)?;
        let new_fixed = self.fix_node(engine, new_page, Intent::Write)?;
        let right_content = serialize_node(&Node::Leaf(right_entries), &new_fixed.content)?;
        let res = self.rewrite_node(engine, txn, &new_fixed, &right_content);
        engine.unfix(new_fixed.handle);
        res?;

        let left_content = serialize_node(&Node::Leaf(left_entries), &fixed.content)?;
        let res = self.rewrite_node(engine, txn, &fixed, &left_content);
        engine.unfix(fixed.handle);
        res?;
        Ok(Some((sep, new_page)))
    }

    pub fn lookup(&self, engine: &mut Engine, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let (root, height, _) = self.read_meta(engine)?;
        let mut page = root;
        for _ in 0..height - 1 {
            let fixed = self.fix_node(engine, page, Intent::Read)?;
            let node = parse_node(&fixed.content, fixed.page_type)?;
            engine.unfix(fixed.handle);
            let Node::Inner { leftmost, entries } = node else {
                return Err(Error::Format(format!("{page}: leaf at inner depth")));
            };
            page = route(&entries, leftmost, key);
        }
        let fixed = self.fix_node(engine, page, Intent::Read)?;
        let node = parse_node(&fixed.content, fixed.page_type)?;
        engine.unfix(fixed.handle);
        let Node::Leaf(entries) = node else {
            return Err(Error::Format(format!("{page}: inner node at leaf depth")));
        };
        Ok(entries
            .binary_search_by(|e| e.key.as_slice().cmp(key))
            .ok()
            .map(|i| entries[i].value.clone()))
    }

    /// Remove a key. Returns whether it existed; removing an absent key
    /// logs nothing.
    pub fn delete(&self, engine: &mut Engine, txn: Txn, key: &[u8]) -> Result<bool> {
        let (root, height, _) = self.read_meta(engine)?;
        let mut page = root;
        for _ in 0..height - 1 {
            let fixed = self.fix_node(engine, page, Intent::Read)?;
            let node = parse_node(&fixed.content, fixed.page_type)?;
            engine.unfix(fixed.handle);
            let Node::Inner { leftmost, entries } = node else {
                return Err(Error::Format(format!("{page}: leaf at inner depth")));
            };
            page = route(&entries, leftmost, key);
        }
        let fixed = self.fix_node(engine, page, Intent::Write)?;
        let node = parse_node(&fixed.content, fixed.page_type)?;
        let Node::Leaf(entries) = node else {
            engine.unfix(fixed.handle);
            return Err(Error::Format(format!("{page}: inner node at leaf depth")));
        };
        match entries.binary_search_by(|e| e.key.as_slice().cmp(key)) {
            Ok(i) => {
                // Slot splice only; the dead cell stays until a later
                // insert compacts the node.
                let mut edited = fixed.content.clone();
                raw_remove(&mut edited, i);
                let res = self.rewrite_node(engine, txn, &fixed, &edited);
                engine.unfix(fixed.handle);
                res?;
                Ok(true)
            }
            Err(_) => {
                engine.unfix(fixed.handle);
                Ok(false)
            }
        }
    }

    /// All entries in key order (depth-first walk; no sibling links).
    pub fn scan(&self, engine: &mut Engine) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let (root, height, _) = self.read_meta(engine)?;
        let mut out = Vec::new();
        self.scan_rec(engine, root, height - 1, &mut out)?;
        Ok(out)
    }

    fn scan_rec(
        &self,
        engine: &mut Engine,
        page: PageId,
        depth_remaining: u64,
        out: &mut Vec<(Vec<u8>, Vec<u8>)>,
    ) -> Result<()> {
        let fixed = self.fix_node(engine, page, Intent::Read)?;
        let node = parse_node(&fixed.content, fixed.page_type)?;
        engine.unfix(fixed.handle);
        match (depth_remaining, node) {
            (0, Node::Leaf(entries)) => {
                out.extend(entries.into_iter().map(|e| (e.key, e.value)));
                Ok(())
            }
            (d, Node::Inner { leftmost, entries }) if d > 0 => {
                self.scan_rec(engine, leftmost, d - 1, out)?;
                for e in entries {
                    self.scan_rec(engine, e.child, d - 1, out)?;
                }
                Ok(())
            }
            _ => Err(Error::Format(format!("{page}: node type does not match depth"))),
        }
    }

    /// Full structural check: types match depth, keys strictly ascending,
    /// separator bounds hold, all leaves at the same depth.
    pub fn check_invariants(&self, engine: &mut Engine) -> Result<()> {
        let (root, height, next_free) = self.read_meta(engine)?;
        if next_free > engine.pool.config().ssd_pages {
            return Err(Error::Format("allocation watermark past store end".into()));
        }
        self.check_rec(engine, root, height - 1, None, None)
    }

    fn check_rec(
        &self,
        engine: &mut Engine,
        page: PageId,
        depth_remaining: u64,
        lower: Option<&[u8]>,
        upper: Option<&[u8]>,
    ) -> Result<()> {
        let fail = |what: String| Err(Error::Format(format!("{page}: {what}")));
        let fixed = self.fix_node(engine, page, Intent::Read)?;
        let node = parse_node(&fixed.content, fixed.page_type)?;
        engine.unfix(fixed.handle);
        let in_bounds = |key: &[u8]| -> bool {
            lower.map_or(true, |lo| key >= lo) && upper.map_or(true, |hi| key < hi)
        };
        match node {
            Node::Leaf(entries) => {
                if depth_remaining != 0 {
                    return fail("leaf above leaf depth".into());
                }
                for w in entries.windows(2) {
                    if w[0].key >= w[1].key {
                        return fail(format!("leaf keys not strictly ascending at {:?}", w[1].key));
                    }
                }
                for e in &entries {
                    if !in_bounds(&e.key) {
                        return fail(format!("leaf key {:?} outside separator bounds", e.key));
                    }
                }
                Ok(())
            }
            Node::Inner { leftmost, entries } => {
                if depth_remaining == 0 {
                    return fail("inner node at leaf depth".into());
                }
                for w in entries.windows(2) {
                    if w[0].key >= w[1].key {
                        return fail("separators not strictly ascending".into());
                    }
                }
                for e in &entries {
                    if !in_bounds(&e.key) {
                        return fail(format!("separator {:?} outside bounds", e.key));
                    }
                }
                let first_upper = entries.first().map(|e| e.key.as_slice()).or(upper);
                self.check_rec(engine, leftmost, depth_remaining - 1, lower, first_upper)?;
                for (i, e) in entries.iter().enumerate() {
                    let next_upper = entries.get(i + 1).map(|n| n.key.as_slice()).or(upper);
                    self.check_rec(
                        engine,
                        e.child,
                        depth_remaining - 1,
                        Some(e.key.as_slice()),
                        next_upper,
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// Child that routes `key`: the rightmost entry with `entry.key <= key`,
/// else the leftmost child.
fn route(entries: &[InnerEntry], leftmost: PageId, key: &[u8]) -> PageId {
    let idx = entries.partition_point(|e| e.key.as_slice() <= key);
    if idx == 0 {
        leftmost
    } else {
        entries[idx - 1].child
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::PoolConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn engine() -> Engine {
        Engine::new(PoolConfig {
            page_size: 1024,
            dram_frames: 4,
            nvm_slots: 64,
            ssd_pages: 256,
            cache_capacity_lines: 256,
            ..PoolConfig::default()
        })
        .unwrap()
    }

    fn tree() -> BTree {
        BTree {
            max_key: 32,
            max_value: 64,
        }
    }

    #[test]
    fn insert_into_empty_tree() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let txn = eng.begin_txn().unwrap();
        bt.insert(&mut eng, txn, b"hello", b"world").unwrap();
        eng.commit_txn(txn).unwrap();
        assert_eq!(bt.lookup(&mut eng, b"hello").unwrap(), Some(b"world".to_vec()));
        assert_eq!(bt.lookup(&mut eng, b"absent").unwrap(), None);
        bt.check_invariants(&mut eng).unwrap();
    }

    #[test]
    fn duplicate_insert_replaces_value() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let txn = eng.begin_txn().unwrap();
        bt.insert(&mut eng, txn, b"k", b"v1").unwrap();
        bt.insert(&mut eng, txn, b"k", b"v2").unwrap();
        eng.commit_txn(txn).unwrap();
        assert_eq!(bt.lookup(&mut eng, b"k").unwrap(), Some(b"v2".to_vec()));
        assert_eq!(bt.scan(&mut eng).unwrap().len(), 1);
    }

    #[test]
    fn splits_preserve_all_keys() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let txn = eng.begin_txn().unwrap();
        // Enough entries to force several leaf splits and a root split.
        for i in 0..200u32 {
            let key = format!("key{:05}", (i * 37) % 1000);
            let value = format!("value-{i:04}");
            bt.insert(&mut eng, txn, key.as_bytes(), value.as_bytes()).unwrap();
        }
        eng.commit_txn(txn).unwrap();
        bt.check_invariants(&mut eng).unwrap();
        let (_, height, _) = bt.read_meta(&mut eng).unwrap();
        assert!(height >= 2, "workload forced at least one root split");
        for i in 0..200u32 {
            let key = format!("key{:05}", (i * 37) % 1000);
            assert!(bt.lookup(&mut eng, key.as_bytes()).unwrap().is_some(), "{key} lost");
        }
        assert_eq!(eng.pool.pinned_total(), 0);
    }

    #[test]
    fn delete_absent_logs_nothing() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let txn = eng.begin_txn().unwrap();
        let records = eng.log.record_count();
        assert!(!bt.delete(&mut eng, txn, b"nothing").unwrap());
        assert_eq!(eng.log.record_count(), records);
        eng.commit_txn(txn).unwrap();
    }

    #[test]
    fn random_ops_match_model() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..40 {
            let txn = eng.begin_txn().unwrap();
            for _ in 0..10 {
                let key = format!("k{:04}", rng.gen_range(0..300u32)).into_bytes();
                match rng.gen_range(0..10) {
                    0..=5 => {
                        let value: Vec<u8> =
                            (0..rng.gen_range(1..40)).map(|_| rng.gen()).collect();
                        bt.insert(&mut eng, txn, &key, &value).unwrap();
                        model.insert(key, value);
                    }
                    6..=7 => {
                        let existed = bt.delete(&mut eng, txn, &key).unwrap();
                        assert_eq!(existed, model.remove(&key).is_some(), "round {round}");
                    }
                    _ => {
                        assert_eq!(
                            bt.lookup(&mut eng, &key).unwrap(),
                            model.get(&key).cloned(),
                            "round {round}"
                        );
                    }
                }
            }
            eng.commit_txn(txn).unwrap();
        }
        let scanned = bt.scan(&mut eng).unwrap();
        let expected: Vec<_> = model.into_iter().collect();
        assert_eq!(scanned, expected);
        bt.check_invariants(&mut eng).unwrap();
        assert_eq!(eng.pool.pinned_total(), 0);
    }

    #[test]
    fn node_roundtrip_is_canonical() {
        let content = vec![0u8; 500];
        let node = Node::Leaf(vec![
            LeafEntry { key: b"a".to_vec(), value: b"1".to_vec() },
            LeafEntry { key: b"b".to_vec(), value: b"22".to_vec() },
        ]);
        let ser = serialize_node(&node, &content).unwrap();
        assert_eq!(parse_node(&ser, PageType::BtreeLeaf as u8).unwrap(), node);
        let reser = serialize_node(&node, &ser).unwrap();
        assert_eq!(ser, reser, "serialization is a fixed point");

        let inner = Node::Inner {
            leftmost: PageId(3),
            entries: vec![
                InnerEntry { key: b"m".to_vec(), child: PageId(4) },
                InnerEntry { key: b"t".to_vec(), child: PageId(5) },
            ],
        };
        let ser = serialize_node(&inner, &content).unwrap();
        assert_eq!(parse_node(&ser, PageType::BtreeInner as u8).unwrap(), inner);
    }

    #[test]
    fn oversized_keys_and_values_rejected() {
        let mut eng = engine();
        let bt = tree();
        bt.create(&mut eng).unwrap();
        let txn = eng.begin_txn().unwrap();
        assert!(matches!(
            bt.insert(&mut eng, txn, &[7u8; 33], b"v"),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            bt.insert(&mut eng, txn, b"k", &[7u8; 65]),
            Err(Error::Size(_))
        ));
        eng.commit_txn(txn).unwrap();
    }
}
