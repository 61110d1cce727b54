//! Cache-line-granular model of byte-addressable persistent memory.
//!
//! Writes land in a volatile shadow (the simulated CPU cache, keyed by line
//! index); lines are written back to the persistent image when the shadow is
//! over capacity, when the harness forces background write-back, or when the
//! pessimistic baseline flushes explicitly. A crash discards the shadow, so
//! whatever was not yet written back is lost. Reads always see the merged
//! view, like a CPU reading through its cache.
//!
//! Eviction picks uniformly among dirty lines with a seeded RNG, so whole
//! trials replay bit-for-bit from a seed.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub const DEFAULT_LINE_SIZE: usize = 64;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PmemCounters {
    pub writes: u64,
    pub reads: u64,
    pub evictions: u64,
    pub explicit_flushes: u64,
    pub fences: u64,
}

/// Snapshot of the persistent image at crash time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashImage {
    bytes: Vec<u8>,
}

impl CrashImage {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug)]
pub struct SimPmem {
    image: Vec<u8>,
    shadow: HashMap<usize, Vec<u8>>,
    /// Dirty line indices in insertion-then-swap order, for O(1) uniform
    /// victim selection; `dirty_pos` is its reverse index.
    dirty: Vec<usize>,
    dirty_pos: HashMap<usize, usize>,
    line_size: usize,
    cache_capacity_lines: usize,
    rng: ChaCha8Rng,
    pub counters: PmemCounters,
}

impl SimPmem {
    pub fn new(capacity: usize, cache_capacity_lines: usize, seed: u64) -> Result<SimPmem> {
        SimPmem::with_line_size(capacity, cache_capacity_lines, DEFAULT_LINE_SIZE, seed)
    }

    pub fn with_line_size(
        capacity: usize,
        cache_capacity_lines: usize,
        line_size: usize,
        seed: u64,
    ) -> Result<SimPmem> {
        if line_size == 0 || capacity % line_size != 0 {
            return Err(Error::Config(format!(
                "capacity {capacity} is not a multiple of line size {line_size}"
            )));
        }
        if cache_capacity_lines == 0 {
            return Err(Error::Config("cache capacity must be at least one line".into()));
        }
        Ok(SimPmem {
            image: vec![0u8; capacity],
            shadow: HashMap::new(),
            dirty: Vec::new(),
            dirty_pos: HashMap::new(),
            line_size,
            cache_capacity_lines,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: PmemCounters::default(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.image.len()
    }

    pub fn line_size(&self) -> usize {
        self.line_size
    }

    pub fn dirty_lines(&self) -> usize {
        self.shadow.len()
    }

    fn check_bounds(&self, addr: usize, len: usize) -> Result<()> {
        if addr + len > self.image.len() {
            return Err(Error::Bounds(format!(
                "pmem access [{addr}, {}) past capacity {}",
                addr + len,
                self.image.len()
            )));
        }
        Ok(())
    }

    fn line_span(&self, addr: usize, len: usize) -> std::ops::Range<usize> {
        if len == 0 {
            return 0..0;
        }
        addr / self.line_size..(addr + len - 1) / self.line_size + 1
    }

    /// Write back one randomly chosen dirty line.
    fn evict_one(&mut self) {
        debug_assert!(!self.dirty.is_empty());
        let pick = self.rng.gen_range(0..self.dirty.len());
        let line = self.dirty[pick];
        self.write_back(line);
        self.counters.evictions += 1;
    }

    fn write_back(&mut self, line: usize) {
        if let Some(content) = self.shadow.remove(&line) {
            let start = line * self.line_size;
            self.image[start..start + self.line_size].copy_from_slice(&content);
            let pos = self.dirty_pos.remove(&line).expect("tracked dirty line");
            let last = self.dirty.pop().expect("nonempty dirty list");
            if last != line {
                self.dirty[pos] = last;
                self.dirty_pos.insert(last, pos);
            }
        }
    }

    /// Store bytes through the simulated cache. Touched lines are read-merged
    /// into the shadow on first touch; if the shadow would exceed capacity,
    /// random dirty lines are written back first.
    pub fn write(&mut self, addr: usize, bytes: &[u8]) -> Result<()> {
        self.check_bounds(addr, bytes.len())?;
        self.counters.writes += 1;
        for line in self.line_span(addr, bytes.len()) {
            if !self.shadow.contains_key(&line) {
                while self.shadow.len() >= self.cache_capacity_lines {
                    self.evict_one();
                }
                let start = line * self.line_size;
                let content = self.image[start..start + self.line_size].to_vec();
                self.shadow.insert(line, content);
                self.dirty_pos.insert(line, self.dirty.len());
                self.dirty.push(line);
            }
            let line_start = line * self.line_size;
            let line_end = line_start + self.line_size;
            let src_start = addr.max(line_start);
            let src_end = (addr + bytes.len()).min(line_end);
            let content = self.shadow.get_mut(&line).expect("just inserted");
            content[src_start - line_start..src_end - line_start]
                .copy_from_slice(&bytes[src_start - addr..src_end - addr]);
        }
        Ok(())
    }

    /// Read the merged view: persistent image overlaid by shadowed lines.
    pub fn read(&mut self, addr: usize, len: usize) -> Result<Vec<u8>> {
        self.check_bounds(addr, len)?;
        self.counters.reads += 1;
        let mut out = self.image[addr..addr + len].to_vec();
        for line in self.line_span(addr, len) {
            if let Some(content) = self.shadow.get(&line) {
                let line_start = line * self.line_size;
                let src_start = addr.max(line_start);
                let src_end = (addr + len).min(line_start + self.line_size);
                out[src_start - addr..src_end - addr]
                    .copy_from_slice(&content[src_start - line_start..src_end - line_start]);
            }
        }
        Ok(out)
    }

    /// Write back up to `n` randomly chosen dirty lines; models background
    /// cache write-back between workload steps. Returns lines evicted.
    pub fn evict_random(&mut self, n: usize) -> usize {
        let count = n.min(self.shadow.len());
        for _ in 0..count {
            self.evict_one();
        }
        count
    }

    /// Explicitly flush all lines covering the range (the pessimistic path).
    /// The flush counter increments per covered line, dirty or not.
    pub fn flush(&mut self, addr: usize, len: usize) -> Result<()> {
        self.check_bounds(addr, len)?;
        for line in self.line_span(addr, len) {
            self.counters.explicit_flushes += 1;
            self.write_back(line);
        }
        Ok(())
    }

    /// Ordering fence; only the counter matters to the simulation.
    pub fn fence(&mut self) {
        self.counters.fences += 1;
    }

    /// Discard the shadow and return the surviving persistent image. The
    /// device keeps that image, so it doubles as the post-crash NVM content.
    pub fn crash(&mut self) -> CrashImage {
        self.shadow.clear();
        self.dirty.clear();
        self.dirty_pos.clear();
        CrashImage {
            bytes: self.image.clone(),
        }
    }

    /// One crash image per subset of the region's dirty lines written back,
    /// each merged over the current persistent image. Test oracle; the region
    /// may cover at most 16 dirty lines.
    pub fn enumerate_crash_images(&self, addr: usize, len: usize) -> Result<Vec<CrashImage>> {
        self.check_bounds(addr, len)?;
        let span = self.line_span(addr, len);
        let mut dirty: Vec<usize> = self
            .dirty
            .iter()
            .copied()
            .filter(|l| span.contains(l))
            .collect();
        dirty.sort_unstable();
        if dirty.len() > 16 {
            return Err(Error::Capacity(format!(
                "{} dirty lines in region; enumeration supports at most 16",
                dirty.len()
            )));
        }
        let mut images = Vec::with_capacity(1 << dirty.len());
        for mask in 0u32..(1u32 << dirty.len()) {
            let mut bytes = self.image.clone();
            for (bit, &line) in dirty.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    let start = line * self.line_size;
                    bytes[start..start + self.line_size]
                        .copy_from_slice(&self.shadow[&line]);
                }
            }
            images.push(CrashImage { bytes });
        }
        Ok(images)
    }

    /// The persistent image as it stands (shadow excluded); raw device dump.
    pub fn image_bytes(&self) -> &[u8] {
        &self.image
    }

    /// Replace the persistent image, e.g. when reloading a device dump.
    pub fn load_image(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.image.len() {
            return Err(Error::Config(format!(
                "image length {} does not match device capacity {}",
                bytes.len(),
                self.image.len()
            )));
        }
        self.image.copy_from_slice(bytes);
        self.shadow.clear();
        self.dirty.clear();
        self.dirty_pos.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(capacity: usize, cache_lines: usize) -> SimPmem {
        SimPmem::new(capacity, cache_lines, 1234).unwrap()
    }

    #[test]
    fn unevicted_write_is_lost_on_crash() {
        let mut dev = device(4096, 16);
        dev.write(0, &[0xFF]).unwrap();
        let img = dev.crash();
        assert_eq!(img.bytes()[0], 0, "line never written back");
    }

    #[test]
    fn torn_write_spanning_two_lines() {
        let mut dev = device(4096, 16);
        let payload = vec![0xAB; 128];
        dev.write(0, &payload).unwrap();
        // Force line 0 out, keep line 1 cached.
        dev.flush(0, 64).unwrap();
        let img = dev.crash();
        assert_eq!(&img.bytes()[..64], &payload[..64], "line 0 persisted");
        assert_eq!(&img.bytes()[64..128], &[0u8; 64][..], "line 1 lost");
    }

    #[test]
    fn capacity_one_forces_deterministic_eviction() {
        let mut dev = device(4096, 1);
        dev.write(0, &[1]).unwrap();
        dev.write(64, &[2]).unwrap();
        // The only resident line (0) had to be written back to admit line 1.
        assert_eq!(dev.counters.evictions, 1);
        assert_eq!(dev.image_bytes()[0], 1);
        let img = dev.crash();
        assert_eq!(img.bytes()[0], 1);
        assert_eq!(img.bytes()[64], 0, "second line still cached at crash");
    }

    #[test]
    fn read_sees_cached_writes() {
        let mut dev = device(4096, 16);
        dev.write(10, &[7, 8, 9]).unwrap();
        assert_eq!(dev.read(10, 3).unwrap(), vec![7, 8, 9]);
        assert_eq!(dev.read(200, 2).unwrap(), vec![0, 0], "untouched region reads zero");
    }

    #[test]
    fn read_merges_evicted_and_shadowed_lines() {
        let mut dev = device(4096, 16);
        dev.write(0, &[0x11; 64]).unwrap();
        dev.write(64, &[0x22; 64]).unwrap();
        dev.flush(0, 64).unwrap();
        dev.write(0, &[0x33; 8]).unwrap(); // re-dirty the start of line 0

        // Hand-merged expectation: image holds 0x11s, shadow overlays the
        // first 8 bytes with 0x33 and all of line 1 with 0x22.
        let mut expected = vec![0x11u8; 128];
        expected[..8].fill(0x33);
        expected[64..].fill(0x22);
        assert_eq!(dev.read(0, 128).unwrap(), expected);
    }

    #[test]
    fn evict_random_drains_and_reports() {
        let mut dev = device(4096, 16);
        assert_eq!(dev.evict_random(5), 0, "empty shadow evicts nothing");
        dev.write(0, &[1]).unwrap();
        dev.write(64, &[2]).unwrap();
        dev.write(128, &[3]).unwrap();
        assert_eq!(dev.evict_random(10), 3);
        assert_eq!(dev.dirty_lines(), 0);
        assert_eq!(dev.counters.evictions, 3);
    }

    #[test]
    fn flush_makes_bytes_durable_and_counts_clean_lines() {
        let mut dev = device(4096, 16);
        dev.write(0, &[9; 10]).unwrap();
        dev.flush(0, 10).unwrap();
        assert_eq!(dev.counters.explicit_flushes, 1);
        // Clean region: counter still moves, image unchanged.
        let before = dev.image_bytes().to_vec();
        dev.flush(1024, 128).unwrap();
        assert_eq!(dev.counters.explicit_flushes, 3);
        assert_eq!(dev.image_bytes(), &before[..]);
        let img = dev.crash();
        assert_eq!(&img.bytes()[..10], &[9; 10]);
    }

    #[test]
    fn crash_after_full_flush_equals_logical_view() {
        let mut dev = device(4096, 64);
        dev.write(100, &[5; 300]).unwrap();
        let logical = dev.read(0, 4096).unwrap();
        dev.flush(0, 4096).unwrap();
        let img = dev.crash();
        assert_eq!(img.bytes(), &logical[..]);
    }

    #[test]
    fn crash_with_dirty_shadow_differs_exactly_on_dirty_lines() {
        let mut dev = device(4096, 64);
        dev.write(0, &[1; 64]).unwrap();
        dev.write(128, &[2; 64]).unwrap();
        let logical = dev.read(0, 4096).unwrap();
        let img = dev.crash();
        assert_ne!(&img.bytes()[..64], &logical[..64]);
        assert_ne!(&img.bytes()[128..192], &logical[128..192]);
        assert_eq!(&img.bytes()[192..], &logical[192..]);
        assert_eq!(&img.bytes()[64..128], &logical[64..128]);
    }

    #[test]
    fn seeded_runs_reproduce_evictions_and_crash_images() {
        let run = |seed| {
            let mut dev = SimPmem::new(4096, 4, seed).unwrap();
            for i in 0..32 {
                dev.write((i * 96) % 4000, &[i as u8; 32]).unwrap();
            }
            dev.evict_random(3);
            (dev.counters, dev.crash())
        };
        let (c1, img1) = run(77);
        let (c2, img2) = run(77);
        assert_eq!(c1, c2);
        assert_eq!(img1, img2);
        let (_, img3) = run(78);
        assert_ne!(img1, img3, "different seed, different eviction order");
    }

    #[test]
    fn enumerate_crash_images_yields_power_set() {
        let mut dev = device(4096, 16);
        assert_eq!(dev.enumerate_crash_images(0, 4096).unwrap().len(), 1);
        for i in 0..4 {
            dev.write(i * 64, &[0xA0 + i as u8; 64]).unwrap();
        }
        let images = dev.enumerate_crash_images(0, 4096).unwrap();
        assert_eq!(images.len(), 16);
        let mut distinct: Vec<&[u8]> = images.iter().map(|i| i.bytes()).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 16, "all contents differ from the image, so all images differ");
        // Clean lines agree with the persistent image in every enumeration.
        for img in &images {
            assert_eq!(&img.bytes()[256..], &dev.image_bytes()[256..]);
        }
    }

    #[test]
    fn enumerate_rejects_oversized_regions() {
        let mut dev = device(4096, 32);
        for i in 0..17 {
            dev.write(i * 64, &[1]).unwrap();
        }
        assert!(matches!(
            dev.enumerate_crash_images(0, 4096),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn logical_view_invariant_under_write_back() {
        let mut dev = device(4096, 32);
        for i in 0..16 {
            dev.write(i * 160 % 3800, &[i as u8; 40]).unwrap();
        }
        let before = dev.read(0, 4096).unwrap();
        dev.evict_random(5);
        dev.flush(0, 2048).unwrap();
        let after = dev.read(0, 4096).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn shadow_never_exceeds_capacity() {
        let mut dev = device(8192, 3);
        for i in 0..100 {
            dev.write((i * 64) % 8192, &[i as u8]).unwrap();
            assert!(dev.dirty_lines() <= 3);
        }
    }
}
