//! Checksums: CRC-64/ECMA-182 for page images, CRC-32 (IEEE) for log records.
//!
//! The CRC-64 variant is the one with polynomial 0x42F0E1EBA9EA3693, zero
//! initial value, no bit reflection and zero final xor. Both implementations
//! are table-driven; the tables are built at compile time so the values are
//! identical on every platform.

const CRC64_POLY: u64 = 0x42F0_E1EB_A9EA_3693;

const fn build_crc64_table() -> [u64; 256] {
    let mut table = [0u64; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u64) << 56;
        let mut bit = 0;
        while bit < 8 {
            if crc & (1 << 63) != 0 {
                crc = (crc << 1) ^ CRC64_POLY;
            } else {
                crc <<= 1;
            }
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// Slicing-by-8 tables: `CRC64_TABLES[k][i]` is byte `i`'s contribution
/// when it sits `k` positions before the end of an 8-byte group.
const fn build_crc64_tables() -> [[u64; 256]; 8] {
    let base = build_crc64_table();
    let mut tables = [[0u64; 256]; 8];
    tables[0] = base;
    let mut k = 1;
    while k < 8 {
        let mut i = 0;
        while i < 256 {
            let prev = tables[k - 1][i];
            tables[k][i] = (prev << 8) ^ base[(prev >> 56) as usize];
            i += 1;
        }
        k += 1;
    }
    tables
}

static CRC64_TABLES: [[u64; 256]; 8] = build_crc64_tables();

/// CRC-64/ECMA-182 of `bytes`. Deterministic and pure.
pub fn compute_checksum(bytes: &[u8]) -> u64 {
    let mut crc = Crc64Stream::new();
    crc.update(bytes);
    crc.finish()
}

/// Incremental CRC-64 over several slices, used to checksum a page image
/// with its checksum field treated as zero without copying the page.
pub struct Crc64Stream {
    crc: u64,
}

impl Crc64Stream {
    pub fn new() -> Crc64Stream {
        Crc64Stream { crc: 0 }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let mut crc = self.crc;
        let mut chunks = bytes.chunks_exact(8);
        for chunk in &mut chunks {
            let x = crc ^ u64::from_be_bytes(chunk.try_into().unwrap());
            crc = CRC64_TABLES[7][(x >> 56) as usize]
                ^ CRC64_TABLES[6][(x >> 48) as usize & 0xFF]
                ^ CRC64_TABLES[5][(x >> 40) as usize & 0xFF]
                ^ CRC64_TABLES[4][(x >> 32) as usize & 0xFF]
                ^ CRC64_TABLES[3][(x >> 24) as usize & 0xFF]
                ^ CRC64_TABLES[2][(x >> 16) as usize & 0xFF]
                ^ CRC64_TABLES[1][(x >> 8) as usize & 0xFF]
                ^ CRC64_TABLES[0][x as usize & 0xFF];
        }
        for &b in chunks.remainder() {
            let idx = ((crc >> 56) as u8 ^ b) as usize;
            crc = (crc << 8) ^ CRC64_TABLES[0][idx];
        }
        self.crc = crc;
    }

    pub fn finish(&self) -> u64 {
        self.crc
    }
}

impl Default for Crc64Stream {
    fn default() -> Self {
        Crc64Stream::new()
    }
}

const CRC32_POLY_REFLECTED: u32 = 0xEDB8_8320;

const fn build_crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            if crc & 1 != 0 {
                crc = (crc >> 1) ^ CRC32_POLY_REFLECTED;
            } else {
                crc >>= 1;
            }
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC32_TABLE: [u32; 256] = build_crc32_table();

/// CRC-32 (IEEE 802.3) of `bytes`, used as the per-record trailer in the log.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        let idx = ((crc ^ b as u32) & 0xFF) as usize;
        crc = (crc >> 8) ^ CRC32_TABLE[idx];
    }
    crc ^ 0xFFFF_FFFF
}
