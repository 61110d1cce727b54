//! Byte-for-byte stability of the page image and log record encodings.
//!
//! The golden files live in `tests/golden/`. Regenerate them after an
//! intentional format change with:
//!
//! ```text
//! GOLDEN_REGEN=1 cargo test -p pmbuf --test golden
//! ```

use pmbuf::page::{ChecksumPolicy, Lsn, Page, PageId, PageType};
use pmbuf::wal::{LogDevice, RecordBody};
use std::path::PathBuf;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check_or_regen(name: &str, bytes: &[u8]) {
    let path = golden_path(name);
    if std::env::var_os("GOLDEN_REGEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let golden = std::fs::read(&path)
        .unwrap_or_else(|_| panic!("missing golden file {name}; run with GOLDEN_REGEN=1"));
    assert_eq!(
        golden, bytes,
        "{name}: encoding drifted from the golden image"
    );
}

/// Sealed 4 KiB page in whole-page checksum mode with one applied delta.
fn sample_page_whole() -> Page {
    let policy = ChecksumPolicy::EveryUpdate;
    let mut page = Page::formatted(4096, PageId(7), PageType::BtreeLeaf, policy).unwrap();
    let mut counter = 0;
    page.apply_delta(32, &[0xAB, 0xCD], Lsn(10), policy, &mut counter)
        .unwrap();
    page
}

/// Sealed 4 KiB page with four fragment checksums and a delta in fragment 2.
fn sample_page_fragments() -> Page {
    let policy = ChecksumPolicy::PerFragment(4);
    let mut page = Page::formatted(4096, PageId(9), PageType::BtreeInner, policy).unwrap();
    let mut counter = 0;
    let layout = page.layout().unwrap();
    let off = layout.content_start + 2 * layout.fragment_len + 17;
    page.apply_delta(off, b"fragment-two-bytes", Lsn(42), policy, &mut counter)
        .unwrap();
    page
}

/// Log with three records: a page format, an update and a commit.
fn sample_log() -> LogDevice {
    let mut log = LogDevice::new();
    log.append(RecordBody::page_format(1, PageId(1), PageType::BtreeLeaf as u8, 1))
        .unwrap();
    log.append(RecordBody::update(
        1,
        PageId(1),
        40,
        vec![0, 0, 0, 0],
        b"abcd".to_vec(),
    ))
    .unwrap();
    log.append(RecordBody::commit(1)).unwrap();
    log.flush_all().unwrap();
    log
}

#[test]
fn page_image_whole_page_mode_is_stable() {
    check_or_regen("page_whole.bin", sample_page_whole().bytes());
}

#[test]
fn page_image_fragment_mode_is_stable() {
    check_or_regen("page_fragments.bin", sample_page_fragments().bytes());
}

#[test]
fn log_record_encoding_is_stable() {
    check_or_regen("log_three_records.bin", sample_log().durable_bytes());
}

#[test]
fn golden_page_still_verifies_and_decodes() {
    let bytes = std::fs::read(golden_path("page_whole.bin"));
    let Ok(bytes) = bytes else { return }; // regen run
    let page = Page::from_bytes(bytes).unwrap();
    assert!(page.verify(ChecksumPolicy::EveryUpdate));
    assert_eq!(page.page_id(), PageId(7));
    assert_eq!(page.page_lsn(), Lsn(10));
    assert_eq!(&page.bytes()[32..34], &[0xAB, 0xCD]);
}

#[test]
fn golden_log_still_recovers_and_analyzes() {
    let bytes = std::fs::read(golden_path("log_three_records.bin"));
    let Ok(bytes) = bytes else { return }; // regen run
    let log = LogDevice::from_bytes(bytes).unwrap();
    assert_eq!(log.record_count(), 3);
    let analysis = log.analyze();
    assert!(analysis.committed.contains(&1));
    assert_eq!(analysis.expected_lsn.len(), 1);
}
