//! Crude phase timing for one trial-shaped run. Not part of the test suite.

use pmbuf::btree::BTree;
use pmbuf::engine::Engine;
use pmbuf_harness::config::TrialConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let cfg = TrialConfig::default();
    let t0 = Instant::now();
    let mut eng = Engine::new(cfg.pool_config()).unwrap();
    println!("build+format: {:?}", t0.elapsed());

    let bt = BTree::default();
    let t0 = Instant::now();
    bt.create(&mut eng).unwrap();
    println!("create: {:?}", t0.elapsed());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let mut i = 0u32;
    while i < cfg.preload_keys {
        let txn = eng.begin_txn().unwrap();
        for _ in 0..50 {
            if i >= cfg.preload_keys {
                break;
            }
            let k = format!("k{i:06}");
            let len = rng.gen_range(cfg.value_len_min..=cfg.value_len_max);
            let v: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            bt.insert(&mut eng, txn, k.as_bytes(), &v).unwrap();
            i += 1;
        }
        eng.commit_txn(txn).unwrap();
    }
    let d = t0.elapsed();
    println!(
        "preload {} keys: {:?}  ({:.1} us/insert)",
        cfg.preload_keys,
        d,
        d.as_micros() as f64 / cfg.preload_keys as f64
    );

    let t0 = Instant::now();
    eng.clean_to_quiescence().unwrap();
    eng.evict_cache_lines(usize::MAX);
    println!("quiesce: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let mut ops = 0;
    for op in 0..cfg.ops_before_crash {
        let txn = eng.begin_txn().unwrap();
        for _ in 0..4 {
            let k = format!("k{:06}", rng.gen_range(0..cfg.key_space));
            let v: Vec<u8> = (0..rng.gen_range(32..160)).map(|_| rng.gen()).collect();
            bt.insert(&mut eng, txn, k.as_bytes(), &v).unwrap();
            ops += 1;
        }
        eng.commit_txn(txn).unwrap();
        if op % 2 == 0 {
            eng.evict_cache_lines(8);
        }
        if op % 32 == 31 {
            eng.cleaner_step(2).unwrap();
        }
    }
    println!("measured {ops} ops: {:?}", t0.elapsed());

    let t0 = Instant::now();
    eng.crash();
    eng.restart(pmbuf::recovery::RestartMode::OnDemand).unwrap();
    let scanned = bt.scan(&mut eng).unwrap();
    println!("restart+scan ({} keys): {:?}", scanned.len(), t0.elapsed());
}
