mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use rand::Rng;
use rtdw_core::model::SurrogateKey;
use rtdw_core::storage::{Epoch, FactRow, Snapshot, StorageError, Stores, Warehouse, WarehouseConfig};
use rtdw_core::{Fixed, SimClock};

fn visible(s: &Snapshot, stores: Stores) -> Vec<FactRow> {
    let mut rows: Vec<FactRow> = s.table("bookings").unwrap().rows(stores).cloned().collect();
    rows.sort();
    rows
}

fn marked(batch: i64, i: i64) -> FactRow {
    FactRow::new(
        vec![SurrogateKey(1), SurrogateKey(1)],
        vec![Fixed::from_int(batch), Fixed::from_int(i), Fixed::ZERO],
        batch,
    )
}

#[test]
fn empty_load_is_noop_and_empty_flip_is_not() {
    let (wh, _) = common::warehouse(WarehouseConfig::default());
    let e = wh.epoch();
    assert_eq!(wh.load_batch_segment("bookings", vec![]).unwrap(), None);
    assert_eq!(wh.epoch(), e);
    wh.open_staging_cycle("bookings").unwrap();
    let r = wh.flip("bookings").unwrap();
    assert_eq!((r.rows_moved, r.segment), (0, None));
    assert_eq!(r.epoch, e.next());
    assert!(matches!(wh.flip("checkins"), Err(StorageError::NoActiveStagingCycle(_))));
}

#[test]
fn snapshot_sees_a_fixed_prefix() {
    let (wh, clock) = common::warehouse(WarehouseConfig::default());
    let mut rng = common::rng(3);
    common::populate(&wh, &clock, &mut rng, 200, 100);
    let snap = wh.open_snapshot();
    let before = visible(&snap, Stores::ALL);
    for _ in 0..50 {
        wh.trickle_insert("bookings", common::booking(&mut rng, 5)).unwrap();
    }
    wh.consolidate("bookings", 1000).unwrap();
    assert_eq!(visible(&snap, Stores::ALL), before);
    assert_eq!(visible(&wh.open_snapshot(), Stores::ALL).len(), before.len() + 50);
    let moved = snap.clone();
    let n = thread::spawn(move || moved.table("bookings").unwrap().len(Stores::ALL)).join().unwrap();
    assert_eq!(n, before.len());
}

#[test]
fn flips_are_atomic_to_concurrent_readers() {
    const FLIPS: i64 = 400;
    const BATCH: i64 = 7;
    let (wh, _) = common::warehouse(WarehouseConfig::default());
    wh.open_staging_cycle("bookings").unwrap();
    let done = Arc::new(AtomicBool::new(false));
    let observed = Arc::new(AtomicU64::new(0));
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let (wh, done, observed) = (wh.clone(), done.clone(), observed.clone());
            thread::spawn(move || {
                let mut checked = 0u64;
                while !done.load(Ordering::Acquire) {
                    let s = wh.admit(0).snapshot;
                    let mut per_batch: HashMap<i64, i64> = HashMap::new();
                    for r in s.table("bookings").unwrap().rows(Stores::ALL) {
                        *per_batch.entry(r.event_time).or_default() += 1;
                    }
                    for (b, n) in per_batch {
                        assert_eq!(n, BATCH, "batch {b} partially visible");
                    }
                    checked += 1;
                    observed.fetch_add(1, Ordering::Relaxed);
                }
                checked
            })
        })
        .collect();
    // on a single core the flips could otherwise finish before any reader runs
    while observed.load(Ordering::Relaxed) == 0 {
        thread::yield_now();
    }
    for b in 0..FLIPS {
        for i in 0..BATCH {
            wh.stage_insert("bookings", marked(b, i)).unwrap();
        }
        assert_eq!(wh.flip("bookings").unwrap().rows_moved, BATCH as usize);
        thread::yield_now();
    }
    done.store(true, Ordering::Release);
    let checked: u64 = readers.into_iter().map(|h| h.join().unwrap()).sum();
    assert!(checked > 0);
    assert_eq!(wh.open_snapshot().table("bookings").unwrap().len(Stores::ALL), (FLIPS * BATCH) as usize);
}

#[test]
fn cache_bound_under_concurrent_insert_and_drain() {
    let (wh, _) = common::warehouse(WarehouseConfig::default().with_cache("bookings", 64));
    let stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let (wh, stop) = (wh.clone(), stop.clone());
        thread::spawn(move || {
            let mut rng = common::rng(9);
            let (mut ok, mut overflow) = (0, 0);
            for _ in 0..5_000 {
                match wh.cache_insert("bookings", common::booking(&mut rng, 1)) {
                    Ok(_) => ok += 1,
                    Err(StorageError::CacheOverflow { .. }) => overflow += 1,
                    Err(e) => panic!("{e}"),
                }
            }
            stop.store(true, Ordering::Release);
            (ok, overflow)
        })
    };
    let drainer = {
        let wh = wh.clone();
        thread::spawn(move || {
            let mut drained = 0;
            while !stop.load(Ordering::Acquire) {
                drained += wh.migrate_cache("bookings", i64::MAX).unwrap().map_or(0, |_| 1);
                assert!(wh.cache_used("bookings") <= 64);
            }
            drained
        })
    };
    let lease_holder = {
        let wh = wh.clone();
        thread::spawn(move || {
            for _ in 0..2_000 {
                if let Ok(lease) = wh.reserve_cache_scratch("bookings", 8) {
                    assert!(wh.cache_used("bookings") <= 64);
                    drop(lease);
                }
            }
        })
    };
    let (ok, overflow) = writer.join().unwrap();
    drainer.join().unwrap();
    lease_holder.join().unwrap();
    assert_eq!(ok + overflow, 5_000);
    wh.migrate_cache("bookings", i64::MAX).unwrap();
    assert_eq!(wh.open_snapshot().table("bookings").unwrap().len(Stores::ALL), ok);
    assert_eq!(wh.cache_used("bookings"), 0);
}

#[test]
fn retention_drops_whole_segments_only() {
    let (wh, clock) = common::warehouse(WarehouseConfig::default().with_ticks_per_day(10));
    // duration 30 days = 300 ticks
    let seg = |t0: i64, t1: i64| {
        vec![common::booking(&mut common::rng(t0 as u64), t0), common::booking(&mut common::rng(1), t1)]
    };
    wh.load_batch_segment("bookings", seg(0, 50)).unwrap();
    wh.load_batch_segment("bookings", seg(90, 200)).unwrap();
    wh.load_batch_segment("bookings", seg(400, 410)).unwrap();
    clock.set(410);
    assert_eq!(wh.enforce_retention("bookings", 410).unwrap(), 2);
    let e = wh.epoch();
    assert_eq!(wh.enforce_retention("bookings", 410).unwrap(), 0);
    assert_eq!(wh.epoch(), e);
    let s = wh.open_snapshot();
    let t = s.table("bookings").unwrap();
    assert_eq!(t.segments().len(), 2);
    assert_eq!(t.historical_len(), 4);
}

#[test]
fn wal_replay_after_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wh.log");
    let cfg = || WarehouseConfig::default().with_cache("bookings", 50).with_wal(&path);
    let (wh, clock) = common::warehouse(cfg());
    let mut rng = common::rng(11);
    common::populate(&wh, &clock, &mut rng, 60, 40);
    let keep_epoch = wh.epoch();
    let keep = visible(&wh.open_snapshot(), Stores::ALL);
    wh.trickle_insert("bookings", common::booking(&mut rng, 3)).unwrap();
    drop(wh);
    let len = std::fs::metadata(&path).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(len - 3).unwrap();
    drop(f);

    let back = Warehouse::new(common::schema(), cfg(), Arc::new(SimClock::new(0))).unwrap();
    assert_eq!(back.epoch(), keep_epoch);
    assert_eq!(visible(&back.open_snapshot(), Stores::ALL), keep);
    back.trickle_insert("bookings", common::booking(&mut rng, 4)).unwrap();
    drop(back);
    let again = Warehouse::new(common::schema(), cfg(), Arc::new(SimClock::new(0))).unwrap();
    assert_eq!(again.epoch(), keep_epoch.next());
}

#[derive(Debug, Clone)]
enum Op {
    Batch(u8),
    Trickle,
    Stage(u8),
    Flip,
    Cache,
    Drain,
    Consolidate(i64),
    Retention,
    Member(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..6).prop_map(Op::Batch),
        Just(Op::Trickle),
        (0u8..4).prop_map(Op::Stage),
        Just(Op::Flip),
        Just(Op::Cache),
        Just(Op::Drain),
        (0i64..200).prop_map(Op::Consolidate),
        Just(Op::Retention),
        (0u8..6).prop_map(Op::Member),
    ]
}

fn apply(wh: &Warehouse, clock: &SimClock, rng: &mut impl Rng, ops: &[Op]) {
    wh.open_staging_cycle("bookings").unwrap();
    for (i, o) in ops.iter().enumerate() {
        let t = i as i64 * 7;
        clock.set(t);
        match o {
            Op::Batch(n) => {
                let rows = (0..*n)
                    .map(|_| {
                        let et = rng.gen_range(0..t + 1);
                        common::booking(rng, et)
                    })
                    .collect();
                wh.load_batch_segment("bookings", rows).unwrap();
            }
            Op::Trickle => {
                wh.trickle_insert("bookings", common::booking(rng, t)).unwrap();
            }
            Op::Stage(n) => {
                for _ in 0..*n {
                    wh.stage_insert("bookings", common::booking(rng, t)).unwrap();
                }
            }
            Op::Flip => {
                wh.flip("bookings").unwrap();
            }
            Op::Cache => match wh.cache_insert("bookings", common::booking(rng, t)) {
                Ok(_) | Err(StorageError::CacheOverflow { .. }) => {}
                Err(e) => panic!("{e}"),
            },
            Op::Drain => {
                wh.migrate_cache("bookings", t - 10).unwrap();
            }
            Op::Consolidate(b) => {
                wh.consolidate("bookings", *b).unwrap();
            }
            Op::Retention => {
                wh.enforce_retention("bookings", t * 1000).unwrap();
            }
            Op::Member(k) => {
                wh.upsert_member(
                    "flight",
                    rtdw_core::Value::text(format!("PK{k}")),
                    vec![("origin".into(), rtdw_core::Value::text("GIL"))],
                    t,
                )
                .unwrap();
            }
        }
    }
}

fn state(wh: &Warehouse) -> (Epoch, [Vec<FactRow>; 3], usize) {
    let s = wh.open_snapshot();
    (
        s.epoch(),
        [
            visible(&s, Stores::HISTORICAL),
            visible(&s, Stores::REALTIME_SIDE),
            visible(&s, Stores { historical: false, realtime: false, cache: true }),
        ],
        s.dimension("flight").unwrap().len(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_reproduces_epochs_and_rows(ops in prop::collection::vec(op(), 1..60), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wh.log");
        let cfg = || WarehouseConfig::default().with_cache("bookings", 5).with_wal(&path).with_ticks_per_day(1);
        let (wh, clock) = common::warehouse(cfg());
        apply(&wh, &clock, &mut common::rng(seed), &ops);
        let live = state(&wh);
        drop(wh);
        let back = Warehouse::new(common::schema(), cfg(), Arc::new(SimClock::new(0))).unwrap();
        prop_assert_eq!(state(&back), live);
    }

    #[test]
    fn consolidate_preserves_visible_rows(n in 1usize..300, bound in -10i64..120, seed in any::<u64>()) {
        let (wh, clock) = common::warehouse(WarehouseConfig::default().with_cache("bookings", 40));
        common::populate(&wh, &clock, &mut common::rng(seed), n, 100);
        let before = visible(&wh.open_snapshot(), Stores::ALL);
        let gen_before = wh.open_snapshot().table("bookings").unwrap().hist_generation();
        let e = wh.epoch();
        let seg = wh.consolidate("bookings", bound).unwrap();
        let s = wh.open_snapshot();
        prop_assert_eq!(visible(&s, Stores::ALL), before);
        prop_assert_eq!(seg.is_some(), s.epoch() > e);
        prop_assert!(s.table("bookings").unwrap().hist_generation() >= gen_before);
        prop_assert!(s.table("bookings").unwrap().rows(Stores::REALTIME_SIDE).all(|r| r.event_time >= bound));
    }

    #[test]
    fn flip_extends_by_exactly_the_staged_batch(pre in 0usize..50, staged in 0usize..30, seed in any::<u64>()) {
        let (wh, clock) = common::warehouse(WarehouseConfig::default());
        let mut rng = common::rng(seed);
        common::populate(&wh, &clock, &mut rng, pre, 50);
        wh.open_staging_cycle("bookings").unwrap();
        let mut batch: Vec<FactRow> = Vec::new();
        for _ in 0..staged {
            let r = common::booking(&mut rng, 60);
            wh.stage_insert("bookings", r).unwrap();
        }
        let before = visible(&wh.open_snapshot(), Stores::ALL);
        let report = wh.flip("bookings").unwrap();
        prop_assert_eq!(report.rows_moved, staged);
        let s = wh.open_snapshot();
        if let Some(id) = report.segment {
            let seg = s.table("bookings").unwrap().segments().iter().find(|x| x.id() == id).unwrap().clone();
            batch.extend(seg.rows().iter().cloned());
        }
        let mut expect = before;
        expect.extend(batch);
        expect.sort();
        prop_assert_eq!(visible(&s, Stores::ALL), expect);
    }

    #[test]
    fn epochs_strictly_increase(ops in prop::collection::vec(op(), 1..40), seed in any::<u64>()) {
        let (wh, clock) = common::warehouse(WarehouseConfig::default().with_cache("bookings", 5));
        let rx = wh.subscribe();
        apply(&wh, &clock, &mut common::rng(seed), &ops);
        let epochs: Vec<Epoch> = rx.try_iter().map(|n| n.epoch).collect();
        prop_assert!(epochs.windows(2).all(|w| w[0] < w[1]));
        if let Some(last) = epochs.last() {
            prop_assert_eq!(*last, wh.epoch());
        }
    }
}
