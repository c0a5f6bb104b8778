//! Session store: live state against offline recomputation, persistence,
//! and concurrency.

mod common;

use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IteratorRandom;
use rand::Rng;

use common::*;
use vhi_core::service::*;
use vhi_core::*;

fn open(dir: &std::path::Path, allow_erase: bool) -> SessionStore {
    SessionStore::open(dir, StoreOptions { allow_erase }).unwrap()
}

/// Everything observable about a session, for before/after comparisons.
fn snapshot(store: &SessionStore, id: &str) -> (LesionsResponse, VhiResponse, (BinaryMask, BinaryMask), Vec<segment::LogEntry>) {
    (
        store.lesions(id).unwrap(),
        store.vhi(id).unwrap(),
        store.with_session(id, |s| s.live_masks()).unwrap(),
        store.with_session(id, |s| s.entries().to_vec()).unwrap(),
    )
}

fn run_sequence(seed: u64) {
    let mut r = rng(seed);
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let extra = r.gen_range(0..6);
    let stir = multi_lesion_volume(&mut r, extra);
    let req = session_request(inputs.path(), &stir);

    let store = open(data.path(), true);
    let created = store.create(&req).unwrap();
    let id = created.session_id;
    let dir = store.session_dir(&id);
    let cand_sensitive: Vec<usize> =
        store.with_session(&id, |s| s.candidate().sensitive().true_indices().collect()).unwrap();
    let lesions = created.lesion_count as u32;
    assert!(lesions >= 2);

    let steps = r.gen_range(1..=25);
    for step in 0..steps {
        let before = store.vhi(&id).unwrap();
        match r.gen_range(0..10) {
            0..=5 => {
                let lesion_id = r.gen_range(1..=lesions + 1);
                let decision = if r.gen_bool(0.6) { Decision::Remove } else { Decision::Keep };
                let res = store.decide(&id, &DecisionRequest { lesion_id, decision, reader_id: None });
                if lesion_id > lesions {
                    let err = res.unwrap_err();
                    assert_eq!(err.status(), 404);
                    assert_eq!(store.vhi(&id).unwrap(), before);
                } else {
                    assert_eq!(res.unwrap().log_length, before.log_length + 1);
                }
            }
            6..=7 => {
                let k = r.gen_range(1..=4);
                let voxels: Vec<usize> = cand_sensitive.iter().copied().choose_multiple(&mut r, k);
                let res = store.erase(&id, &EraseRequest {
                    voxels,
                    reason: "joint space".into(),
                    reader_id: Some("reader-2".into()),
                });
                assert_eq!(res.unwrap().log_length, before.log_length + 1);
            }
            8 => {
                // Background voxel or missing reason: rejected, nothing logged.
                let bad = if r.gen_bool(0.5) {
                    EraseRequest { voxels: vec![0], reason: "x".into(), reader_id: None }
                } else {
                    EraseRequest { voxels: vec![cand_sensitive[0]], reason: " ".into(), reader_id: None }
                };
                assert_eq!(store.erase(&id, &bad).unwrap_err().status(), 422);
                assert_eq!(store.vhi(&id).unwrap(), before);
            }
            _ => {}
        }

        let live = store.vhi(&id).unwrap();
        let (s, c, offline, logged) = offline_result(&dir);
        assert_eq!(live.vhi, offline, "seed {seed} step {step}");
        assert_eq!(live.log_length, logged);
        let (ls, lc) = store.with_session(&id, |s| s.live_masks()).unwrap();
        assert!(ls == s && lc == c, "seed {seed} step {step}: live masks differ");
    }

    let finalize = r.gen_bool(0.5);
    if finalize {
        let bundle = store.finalize(&id).unwrap();
        let (s, c, m, _) = offline_result(&dir);
        assert_eq!(io::load_mask(&dir.join(FINAL_SENSITIVE_FILE)).unwrap(), s);
        assert_eq!(io::load_mask(&dir.join(FINAL_CONSERVATIVE_FILE)).unwrap(), c);
        assert_eq!(bundle.report["voxel_count_sensitive"], m.voxel_count_sensitive);
    }

    let before = snapshot(&store, &id);
    drop(store);
    let store = open(data.path(), true);
    let after = snapshot(&store, &id);
    assert!(before == after, "seed {seed}: replay differs");
    assert_eq!(before.1.vhi.volume_mm3_sensitive.to_bits(), after.1.vhi.volume_mm3_sensitive.to_bits());
    assert_eq!(store.with_session(&id, |s| s.is_finalized()).unwrap(), finalize);
}

#[test]
fn live_vhi_matches_offline_recomputation() {
    let start = Instant::now();
    for seed in 0..100 {
        run_sequence(seed);
    }
    assert!(start.elapsed() < Duration::from_secs(30), "{:?}", start.elapsed());
}

#[test]
fn removing_a_lesion_subtracts_its_voxels() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(0), 0);
    let store = open(data.path(), false);
    let created = store.create(&session_request(inputs.path(), &stir)).unwrap();
    let id = &created.session_id;
    assert_eq!(created.vhi.voxel_count_sensitive, 130);
    assert_eq!(created.vhi.voxel_count_conservative, 50);
    let lesions = store.lesions(id).unwrap().lesions;
    assert_eq!(lesions.iter().map(|l| l.voxel_count).collect::<Vec<_>>(), vec![100, 30]);

    let r = store.decide(id, &DecisionRequest { lesion_id: 2, decision: Decision::Remove, reader_id: None }).unwrap();
    assert_eq!(r.vhi.voxel_count_sensitive, 100);
    let r = store.decide(id, &DecisionRequest { lesion_id: 2, decision: Decision::Keep, reader_id: None }).unwrap();
    assert_eq!(r.vhi.voxel_count_sensitive, 130);
    let r = store.decide(id, &DecisionRequest { lesion_id: 1, decision: Decision::Remove, reader_id: None }).unwrap();
    assert_eq!((r.vhi.voxel_count_sensitive, r.vhi.voxel_count_conservative), (30, 0));
    let view = store.lesions(id).unwrap();
    assert_eq!(view.lesions[0].decision, Decision::Remove);
    assert!(view.lesions[1].decided);
    assert_eq!(view.lesions[1].decision, Decision::Keep);
}

#[test]
fn finalize_keep_all_and_remove_all() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(1), 3);
    let req = session_request(inputs.path(), &stir);
    let store = open(data.path(), false);

    let keep = store.create(&req).unwrap().session_id;
    store.finalize(&keep).unwrap();
    let dir = store.session_dir(&keep);
    assert_eq!(
        fs::read(dir.join(FINAL_SENSITIVE_FILE)).unwrap(),
        fs::read(dir.join(CANDIDATE_SENSITIVE_FILE)).unwrap()
    );
    assert_eq!(
        fs::read(dir.join(FINAL_CONSERVATIVE_FILE)).unwrap(),
        fs::read(dir.join(CANDIDATE_CONSERVATIVE_FILE)).unwrap()
    );

    let gone = store.create(&req).unwrap();
    for lesion_id in 1..=gone.lesion_count as u32 {
        store
            .decide(&gone.session_id, &DecisionRequest { lesion_id, decision: Decision::Remove, reader_id: None })
            .unwrap();
    }
    let bundle = store.finalize(&gone.session_id).unwrap();
    assert_eq!(bundle.report["voxel_count_sensitive"], 0);
    assert_eq!(bundle.report["volume_mm3_sensitive"].as_f64(), Some(0.0));
    assert!(io::load_mask(&store.session_dir(&gone.session_id).join(FINAL_SENSITIVE_FILE)).unwrap().is_empty());
}

#[test]
fn finalize_is_idempotent_and_freezes_the_session() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(2), 2);
    let store = open(data.path(), true);
    let id = store.create(&session_request(inputs.path(), &stir)).unwrap().session_id;
    store.decide(&id, &DecisionRequest { lesion_id: 1, decision: Decision::Remove, reader_id: None }).unwrap();
    let dir = store.session_dir(&id);

    let first = store.finalize(&id).unwrap();
    let files: Vec<Vec<u8>> = first.files.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect();
    let second = store.finalize(&id).unwrap();
    assert_eq!(first, second);
    let again: Vec<Vec<u8>> = second.files.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect();
    assert_eq!(files, again);

    let err = store.decide(&id, &DecisionRequest { lesion_id: 2, decision: Decision::Remove, reader_id: None });
    assert_eq!(err.unwrap_err().status(), 409);
    let err = store.erase(&id, &EraseRequest { voxels: vec![1], reason: "x".into(), reader_id: None });
    assert_eq!(err.unwrap_err().status(), 409);
    assert_eq!(store.vhi(&id).unwrap().log_length, 1);
    assert_eq!(fs::read_to_string(dir.join(DECISIONS_FILE)).unwrap().lines().count(), 1);

    drop(store);
    let store = open(data.path(), true);
    assert_eq!(store.finalize(&id).unwrap(), first);
}

#[test]
fn erase_is_refused_unless_enabled() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(3), 0);
    let store = open(data.path(), false);
    let id = store.create(&session_request(inputs.path(), &stir)).unwrap().session_id;
    let voxel = store.with_session(&id, |s| s.candidate().sensitive().true_indices().next().unwrap()).unwrap();
    let req = EraseRequest { voxels: vec![voxel], reason: "foramen".into(), reader_id: None };
    assert_eq!(store.erase(&id, &req).unwrap_err().status(), 403);
    assert_eq!(store.erase("nope", &req).unwrap_err().status(), 404);
    assert_eq!(store.vhi(&id).unwrap().log_length, 0);
}

#[test]
fn creation_validates_before_persisting() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(4), 0);
    let mut req = session_request(inputs.path(), &stir);
    let small = inputs.path().join("small.rle.json");
    io::save_mask(&small, &BinaryMask::full(Geometry::new([4, 4, 2], SPACING).unwrap())).unwrap();
    req.disease_mask = small;

    let store = open(data.path(), false);
    let err = store.create(&req).unwrap_err();
    assert_eq!((err.status(), err.kind()), (422, "geometry_mismatch"));

    let mut missing = session_request(inputs.path(), &stir);
    missing.stir = inputs.path().join("absent.nii");
    assert_eq!(store.create(&missing).unwrap_err().status(), 500);

    let mut both = session_request(inputs.path(), &stir);
    both.thresholds = None;
    assert_eq!(store.create(&both).unwrap_err().status(), 422);

    let visible: Vec<_> = fs::read_dir(data.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    assert!(visible.is_empty(), "{visible:?}");
    assert!(store.session_ids().is_empty());
}

#[test]
fn identical_requests_create_distinct_sessions() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(5), 1);
    let req = session_request(inputs.path(), &stir);
    let store = open(data.path(), false);
    let a = store.create(&req).unwrap();
    let b = store.create(&req).unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.vhi, b.vhi);
    assert_eq!(store.session_ids().len(), 2);
    let manifest = store.with_session(&a.session_id, |s| s.manifest().clone()).unwrap();
    assert_eq!(manifest.inputs["stir"].sha256, io::file_digest(&req.stir).unwrap());
    assert_eq!(manifest.status, SessionStatus::Open);
}

#[test]
fn normal_mask_thresholds_match_library() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let ph = phantom();
    let (stir, disease, normal) = write_phantom(inputs.path(), &ph);
    let req = CreateSessionRequest {
        stir: stir.clone(),
        t1w: Some(stir.clone()),
        disease_mask: disease,
        normal_mask: Some(normal.clone()),
        thresholds: None,
        reader_id: "r".into(),
        min_region_px: Some(4),
    };
    let store = open(data.path(), false);
    let created = store.create(&req).unwrap();
    let est = compute_thresholds(&io::load_volume(&stir).unwrap(), &io::load_mask(&normal).unwrap()).unwrap();
    assert_eq!(created.thresholds, est.thresholds);
    assert_eq!(created.vhi.voxel_count_sensitive, 500);
    assert_eq!(created.lesion_count, 1);
}

#[test]
fn concurrent_decisions_are_serialized() {
    let inputs = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let stir = multi_lesion_volume(&mut rng(6), 4);
    let store = Arc::new(open(data.path(), false));
    let created = store.create(&session_request(inputs.path(), &stir)).unwrap();
    let id = created.session_id.clone();
    let lesions = created.lesion_count as u32;

    let handles: Vec<_> = (0..8)
        .map(|t| {
            let (store, id) = (store.clone(), id.clone());
            std::thread::spawn(move || {
                let mut r = rng(100 + t);
                for _ in 0..20 {
                    let req = DecisionRequest {
                        lesion_id: r.gen_range(1..=lesions),
                        decision: if r.gen_bool(0.5) { Decision::Remove } else { Decision::Keep },
                        reader_id: Some(format!("reader-{t}")),
                    };
                    store.decide(&id, &req).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    let live = store.vhi(&id).unwrap();
    assert_eq!(live.log_length, 160);
    let (_, _, offline, logged) = offline_result(&store.session_dir(&id));
    assert_eq!((live.vhi, live.log_length), (offline, logged));

    let in_memory = store.with_session(&id, |s| s.entries().to_vec()).unwrap();
    let before = snapshot(&store, &id);
    drop(store);
    let store = open(data.path(), false);
    let after = snapshot(&store, &id);
    assert_eq!(after.3, in_memory);
    assert!(before == after);
}

#[test]
fn interrupted_creation_is_discarded_on_open() {
    let data = tempfile::tempdir().unwrap();
    let staging = data.path().join(".creating-deadbeef");
    fs::create_dir_all(&staging).unwrap();
    fs::write(staging.join(MANIFEST_FILE), "{").unwrap();
    let store = open(data.path(), false);
    assert!(store.session_ids().is_empty());
    assert!(!staging.exists());
}

#[test]
fn data_dir_admits_one_store() {
    let data = tempfile::tempdir().unwrap();
    let first = open(data.path(), false);
    let err = SessionStore::open(data.path(), StoreOptions::default()).err().unwrap();
    assert_eq!(err.status(), 503);
    drop(first);
    open(data.path(), false);
}
