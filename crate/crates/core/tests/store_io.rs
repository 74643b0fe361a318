mod common;

use common::{pick_dataset, tree_hash};
use rosie_forge::store::{self, load_dataset, save_dataset, StoreError, ViolationKind};

#[test]
fn save_load_roundtrip_is_exact() {
    let (ds, _) = pick_dataset("coke can", 2, 4, 1);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.episodes.iter().zip(&ds.episodes) {
        for (x, y) in a.actions().zip(b.actions()) {
            assert!(x.bit_eq(y));
        }
    }
}

#[test]
fn saving_twice_gives_identical_bytes() {
    let (ds, _) = pick_dataset("pepsi can", 2, 3, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(&ds, a.path()).unwrap();
    save_dataset(&ds, b.path()).unwrap();
    assert_eq!(tree_hash(a.path()), tree_hash(b.path()));
    // Overwriting in place is also stable.
    save_dataset(&ds, a.path()).unwrap();
    assert_eq!(tree_hash(a.path()), tree_hash(b.path()));
}

#[test]
fn truncated_actions_name_the_episode() {
    let (ds, _) = pick_dataset("coke can", 1, 4, 3);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let id = &ds.episodes[0].id;
    let path = dir.path().join(format!("episodes/{id}/actions.json"));
    let mut actions: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    actions.pop();
    std::fs::write(&path, serde_json::to_string(&actions).unwrap()).unwrap();
    match load_dataset(dir.path()) {
        Err(StoreError::LengthMismatch { episode_id, actions, .. }) => {
            assert_eq!(&episode_id, id);
            assert_eq!(actions, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn null_action_fails_validation() {
    let (ds, _) = pick_dataset("coke can", 1, 3, 4);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let id = &ds.episodes[0].id;
    let path = dir.path().join(format!("episodes/{id}/actions.json"));
    let mut actions: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    actions[1][0] = serde_json::Value::Null;
    std::fs::write(&path, actions.to_string()).unwrap();
    match load_dataset(dir.path()) {
        Err(StoreError::Invalid(v)) => assert!(v.iter().any(|x| x.kind == ViolationKind::NonFiniteAction { frame: 1 })),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_frame_is_detected() {
    let (ds, _) = pick_dataset("coke can", 1, 3, 5);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let id = &ds.episodes[0].id;
    std::fs::remove_file(dir.path().join(format!("episodes/{id}/frames/{}", store::frame_file_name(2)))).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(StoreError::LengthMismatch { frames: 2, .. })));
}

#[test]
fn missing_manifest_and_wrong_version() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(StoreError::MissingManifest(_))));
    let (ds, _) = pick_dataset("coke can", 1, 2, 6);
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join(store::MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["version"] = 99.into();
    std::fs::write(&path, m.to_string()).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(StoreError::VersionMismatch { found: 99, .. })));
}

#[test]
fn invalid_dataset_writes_nothing() {
    let (mut ds, _) = pick_dataset("coke can", 1, 2, 7);
    ds.episodes[0].instruction = "  ".into();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out");
    assert!(matches!(save_dataset(&ds, &target), Err(StoreError::Invalid(_))));
    assert!(!target.exists());
}
