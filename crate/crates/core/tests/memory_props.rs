use bytecomposer_core::memory::{
    DialogLog, EdgeKind, Fault, MemoryTree, Role, SearchOrder, SessionStore, Stage, StoreError, StoredSession,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Op {
    parent: usize,
    stage: usize,
    backtrack: bool,
    dt: u64,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        (any::<usize>(), 0..Stage::ALL.len(), any::<bool>(), 0u64..50)
            .prop_map(|(parent, stage, backtrack, dt)| Op { parent, stage, backtrack, dt }),
        0..60,
    )
}

/// Applies ops, choosing the edge kind so the stage-order rule holds.
fn build(ops: &[Op]) -> MemoryTree {
    let mut tree = MemoryTree::new_at("root", 1_000);
    let mut t = 1_000;
    for op in ops {
        let parent = op.parent % tree.len();
        let stage = Stage::ALL[op.stage];
        let edge = if stage < tree.get(parent).unwrap().stage || op.backtrack {
            EdgeKind::Backtrack
        } else if stage == tree.get(parent).unwrap().stage {
            EdgeKind::Retry
        } else {
            EdgeKind::Advance
        };
        t += op.dt;
        tree.add_node_at(parent, stage, format!("n{}", tree.len()), None, edge, t).unwrap();
    }
    tree
}

proptest! {
    #[test]
    fn random_operations_keep_invariants(ops in ops()) {
        let tree = build(&ops);
        prop_assert_eq!(tree.check_invariants(), Ok(()));
        prop_assert_eq!(tree.len(), ops.len() + 1);
        let all = |_: &_| true;
        let mut bfs = tree.search(all, SearchOrder::Bfs);
        let mut dfs = tree.search(all, SearchOrder::Dfs);
        prop_assert_eq!(bfs[0], 0);
        prop_assert_eq!(dfs[0], 0);
        bfs.sort();
        dfs.sort();
        prop_assert_eq!(&bfs, &(0..tree.len()).collect::<Vec<_>>());
        prop_assert_eq!(bfs, dfs);
        for node in tree.nodes() {
            let path = tree.path_to(node.id);
            prop_assert_eq!(path[0], 0);
            prop_assert_eq!(*path.last().unwrap(), node.id);
            for w in path.windows(2) {
                prop_assert_eq!(tree.get(w[1]).unwrap().parent, Some(w[0]));
                prop_assert!(tree.get(w[0]).unwrap().created_at <= tree.get(w[1]).unwrap().created_at);
            }
        }
        for stage in Stage::ALL {
            match tree.backtrack_point(stage) {
                Ok(id) => {
                    prop_assert_eq!(tree.get(id).unwrap().stage, stage);
                    prop_assert!(tree.nodes().iter().filter(|n| n.stage == stage).all(|n| n.id <= id));
                }
                Err(_) => prop_assert!(tree.nodes().iter().all(|n| n.stage != stage)),
            }
        }
    }

    #[test]
    fn persistence_round_trips(ops in ops(), msgs in prop::collection::vec(".{0,40}", 0..8), state in any::<(u32, String)>()) {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        let mut dialog = DialogLog::new();
        for (i, m) in msgs.iter().enumerate() {
            let role = if i % 2 == 0 { Role::User } else { Role::Agent };
            dialog.push_at("s-1", role, m.clone(), 10 * i as u64);
        }
        let session = StoredSession { tree: build(&ops), dialog, state };
        store.save("s-1", &session).unwrap();
        let loaded: StoredSession<(u32, String)> = store.load("s-1").unwrap();
        prop_assert_eq!(&loaded, &session);
        prop_assert!(loaded.tree.same_shape(&session.tree));
    }
}

fn sample(n: usize) -> StoredSession<String> {
    let ops: Vec<Op> = (0..n)
        .map(|i| Op {
            parent: i * 7,
            stage: i % Stage::ALL.len(),
            backtrack: false,
            dt: 1,
        })
        .collect();
    StoredSession {
        tree: build(&ops),
        dialog: DialogLog::new(),
        state: format!("version {n}"),
    }
}

#[test]
fn interrupted_write_keeps_previous_version() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    let v1 = sample(3);
    store.save("abc", &v1).unwrap();
    let faulty = store.clone().with_fault(Fault::BeforeRename);
    assert!(matches!(faulty.save("abc", &sample(9)), Err(StoreError::IoFailure(_))));
    let loaded: StoredSession<String> = store.load("abc").unwrap();
    assert_eq!(loaded, v1);
}

#[test]
fn truncated_document_is_reported_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    store.save("abc", &sample(4)).unwrap();
    let path = store.session_dir("abc").unwrap().join("tree");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match store.load::<String>("abc") {
        Err(StoreError::CorruptSession { id, .. }) => assert_eq!(id, "abc"),
        other => panic!("expected corrupt session, got {other:?}"),
    }
}

#[test]
fn bad_and_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    assert!(matches!(store.load::<String>("../etc"), Err(StoreError::InvalidId(_))));
    assert!(matches!(store.load::<String>("nobody"), Err(StoreError::NotFound(_))));
    store.save("b", &sample(1)).unwrap();
    store.save("a", &sample(1)).unwrap();
    assert_eq!(store.list().unwrap(), vec!["a", "b"]);
}
