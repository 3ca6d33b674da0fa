//! Round-trip, split and subset properties of the interaction store.

mod common;

use std::io::Cursor;

use common::random_tensor;
use matn::data::{behavior_subset, leave_one_out_split, read_interactions, EVAL_NEGATIVES};
use matn::numerics::Rng;
use matn::{BehaviorSchema, Error};
use proptest::prelude::*;

fn tensor_for(seed: u64) -> matn::InteractionTensor {
    random_tensor(8, 140, 3, 0.08, 1, &mut Rng::new(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tsv_round_trip_preserves_events_and_held_out(seed in any::<u64>()) {
        let t = tensor_for(seed);
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let back = read_interactions(Cursor::new(buf), t.schema()).unwrap();
        prop_assert_eq!(back.triples(), t.triples());
        prop_assert_eq!(back.num_events(), t.num_events());

        // Target order, which decides the held-out event, survives the rewrite.
        for u in 0..t.num_users() {
            let v = back.user_index(&t.user_ids()[u]).unwrap();
            let ids = |tensor: &matn::InteractionTensor, user: usize| -> Vec<String> {
                tensor.target_sequence(user).iter().map(|&j| tensor.item_ids()[j].clone()).collect()
            };
            prop_assert_eq!(ids(&t, u), ids(&back, v));
        }
    }

    #[test]
    fn split_conserves_events(seed in any::<u64>()) {
        let t = tensor_for(seed);
        let (train, split) = leave_one_out_split(&t, seed).unwrap();
        prop_assert_eq!(train.num_events() + split.num_evaluated(), t.num_events());
        for u in 0..t.num_users() {
            let held = usize::from(split.held_out[u].is_some());
            prop_assert_eq!(train.user_events(u) + held, t.user_events(u));
            if let Some(j) = split.held_out[u] {
                prop_assert!(t.contains(u, j, t.target()));
                prop_assert!(!train.contains(u, j, t.target()));
            }
        }
    }

    #[test]
    fn negatives_are_pure_and_distinct(seed in any::<u64>()) {
        let t = tensor_for(seed);
        let (_, split) = leave_one_out_split(&t, seed).unwrap();
        for u in split.evaluated_users() {
            let neg = &split.negatives[u];
            prop_assert_eq!(neg.len(), EVAL_NEGATIVES);
            let mut dedup = neg.clone();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), neg.len());
            for &j in neg {
                prop_assert!((0..t.num_behaviors()).all(|b| !t.contains(u, j, b)));
            }
        }
    }

    #[test]
    fn split_seed_affects_only_negatives(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let t = tensor_for(seed);
        let (train_a, split_a) = leave_one_out_split(&t, a).unwrap();
        let (train_a2, split_a2) = leave_one_out_split(&t, a).unwrap();
        let (train_b, split_b) = leave_one_out_split(&t, b).unwrap();
        prop_assert_eq!(split_a.to_json(), split_a2.to_json());
        prop_assert_eq!(&train_a, &train_a2);
        prop_assert_eq!(&split_a.held_out, &split_b.held_out);
        prop_assert_eq!(&train_a, &train_b);
    }

    #[test]
    fn subset_keeps_only_selected_behaviors(seed in any::<u64>()) {
        let t = tensor_for(seed);
        let identity = behavior_subset(&t, &[0, 1, 2]).unwrap();
        prop_assert_eq!(&identity, &t);
        let sub = behavior_subset(&t, &[1, 2]).unwrap();
        prop_assert_eq!(sub.num_behaviors(), 2);
        prop_assert_eq!(sub.target(), 1);
        for u in 0..t.num_users() {
            prop_assert_eq!(sub.items(u, 0), t.items(u, 1));
            prop_assert_eq!(sub.items(u, 1), t.items(u, 2));
        }
    }
}

#[test]
fn subset_without_target_is_rejected() {
    let t = tensor_for(3);
    assert!(matches!(behavior_subset(&t, &[0, 1]), Err(Error::InvalidAblation(_))));
    assert!(matches!(behavior_subset(&t, &[2, 7]), Err(Error::InvalidAblation(_))));
}

#[test]
fn loading_from_disk_matches_reader() {
    let schema = BehaviorSchema::from_labels(&["view", "buy"], "buy").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.tsv");
    std::fs::write(&path, "uA\ti1\tview\r\nuA\ti2\tbuy\n\nuB\ti1\tbuy\n").unwrap();
    let t = matn::data::load_interactions(&path, &schema).unwrap();
    assert_eq!(
        (t.num_users(), t.num_items(), t.num_behaviors(), t.num_events()),
        (2, 2, 2, 3)
    );
    let missing = matn::data::load_interactions(&dir.path().join("nope.tsv"), &schema);
    assert!(matches!(missing, Err(Error::Io { .. })));
}
