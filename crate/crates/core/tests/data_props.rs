use std::collections::BTreeMap;

use proptest::prelude::*;

use multidex::dataio::{kcore_filter, leave_one_out_split, load_interactions, InteractionDataset};

fn records() -> impl Strategy<Value = Vec<(u8, u8, i64)>> {
    prop::collection::vec((0u8..12, 0u8..15, 0i64..50), 0..150)
}

fn dataset(recs: &[(u8, u8, i64)]) -> InteractionDataset {
    InteractionDataset::from_records(recs.iter().map(|&(u, i, t)| (format!("u{u}"), format!("i{i}"), t)))
}

proptest! {
    #[test]
    fn tsv_round_trip(recs in records()) {
        prop_assume!(!recs.is_empty());
        let ds = dataset(&recs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inter.tsv");
        ds.save(&path).unwrap();
        let (back, report) = load_interactions(&path).unwrap();
        prop_assert_eq!(report.malformed, 0);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn kcore_is_idempotent_and_satisfies_k(recs in records(), k in 1usize..6) {
        let core = kcore_filter(&dataset(&recs), k);
        prop_assert_eq!(kcore_filter(&core, k), core.clone());
        let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in core.sequences.values() {
            prop_assert!(seq.len() >= k);
            for it in seq {
                *item_counts.entry(&it.item).or_default() += 1;
            }
        }
        prop_assert!(item_counts.values().all(|&c| c >= k));
    }

    #[test]
    fn split_never_leaks_the_target(recs in records(), max_len in 1usize..8) {
        let ds = dataset(&recs);
        let (split, excluded) = leave_one_out_split(&ds, max_len);
        for (user, seq) in &ds.sequences {
            if seq.len() < 3 {
                prop_assert!(excluded.contains(user));
                continue;
            }
            let n = seq.len();
            prop_assert_eq!(&split.test[user], &seq[n - 1].item);
            prop_assert_eq!(&split.valid[user], &seq[n - 2].item);
            let train = &split.train[user];
            prop_assert!(train.len() <= max_len);
            // Train is a suffix of the first n-2 interactions.
            let prefix: Vec<&str> = seq[..n - 2].iter().map(|i| i.item.as_str()).collect();
            let t: Vec<&str> = train.iter().map(String::as_str).collect();
            prop_assert!(prefix.ends_with(&t));
            let ctx = split.test_context(user, max_len).unwrap();
            prop_assert_eq!(ctx.last(), Some(&split.valid[user]));
            prop_assert!(ctx.len() <= max_len);
        }
    }
}

#[test]
fn empty_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.tsv");
    std::fs::write(&path, "\n\n").unwrap();
    assert!(load_interactions(&path).is_err());
}
