use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use multidex::metrics::{hit_at_k, ndcg_at_k, per, HitSet};
use multidex::rerank::{conf_score, cons_score, fuse_and_rank, index_score, FusionParams};
use multidex::{ListKind, RankedList};

fn positions() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..20, 1..10)
}

fn lists(kind: ListKind) -> impl Strategy<Value = Vec<RankedList>> {
    prop::collection::vec(Just((0..30).collect::<Vec<u32>>()).prop_shuffle(), 1..6).prop_map(move |perms| {
        perms
            .into_iter()
            .enumerate()
            .map(|(t, p)| RankedList {
                user: "u".into(),
                index_type: kind,
                template: Some(t + 1),
                entries: p.into_iter().take(20).map(|i| (format!("i{i:02}"), 0.0)).collect(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn conf_ignores_order(p in positions(), seed: u64) {
        let mut q = p.clone();
        let n = q.len();
        q.rotate_left(seed as usize % n);
        q.reverse();
        prop_assert!((conf_score(&p, 10.0).unwrap() - conf_score(&q, 10.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cons_ignores_shifts(p in positions(), shift in 0usize..50) {
        let shifted: Vec<usize> = p.iter().map(|r| r + shift).collect();
        prop_assert!((cons_score(&p, 10.0) - cons_score(&shifted, 10.0)).abs() < 1e-12);
    }

    #[test]
    fn better_ranks_raise_confidence(p in positions(), i in 0usize..10) {
        let i = i % p.len();
        prop_assume!(p[i] > 0);
        let mut better = p.clone();
        better[i] -= 1;
        prop_assert!(conf_score(&better, 10.0).unwrap() > conf_score(&p, 10.0).unwrap());
    }

    #[test]
    fn index_score_is_a_unit_mixture(p in positions(), alpha in 0.0f64..=1.0) {
        let s = index_score(&p, alpha, 10.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn fused_scores_are_bounded_and_sorted(c in lists(ListKind::Ceid), s in lists(ListKind::Seid)) {
        let fused = fuse_and_rank("u", &c, &s, &FusionParams::default()).unwrap();
        prop_assert!(fused.list.len() <= 20);
        let scores: Vec<f64> = fused.list.entries.iter().map(|e| e.1).collect();
        prop_assert!(scores.iter().all(|v| (0.0..=2.0).contains(v)));
        prop_assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        let distinct: BTreeSet<&str> = fused.list.items().collect();
        prop_assert_eq!(distinct.len(), fused.list.len());
    }

    #[test]
    fn accuracy_bounded_and_monotone(c in lists(ListKind::Fused), targets in prop::collection::vec(0u32..30, 1..6)) {
        let lists: Vec<RankedList> = c
            .into_iter()
            .enumerate()
            .map(|(u, mut l)| {
                l.user = format!("u{u}");
                l.template = None;
                l
            })
            .collect();
        let test: BTreeMap<String, String> =
            targets.iter().enumerate().map(|(u, t)| (format!("u{u}"), format!("i{t:02}"))).collect();
        let mut prev = (0.0, 0.0);
        for k in 1..=20 {
            let h = hit_at_k(&lists, &test, k).unwrap().value;
            let n = ndcg_at_k(&lists, &test, k).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&h) && n <= h + 1e-12);
            prop_assert!(h >= prev.0 && n >= prev.1);
            prev = (h, n);
        }
    }

    #[test]
    fn per_is_a_ratio(a in prop::collection::btree_set(0u8..20, 1..20), b in prop::collection::btree_set(0u8..20, 0..20)) {
        let set = |t, s: &BTreeSet<u8>| HitSet { template: t, users: s.iter().map(|u| format!("u{u}")).collect() };
        let (ha, hb) = (set(1, &a), set(2, &b));
        let v = per(&ha, &hb).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(per(&ha, &ha).unwrap(), 0.0);
        if a.is_subset(&b) {
            prop_assert_eq!(v, 0.0);
        }
    }
}
