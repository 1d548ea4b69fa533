use infogap_core::dist::{entropy, entropy_gap, kl_to_uniform, pinsker_bounds, CondTable};
use infogap_core::info::{cond_mutual_info, mutual_info, Axis, JointHistogram};
use infogap_core::sgd::kramers_predict;
use infogap_core::stats::spearman;
use proptest::prelude::*;

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 1e-6..1.0f64], 2..12)
        .prop_filter("non-empty support", |w| w.iter().any(|&v| v > 0.0))
        .prop_map(|w| normalize(&w))
}

fn hist3() -> impl Strategy<Value = (usize, usize, usize, Vec<u64>)> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(a, b, c)| {
        (
            Just(a),
            Just(b),
            Just(c),
            prop::collection::vec(0u64..50, a * b * c)
                .prop_filter("non-empty", |v| v.iter().any(|&x| x > 0)),
        )
    })
}

fn build(a: usize, b: usize, c: usize, counts: Vec<u64>) -> JointHistogram {
    JointHistogram::from_counts(
        vec![Axis::new("a", a), Axis::new("b", b), Axis::new("c", c)],
        counts,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn pinsker_bounds_hold(row in row_strategy()) {
        let t = CondTable::from_rows(vec![row]).unwrap();
        let r = pinsker_bounds(&t, 0).unwrap();
        prop_assert!(r.holds(1e-12), "{r:?}");
    }

    #[test]
    fn entropy_lies_between_zero_and_log_support(row in row_strategy()) {
        let h = entropy(&row);
        let k = row.len() as f64;
        prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
        let t = CondTable::from_rows(vec![row.clone()]).unwrap();
        let v = t.volumes()[0];
        let support = row.iter().filter(|&&p| p > 0.0).count() as f64;
        prop_assert!(v >= support && v <= k);
        prop_assert!(h <= support.ln() + 1e-12);
        let gap = entropy_gap(&t, 0).unwrap();
        prop_assert!((gap - (v.ln() - h).max(0.0)).abs() < 1e-12);
        prop_assert!(kl_to_uniform(&t, 0).unwrap() >= -1e-12);
        prop_assert!((kl_to_uniform(&t, 0).unwrap() - gap).abs() < 1e-10);
    }

    #[test]
    fn mutual_information_is_symmetric_and_bounded((a, b, c, counts) in hist3()) {
        let h = build(a, b, c, counts);
        let ab = mutual_info(&h, "a", "b").unwrap();
        let ba = mutual_info(&h, "b", "a").unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(ab <= h.entropy(&["a"]).unwrap().min(h.entropy(&["b"]).unwrap()) + 1e-12);
    }

    #[test]
    fn cmi_chain_rule_and_nonnegativity((a, b, c, counts) in hist3()) {
        let h = build(a, b, c, counts);
        let cmi = cond_mutual_info(&h, "a", "b", "c").unwrap();
        let joint = h.group_mutual_info(&["a"], &["b", "c"], &[]).unwrap();
        let ac = mutual_info(&h, "a", "c").unwrap();
        prop_assert!(cmi >= -1e-12);
        prop_assert!((cmi - (joint - ac)).abs() < 1e-10);
    }

    #[test]
    fn mutual_information_ignores_relabeling(
        (a, b, c, counts) in hist3(),
        shift in 0usize..5,
    ) {
        let h = build(a, b, c, counts.clone());
        let mut permuted = vec![0u64; counts.len()];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    let ni = (i + shift) % a;
                    permuted[(ni * b + j) * c + k] = counts[(i * b + j) * c + k];
                }
            }
        }
        let g = build(a, b, c, permuted);
        let x = cond_mutual_info(&h, "a", "b", "c").unwrap();
        let y = cond_mutual_info(&g, "a", "b", "c").unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn escape_time_grows_with_barrier_batch_and_shrinks_with_step(
        barrier in 0.01..0.5f64,
        batch in 1.0..16.0f64,
        eta in 0.05..0.5f64,
        p in 0.01..0.99f64,
    ) {
        let base = kramers_predict(barrier, eta, batch, 2.0, 1.0, p).unwrap();
        prop_assert!(kramers_predict(barrier * 1.1, eta, batch, 2.0, 1.0, p).unwrap() > base);
        prop_assert!(kramers_predict(barrier, eta, batch * 1.1, 2.0, 1.0, p).unwrap() > base);
        prop_assert!(kramers_predict(barrier, eta * 1.1, batch, 2.0, 1.0, p).unwrap() < base);
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(
        xs in prop::collection::vec(-100.0..100.0f64, 3..30),
        seed in any::<u64>(),
    ) {
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| x.sin() + ((seed >> (i % 60)) & 1) as f64)
            .collect();
        if let Ok(r) = spearman(&xs, &ys) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 7.0).collect();
            prop_assert!((spearman(&cubed, &ys).unwrap() - r).abs() < 1e-12);
        }
    }
}
