mod common;

use common::*;
use proptest::prelude::*;
use shgnn::centrality::{count_coverage, count_coverage_capped, one_hot_block, Bucketing, CentralityOptions};
use shgnn::metapath::enumerate_instances;
use shgnn::MetaPath;

#[test]
fn coverage_matches_brute_force_on_random_graphs() {
    for seed in 0..50 {
        let g = random_tri_graph(seed, 50, 0.3);
        let paths = tri_metapaths(&g);
        let table = count_coverage(&g, &paths).unwrap();
        let (c, c_plus) = brute_force_coverage(&g, &paths);
        assert_eq!(table.c, c, "seed {seed}");
        assert_eq!(table.c_plus, c_plus, "seed {seed}");
    }
}

#[test]
fn total_coverage_is_instances_times_length() {
    for seed in 0..50 {
        let g = random_tri_graph(seed, 50, 0.3);
        for p in tri_metapaths(&g) {
            let instances: usize = g
                .nodes_of_type(p.end_type())
                .map(|t| enumerate_instances(&g, &p, t).unwrap().len())
                .sum();
            let table = count_coverage(&g, std::slice::from_ref(&p)).unwrap();
            let total: u64 = table.c.iter().sum();
            assert_eq!(total, (instances * p.num_nodes()) as u64, "seed {seed} {p}");
        }
    }
}

#[test]
fn shared_actor_counts() {
    let g = fig1b(false);
    let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
    let t = count_coverage(&g, &[p]).unwrap();
    let c = |n: &str| t.c[g.node_id(n).unwrap()];
    let cp = |n: &str| t.c_plus[g.node_id(n).unwrap()];
    // a1 has three movies: 9 instances pass through it; a2 has two: 4
    assert_eq!(c("a1"), 9);
    assert_eq!(c("a2"), 4);
    assert_eq!(c("a1b"), 0);
    // mi: 3 + 2 as a start, the same as an end
    assert_eq!(c("mi"), 10);
    assert_eq!(c("m1"), 6);
    assert_eq!(cp("mi"), 13);
    assert_eq!(cp("a1"), c("m1") + c("m2") + c("mi"));
}

#[test]
fn capped_counts_never_exceed_full_counts() {
    let g = random_tri_graph(11, 45, 0.5);
    let paths = tri_metapaths(&g);
    let full = count_coverage(&g, &paths).unwrap();
    let capped = count_coverage_capped(&g, &paths, Some(2)).unwrap();
    assert!(full.c.iter().zip(&capped.c).all(|(f, c)| c <= f));
    assert!(capped.c.iter().sum::<u64>() < full.c.iter().sum::<u64>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hot_rows_have_one_entry_per_enabled_block(
        seed in 0u64..10_000,
        d1 in 1usize..8,
        use_c in any::<bool>(),
        use_c_plus in any::<bool>(),
        log2 in any::<bool>(),
    ) {
        let g = random_tri_graph(seed, 30, 0.4);
        let table = count_coverage(&g, &tri_metapaths(&g)).unwrap();
        let bucketing = if log2 { Bucketing::Log2 } else { Bucketing::Clamp };
        let opts = CentralityOptions { use_c, use_c_plus, bucketing };
        for t in 0..g.num_types() {
            let block = one_hot_block(&g, &table, t, d1, opts);
            prop_assert_eq!(block.shape(), &[g.type_range(t).len(), 2 * d1][..]);
            for (i, v) in g.type_range(t).enumerate() {
                let row = block.row(i);
                let left: f64 = row[..d1].iter().sum();
                let right: f64 = row[d1..].iter().sum();
                prop_assert_eq!(left, f64::from(u8::from(use_c)));
                prop_assert_eq!(right, f64::from(u8::from(use_c_plus)));
                if use_c {
                    let k = row[..d1].iter().position(|&x| x == 1.0).unwrap();
                    prop_assert_eq!(k, bucketing.index(table.c[v], d1));
                }
            }
        }
    }

    #[test]
    fn buckets_are_monotone_and_bounded(a in 0u64..10_000, b in 0u64..10_000, d1 in 1usize..70) {
        for bucketing in [Bucketing::Clamp, Bucketing::Log2] {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(bucketing.index(lo, d1) <= bucketing.index(hi, d1));
            prop_assert!(bucketing.index(hi, d1) < d1);
        }
    }
}
