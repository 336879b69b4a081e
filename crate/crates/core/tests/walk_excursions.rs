//! Step-level walks against the exact excursion law and the barrier sums.

use std::sync::Arc;

use favsite::analysis::{barrier_sum, barrier_sum_brute, lowest_u, surviving_tree, BarrierLimits, UminConfig};
use favsite::env::{calibrate_law, DisplacementLaw, FamilyId, MarkedTree, ROOT};
use favsite::excursion::path_stats;
use favsite::walk::{excursion_counts, WalkState};

fn law(fam: FamilyId) -> Arc<DisplacementLaw> {
    Arc::new(calibrate_law(fam, &fam.default_params()).unwrap())
}

#[test]
fn per_excursion_means_match_exact_values() {
    for fam in FamilyId::all_presets() {
        let (mut tree, _) = surviving_tree(&law(fam), 21, 0, "walk-test", 15, 1 << 24).unwrap();
        let low = lowest_u(&mut tree, 4, &UminConfig::default()).unwrap();
        let targets: Vec<_> = low.vertices.iter().map(|v| v.0).filter(|&x| x != ROOT).collect();
        let counts = excursion_counts(&mut tree, &targets, 20_000, 5).unwrap();
        for (&x, c) in targets.iter().zip(&counts) {
            let want = path_stats(&mut tree, x).unwrap().mean();
            assert!((c.mean() - want).abs() <= 4.0 * c.se(), "{fam:?} vertex {x}: {} ± {} vs {want}", c.mean(), c.se());
        }
    }
}

#[test]
fn favorites_are_argmax_of_local_time() {
    let mut tree = MarkedTree::new(law(FamilyId::F3), 2);
    let mut walk = WalkState::new(&mut tree, 8).unwrap();
    for _ in 0..50 {
        walk.run(&mut tree, 200).unwrap();
        assert!(walk.audit_favorites());
        let max = walk.local_times().map(|(_, l)| l).max().unwrap();
        for &f in walk.favorites() {
            assert_eq!(walk.local_time(f), max);
        }
    }
}

#[test]
fn pruned_barrier_sum_matches_enumeration() {
    let limits = BarrierLimits { max_depth: 9, max_vertices: 1 << 22, v_cutoff: f64::INFINITY };
    for fam in FamilyId::all_presets() {
        for seed in 0..5 {
            let mut tree = MarkedTree::new(law(fam), seed);
            for &(n, gamma) in &[(1_000u64, 1.5), (10u64, 0.0)] {
                let fast = barrier_sum(&mut tree, n, gamma, &limits).unwrap();
                let slow = barrier_sum_brute(&mut tree, n, gamma, 9).unwrap();
                assert!((fast.value - slow).abs() <= 1e-12 * slow.max(1.0), "{fam:?} {seed} {n}: {} vs {slow}", fast.value);
            }
        }
    }
}
