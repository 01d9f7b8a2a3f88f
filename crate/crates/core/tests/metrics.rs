use disclabel::metrics::{aggregate, score_positions, Outcome, DEFAULT_TOL_MM};
use proptest::prelude::*;

fn gt_column(v: usize) -> Vec<Option<(f64, f64)>> {
    (0..v).map(|i| Some((10.0 + 9.0 * i as f64, 30.0))).collect()
}

proptest! {
    #[test]
    fn small_perturbations_match(offsets in prop::collection::vec((-2.4f64..2.4, -2.4f64..2.4), 1..12)) {
        let gt = gt_column(offsets.len());
        let pred: Vec<_> = gt.iter().zip(&offsets)
            .map(|(g, (dr, dc))| g.map(|(r, c)| (r + dr, c + dc)))
            .collect();
        let s = score_positions("p", &pred, &gt, (1.0, 1.0), DEFAULT_TOL_MM).unwrap();
        let r = aggregate(&[s]).unwrap();
        prop_assert_eq!((r.fpr, r.fnr), (0.0, 0.0));
        let hand = offsets.iter().map(|(dr, _)| dr.abs()).sum::<f64>() / offsets.len() as f64;
        prop_assert!((r.mean_mm - hand).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariant(
        offsets in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0, any::<bool>()), 2..10),
        seed in any::<u64>(),
    ) {
        let gt = gt_column(offsets.len());
        let pred: Vec<_> = gt.iter().zip(&offsets)
            .map(|(g, (dr, dc, keep))| if *keep { g.map(|(r, c)| (r + dr, c + dc)) } else { None })
            .collect();
        let mut perm: Vec<usize> = (0..gt.len()).collect();
        let mut x = seed;
        for i in (1..perm.len()).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (x >> 33) as usize % (i + 1));
        }
        let pg: Vec<_> = perm.iter().map(|&i| gt[i]).collect();
        let pp: Vec<_> = perm.iter().map(|&i| pred[i]).collect();
        let a = aggregate(&[score_positions("a", &pred, &gt, (1.0, 1.0), 5.0).unwrap()]).unwrap();
        let b = aggregate(&[score_positions("a", &pp, &pg, (1.0, 1.0), 5.0).unwrap()]).unwrap();
        prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        prop_assert!((a.mean_mm - b.mean_mm).abs() < 1e-12);
        prop_assert!((a.std_mm - b.std_mm).abs() < 1e-12);
    }

    #[test]
    fn spacing_scales_distances(dr in 0.1f64..6.0, k in 0.5f64..2.0) {
        let gt = vec![Some((10.0, 5.0))];
        let pred = vec![Some((10.0 + dr, 5.0))];
        let a = score_positions("a", &pred, &gt, (1.0, 1.0), 1e9).unwrap();
        let b = score_positions("a", &pred, &gt, (k, k), 1e9).unwrap();
        prop_assert!((b.discs[0].axis_mm.unwrap() - k * a.discs[0].axis_mm.unwrap()).abs() < 1e-12);
        let c = score_positions("a", &pred, &gt, (k, k), 5.0).unwrap();
        let expect = if dr * k < 5.0 { Outcome::Matched } else { Outcome::Missed };
        prop_assert_eq!(c.discs[0].outcome, expect);
    }
}
