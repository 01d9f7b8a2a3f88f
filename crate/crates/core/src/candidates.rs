//! Per-disc peak candidates from predicted heatmaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateParams {
    /// Peaks below this score are ignored.
    pub threshold: f32,
    /// Radius (px) suppressed around each accepted peak.
    pub min_separation: usize,
    /// Maximum candidates kept per disc.
    pub max_candidates: usize,
    /// Refine peaks with a 3x3 centre of mass.
    pub subpixel: bool,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            min_separation: 10,
            max_candidates: 5,
            subpixel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Refined position (equals the peak pixel when refinement is off).
    pub row: f64,
    pub col: f64,
    /// Integer pixel of the heatmap maximum.
    pub peak: (usize, usize),
    pub score: f32,
}

/// Candidates per disc, each list sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub per_disc: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn num_discs(&self) -> usize {
        self.per_disc.len()
    }

    /// Availability flag of each disc (at least one candidate).
    pub fn available(&self) -> Vec<bool> {
        self.per_disc.iter().map(|c| !c.is_empty()).collect()
    }

    pub fn total(&self) -> usize {
        self.per_disc.iter().map(Vec::len).sum()
    }

    /// Flat `{disc, row, col, score}` records for inspection.
    pub fn records(&self) -> Vec<CandidateRecord> {
        self.per_disc
            .iter()
            .enumerate()
            .flat_map(|(disc, cs)| {
                cs.iter().map(move |c| CandidateRecord {
                    disc,
                    row: c.row,
                    col: c.col,
                    score: c.score,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub disc: usize,
    pub row: f64,
    pub col: f64,
    pub score: f32,
}

fn refine(map: &[f32], rows: usize, cols: usize, (r, c): (usize, usize)) -> (f64, f64) {
    let (mut sw, mut sr, mut sc) = (0.0f64, 0.0f64, 0.0f64);
    for y in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
        for x in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
            let w = map[y * cols + x].max(0.0) as f64;
            sw += w;
            sr += w * y as f64;
            sc += w * x as f64;
        }
    }
    if sw > 0.0 {
        (sr / sw, sc / sw)
    } else {
        (r as f64, c as f64)
    }
}

/// Greedy non-maximum suppression on one `rows x cols` map: take the global
/// maximum (first in row-major order on ties), suppress every pixel closer
/// than `min_separation`, repeat until the maximum drops below `threshold`
/// or `max_candidates` peaks were taken.
pub fn local_maxima(map: &[f32], rows: usize, cols: usize, params: &CandidateParams) -> Vec<Candidate> {
    assert_eq!(map.len(), rows * cols, "map size does not match {rows}x{cols}");
    let mut alive = vec![true; map.len()];
    let mut out = Vec::new();
    let sep = params.min_separation as isize;
    let sep2 = sep * sep;
    while out.len() < params.max_candidates {
        let mut best: Option<usize> = None;
        for (i, &v) in map.iter().enumerate() {
            if alive[i] && v.is_finite() && best.is_none_or(|b| v > map[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        let score = map[b];
        if score < params.threshold {
            break;
        }
        let (r, c) = (b / cols, b % cols);
        for y in (r as isize - sep).max(0)..=(r as isize + sep).min(rows as isize - 1) {
            for x in (c as isize - sep).max(0)..=(c as isize + sep).min(cols as isize - 1) {
                let d2 = (y - r as isize).pow(2) + (x - c as isize).pow(2);
                if d2 < sep2 {
                    alive[y as usize * cols + x as usize] = false;
                }
            }
        }
        alive[b] = false;
        let (row, col) = if params.subpixel {
            refine(map, rows, cols, (r, c))
        } else {
            (r as f64, c as f64)
        };
        out.push(Candidate {
            row,
            col,
            peak: (r, c),
            score,
        });
    }
    out
}

/// Runs [`local_maxima`] on every channel of a `[V, H, W]` heatmap stack.
pub fn extract_all(stack: &Tensor<f32>, params: &CandidateParams) -> Result<CandidateSet> {
    let &[v, rows, cols] = stack.shape() else {
        return Err(Error::Shape(format!(
            "candidate extraction needs [V, H, W], got {:?}",
            stack.shape()
        )));
    };
    let per_disc = par::map_range(v, |c| local_maxima(stack.slice0(c), rows, cols, params));
    Ok(CandidateSet { per_disc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_target, LabeledCase, TargetParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump(rows: usize, cols: usize, centers: &[((f64, f64), f32)]) -> Vec<f32> {
        let mut m = vec![0.0f32; rows * cols];
        for &((r, c), amp) in centers {
            for y in 0..rows {
                for x in 0..cols {
                    let d2 = (y as f64 - r).powi(2) + (x as f64 - c).powi(2);
                    m[y * cols + x] += amp * (-d2 / 8.0).exp() as f32;
                }
            }
        }
        m
    }

    /// Sort every pixel by score, accept greedily against the accepted set.
    fn exhaustive_nms(map: &[f32], cols: usize, p: &CandidateParams) -> Vec<(usize, usize, f32)> {
        let mut idx: Vec<usize> = (0..map.len()).collect();
        idx.sort_by(|&a, &b| map[b].partial_cmp(&map[a]).unwrap().then(a.cmp(&b)));
        let mut acc: Vec<(usize, usize, f32)> = Vec::new();
        for i in idx {
            if acc.len() == p.max_candidates || map[i] < p.threshold {
                break;
            }
            let (r, c) = (i / cols, i % cols);
            let far = acc.iter().all(|&(ar, ac, _)| {
                let d2 = (ar as f64 - r as f64).powi(2) + (ac as f64 - c as f64).powi(2);
                d2 >= (p.min_separation * p.min_separation) as f64
            });
            if far {
                acc.push((r, c, map[i]));
            }
        }
        acc
    }

    #[test]
    fn single_bump_single_candidate() {
        let m = bump(32, 32, &[((12.0, 20.0), 1.0)]);
        let p = CandidateParams {
            threshold: 0.5,
            ..Default::default()
        };
        let c = local_maxima(&m, 32, 32, &p);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].peak, (12, 20));
        assert!((c[0].row - 12.0).abs() < 1e-9 && (c[0].col - 20.0).abs() < 1e-9);
    }

    #[test]
    fn two_bumps_higher_first() {
        let m = bump(48, 48, &[((10.0, 10.0), 0.7), ((35.0, 30.0), 0.9)]);
        let c = local_maxima(&m, 48, 48, &CandidateParams::default());
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].peak, (35, 30));
        assert_eq!(c[1].peak, (10, 10));
        assert!(c[0].score > c[1].score);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..50 {
            let (rows, cols) = (rng.random_range(5..30), rng.random_range(5..30));
            let m: Vec<f32> = (0..rows * cols).map(|_| rng.random::<f32>()).collect();
            let p = CandidateParams {
                threshold: rng.random_range(0.1..0.9),
                min_separation: rng.random_range(1..8),
                max_candidates: rng.random_range(1..12),
                subpixel: false,
            };
            let fast: Vec<_> = local_maxima(&m, rows, cols, &p)
                .into_iter()
                .map(|c| (c.peak.0, c.peak.1, c.score))
                .collect();
            assert_eq!(fast, exhaustive_nms(&m, cols, &p), "trial {trial}");
        }
    }

    #[test]
    fn empty_channel_and_cap() {
        let mut t = Tensor::zeros(vec![3, 32, 32]);
        let b = bump(32, 32, &[((5.0, 5.0), 1.0), ((25.0, 25.0), 0.9)]);
        t.data_mut()[1024..2048].copy_from_slice(&b);
        let set = extract_all(&t, &CandidateParams::default()).unwrap();
        assert!(set.per_disc[0].is_empty());
        assert_eq!(set.per_disc[1].len(), 2);
        assert_eq!(set.available(), vec![false, true, false]);
        let one = extract_all(
            &t,
            &CandidateParams {
                max_candidates: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(one.per_disc.iter().all(|c| c.len() <= 1));
    }

    #[test]
    fn perfect_targets_roundtrip() {
        let case = LabeledCase {
            image: Tensor::zeros(vec![64, 64]),
            spacing_mm: (1.0, 1.0),
            discs: vec![Some((8.0, 30.0)), Some((20.0, 32.0)), None, Some((44.0, 33.0)), Some((63.0, 0.0))],
        };
        let t = make_target(&case, &TargetParams::default()).unwrap();
        let set = extract_all(&t.maps, &CandidateParams::default()).unwrap();
        for (d, p) in case.discs.iter().enumerate() {
            match p {
                None => assert!(set.per_disc[d].is_empty()),
                Some((r, c)) => {
                    assert_eq!(set.per_disc[d].len(), 1);
                    let cand = set.per_disc[d][0];
                    assert_eq!(cand.peak, (*r as usize, *c as usize));
                    assert!((cand.row - r).abs() < 1.0 && (cand.col - c).abs() < 1.0);
                }
            }
        }
    }

    #[test]
    fn records_serialize_with_disc_index() {
        let m = bump(16, 16, &[((8.0, 8.0), 1.0)]);
        let t = Tensor::new(vec![1, 16, 16], m).unwrap();
        let set = extract_all(&t, &CandidateParams::default()).unwrap();
        let json = serde_json::to_string(&set.records()).unwrap();
        assert!(json.contains("\"disc\":0") && json.contains("\"score\""));
    }

    proptest! {
        #[test]
        fn invariants_hold(seed in any::<u64>(), thr in 0.05f32..0.95, sep in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (v, h, w) = (3, 12, 14);
            let t = Tensor::from_fn(vec![v, h, w], |_| rng.random::<f32>());
            let p = CandidateParams { threshold: thr, min_separation: sep, max_candidates: 6, subpixel: true };
            let set = extract_all(&t, &p).unwrap();
            for cs in &set.per_disc {
                prop_assert!(cs.windows(2).all(|w| w[0].score >= w[1].score));
                prop_assert!(cs.iter().all(|c| c.score >= thr));
                for (i, a) in cs.iter().enumerate() {
                    for b in &cs[i + 1..] {
                        let d2 = (a.peak.0 as f64 - b.peak.0 as f64).powi(2) + (a.peak.1 as f64 - b.peak.1 as f64).powi(2);
                        prop_assert!(d2 >= (sep * sep) as f64);
                    }
                }
            }
            // raising the threshold never adds candidates
            let higher = extract_all(&t, &CandidateParams { threshold: (thr + 0.1).min(1.0), ..p }).unwrap();
            prop_assert!(higher.total() <= set.total());
            // permuting channels permutes the output
            let perm = [2usize, 0, 1];
            let mut pd = Vec::new();
            for &c in &perm { pd.extend_from_slice(t.slice0(c)); }
            let pt = Tensor::new(vec![v, h, w], pd).unwrap();
            let ps = extract_all(&pt, &p).unwrap();
            for (k, &c) in perm.iter().enumerate() {
                prop_assert_eq!(&ps.per_disc[k], &set.per_disc[c]);
            }
        }
    }
}
