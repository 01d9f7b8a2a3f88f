//! Average disc-column geometry and the constrained search that picks one
//! candidate per disc to best match it.
//!
//! Positions are normalized by moving disc 1 to the origin and dividing by
//! the distance from disc 1 to disc 5. The skeleton is the per-disc mean of
//! normalized training annotations. At test time every ordering-feasible
//! combination of candidates is scored by the summed Euclidean distance to
//! the skeleton; discs without a candidate contribute nothing.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::par;
use crate::targets::LabeledCase;

/// Index of the disc whose distance to disc 1 fixes the scale (disc 5).
pub const SCALE_DISC: usize = 4;
/// Default cap on exhaustive enumeration.
pub const BRUTE_FORCE_CAP: u128 = 1_000_000;
const ZERO_ERROR: f64 = 1e-9;

/// 2D point with `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_row_col((row, col): (f64, f64)) -> Self {
        Self { x: col, y: row }
    }

    pub fn dist(self, o: Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }
}

/// Mean over consecutive present discs `(i, j)` of `d(p_i, p_j) / (j - i)`.
fn mean_step(points: &[Option<Point>]) -> Option<f64> {
    let mut prev: Option<(usize, Point)> = None;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, p) in points.iter().enumerate() {
        let Some(p) = *p else { continue };
        if let Some((j, q)) = prev {
            sum += p.dist(q) / (i - j) as f64;
            n += 1;
        }
        prev = Some((i, p));
    }
    (n > 0).then(|| sum / n as f64)
}

/// Shifts disc 1 to the origin and divides by `d(v1, v5)`. When disc 5 is
/// absent the scale falls back to the mean per-step spacing of the present
/// discs. Absent points stay absent.
pub fn normalize_points(points: &[Option<Point>]) -> Result<Vec<Option<Point>>> {
    let present = points.iter().flatten().count();
    if present < 2 {
        return Err(Error::Normalization(format!(
            "{present} present point(s); at least 2 are needed to fix a scale"
        )));
    }
    let origin = points
        .first()
        .copied()
        .flatten()
        .ok_or_else(|| Error::Normalization("disc 1 is absent".into()))?;
    let scale = match points.get(SCALE_DISC).copied().flatten() {
        Some(p5) => origin.dist(p5),
        None => mean_step(points).unwrap_or(0.0),
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Normalization(format!("degenerate scale {scale}")));
    }
    Ok(points
        .iter()
        .map(|p| p.map(|p| Point::new((p.x - origin.x) / scale, (p.y - origin.y) / scale)))
        .collect())
}

/// Similarity frame (translation + uniform scale) mapping candidate
/// coordinates into skeleton units.
#[derive(Debug, Clone, Copy)]
struct Frame {
    anchor_skeleton: Point,
    anchor_points: Point,
    ratio: f64,
}

impl Frame {
    fn apply(&self, p: Point) -> Point {
        Point::new(
            self.anchor_skeleton.x + (p.x - self.anchor_points.x) * self.ratio,
            self.anchor_skeleton.y + (p.y - self.anchor_points.y) * self.ratio,
        )
    }
}

/// Normalized relational disc positions averaged over training subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SkeletonFile {
    #[serde(rename = "V")]
    v: usize,
    points: Vec<[f64; 2]>,
}

impl Skeleton {
    pub fn num_discs(&self) -> usize {
        self.points.len()
    }

    /// Frame for a (partial) set of candidate points. Disc 1 anchors and
    /// `d(v1, v5)` scales when both are present; otherwise the first present
    /// disc anchors and the mean per-step spacing is matched against the same
    /// statistic of the skeleton over the same discs.
    fn frame(&self, points: &[Option<Point>]) -> Option<Frame> {
        let mut present = points.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p)));
        let Some((a, pa)) = present.next() else {
            return Some(Frame {
                anchor_skeleton: Point::new(0.0, 0.0),
                anchor_points: Point::new(0.0, 0.0),
                ratio: 1.0,
            });
        };
        let ratio = if present.next().is_none() {
            1.0
        } else if let (Some(p1), Some(p5)) = (points[0], points.get(SCALE_DISC).copied().flatten()) {
            let d = p1.dist(p5);
            if !(d > 0.0) {
                return None;
            }
            self.points[0].dist(self.points[SCALE_DISC]) / d
        } else {
            let sp = mean_step(points)?;
            let masked: Vec<Option<Point>> = points
                .iter()
                .zip(&self.points)
                .map(|(p, s)| p.map(|_| *s))
                .collect();
            let ss = mean_step(&masked)?;
            if !(sp > 0.0) {
                return None;
            }
            ss / sp
        };
        Some(Frame {
            anchor_skeleton: self.points[a],
            anchor_points: pa,
            ratio,
        })
    }

    /// Maps candidate points into skeleton coordinates; `None` when the
    /// points are degenerate (coincident).
    pub fn align(&self, points: &[Option<Point>]) -> Option<Vec<Option<Point>>> {
        let f = self.frame(points)?;
        Some(points.iter().map(|p| p.map(|p| f.apply(p))).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(
            path,
            &SkeletonFile {
                v: self.points.len(),
                points: self.points.iter().map(|p| [p.x, p.y]).collect(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: SkeletonFile = crate::io::read_json(path)?;
        if f.points.len() != f.v {
            return Err(Error::Config(format!(
                "{}: V = {} but {} points listed",
                path.display(),
                f.v,
                f.points.len()
            )));
        }
        Ok(Self {
            points: f.points.into_iter().map(|[x, y]| Point::new(x, y)).collect(),
        })
    }
}

/// Builds the skeleton from raw per-case disc positions.
pub fn build_skeleton_from_points(cases: &[Vec<Option<Point>>]) -> Result<Skeleton> {
    let v = cases
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Config("no cases to build a skeleton from".into()))?;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); v];
    for (ci, case) in cases.iter().enumerate() {
        if case.len() != v {
            return Err(Error::Config(format!("case {ci} has {} discs, expected {v}", case.len())));
        }
        if case[0].is_none() || (v > SCALE_DISC && case[SCALE_DISC].is_none()) {
            return Err(Error::Normalization(format!(
                "case {ci} lacks disc 1 or the scale reference disc {}",
                SCALE_DISC + 1
            )));
        }
        for (s, p) in sums.iter_mut().zip(normalize_points(case)?) {
            if let Some(p) = p {
                s.0 += p.x;
                s.1 += p.y;
                s.2 += 1;
            }
        }
    }
    let means = sums
        .iter()
        .enumerate()
        .map(|(i, &(x, y, n))| {
            if n == 0 {
                Err(Error::DiscNeverVisible(i))
            } else {
                Ok(Some(Point::new(x / n as f64, y / n as f64)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    // averaging unit vectors shrinks them; renormalize so d(v1, v5) == 1
    let points = normalize_points(&means)?.into_iter().map(Option::unwrap).collect();
    Ok(Skeleton { points })
}

/// Builds the skeleton from annotated cases (rows map to `y`, columns to `x`).
pub fn build_skeleton(cases: &[LabeledCase]) -> Result<Skeleton> {
    let pts: Vec<Vec<Option<Point>>> = cases
        .iter()
        .map(|c| c.discs.iter().map(|d| d.map(Point::from_row_col)).collect())
        .collect();
    build_skeleton_from_points(&pts)
}

/// Sum over present discs of the Euclidean distance between the aligned
/// candidate point and the skeleton point.
pub fn skeleton_error(skeleton: &Skeleton, aligned: &[Option<Point>]) -> f64 {
    let mut e = 0.0;
    for (s, p) in skeleton.points.iter().zip(aligned) {
        if let Some(p) = p {
            e += s.dist(*p);
        }
    }
    e
}

/// Counters from one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes: u64,
    pub leaves: u64,
    pub pruned_order: u64,
    pub pruned_count: u64,
    pub pruned_error: u64,
    /// Exhaustive search only: paths picking a candidate for every disc
    /// that has one, and how many of those respect the ordering.
    pub complete_paths: u64,
    pub feasible_complete_paths: u64,
}

impl SearchStats {
    fn merge(&mut self, o: &SearchStats) {
        self.nodes += o.nodes;
        self.leaves += o.leaves;
        self.pruned_order += o.pruned_order;
        self.pruned_count += o.pruned_count;
        self.pruned_error += o.pruned_error;
        self.complete_paths += o.complete_paths;
        self.feasible_complete_paths += o.feasible_complete_paths;
    }
}

/// Selected candidate per disc (`None` = disc left out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub choice: Vec<Option<usize>>,
    pub error: f64,
    pub present: usize,
    /// Sum of the chosen candidates' scores.
    pub score: f64,
    /// False when no assignment satisfies the constraints (only possible
    /// with a disc-count hint); `choice` is then all `None`.
    pub feasible: bool,
    pub stats: SearchStats,
}

#[derive(Debug, Clone)]
struct Key {
    present: usize,
    error: f64,
    score: f64,
    choice: Vec<Option<usize>>,
}

/// Preference order: more present discs, lower error, higher total score,
/// then lexicographically smaller candidate indices (absent sorts last).
fn compare(a: &Key, b: &Key) -> Ordering {
    b.present
        .cmp(&a.present)
        .then(a.error.total_cmp(&b.error))
        .then(b.score.total_cmp(&a.score))
        .then_with(|| {
            let enc = |c: &Option<usize>| c.unwrap_or(usize::MAX);
            a.choice.iter().map(enc).cmp(b.choice.iter().map(enc))
        })
}

/// Knobs of [`search_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Only assignments with exactly this many present discs.
    pub num_discs_hint: Option<usize>,
    /// Stop a top-level branch at the first path with error below 1e-9 and
    /// the full disc count. Faster, but a later zero-error path with a
    /// higher score is then not considered, so ties may resolve differently
    /// from exhaustive search.
    pub zero_error_shortcut: bool,
}

struct Problem<'a> {
    points: Vec<Vec<Point>>,
    scores: Vec<Vec<f64>>,
    skeleton: &'a Skeleton,
    hint: Option<usize>,
    shortcut: bool,
    /// Number of discs at index >= i that have candidates.
    remaining: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(set: &CandidateSet, skeleton: &'a Skeleton, opts: SearchOptions) -> Result<Self> {
        if set.num_discs() != skeleton.num_discs() {
            return Err(Error::Shape(format!(
                "{} candidate lists for a {}-disc skeleton",
                set.num_discs(),
                skeleton.num_discs()
            )));
        }
        let points = set
            .per_disc
            .iter()
            .map(|cs| cs.iter().map(|c| Point::new(c.col, c.row)).collect())
            .collect();
        let scores = set
            .per_disc
            .iter()
            .map(|cs| cs.iter().map(|c| c.score as f64).collect())
            .collect();
        let mut remaining = vec![0; set.num_discs() + 1];
        for i in (0..set.num_discs()).rev() {
            remaining[i] = remaining[i + 1] + usize::from(!set.per_disc[i].is_empty());
        }
        Ok(Self {
            points,
            scores,
            skeleton,
            hint: opts.num_discs_hint,
            shortcut: opts.zero_error_shortcut,
            remaining,
        })
    }

    fn v(&self) -> usize {
        self.points.len()
    }

    fn target_present(&self) -> usize {
        self.hint.unwrap_or(self.remaining[0])
    }

    fn evaluate(&self, choice: &[Option<usize>]) -> Option<Key> {
        let pts: Vec<Option<Point>> = choice
            .iter()
            .enumerate()
            .map(|(d, c)| c.map(|c| self.points[d][c]))
            .collect();
        let mut last = f64::NEG_INFINITY;
        for p in pts.iter().flatten() {
            if p.y <= last {
                return None;
            }
            last = p.y;
        }
        let aligned = self.skeleton.align(&pts)?;
        let score = choice
            .iter()
            .enumerate()
            .filter_map(|(d, c)| c.map(|c| self.scores[d][c]))
            .sum();
        Some(Key {
            present: pts.iter().flatten().count(),
            error: skeleton_error(self.skeleton, &aligned),
            score,
            choice: choice.to_vec(),
        })
    }

    fn to_assignment(&self, best: Option<Key>, stats: SearchStats) -> Assignment {
        match best {
            Some(k) => Assignment {
                choice: k.choice,
                error: k.error,
                present: k.present,
                score: k.score,
                feasible: true,
                stats,
            },
            None => Assignment {
                choice: vec![None; self.v()],
                error: 0.0,
                present: 0,
                score: 0.0,
                feasible: false,
                stats,
            },
        }
    }
}

struct Dfs<'p, 'a> {
    problem: &'p Problem<'a>,
    choice: Vec<Option<usize>>,
    best: Option<Key>,
    stats: SearchStats,
    stop: bool,
}

impl Dfs<'_, '_> {
    fn offer(&mut self, key: Key) {
        if self.best.as_ref().is_none_or(|b| compare(&key, b) == Ordering::Less) {
            if self.problem.shortcut && key.error < ZERO_ERROR && key.present == self.problem.target_present() {
                self.stop = true;
            }
            self.best = Some(key);
        }
    }

    /// `frame` is fixed once disc 1 and the scale disc are both chosen; from
    /// then on `partial` is a lower bound of the final error.
    fn run(&mut self, level: usize, present: usize, last_row: f64, frame: Option<(Frame, f64)>) {
        if self.stop {
            return;
        }
        self.stats.nodes += 1;
        let p = self.problem;
        if level == p.v() {
            if p.hint.is_some_and(|n| present != n) {
                return;
            }
            self.stats.leaves += 1;
            if let Some(key) = p.evaluate(&self.choice) {
                self.offer(key);
            }
            return;
        }
        let reachable = present + p.remaining[level];
        if let Some(n) = p.hint {
            if reachable < n {
                self.stats.pruned_count += 1;
                return;
            }
        }
        if let Some(b) = &self.best {
            let cap = p.hint.map_or(reachable, |n| n.min(reachable));
            if cap < b.present {
                self.stats.pruned_count += 1;
                return;
            }
            if let Some((_, partial)) = frame {
                if cap == b.present && partial > b.error {
                    self.stats.pruned_error += 1;
                    return;
                }
            }
        }
        let can_add = p.hint.is_none_or(|n| present < n);
        if can_add {
            for (ci, &pt) in p.points[level].iter().enumerate() {
                if pt.y <= last_row {
                    self.stats.pruned_order += 1;
                    continue;
                }
                self.choice[level] = Some(ci);
                let next_frame = match frame {
                    Some((f, e)) => Some((f, e + p.skeleton.points[level].dist(f.apply(pt)))),
                    None if level == SCALE_DISC && self.choice[0].is_some() => {
                        let pts: Vec<Option<Point>> = self.choice[..=level]
                            .iter()
                            .enumerate()
                            .map(|(d, c)| c.map(|c| p.points[d][c]))
                            .collect();
                        p.skeleton.frame(&pts).map(|f| {
                            let mut e = 0.0;
                            for (d, q) in pts.iter().enumerate() {
                                if let Some(q) = q {
                                    e += p.skeleton.points[d].dist(f.apply(*q));
                                }
                            }
                            (f, e)
                        })
                    }
                    None => None,
                };
                self.run(level + 1, present + 1, pt.y, next_frame);
                self.choice[level] = None;
                if self.stop {
                    return;
                }
            }
        }
        self.choice[level] = None;
        self.run(level + 1, present, last_row, frame);
    }
}

/// Branch-and-bound search for the best candidate assignment.
///
/// Among assignments whose rows strictly increase from disc 1 to disc V,
/// prefers the most present discs (exactly `num_discs_hint` when given),
/// then the lowest skeleton error, then the tie-breaks of the preference
/// order. Pruning is strict, so the result equals exhaustive enumeration.
pub fn search_best(set: &CandidateSet, skeleton: &Skeleton, num_discs_hint: Option<usize>) -> Result<Assignment> {
    search_with(
        set,
        skeleton,
        SearchOptions {
            num_discs_hint,
            zero_error_shortcut: false,
        },
    )
}

/// [`search_best`] with explicit options.
pub fn search_with(set: &CandidateSet, skeleton: &Skeleton, opts: SearchOptions) -> Result<Assignment> {
    let problem = Problem::new(set, skeleton, opts)?;
    let v = problem.v();
    if v == 0 {
        return Ok(problem.to_assignment(None, SearchStats::default()));
    }
    // Top-level branches: each candidate of disc 1, then "disc 1 absent".
    // The first branch runs alone to seed a bound shared by the rest, which
    // keeps results and statistics independent of scheduling.
    let n_top = problem.points[0].len() + 1;
    let branch = |top: usize, seed: Option<Key>| -> (Option<Key>, SearchStats) {
        let mut dfs = Dfs {
            problem: &problem,
            choice: vec![None; v],
            best: seed,
            stats: SearchStats::default(),
            stop: false,
        };
        dfs.stats.nodes += 1;
        if top < problem.points[0].len() {
            if problem.hint.is_some_and(|n| n == 0) {
                return (dfs.best, dfs.stats);
            }
            dfs.choice[0] = Some(top);
            let y = problem.points[0][top].y;
            dfs.run(1, 1, y, None);
        } else {
            dfs.run(1, 0, f64::NEG_INFINITY, None);
        }
        (dfs.best, dfs.stats)
    };
    let (mut best, mut stats) = branch(0, None);
    let seed = best.clone();
    let rest = par::map_range(n_top - 1, |i| branch(i + 1, seed.clone()));
    for (b, s) in rest {
        stats.merge(&s);
        if let Some(b) = b {
            if best.as_ref().is_none_or(|cur| compare(&b, cur) == Ordering::Less) {
                best = Some(b);
            }
        }
    }
    Ok(problem.to_assignment(best, stats))
}

/// Exhaustive enumeration of every combination (each disc: one of its
/// candidates or absent), under the same constraints and preference order
/// as [`search_best`]. Fails when the combination count exceeds `cap`.
pub fn brute_force_best(
    set: &CandidateSet,
    skeleton: &Skeleton,
    num_discs_hint: Option<usize>,
    cap: u128,
) -> Result<Assignment> {
    let opts = SearchOptions {
        num_discs_hint,
        zero_error_shortcut: false,
    };
    let problem = Problem::new(set, skeleton, opts)?;
    let radices: Vec<usize> = problem.points.iter().map(|c| c.len() + 1).collect();
    let combinations = radices.iter().map(|&r| r as u128).product::<u128>();
    if combinations > cap {
        return Err(Error::SearchCapExceeded { combinations, cap });
    }
    let mut stats = SearchStats::default();
    let mut best: Option<Key> = None;
    let mut digits = vec![0usize; radices.len()];
    for _ in 0..combinations {
        let choice: Vec<Option<usize>> = digits
            .iter()
            .zip(&problem.points)
            .map(|(&d, c)| (d < c.len()).then_some(d))
            .collect();
        stats.nodes += 1;
        let present = choice.iter().flatten().count();
        let key = problem.evaluate(&choice);
        if present == problem.remaining[0] {
            stats.complete_paths += 1;
            stats.feasible_complete_paths += u64::from(key.is_some());
        }
        if problem.hint.is_none_or(|n| n == present) {
            if let Some(k) = key {
                stats.leaves += 1;
                if best.as_ref().is_none_or(|b| compare(&k, b) == Ordering::Less) {
                    best = Some(k);
                }
            }
        }
        for (d, r) in digits.iter_mut().zip(&radices) {
            *d += 1;
            if *d < *r {
                break;
            }
            *d = 0;
        }
    }
    Ok(problem.to_assignment(best, stats))
}
