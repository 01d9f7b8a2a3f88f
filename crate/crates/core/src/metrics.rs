//! Distance-to-target, false-positive and false-negative rates.
//!
//! A prediction and the ground truth of the same disc match when their
//! in-plane distance is below the tolerance (5 mm by default). A prediction
//! that does not match is a false positive; an annotated disc without a
//! matching prediction is a false negative. The reported distance of a
//! matched pair is measured along the superior-inferior (row) axis; the full
//! in-plane distance is kept as a secondary figure.
//!
//! FPR = FP / predictions and FNR = FN / annotated discs, in percent, 0 when
//! the denominator is 0. Standard deviations are population (ddof 0).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, write_json};
use crate::labeling::LabelingResult;
use crate::targets::LabeledCase;

pub const DEFAULT_TOL_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Matched,
    /// Predicted too far away: counts as one FP and one FN.
    Missed,
    /// Predicted, not annotated.
    Spurious,
    /// Annotated, not predicted.
    Undetected,
    /// Neither predicted nor annotated.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscScore {
    pub disc: usize,
    pub outcome: Outcome,
    /// Row-axis distance in mm, when both are present.
    pub axis_mm: Option<f64>,
    /// In-plane distance in mm, when both are present.
    pub l2_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub predictions: usize,
    pub ground_truth: usize,
    pub discs: Vec<DiscScore>,
}

impl CaseScore {
    /// Row-axis distances of matched pairs.
    pub fn matched_axis_mm(&self) -> impl Iterator<Item = f64> + '_ {
        self.discs
            .iter()
            .filter(|d| d.outcome == Outcome::Matched)
            .filter_map(|d| d.axis_mm)
    }

    pub fn matched_l2_mm(&self) -> impl Iterator<Item = f64> + '_ {
        self.discs
            .iter()
            .filter(|d| d.outcome == Outcome::Matched)
            .filter_map(|d| d.l2_mm)
    }
}

/// Scores raw `(row, col)` predictions against annotations.
pub fn score_positions(
    case: &str,
    pred: &[Option<(f64, f64)>],
    gt: &[Option<(f64, f64)>],
    spacing_mm: (f64, f64),
    tol_mm: f64,
) -> Result<CaseScore> {
    let (sr, sc) = spacing_mm;
    if !(sr > 0.0 && sc > 0.0 && sr.is_finite() && sc.is_finite()) {
        return Err(Error::Config(format!("{case}: invalid pixel spacing {spacing_mm:?}")));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{case}: {} predicted discs vs {} annotated",
            pred.len(),
            gt.len()
        )));
    }
    let mut s = CaseScore {
        case: case.to_string(),
        tp: 0,
        fp: 0,
        fn_: 0,
        predictions: pred.iter().flatten().count(),
        ground_truth: gt.iter().flatten().count(),
        discs: Vec::with_capacity(gt.len()),
    };
    for (disc, (p, g)) in pred.iter().zip(gt).enumerate() {
        let (outcome, axis_mm, l2_mm) = match (p, g) {
            (Some(p), Some(g)) => {
                let dr = (p.0 - g.0).abs() * sr;
                let dc = (p.1 - g.1).abs() * sc;
                let l2 = dr.hypot(dc);
                let o = if l2 < tol_mm { Outcome::Matched } else { Outcome::Missed };
                (o, Some(dr), Some(l2))
            }
            (Some(_), None) => (Outcome::Spurious, None, None),
            (None, Some(_)) => (Outcome::Undetected, None, None),
            (None, None) => (Outcome::Absent, None, None),
        };
        match outcome {
            Outcome::Matched => s.tp += 1,
            Outcome::Missed => {
                s.fp += 1;
                s.fn_ += 1;
            }
            Outcome::Spurious => s.fp += 1,
            Outcome::Undetected => s.fn_ += 1,
            Outcome::Absent => {}
        }
        s.discs.push(DiscScore {
            disc,
            outcome,
            axis_mm,
            l2_mm,
        });
    }
    Ok(s)
}

pub fn match_and_score(case: &str, pred: &LabelingResult, gt: &LabeledCase, tol_mm: f64) -> Result<CaseScore> {
    score_positions(case, &pred.positions(), &gt.discs, gt.spacing_mm, tol_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub predictions: usize,
    pub ground_truth: usize,
    /// Pooled over matched pairs, row axis.
    pub mean_mm: f64,
    pub std_mm: f64,
    pub mean_l2_mm: f64,
    pub std_l2_mm: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn aggregate(scores: &[CaseScore]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::Config("no cases to aggregate".into()));
    }
    let axis: Vec<f64> = scores.iter().flat_map(|s| s.matched_axis_mm()).collect();
    let l2: Vec<f64> = scores.iter().flat_map(|s| s.matched_l2_mm()).collect();
    let (mean_mm, std_mm) = mean_std(&axis);
    let (mean_l2_mm, std_l2_mm) = mean_std(&l2);
    let sum = |f: fn(&CaseScore) -> usize| scores.iter().map(f).sum::<usize>();
    let (tp, fp, fn_) = (sum(|s| s.tp), sum(|s| s.fp), sum(|s| s.fn_));
    let (predictions, ground_truth) = (sum(|s| s.predictions), sum(|s| s.ground_truth));
    Ok(Summary {
        cases: scores.len(),
        tp,
        fp,
        fn_,
        predictions,
        ground_truth,
        mean_mm,
        std_mm,
        mean_l2_mm,
        std_l2_mm,
        fpr: percent(fp, predictions),
        fnr: percent(fn_, ground_truth),
    })
}

/// One evaluated method (e.g. with and without attention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub summary: Summary,
    pub cases: Vec<CaseScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerance_mm: f64,
    pub distance: String,
    pub fpr_denominator: String,
    pub fnr_denominator: String,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn new(tolerance_mm: f64, methods: Vec<MethodReport>) -> Self {
        Self {
            tolerance_mm,
            distance: "superior-inferior (row) axis, mm, matched pairs only; std is population".into(),
            fpr_denominator: "predicted discs".into(),
            fnr_denominator: "annotated discs".into(),
            methods,
        }
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,cases,tp,fp,fn,predictions,ground_truth,mean_mm,std_mm,mean_l2_mm,std_l2_mm,fpr_pct,fnr_pct\n");
        for m in &self.methods {
            let r = &m.summary;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                csv_field(&m.label),
                r.cases,
                r.tp,
                r.fp,
                r.fn_,
                r.predictions,
                r.ground_truth,
                r.mean_mm,
                r.std_mm,
                r.mean_l2_mm,
                r.std_l2_mm,
                r.fpr,
                r.fnr
            );
        }
        s
    }

    pub fn cases_csv(&self) -> String {
        let mut s = String::from("method,case,disc,outcome,axis_mm,l2_mm\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for m in &self.methods {
            for c in &m.cases {
                for d in &c.discs {
                    let outcome = serde_json::to_value(d.outcome)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        csv_field(&m.label),
                        csv_field(&c.case),
                        d.disc,
                        outcome,
                        opt(d.axis_mm),
                        opt(d.l2_mm)
                    );
                }
            }
        }
        s
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("# Intervertebral disc labeling results\n\n");
        let _ = writeln!(
            s,
            "Distance to target: {}. A prediction is a false positive, and the annotated disc a false negative, when they are at least {} mm apart. FPR is over {}, FNR over {}.\n",
            self.distance, self.tolerance_mm, self.fpr_denominator, self.fnr_denominator
        );
        s.push_str("| Method | Cases | Distance to target (mm) | FNR (%) | FPR (%) |\n");
        s.push_str("|---|---:|---:|---:|---:|\n");
        for m in &self.methods {
            let r = &m.summary;
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} (±{:.2}) | {:.2} | {:.2} |",
                m.label, r.cases, r.mean_mm, r.std_mm, r.fnr, r.fpr
            );
        }
        s
    }

    /// Writes `eval.json`, `eval_summary.csv`, `eval_cases.csv` and
    /// `eval.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("eval.json"), self)?;
        atomic_write(&dir.join("eval_summary.csv"), self.summary_csv().as_bytes())?;
        atomic_write(&dir.join("eval_cases.csv"), self.cases_csv().as_bytes())?;
        atomic_write(&dir.join("eval.md"), self.markdown().as_bytes())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = vec![Some((10.0, 5.0)), Some((20.0, 6.0)), None];
        let s = score_positions("a", &gt, &gt, (1.0, 1.0), DEFAULT_TOL_MM).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (2, 0, 0));
        let r = aggregate(&[s]).unwrap();
        assert_eq!((r.mean_mm, r.std_mm, r.fpr, r.fnr), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn six_mm_inferior_is_fp_and_fn() {
        let gt = vec![Some((10.0, 5.0))];
        let pred = vec![Some((16.0, 5.0))];
        let s = score_positions("a", &pred, &gt, (1.0, 1.0), DEFAULT_TOL_MM).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (0, 1, 1));
        let r = aggregate(&[s]).unwrap();
        assert_eq!((r.fpr, r.fnr), (100.0, 100.0));
    }

    #[test]
    fn boundary_and_spacing() {
        let gt = vec![Some((10.0, 5.0))];
        let at = vec![Some((15.0, 5.0))];
        let s = score_positions("a", &at, &gt, (1.0, 1.0), 5.0).unwrap();
        assert_eq!(s.tp, 0);
        let s = score_positions("a", &at, &gt, (0.999, 1.0), 5.0).unwrap();
        assert_eq!(s.tp, 1);
        assert!((s.discs[0].axis_mm.unwrap() - 4.995).abs() < 1e-12);
        assert!(score_positions("a", &at, &gt, (0.0, 1.0), 5.0).is_err());
    }

    #[test]
    fn pooled_mean() {
        let gt = vec![Some((10.0, 5.0))];
        let a = score_positions("a", &[Some((11.0, 5.0))], &gt, (1.0, 1.0), 5.0).unwrap();
        let b = score_positions("b", &[Some((13.0, 5.0))], &gt, (1.0, 1.0), 5.0).unwrap();
        let r = aggregate(&[a, b]).unwrap();
        assert_eq!(r.mean_mm, 2.0);
        assert_eq!(r.std_mm, 1.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn spurious_and_undetected() {
        let gt = vec![None, Some((20.0, 5.0))];
        let pred = vec![Some((3.0, 3.0)), None];
        let s = score_positions("a", &pred, &gt, (1.0, 1.0), 5.0).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.predictions, s.ground_truth), (0, 1, 1, 1, 1));
        let empty = score_positions("b", &[None], &[None], (1.0, 1.0), 5.0).unwrap();
        let r = aggregate(&[empty]).unwrap();
        assert_eq!((r.fpr, r.fnr), (0.0, 0.0));
    }

    #[test]
    fn outputs_have_headers() {
        let gt = vec![Some((10.0, 5.0))];
        let s = score_positions("c,1", &gt, &gt, (1.0, 1.0), 5.0).unwrap();
        let rep = EvalReport::new(
            5.0,
            vec![MethodReport {
                label: "proposed".into(),
                summary: aggregate(std::slice::from_ref(&s)).unwrap(),
                cases: vec![s],
            }],
        );
        assert!(rep.summary_csv().starts_with("method,cases"));
        assert!(rep.cases_csv().contains("\"c,1\",0,matched"));
        assert!(rep.markdown().contains("| proposed | 1 | 0.00 (±0.00) | 0.00 | 0.00 |"));
    }
}
