//! The four commands (synth, train, label, eval) and their on-disk layout.
//!
//! ```text
//! dataset/   manifest.json  cases/case_0000.{ndat,json} ...  run.json
//! ckpt/      model.json  <param>.ndat ...  adam/{m,v}.<param>.ndat
//!            train_state.json  skeleton.json  loss.csv  run.json
//! labels/    results/<id>.json  candidates/<id>.json  overlays/<id>.png
//!            attention/<id>.png  run.json
//! report/    eval.json  eval_summary.csv  eval_cases.csv  eval.md  run.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidates::{extract_all, CandidateParams, CandidateSet};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_json, write_json};
use crate::labeling::LabelingResult;
use crate::metrics::{aggregate, match_and_score, EvalReport, MethodReport, DEFAULT_TOL_MM};
use crate::model::{build_model, Model, ModelConfig, CHECKPOINT_MANIFEST};
use crate::render::{write_map, write_overlay, Overlay};
use crate::skeleton::{build_skeleton, search_with, SearchOptions, SearchStats, Skeleton};
use crate::synth::{generate_dataset, Split, SynthConfig};
use crate::targets::{load_case, make_target, resize_bilinear, resize_case, save_case, LabeledCase, TargetParams};
use crate::tensor::{ndat, Tensor};
use crate::training::{train, AdamState, EpochLoss, Sample, TrainConfig, TrainState};

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const RUN_MANIFEST: &str = "run.json";
pub const SKELETON_FILE: &str = "skeleton.json";
pub const TRAIN_STATE: &str = "train_state.json";
pub const LOSS_CSV: &str = "loss.csv";

/// Every tunable of the pipeline, loadable from one JSON file in which any
/// field may be omitted. Sections left out entirely take the desk-scale
/// defaults (64x64 inputs, 5 discs); fields left out of a given section take
/// that section's own defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub target: TargetParams,
    pub candidates: CandidateParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            model: ModelConfig::tiny(synth.num_discs),
            synth,
            train: TrainConfig::default(),
            target: TargetParams::default(),
            candidates: CandidateParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Provenance of one command invocation. Timings live here and nowhere else
/// so that every other output is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config).map_err(|e| Error::json(Path::new("<config>"), e))?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: BTreeMap::new(),
        })
    }

    fn time(&mut self, name: &str, start: Instant) {
        self.timings_s.insert(name.into(), start.elapsed().as_secs_f64());
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join(RUN_MANIFEST), self)
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub image: String,
    pub annotations: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub synth: Option<SynthConfig>,
    pub cases: Vec<DatasetEntry>,
}

/// A loaded case together with its dataset id.
#[derive(Debug, Clone)]
pub struct NamedCase {
    pub id: String,
    pub split: Option<Split>,
    pub case: LabeledCase,
}

/// Accepts either a dataset directory or the path of its manifest.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_MANIFEST)
    } else {
        p.to_path_buf()
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let path = manifest_path(path);
        let m: Self = read_json(&path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, root))
    }

    /// Loads cases of `split` (all splits when `None`) in manifest order.
    pub fn load_cases(path: &Path, split: Option<Split>) -> Result<Vec<NamedCase>> {
        let (m, root) = Self::load(path)?;
        m.cases
            .iter()
            .filter(|e| split.is_none_or(|s| s == e.split))
            .map(|e| {
                Ok(NamedCase {
                    id: e.id.clone(),
                    split: Some(e.split),
                    case: load_case(&root.join(&e.image), &root.join(&e.annotations))?,
                })
            })
            .collect()
    }
}

/// Generates the synthetic dataset into `out`.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let mut run = RunManifest::new("synth", Some(cfg.seed), cfg)?;
    let cases = generate_dataset(cfg)?;
    let mut entries = Vec::with_capacity(cases.len());
    for (i, (split, case)) in cases.iter().enumerate() {
        let id = format!("case_{i:04}");
        let (image, ann) = save_case(&out.join("cases"), &id, case)?;
        entries.push(DatasetEntry {
            id,
            image: format!("cases/{image}"),
            annotations: format!("cases/{ann}"),
            split: *split,
        });
    }
    write_json(
        &out.join(DATASET_MANIFEST),
        &DatasetManifest {
            synth: Some(cfg.clone()),
            cases: entries,
        },
    )?;
    run.outputs.push(display(&out.join(DATASET_MANIFEST)));
    run.time("total", start);
    run.write(out)?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub target: TargetParams,
    /// Continue from the checkpoint already in the output directory.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainStateFile {
    step: u64,
    epochs_done: usize,
    train: TrainConfig,
    curve: Vec<EpochLoss>,
}

pub fn loss_csv(curve: &[EpochLoss]) -> String {
    let stacks = curve.first().map_or(0, |e| e.intermediate.len());
    let mut s = String::from("epoch,total");
    for k in 0..stacks {
        let _ = write!(s, ",stack{}", k + 1);
    }
    s.push_str(",final\n");
    for e in curve {
        let _ = write!(s, "{},{:.9}", e.epoch, e.total);
        for v in &e.intermediate {
            let _ = write!(s, ",{v:.9}");
        }
        let _ = writeln!(s, ",{:.9}", e.final_term);
    }
    s
}

fn save_training(
    dir: &Path,
    model: &Model<f32>,
    seed: u64,
    state: &TrainState,
    cfg: &TrainConfig,
    curve: &[EpochLoss],
) -> Result<()> {
    let adam = dir.join("adam");
    for (i, name) in model.params.names.iter().enumerate() {
        let shape = model.params.tensors[i].shape().to_vec();
        ndat::write(&adam.join(format!("m.{name}.ndat")), &Tensor::new(shape.clone(), state.adam.m[i].clone())?)?;
        ndat::write(&adam.join(format!("v.{name}.ndat")), &Tensor::new(shape, state.adam.v[i].clone())?)?;
    }
    write_json(
        &dir.join(TRAIN_STATE),
        &TrainStateFile {
            step: state.adam.step,
            epochs_done: state.epochs_done,
            train: cfg.clone(),
            curve: curve.to_vec(),
        },
    )?;
    atomic_write(&dir.join(LOSS_CSV), loss_csv(curve).as_bytes())?;
    // model.json last: its presence marks a complete checkpoint
    model.save(dir, seed)
}

fn load_training(dir: &Path) -> Result<(Model<f32>, TrainState, Vec<EpochLoss>)> {
    let model = Model::load(dir)?;
    let f: TrainStateFile = read_json(&dir.join(TRAIN_STATE))?;
    let mut adam = AdamState::new(&model.params.tensors);
    adam.step = f.step;
    let adam_dir = dir.join("adam");
    for (i, name) in model.params.names.iter().enumerate() {
        let m = ndat::read(&adam_dir.join(format!("m.{name}.ndat")))?;
        let v = ndat::read(&adam_dir.join(format!("v.{name}.ndat")))?;
        if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
            return Err(Error::Config(format!("optimizer state for `{name}` has the wrong size")));
        }
        adam.m[i] = m.into_data();
        adam.v[i] = v.into_data();
    }
    Ok((
        model,
        TrainState {
            adam,
            epochs_done: f.epochs_done,
        },
        f.curve,
    ))
}

/// Builds the model input and target for one case.
pub fn prepare_sample(case: &LabeledCase, cfg: &ModelConfig, target: &TargetParams) -> Result<Sample> {
    let (h, w) = cfg.input_size;
    if case.num_discs() != cfg.num_discs {
        return Err(Error::Config(format!(
            "case has {} discs, model expects {}",
            case.num_discs(),
            cfg.num_discs
        )));
    }
    let resized = resize_case(case, h, w)?;
    let target = make_target(&resized, target)?;
    Ok(Sample {
        image: resized.image.reshape(vec![1, h, w])?,
        target,
    })
}

/// Skeleton from every case that annotates disc 1 and the scale disc.
pub fn skeleton_from_cases(cases: &[NamedCase]) -> Result<Skeleton> {
    let usable: Vec<LabeledCase> = cases
        .iter()
        .filter(|c| {
            let d = &c.case.discs;
            d.first().is_some_and(Option::is_some) && d.get(crate::skeleton::SCALE_DISC).is_none_or(Option::is_some)
        })
        .map(|c| c.case.clone())
        .collect();
    build_skeleton(&usable)
}

pub struct TrainOutcome {
    pub curve: Vec<EpochLoss>,
    pub run: RunManifest,
}

/// Trains on the `train` split and writes the checkpoint directory.
pub fn cmd_train(job: &TrainJob, out: &Path) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut run = RunManifest::new("train", Some(job.train.seed), job)?;
    run.inputs.push(display(&manifest_path(&job.dataset)));
    job.train.validate()?;
    let cases = DatasetManifest::load_cases(&job.dataset, Some(Split::Train))?;
    if cases.is_empty() {
        return Err(Error::Config("dataset has no training cases".into()));
    }

    let (mut model, mut state, mut curve) = if job.resume && out.join(CHECKPOINT_MANIFEST).exists() {
        let (m, s, c) = load_training(out)?;
        if m.config() != &job.model {
            log::warn!("resuming with the checkpoint's model config; the supplied one is ignored");
        }
        log::info!("resuming after epoch {}", s.epochs_done);
        (m, s, c)
    } else {
        let m = build_model::<f32>(&job.model, job.train.seed)?;
        let s = TrainState::new(&m);
        (m, s, Vec::new())
    };
    let cfg = model.config().clone();
    let samples = crate::par::map(&cases, |c| prepare_sample(&c.case, &cfg, &job.target))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    run.time("prepare", start);

    let skeleton = skeleton_from_cases(&cases)?;
    skeleton.save(&out.join(SKELETON_FILE))?;

    let t_train = Instant::now();
    let seed = job.train.seed;
    let every = job.train.checkpoint_every;
    let mut history = curve.clone();
    let new = train(&mut model, &samples, &job.train, &mut state, |e, m, s| {
        history.push(e.clone());
        if every > 0 && e.epoch % every == 0 {
            save_training(out, m, seed, s, &job.train, &history)?;
        }
        Ok(())
    })?;
    curve.extend(new);
    run.time("train", t_train);
    save_training(out, &model, seed, &state, &job.train, &curve)?;
    run.outputs.push(display(out));
    run.time("total", start);
    run.write(out)?;
    Ok(TrainOutcome { curve, run })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelJob {
    pub checkpoint: PathBuf,
    /// Dataset directory, dataset manifest, or a single `.ndat` image.
    pub input: PathBuf,
    /// Split to label when `input` is a dataset; `None` labels every case.
    pub split: Option<Split>,
    /// Defaults to the checkpoint's skeleton.
    pub skeleton: Option<PathBuf>,
    pub num_discs: Option<usize>,
    /// Use the last stack's heatmap instead of the attention-gated one.
    pub no_attention: bool,
    /// Report the top-scoring candidate of every disc, without the search.
    pub no_skeleton: bool,
    pub candidates: CandidateParams,
    pub overlays: bool,
    pub attention_maps: bool,
    pub zero_error_shortcut: bool,
}

impl LabelJob {
    pub fn new(checkpoint: PathBuf, input: PathBuf) -> Self {
        Self {
            checkpoint,
            input,
            split: Some(Split::Test),
            skeleton: None,
            num_discs: None,
            no_attention: false,
            no_skeleton: false,
            candidates: CandidateParams::default(),
            overlays: true,
            attention_maps: false,
            zero_error_shortcut: false,
        }
    }
}

/// Per-case labeling output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub method: String,
    pub labels: LabelingResult,
    pub present: usize,
    /// Skeleton error of the chosen assignment (absent with `--no-skeleton`).
    pub error: Option<f64>,
    pub feasible: bool,
    pub notice: Option<String>,
    pub stats: Option<SearchStats>,
}

fn load_inputs(job: &LabelJob, num_discs: usize) -> Result<Vec<NamedCase>> {
    let p = &job.input;
    if p.extension().is_some_and(|e| e == "ndat") {
        let ann = p.with_extension("json");
        let case = if ann.exists() {
            load_case(p, &ann)?
        } else {
            let image = ndat::read(p)?;
            LabeledCase {
                image,
                spacing_mm: (1.0, 1.0),
                discs: vec![None; num_discs],
            }
        };
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into());
        return Ok(vec![NamedCase { id, split: None, case }]);
    }
    DatasetManifest::load_cases(p, job.split)
}

/// Maps a position from model-input pixels back to image pixels.
fn to_image_coords((r, c): (f64, f64), input: (usize, usize), image: (usize, usize)) -> (f64, f64) {
    let fy = image.0 as f64 / input.0 as f64;
    let fx = image.1 as f64 / input.1 as f64;
    ((r + 0.5) * fy - 0.5, (c + 0.5) * fx - 0.5)
}

/// Labeling result, raw candidates, the heatmap stack they came from and
/// the attention map (when the model has one).
pub type LabeledOutput = (CaseResult, CandidateSet, Tensor<f32>, Option<Tensor<f32>>);

/// Runs the network, extraction and (optionally) the skeleton search on one
/// image; positions are returned in the image's own pixel grid.
pub fn label_case(
    model: &Model<f32>,
    skeleton: Option<&Skeleton>,
    case: &LabeledCase,
    job: &LabelJob,
) -> Result<LabeledOutput> {
    let cfg = model.config();
    let (h, w) = cfg.input_size;
    let image = resize_bilinear(&case.image, h, w)?.reshape(vec![1, h, w])?;
    let out = model.forward(&image)?;
    let heat = if job.no_attention {
        out.pre_attention
    } else {
        out.final_heatmap
    };
    let mut set = extract_all(&heat, &job.candidates)?;
    let dims = (case.rows(), case.cols());
    for c in set.per_disc.iter_mut().flatten() {
        (c.row, c.col) = to_image_coords((c.row, c.col), (h, w), dims);
    }
    let method = if job.no_skeleton { "top1" } else { "skeleton" };
    let result = match skeleton {
        Some(s) if !job.no_skeleton => {
            let a = search_with(
                &set,
                s,
                SearchOptions {
                    num_discs_hint: job.num_discs,
                    zero_error_shortcut: job.zero_error_shortcut,
                },
            )?;
            let notice = (!a.feasible).then(|| {
                format!(
                    "no ordering-feasible assignment with exactly {} present discs",
                    job.num_discs.unwrap_or(0)
                )
            });
            CaseResult {
                case: String::new(),
                method: method.into(),
                labels: LabelingResult::from_assignment(&set, &a),
                present: a.present,
                error: a.feasible.then_some(a.error),
                feasible: a.feasible,
                notice,
                stats: Some(a.stats),
            }
        }
        _ => {
            let labels = LabelingResult::top1(&set);
            CaseResult {
                case: String::new(),
                method: method.into(),
                present: labels.num_present(),
                labels,
                error: None,
                feasible: true,
                notice: None,
                stats: None,
            }
        }
    };
    Ok((result, set, heat, out.attention_map))
}

/// Max over channels, resized to the image grid, for overlays.
fn max_projection(heat: &Tensor<f32>, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let &[v, h, w] = heat.shape() else {
        return Err(Error::Shape(format!("expected [V, H, W], got {:?}", heat.shape())));
    };
    let mut m = vec![f32::NEG_INFINITY; h * w];
    for c in 0..v {
        for (a, b) in m.iter_mut().zip(heat.slice0(c)) {
            *a = a.max(*b);
        }
    }
    Ok(resize_bilinear(&Tensor::new(vec![h, w], m)?, rows, cols)?.into_data())
}

fn overlay_scale(rows: usize, cols: usize) -> u32 {
    (256 / rows.max(cols).max(1)).clamp(1, 4) as u32
}

/// Labels every input case and writes results, candidates and images.
pub fn cmd_label(job: &LabelJob, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let mut run = RunManifest::new("label", None, job)?;
    run.inputs.push(display(&job.checkpoint));
    run.inputs.push(display(&job.input));
    let model = Model::load(&job.checkpoint)?;
    let v = model.config().num_discs;
    if job.num_discs.is_some_and(|n| n > v) {
        return Err(Error::Config(format!("--num-discs exceeds the model's {v} discs")));
    }
    let skeleton = if job.no_skeleton {
        None
    } else {
        let p = job
            .skeleton
            .clone()
            .unwrap_or_else(|| job.checkpoint.join(SKELETON_FILE));
        let s = Skeleton::load(&p)?;
        if s.num_discs() != v {
            return Err(Error::Config(format!("skeleton has {} discs, model {v}", s.num_discs())));
        }
        run.inputs.push(display(&p));
        Some(s)
    };
    let cases = load_inputs(job, v)?;
    for nc in &cases {
        let (mut result, set, heat, att) = label_case(&model, skeleton.as_ref(), &nc.case, job)?;
        result.case = nc.id.clone();
        write_json(&out.join("results").join(format!("{}.json", nc.id)), &result)?;
        write_json(
            &out.join("candidates").join(format!("{}.json", nc.id)),
            &set.records(),
        )?;
        let (rows, cols) = (nc.case.rows(), nc.case.cols());
        let scale = overlay_scale(rows, cols);
        if job.overlays {
            let proj = max_projection(&heat, rows, cols)?;
            let predicted = result.labels.positions();
            write_overlay(
                &out.join("overlays").join(format!("{}.png", nc.id)),
                nc.case.image.data(),
                rows,
                cols,
                scale,
                &Overlay {
                    heatmap: Some(&proj),
                    predicted: &predicted,
                    truth: &nc.case.discs,
                },
            )?;
        }
        if let (true, Some(a)) = (job.attention_maps, att) {
            let (h, w) = model.config().input_size;
            let a = resize_bilinear(&a.reshape(vec![h, w])?, rows, cols)?;
            write_map(&out.join("attention").join(format!("{}.png", nc.id)), a.data(), rows, cols, scale)?;
        }
    }
    run.outputs.push(display(&out.join("results")));
    run.time("total", start);
    run.write(out)?;
    Ok(run)
}

/// Reads every `results/<id>.json` under a label output directory, sorted by id.
pub fn load_results(dir: &Path) -> Result<Vec<CaseResult>> {
    let rdir = dir.join("results");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&rdir)
        .map_err(|e| Error::io(&rdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub dataset: PathBuf,
    /// `(method label, label output directory)`, one report row each.
    pub results: Vec<(String, PathBuf)>,
    pub tolerance_mm: f64,
}

impl EvalJob {
    pub fn new(dataset: PathBuf, results: Vec<(String, PathBuf)>) -> Self {
        Self {
            dataset,
            results,
            tolerance_mm: DEFAULT_TOL_MM,
        }
    }
}

/// Scores label outputs against the dataset annotations.
pub fn evaluate(job: &EvalJob) -> Result<EvalReport> {
    if job.results.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let cases: BTreeMap<String, LabeledCase> = DatasetManifest::load_cases(&job.dataset, None)?
        .into_iter()
        .map(|c| (c.id, c.case))
        .collect();
    let mut methods = Vec::with_capacity(job.results.len());
    for (label, dir) in &job.results {
        let results = load_results(dir)?;
        let scores = results
            .iter()
            .map(|r| {
                let gt = cases
                    .get(&r.case)
                    .ok_or_else(|| Error::Config(format!("result `{}` is not in the dataset", r.case)))?;
                match_and_score(&r.case, &r.labels, gt, job.tolerance_mm)
            })
            .collect::<Result<Vec<_>>>()?;
        methods.push(MethodReport {
            label: label.clone(),
            summary: aggregate(&scores)?,
            cases: scores,
        });
    }
    Ok(EvalReport::new(job.tolerance_mm, methods))
}

pub fn cmd_eval(job: &EvalJob, out: &Path) -> Result<(EvalReport, RunManifest)> {
    let start = Instant::now();
    let mut run = RunManifest::new("eval", None, job)?;
    run.inputs.push(display(&manifest_path(&job.dataset)));
    run.inputs.extend(job.results.iter().map(|(_, d)| display(d)));
    let report = evaluate(job)?;
    report.write(out)?;
    run.outputs.push(display(out));
    run.time("total", start);
    run.write(out)?;
    Ok((report, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_csv_layout() {
        let c = vec![EpochLoss {
            epoch: 1,
            total: 0.5,
            intermediate: vec![0.2, 0.2],
            final_term: 0.1,
        }];
        let s = loss_csv(&c);
        assert_eq!(s.lines().next(), Some("epoch,total,stack1,stack2,final"));
        assert_eq!(s.lines().count(), 2);
    }

    #[test]
    fn coordinate_roundtrip() {
        // image -> input mapping used by resize_case, then back
        let (img, inp) = ((128, 96), (64, 64));
        let (r, c) = (37.0, 51.0);
        let fy = inp.0 as f64 / img.0 as f64;
        let fx = inp.1 as f64 / img.1 as f64;
        let down = ((r + 0.5) * fy - 0.5, (c + 0.5) * fx - 0.5);
        let back = to_image_coords(down, inp, img);
        assert!((back.0 - r).abs() < 1e-12 && (back.1 - c).abs() < 1e-12);
    }

    #[test]
    fn config_defaults_fill_in() {
        let c: PipelineConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.model.num_stacks, 2);
        assert_eq!(c.model.input_size, (64, 64));
    }
}
