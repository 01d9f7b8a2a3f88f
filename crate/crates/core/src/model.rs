//! Stacked hourglass network with multi-level attention fusion.
//!
//! Each stack runs an hourglass over full-resolution features and emits a
//! per-disc heatmap (intermediate supervision). The per-stack feature maps
//! are concatenated and squeezed through pointwise convolutions into a
//! single sigmoid gate that rescales the last stack's heatmap.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ndat, Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_stacks: usize,
    pub feature_channels: usize,
    pub num_discs: usize,
    /// `(rows, cols)` of the network input.
    pub input_size: (usize, usize),
    /// Number of 2x downsamplings inside each hourglass.
    pub hourglass_depth: usize,
    /// Disable to get a plain stacked hourglass (the attention ablation).
    pub attention: bool,
    /// Width of the hidden pointwise layer in the attention branch.
    /// `None` means half of the concatenated channel count.
    pub attention_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_stacks: 2,
            feature_channels: 32,
            num_discs: crate::targets::DEFAULT_NUM_DISCS,
            input_size: (256, 256),
            hourglass_depth: 4,
            attention: true,
            attention_hidden: None,
        }
    }
}

impl ModelConfig {
    /// Small CPU-friendly configuration.
    pub fn tiny(num_discs: usize) -> Self {
        Self {
            feature_channels: 16,
            num_discs,
            input_size: (64, 64),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stacks == 0 {
            return Err(Error::Config("num_stacks must be at least 1".into()));
        }
        if self.num_discs == 0 {
            return Err(Error::Config("num_discs must be at least 1".into()));
        }
        if self.feature_channels < 2 || !self.feature_channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "feature_channels must be an even number >= 2, got {}",
                self.feature_channels
            )));
        }
        if self.hourglass_depth == 0 || self.hourglass_depth > 16 {
            return Err(Error::Config("hourglass_depth must be in 1..=16".into()));
        }
        let f = 1usize << self.hourglass_depth;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} is not divisible by 2^{} = {f}",
                self.hourglass_depth
            )));
        }
        if self.attention_hidden == Some(0) {
            return Err(Error::Config("attention_hidden must be positive".into()));
        }
        Ok(())
    }

    fn attention_in(&self) -> usize {
        self.num_stacks * self.feature_channels
    }

    fn attention_width(&self) -> usize {
        self.attention_hidden
            .unwrap_or_else(|| (self.attention_in() / 2).max(1))
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
    padding: usize,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: usize,
    beta: usize,
}

/// Pre-activation bottleneck residual block.
#[derive(Debug, Clone)]
struct Residual {
    n1: Norm,
    c1: Conv,
    n2: Norm,
    c2: Conv,
    n3: Norm,
    c3: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
enum Inner {
    Hourglass(Box<Hourglass>),
    Residual(Residual),
}

#[derive(Debug, Clone)]
struct Hourglass {
    up1: Residual,
    low1: Residual,
    inner: Inner,
    low3: Residual,
}

#[derive(Debug, Clone)]
struct Stack {
    hourglass: Hourglass,
    res: Residual,
    feat: Conv,
    feat_norm: Norm,
    head: Conv,
    /// Maps (features, heatmap) back into the trunk for the next stack.
    merge: Option<(Conv, Conv)>,
}

/// Pointwise conv, relu, pointwise conv to one channel, sigmoid.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    hidden: Conv,
    out: Conv,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: Conv,
    stem_norm: Norm,
    stem_res: Residual,
    stacks: Vec<Stack>,
    attention: Option<AttentionBlock>,
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Heatmap heads start close to zero, like the mostly empty targets.
const HEAD_GAIN: f64 = 0.1;

/// Allocates parameters with seeded He-uniform initialization.
struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    values: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.names.push(name);
        self.values.push((shape, data));
        self.names.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Conv {
        self.scaled_conv(name, cin, cout, k, bias, 1.0)
    }

    fn scaled_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool, gain: f64) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let n = cout * cin * k * k;
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        let weight = self.push(format!("{name}.w"), vec![cout, cin, k, k], data);
        let bias = bias.then(|| self.push(format!("{name}.b"), vec![cout], vec![0.0; cout]));
        Conv {
            weight,
            bias,
            padding: (k - 1) / 2,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.push(format!("{name}.gamma"), vec![c], vec![1.0; c]),
            beta: self.push(format!("{name}.beta"), vec![c], vec![0.0; c]),
        }
    }

    fn residual(&mut self, name: &str, cin: usize, cout: usize) -> Residual {
        let mid = (cout / 2).max(1);
        Residual {
            n1: self.norm(&format!("{name}.n1"), cin),
            c1: self.conv(&format!("{name}.c1"), cin, mid, 1, false),
            n2: self.norm(&format!("{name}.n2"), mid),
            c2: self.conv(&format!("{name}.c2"), mid, mid, 3, false),
            n3: self.norm(&format!("{name}.n3"), mid),
            c3: self.conv(&format!("{name}.c3"), mid, cout, 1, true),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, true)),
        }
    }

    fn hourglass(&mut self, name: &str, depth: usize, f: usize) -> Hourglass {
        let up1 = self.residual(&format!("{name}.up1"), f, f);
        let low1 = self.residual(&format!("{name}.low1"), f, f);
        let inner = if depth > 1 {
            Inner::Hourglass(Box::new(self.hourglass(&format!("{name}.d{}", depth - 1), depth - 1, f)))
        } else {
            Inner::Residual(self.residual(&format!("{name}.low2"), f, f))
        };
        let low3 = self.residual(&format!("{name}.low3"), f, f);
        Hourglass {
            up1,
            low1,
            inner,
            low3,
        }
    }

    fn attention(&mut self, name: &str, cin: usize, hidden: usize) -> AttentionBlock {
        AttentionBlock {
            hidden: self.conv(&format!("{name}.hidden"), cin, hidden, 1, true),
            out: self.conv(&format!("{name}.out"), hidden, 1, 1, true),
        }
    }

    fn finish<T: Scalar>(self) -> ParamSet<T> {
        ParamSet {
            names: self.names,
            tensors: self
                .values
                .into_iter()
                .map(|(shape, data)| {
                    Tensor::new(shape, data.into_iter().map(T::lit).collect()).expect("builder shapes")
                })
                .collect(),
        }
    }
}

fn layout(cfg: &ModelConfig, rng_seed: u64) -> (Layout, Builder) {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        names: Vec::new(),
        values: Vec::new(),
    };
    let f = cfg.feature_channels;
    let stem = b.conv("stem.conv", 1, f, 3, false);
    let stem_norm = b.norm("stem.norm", f);
    let stem_res = b.residual("stem.res", f, f);
    let stacks = (0..cfg.num_stacks)
        .map(|s| {
            let p = format!("stack{s}");
            let hourglass = b.hourglass(&format!("{p}.hg"), cfg.hourglass_depth, f);
            let res = b.residual(&format!("{p}.res"), f, f);
            let feat = b.conv(&format!("{p}.feat"), f, f, 1, true);
            let feat_norm = b.norm(&format!("{p}.feat_norm"), f);
            let head = b.scaled_conv(&format!("{p}.head"), f, cfg.num_discs, 1, true, HEAD_GAIN);
            let merge = (s + 1 < cfg.num_stacks).then(|| {
                (
                    b.conv(&format!("{p}.merge_feat"), f, f, 1, true),
                    b.conv(&format!("{p}.merge_heat"), cfg.num_discs, f, 1, true),
                )
            });
            Stack {
                hourglass,
                res,
                feat,
                feat_norm,
                head,
                merge,
            }
        })
        .collect();
    let attention = cfg
        .attention
        .then(|| b.attention("attention", cfg.attention_in(), cfg.attention_width()));
    (
        Layout {
            stem,
            stem_norm,
            stem_res,
            stacks,
            attention,
        },
        b,
    )
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// One leaf per parameter, aligned with [`ParamSet::tensors`].
    pub params: Vec<Var>,
    /// Per-stack heatmaps, each `[1, V, H, W]`.
    pub intermediate: Vec<Var>,
    /// Per-stack feature maps fed to the attention branch.
    pub features: Vec<Var>,
    /// `[1, 1, H, W]` sigmoid gate; absent when attention is disabled.
    pub attention: Option<Var>,
    /// Last stack's heatmap before gating.
    pub pre_attention: Var,
    /// Gated heatmap (equal to `pre_attention` without attention).
    pub final_heatmap: Var,
}

/// Materialized forward results with the leading batch axis dropped.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar = f32> {
    /// `num_stacks` tensors of shape `[V, H, W]`.
    pub intermediate_heatmaps: Vec<Tensor<T>>,
    /// `[1, H, W]`; absent when attention is disabled.
    pub attention_map: Option<Tensor<T>>,
    pub pre_attention: Tensor<T>,
    /// `[V, H, W]`.
    pub final_heatmap: Tensor<T>,
}

/// Network parameters plus the wiring that consumes them.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    cfg: ModelConfig,
    layout: Layout,
    pub params: ParamSet<T>,
}

/// Builds a model with deterministic initialization from `rng_seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, rng_seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let (layout, builder) = layout(cfg, rng_seed);
    Ok(Model {
        cfg: cfg.clone(),
        layout,
        params: builder.finish(),
    })
}

impl Conv {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.conv2d(x, p[self.weight], 1, self.padding)?;
        match self.bias {
            Some(b) => g.add_channel_bias(y, p[b]),
            None => Ok(y),
        }
    }
}

impl Norm {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.instance_norm(x, p[self.gamma], p[self.beta])
    }
}

impl Residual {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (n, c) in [(&self.n1, &self.c1), (&self.n2, &self.c2), (&self.n3, &self.c3)] {
            let a = n.apply(g, p, h)?;
            let a = g.relu(a);
            h = c.apply(g, p, a)?;
        }
        let skip = match &self.skip {
            Some(s) => s.apply(g, p, x)?,
            None => x,
        };
        g.add(skip, h)
    }
}

impl Hourglass {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let up1 = self.up1.apply(g, p, x)?;
        let pooled = g.maxpool2(x)?;
        let low1 = self.low1.apply(g, p, pooled)?;
        let low2 = match &self.inner {
            Inner::Hourglass(h) => h.apply(g, p, low1)?,
            Inner::Residual(r) => r.apply(g, p, low1)?,
        };
        let low3 = self.low3.apply(g, p, low2)?;
        let up2 = g.upsample_nearest2(low3)?;
        g.add(up1, up2)
    }
}

impl AttentionBlock {
    /// Squeezes the concatenated `intermediates` into a single-channel
    /// sigmoid map and multiplies it into `prediction`.
    /// Returns `(attention_map, refined_prediction)`.
    pub fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        intermediates: &[Var],
        prediction: Var,
    ) -> Result<(Var, Var)> {
        let ps = g.value(prediction).shape().to_vec();
        for &v in intermediates {
            let s = g.value(v).shape();
            if s.len() != 4 || s[2..] != ps[2..] || s[0] != ps[0] {
                return Err(Error::Shape(format!(
                    "attention input {s:?} does not match prediction {ps:?} spatially"
                )));
            }
        }
        let stacked = g.concat_channels(intermediates)?;
        let hidden = self.hidden.apply(g, params, stacked)?;
        let hidden = g.relu(hidden);
        let logits = self.out.apply(g, params, hidden)?;
        let att = g.sigmoid(logits);
        let refined = g.gate(prediction, att)?;
        Ok((att, refined))
    }

    /// Parameter indices of this block (weights then biases).
    pub fn param_indices(&self) -> Vec<usize> {
        [&self.hidden, &self.out]
            .iter()
            .flat_map(|c| std::iter::once(c.weight).chain(c.bias))
            .collect()
    }
}

/// Standalone attention block over `in_channels` concatenated channels,
/// with its own parameter set. Mostly useful for testing the fusion in
/// isolation.
pub fn build_attention_block<T: Scalar>(
    in_channels: usize,
    hidden: usize,
    rng_seed: u64,
) -> (AttentionBlock, ParamSet<T>) {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        names: Vec::new(),
        values: Vec::new(),
    };
    let block = b.attention("attention", in_channels, hidden);
    (block, b.finish())
}

/// Functional form of the attention fusion: builds a fresh graph around
/// `block`/`params` and returns `(attention_map, refined)` as tensors.
pub fn attention_fuse<T: Scalar>(
    block: &AttentionBlock,
    params: &ParamSet<T>,
    intermediates: &[Tensor<T>],
    final_features: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let p: Vec<Var> = params.tensors.iter().map(|t| g.input(t.clone())).collect();
    let iv = intermediates
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Vec<_>>();
    let fv = g.input(final_features.clone());
    let (a, r) = block.fuse(&mut g, &p, &iv, fv)?;
    Ok((g.value(a).clone(), g.value(r).clone()))
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn attention_block(&self) -> Option<&AttentionBlock> {
        self.layout.attention.as_ref()
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: ParamSet {
                names: self.params.names.clone(),
                tensors: self.params.tensors.iter().map(Tensor::cast).collect(),
            },
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let (h, w) = self.cfg.input_size;
        let ok = matches!(image.shape(), [1, ih, iw] | [ih, iw] if (*ih, *iw) == (h, w));
        if !ok {
            return Err(Error::Shape(format!(
                "model expects a 1x{h}x{w} image, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Records the forward pass into `g`. Parameters become trainable leaves.
    pub fn forward_graph(&self, g: &mut Graph<T>, image: &Tensor<T>) -> Result<ForwardVars> {
        self.check_image(image)?;
        let (h, w) = self.cfg.input_size;
        let params: Vec<Var> = self.params.tensors.iter().map(|t| g.param(t.clone())).collect();
        let p = &params;
        let l = &self.layout;
        let x = g.input(image.clone().reshape(vec![1, 1, h, w])?);
        let x = l.stem.apply(g, p, x)?;
        let x = l.stem_norm.apply(g, p, x)?;
        let x = g.relu(x);
        let mut trunk = l.stem_res.apply(g, p, x)?;

        let mut intermediate = Vec::with_capacity(l.stacks.len());
        let mut features = Vec::with_capacity(l.stacks.len());
        for stack in &l.stacks {
            let y = stack.hourglass.apply(g, p, trunk)?;
            let y = stack.res.apply(g, p, y)?;
            let y = stack.feat.apply(g, p, y)?;
            let y = stack.feat_norm.apply(g, p, y)?;
            let feat = g.relu(y);
            let heat = stack.head.apply(g, p, feat)?;
            if let Some((mf, mh)) = &stack.merge {
                let a = mf.apply(g, p, feat)?;
                let b = mh.apply(g, p, heat)?;
                let ab = g.add(a, b)?;
                trunk = g.add(trunk, ab)?;
            }
            features.push(feat);
            intermediate.push(heat);
        }
        let pre_attention = *intermediate.last().expect("at least one stack");
        let (attention, final_heatmap) = match &l.attention {
            Some(block) => {
                let (a, r) = block.fuse(g, p, &features, pre_attention)?;
                (Some(a), r)
            }
            None => (None, pre_attention),
        };
        Ok(ForwardVars {
            params,
            intermediate,
            features,
            attention,
            pre_attention,
            final_heatmap,
        })
    }

    /// Runs a forward pass and returns materialized outputs.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, image)?;
        let (h, w) = self.cfg.input_size;
        let v = self.cfg.num_discs;
        let take = |var: Var, c: usize| g.value(var).clone().reshape(vec![c, h, w]);
        Ok(ForwardOutput {
            intermediate_heatmaps: vars
                .intermediate
                .iter()
                .map(|&x| take(x, v))
                .collect::<Result<_>>()?,
            attention_map: vars.attention.map(|a| take(a, 1)).transpose()?,
            pre_attention: take(vars.pre_attention, v)?,
            final_heatmap: take(vars.final_heatmap, v)?,
        })
    }
}

/// Checkpoint manifest entry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

pub const CHECKPOINT_MANIFEST: &str = "model.json";

impl Model<f32> {
    /// Writes one NDAT file per parameter plus `model.json`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            let file = format!("params/{name}.ndat");
            ndat::write(&dir.join(&file), t)?;
            entries.push(ParamEntry {
                name: name.clone(),
                file,
                shape: t.shape().to_vec(),
            });
        }
        crate::io::write_json(
            &dir.join(CHECKPOINT_MANIFEST),
            &CheckpointManifest {
                config: self.cfg.clone(),
                seed,
                params: entries,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: CheckpointManifest = crate::io::read_json(&dir.join(CHECKPOINT_MANIFEST))?;
        let mut model = build_model::<f32>(&m.config, m.seed)?;
        if m.params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint lists {} parameters, config implies {}",
                m.params.len(),
                model.params.len()
            )));
        }
        for entry in &m.params {
            let idx = model
                .params
                .index_of(&entry.name)
                .ok_or_else(|| Error::Config(format!("unknown parameter `{}`", entry.name)))?;
            let t = ndat::read(&dir.join(&entry.file))?;
            if t.shape() != model.params.tensors[idx].shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    entry.name,
                    t.shape(),
                    model.params.tensors[idx].shape()
                )));
            }
            model.params.tensors[idx] = t;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini(stacks: usize, attention: bool) -> ModelConfig {
        ModelConfig {
            num_stacks: stacks,
            feature_channels: 4,
            num_discs: 3,
            input_size: (16, 16),
            hourglass_depth: 2,
            attention,
            attention_hidden: None,
        }
    }

    fn image(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![1, 16, 16], |_| rng.random::<f32>())
    }

    #[test]
    fn config_validation() {
        assert!(mini(2, true).validate().is_ok());
        let mut c = mini(2, true);
        c.input_size = (18, 16);
        assert!(matches!(build_model::<f32>(&c, 0), Err(Error::Config(_))));
        c = mini(0, true);
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&mini(2, true), 9).unwrap();
        let b = build_model::<f32>(&mini(2, true), 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = build_model::<f32>(&mini(2, true), 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn two_stacks_two_intermediates() {
        let m = build_model::<f32>(&mini(2, true), 1).unwrap();
        let out = m.forward(&image(0)).unwrap();
        assert_eq!(out.intermediate_heatmaps.len(), 2);
        for h in &out.intermediate_heatmaps {
            assert_eq!(h.shape(), &[3, 16, 16]);
        }
        let att = out.attention_map.unwrap();
        assert_eq!(att.shape(), &[1, 16, 16]);
        assert!(att.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wider_model_has_more_params_same_shapes() {
        let mut c = mini(2, true);
        let a = build_model::<f32>(&c, 1).unwrap();
        c.feature_channels *= 2;
        let b = build_model::<f32>(&c, 1).unwrap();
        assert!(b.param_count() > a.param_count());
        let (oa, ob) = (a.forward(&image(1)).unwrap(), b.forward(&image(1)).unwrap());
        assert_eq!(oa.final_heatmap.shape(), ob.final_heatmap.shape());
        assert_eq!(
            oa.attention_map.unwrap().shape(),
            ob.attention_map.unwrap().shape()
        );
    }

    #[test]
    fn zeroed_attention_branch_halves_prediction() {
        let mut m = build_model::<f32>(&mini(2, true), 3).unwrap();
        for idx in m.attention_block().unwrap().param_indices() {
            m.params.tensors[idx].data_mut().fill(0.0);
        }
        let out = m.forward(&image(2)).unwrap();
        assert!(out.attention_map.unwrap().data().iter().all(|&v| v == 0.5));
        for (f, p) in out.final_heatmap.data().iter().zip(out.pre_attention.data()) {
            assert_eq!(*f, 0.5 * p);
        }
    }

    #[test]
    fn final_is_gate_times_prediction() {
        let m = build_model::<f32>(&mini(2, true), 4).unwrap();
        let out = m.forward(&image(5)).unwrap();
        let att = out.attention_map.unwrap();
        let plane = 256;
        for (i, (&f, &p)) in out.final_heatmap.data().iter().zip(out.pre_attention.data()).enumerate() {
            let want = att.data()[i % plane] * p;
            assert!((f - want).abs() <= 1e-6, "{f} vs {want}");
        }
        assert_eq!(&out.pre_attention, out.intermediate_heatmaps.last().unwrap());
    }

    #[test]
    fn ablation_has_no_gate() {
        let m = build_model::<f32>(&mini(2, false), 4).unwrap();
        let out = m.forward(&image(5)).unwrap();
        assert!(out.attention_map.is_none());
        assert_eq!(out.final_heatmap, out.pre_attention);
        assert!(m.params.names.iter().all(|n| !n.starts_with("attention")));
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let m = build_model::<f32>(&mini(1, true), 4).unwrap();
        let a = m.forward(&image(8)).unwrap();
        let b = m.forward(&image(8)).unwrap();
        assert_eq!(a.final_heatmap, b.final_heatmap);
        assert!(m.forward(&Tensor::zeros(vec![1, 8, 16])).is_err());
    }

    #[test]
    fn attention_fuse_shape_contract() {
        for channels in [1usize, 3, 7] {
            let (block, params) = build_attention_block::<f32>(channels, 2, 0);
            let feat = Tensor::from_fn(vec![1, channels, 8, 8], |i| (i as f32 * 0.37).sin());
            let (att, refined) = attention_fuse(&block, &params, std::slice::from_ref(&feat), &feat).unwrap();
            assert_eq!(att.shape(), &[1, 1, 8, 8]);
            assert_eq!(refined.shape(), feat.shape());
            let bad = Tensor::zeros(vec![1, channels, 4, 8]);
            assert!(attention_fuse(&block, &params, &[bad], &feat).is_err());
        }
    }

    #[test]
    fn saturated_gate_passes_prediction_through() {
        let (block, mut params) = build_attention_block::<f64>(2, 2, 0);
        // zero weights, large output bias -> sigmoid == 1.0 in f64
        for t in params.tensors.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let out_bias = params.index_of("attention.out.b").unwrap();
        params.tensors[out_bias].data_mut()[0] = 60.0;
        let feat = Tensor::from_fn(vec![1, 2, 4, 4], |i| i as f64 - 3.0);
        let pred = Tensor::from_fn(vec![1, 3, 4, 4], |i| (i as f64).cos());
        let (att, refined) = attention_fuse(&block, &params, &[feat], &pred).unwrap();
        assert!(att.data().iter().all(|&v| v == 1.0));
        assert_eq!(refined.data(), pred.data());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model::<f32>(&mini(2, true), 12).unwrap();
        m.save(dir.path(), 12).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config(), m.config());
        let json = std::fs::read_to_string(dir.path().join(CHECKPOINT_MANIFEST)).unwrap();
        assert!(json.contains("stack0.head.w.ndat"));
    }
}
