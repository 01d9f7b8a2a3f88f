//! Visibility-masked heatmap loss, Adam, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardOutput, ForwardVars, Model};
use crate::par;
use crate::targets::HeatmapStack;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Divide by all V channels instead of the visible ones.
    pub strict_denominator: bool,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 4,
            learning_rate: 0.00025,
            seed: 0,
            strict_denominator: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "epochs, batch_size and learning_rate must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-channel loss weights: `1 / (V_visible * N)` on visible channels, zero
/// elsewhere. With `strict` the denominator counts every channel.
pub fn channel_weights<T: Scalar>(visibility: &[bool], plane: usize, strict: bool) -> Vec<T> {
    let visible = visibility.iter().filter(|&&v| v).count();
    if visible == 0 {
        return vec![T::zero(); visibility.len()];
    }
    let denom = if strict { visibility.len() } else { visible } * plane;
    let w = T::one() / T::from_usize(denom).unwrap();
    visibility
        .iter()
        .map(|&v| if v { w } else { T::zero() })
        .collect()
}

fn check_target(pred_len: usize, target: &HeatmapStack) -> Result<usize> {
    let shape = target.maps.shape();
    if shape.len() != 3 || shape[0] != target.visibility.len() {
        return Err(Error::Shape(format!(
            "target maps {shape:?} do not match {} visibility flags",
            target.visibility.len()
        )));
    }
    if pred_len != target.maps.len() {
        return Err(Error::Shape(format!(
            "prediction has {pred_len} elements, target {shape:?} has {}",
            target.maps.len()
        )));
    }
    Ok(shape[1] * shape[2])
}

/// Records the masked MSE between `pred` (`[.., V, H, W]`) and `target`.
pub fn masked_mse_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: &HeatmapStack,
    strict: bool,
) -> Result<Var> {
    let plane = check_target(g.value(pred).len(), target)?;
    let tdata: Vec<T> = target.maps.data().iter().map(|&v| T::lit(v as f64)).collect();
    let weights = channel_weights(&target.visibility, plane, strict);
    g.weighted_plane_sse(pred, &tdata, weights)
}

/// Mean squared error over visible channels only. Zero visible channels
/// give 0.
pub fn masked_mse<T: Scalar>(pred: &Tensor<T>, target: &HeatmapStack, strict: bool) -> Result<f64> {
    let plane = check_target(pred.len(), target)?;
    let weights: Vec<f64> = channel_weights(&target.visibility, plane, strict);
    let mut total = 0.0;
    for (c, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let s: f64 = pred.data()[c * plane..(c + 1) * plane]
            .iter()
            .zip(target.maps.slice0(c))
            .map(|(&p, &t)| {
                let d = p.to_f64().unwrap() - t as f64;
                d * d
            })
            .sum();
        total += w * s;
    }
    Ok(total)
}

/// Loss broken down by supervision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub intermediate: Vec<f64>,
    pub final_term: f64,
    pub total: f64,
}

/// Intermediate supervision: one masked MSE per stack plus one on the
/// gated final heatmap, summed with equal weights.
pub fn total_loss<T: Scalar>(out: &ForwardOutput<T>, target: &HeatmapStack, strict: bool) -> Result<LossTerms> {
    let intermediate = out
        .intermediate_heatmaps
        .iter()
        .map(|h| masked_mse(h, target, strict))
        .collect::<Result<Vec<_>>>()?;
    let final_term = masked_mse(&out.final_heatmap, target, strict)?;
    let total = intermediate.iter().sum::<f64>() + final_term;
    Ok(LossTerms {
        intermediate,
        final_term,
        total,
    })
}

/// Graph version of [`total_loss`]. Returns the total and the individual
/// terms (intermediates first, final last).
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    vars: &ForwardVars,
    target: &HeatmapStack,
    strict: bool,
) -> Result<(Var, Vec<Var>)> {
    let mut terms = Vec::with_capacity(vars.intermediate.len() + 1);
    for &h in &vars.intermediate {
        terms.push(masked_mse_graph(g, h, target, strict)?);
    }
    terms.push(masked_mse_graph(g, vars.final_heatmap, target, strict)?);
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
            config: AdamConfig::default(),
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter changes, so a non-finite gradient leaves everything untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    names: Option<&[String]>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::Shape(format!(
                "adam: parameter {i} has {} elements, gradient {}",
                p.len(),
                g.len()
            )));
        }
        if let Some((j, v)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: names
                    .and_then(|n| n.get(i).cloned())
                    .unwrap_or_else(|| format!("#{i}")),
                index: j,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    let step_size = T::lit(lr / bc1);
    let inv_bc2 = T::lit(1.0 / bc2);
    let eps = T::lit(eps);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), mi), vi) in p.data_mut().iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + ob1 * g;
            *vi = b2 * *vi + ob2 * g * g;
            *w = *w - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// One network input paired with its target.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, H, W]`.
    pub image: Tensor<f32>,
    pub target: HeatmapStack,
}

/// Loss and parameter gradients for a single sample.
pub fn sample_gradients<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    target: &HeatmapStack,
    strict: bool,
) -> Result<(LossTerms, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let vars = model.forward_graph(&mut g, image)?;
    let (total, terms) = total_loss_graph(&mut g, &vars, target, strict)?;
    g.backward(total)?;
    let values: Vec<f64> = terms
        .iter()
        .map(|&t| g.value(t).data()[0].to_f64().unwrap())
        .collect();
    let (final_term, inter) = values.split_last().unwrap();
    let lt = LossTerms {
        intermediate: inter.to_vec(),
        final_term: *final_term,
        total: g.value(total).data()[0].to_f64().unwrap(),
    };
    let grads = vars
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![T::zero(); t.len()]))
        .collect();
    Ok((lt, grads))
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub intermediate: Vec<f64>,
    pub final_term: f64,
}

/// Optimizer state carried between epochs (and across resumes).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState<f32>,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(model: &Model<f32>) -> Self {
        Self {
            adam: AdamState::new(&model.params.tensors),
            epochs_done: 0,
        }
    }
}

fn check_dataset(model: &Model<f32>, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let cfg = model.config();
    let (h, w) = cfg.input_size;
    for (i, s) in data.iter().enumerate() {
        if s.image.shape() != [1, h, w] {
            return Err(Error::Shape(format!(
                "sample {i}: image {:?} does not match model input 1x{h}x{w}",
                s.image.shape()
            )));
        }
        if s.target.maps.shape() != [cfg.num_discs, h, w] {
            return Err(Error::Shape(format!(
                "sample {i}: target {:?} does not match {}x{h}x{w}",
                s.target.maps.shape(),
                cfg.num_discs
            )));
        }
    }
    Ok(())
}

/// Deterministic sample order for `epoch` (1-based).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains `model` until `cfg.epochs` epochs have been completed in total.
///
/// `state` carries the optimizer across calls, so training can resume from
/// a checkpoint and continue exactly where it stopped. `on_epoch` runs after
/// every epoch and may persist checkpoints.
pub fn train(
    model: &mut Model<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochLoss, &Model<f32>, &TrainState) -> Result<()>,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    check_dataset(model, data)?;
    let stacks = model.config().num_stacks;
    let mut curve = Vec::new();
    for epoch in state.epochs_done + 1..=cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut sums = EpochLoss {
            epoch,
            total: 0.0,
            intermediate: vec![0.0; stacks],
            final_term: 0.0,
        };
        for batch in order.chunks(cfg.batch_size) {
            let results = par::map(batch, |&i| {
                let s = &data[i];
                sample_gradients(model, &s.image, &s.target, cfg.strict_denominator)
            });
            let mut grads: Option<Vec<Vec<f32>>> = None;
            for r in results {
                let (terms, g) = r?;
                sums.total += terms.total;
                sums.final_term += terms.final_term;
                for (a, b) in sums.intermediate.iter_mut().zip(&terms.intermediate) {
                    *a += b;
                }
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.iter_mut().zip(b) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().flatten().for_each(|v| *v *= scale);
            adam_step(
                &mut model.params.tensors,
                &grads,
                &mut state.adam,
                cfg.learning_rate,
                Some(&model.params.names),
            )?;
        }
        let n = data.len() as f64;
        sums.total /= n;
        sums.final_term /= n;
        sums.intermediate.iter_mut().for_each(|v| *v /= n);
        state.epochs_done = epoch;
        log::info!("epoch {epoch}: loss {:.6}", sums.total);
        on_epoch(&sums, model, state)?;
        curve.push(sums);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn stack(v: usize, h: usize, w: usize, vis: Vec<bool>, seed: u64) -> HeatmapStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut maps = Tensor::from_fn(vec![v, h, w], |_| rng.random::<f32>());
        for (c, &visible) in vis.iter().enumerate() {
            if !visible {
                maps.data_mut()[c * h * w..(c + 1) * h * w].fill(0.0);
            }
        }
        HeatmapStack { maps, visibility: vis }
    }

    #[test]
    fn identical_prediction_has_zero_loss() {
        let t = stack(3, 4, 4, vec![true, false, true], 1);
        assert_eq!(masked_mse(&t.maps, &t, false).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_gives_unit_loss() {
        let t = stack(3, 4, 4, vec![true; 3], 2);
        let p = Tensor::from_fn(vec![3, 4, 4], |i| t.maps.data()[i] + 1.0);
        assert!((masked_mse(&p, &t, false).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn no_visible_channel_is_zero() {
        let t = stack(2, 3, 3, vec![false, false], 3);
        let p = Tensor::full(vec![2, 3, 3], 5.0f32);
        assert_eq!(masked_mse(&p, &t, false).unwrap(), 0.0);
        let mut g = Graph::<f32>::new();
        let pv = g.param(p);
        let l = masked_mse_graph(&mut g, pv, &t, false).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(pv).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn strict_denominator_counts_hidden_channels() {
        let t = stack(4, 2, 2, vec![true, false, false, false], 4);
        let p = Tensor::from_fn(vec![4, 2, 2], |i| t.maps.data()[i] + 1.0);
        assert!((masked_mse(&p, &t, false).unwrap() - 1.0).abs() < 1e-6);
        assert!((masked_mse(&p, &t, true).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn graph_and_value_losses_agree() {
        let t = stack(3, 5, 5, vec![true, false, true], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Tensor::from_fn(vec![1, 3, 5, 5], |_| rng.random::<f64>());
        let mut g = Graph::<f64>::new();
        let pv = g.input(p.clone());
        let l = masked_mse_graph(&mut g, pv, &t, false).unwrap();
        let direct = masked_mse(&p, &t, false).unwrap();
        assert!((g.value(l).data()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![Tensor::from_fn(vec![4], |i| i as f64)];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0; 4]], &mut st, 0.1, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0f64, 1.0, 1.0]).unwrap()];
        let grads = vec![vec![0.3, -2.0, 1e-3]];
        let mut st = AdamState::new(&p);
        let lr = 0.01;
        adam_step(&mut p, &grads, &mut st, lr, None).unwrap();
        for (w, g) in p[0].data().iter().zip(&grads[0]) {
            // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
            let want = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((w - want).abs() < 1e-12);
            assert!(((1.0 - w).abs() - lr).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0f64, -0.5, 0.3]).unwrap()];
        let mut st = AdamState::new(&p);
        let mut steps = 0;
        for _ in 0..500 {
            let g: Vec<f64> = p[0].data().iter().map(|w| 2.0 * w).collect();
            adam_step(&mut p, &[g], &mut st, 0.01, None).unwrap();
            steps += 1;
            let f: f64 = p[0].data().iter().map(|w| w * w).sum();
            if f < 1e-3 {
                break;
            }
        }
        let f: f64 = p[0].data().iter().map(|w| w * w).sum();
        assert!(f < 1e-3, "f = {f} after {steps} steps");
    }

    #[test]
    fn adam_rejects_nan_without_mutation() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[vec![0.1, f32::NAN]], &mut st, 0.1, Some(&["w".to_string()]))
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref name, index: 1, .. } if name == "w"));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn defaults_match_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (150, 4, 0.00025));
        let a = AdamConfig::default();
        assert_eq!((a.beta1, a.beta2, a.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(10, 3, 1);
        assert_eq!(a, epoch_order(10, 3, 1));
        assert_ne!(a, epoch_order(10, 3, 2));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }
}
