//! Oracles and instance generators shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use disclabel::candidates::{Candidate, CandidateSet};
use disclabel::model::{build_model, ModelConfig};
use disclabel::skeleton::{normalize_points, Point, Skeleton};
use disclabel::targets::{make_target, HeatmapStack, LabeledCase, TargetParams};
use disclabel::tensor::{Graph, Tensor, Var};
use disclabel::training::total_loss_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Builds the op under test from its leaves; the harness reduces the output
/// with a fixed random weighting so every output element matters.
pub type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

pub struct Instance {
    pub leaves: Vec<Tensor<f64>>,
    pub op: OpFn,
}

fn weighted_loss(op: &OpFn, leaves: &[Tensor<f64>], weights: Option<&[f64]>) -> (Graph<f64>, Var, Vec<Var>, Vec<f64>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars);
    let shape = g.value(out).shape().to_vec();
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => {
            let mut r = rng(shape.iter().product::<usize>() as u64 ^ 0x5EED);
            (0..g.value(out).len()).map(|_| r.random_range(-1.5..1.5)).collect()
        }
    };
    let wv = g.input(Tensor::new(shape, w.clone()).unwrap());
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod);
    (g, loss, vars, w)
}

/// Max relative error between analytic and central-difference gradients
/// over every element of every leaf.
pub fn check_instance(inst: &Instance, eps: f64) -> f64 {
    let (mut g, loss, vars, w) = weighted_loss(&inst.op, &inst.leaves, None);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    let eval = |leaves: &[Tensor<f64>]| {
        let (g, loss, _, _) = weighted_loss(&inst.op, leaves, Some(&w));
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (li, leaf) in inst.leaves.iter().enumerate() {
        for (j, (&x, &a)) in leaf.data().iter().zip(&analytic[li]).enumerate() {
            let mut leaves = inst.leaves.clone();
            leaves[li].data_mut()[j] = x + eps;
            let up = eval(&leaves);
            leaves[li].data_mut()[j] = x - eps;
            let down = eval(&leaves);
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        r.random_range(1..=2),
        r.random_range(1..=3),
        2 * r.random_range(1..=3),
        2 * r.random_range(1..=3),
    )
}

/// Values bounded away from zero so relu kinks stay out of reach of eps.
fn away_from_zero(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.01..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Max-pool input whose 2x2 windows have a clear winner.
fn distinct_windows(r: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    loop {
        let t = random_tensor(r, vec![n, c, h, w], -1.0, 1.0);
        let d = t.data();
        let ok = (0..n * c).all(|p| {
            (0..h / 2).all(|y| {
                (0..w / 2).all(|x| {
                    let mut v: Vec<f64> = (0..4)
                        .map(|k| d[p * h * w + (2 * y + k / 2) * w + 2 * x + k % 2])
                        .collect();
                    v.sort_by(|a, b| b.total_cmp(a));
                    v[0] - v[1] > 1e-2
                })
            })
        });
        if ok {
            return t;
        }
    }
}

pub type Generator = Box<dyn Fn(&mut ChaCha8Rng) -> Instance>;

/// Every differentiable primitive with a generator of random instances.
pub fn primitives() -> Vec<(&'static str, Generator)> {
    vec![
        ("conv2d 3x3 same", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            let co = r.random_range(1..=3);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![co, c, 3, 3], -1.0, 1.0)],
                op: Box::new(|g, v| g.conv2d(v[0], v[1], 1, 1).unwrap()),
            }
        })),
        ("conv2d 3x3 stride 2", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h + 1, w + 1], -1.0, 1.0), random_tensor(r, vec![2, c, 3, 3], -1.0, 1.0)],
                op: Box::new(|g, v| g.conv2d(v[0], v[1], 2, 0).unwrap()),
            }
        })),
        ("conv2d 1x1", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![2, c, 1, 1], -1.0, 1.0)],
                op: Box::new(|g, v| g.conv2d(v[0], v[1], 1, 0).unwrap()),
            }
        })),
        ("channel bias", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![c], -1.0, 1.0)],
                op: Box::new(|g, v| g.add_channel_bias(v[0], v[1]).unwrap()),
            }
        })),
        ("maxpool2", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![distinct_windows(r, n, c, h, w)],
                op: Box::new(|g, v| g.maxpool2(v[0]).unwrap()),
            }
        })),
        ("upsample_nearest2", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h / 2, w / 2], -1.0, 1.0)],
                op: Box::new(|g, v| g.upsample_nearest2(v[0]).unwrap()),
            }
        })),
        ("relu", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![away_from_zero(r, vec![n, c, h, w])],
                op: Box::new(|g, v| g.relu(v[0])),
            }
        })),
        ("sigmoid", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -3.0, 3.0)],
                op: Box::new(|g, v| g.sigmoid(v[0])),
            }
        })),
        ("add", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
            }
        })),
        ("mul", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
            }
        })),
        ("gate", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![n, 1, h, w], 0.0, 1.0)],
                op: Box::new(|g, v| g.gate(v[0], v[1]).unwrap()),
            }
        })),
        ("concat_channels", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0), random_tensor(r, vec![n, 2, h, w], -1.0, 1.0)],
                op: Box::new(|g, v| g.concat_channels(&[v[0], v[1], v[0]]).unwrap()),
            }
        })),
        ("instance_norm", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![
                    random_tensor(r, vec![n, c, h.max(2), w.max(2)], -1.0, 1.0),
                    random_tensor(r, vec![c], 0.5, 1.5),
                    random_tensor(r, vec![c], -0.5, 0.5),
                ],
                op: Box::new(|g, v| g.instance_norm(v[0], v[1], v[2]).unwrap()),
            }
        })),
        ("weighted_plane_sse", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            let target: Vec<f64> = (0..n * c * h * w).map(|_| r.random_range(0.0..1.0)).collect();
            let weights: Vec<f64> = (0..n * c).map(|k| if k % 2 == 0 { r.random_range(0.1..1.0) } else { 0.0 }).collect();
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(move |g, v| g.weighted_plane_sse(v[0], &target, weights.clone()).unwrap()),
            }
        })),
        ("sum", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(|g, v| g.sum(v[0])),
            }
        })),
        ("square", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(|g, v| g.square(v[0])),
            }
        })),
        ("scale", Box::new(|r| {
            let (n, c, h, w) = dims(r);
            let k = r.random_range(-2.0..2.0);
            Instance {
                leaves: vec![random_tensor(r, vec![n, c, h, w], -1.0, 1.0)],
                op: Box::new(move |g, v| g.scale(v[0], k)),
            }
        })),
    ]
}

/// Worst relative error per primitive over `instances` random instances.
pub fn primitive_suite(instances: usize, eps: f64) -> Vec<(&'static str, f64)> {
    primitives()
        .into_iter()
        .enumerate()
        .map(|(k, (name, make))| {
            let mut r = rng(1000 + k as u64);
            let worst = (0..instances)
                .map(|_| check_instance(&make(&mut r), eps))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

pub fn mini_config(attention: bool) -> ModelConfig {
    ModelConfig {
        num_stacks: 2,
        feature_channels: 4,
        num_discs: 3,
        input_size: (16, 16),
        hourglass_depth: 2,
        attention,
        attention_hidden: None,
    }
}

/// 16x16 case with three discs, the middle one hidden.
pub fn mini_case(seed: u64) -> LabeledCase {
    let mut r = rng(seed);
    LabeledCase {
        image: Tensor::from_fn(vec![16, 16], |_| r.random::<f32>()),
        spacing_mm: (1.0, 1.0),
        discs: vec![Some((3.0, 7.0)), None, Some((12.0, 9.0))],
    }
}

pub fn mini_target(seed: u64) -> (Tensor<f64>, HeatmapStack) {
    let case = mini_case(seed);
    let target = make_target(&case, &TargetParams { radius: 4, sigma: None }).unwrap();
    (case.image.cast::<f64>().reshape(vec![1, 16, 16]).unwrap(), target)
}

/// End-to-end check on the miniature model: analytic gradients of the total
/// loss against central differences for `samples` parameter entries spread
/// over every tensor. Returns (worst relative error, entries checked).
pub fn end_to_end_check(seed: u64, samples: usize, eps: f64) -> (f64, usize) {
    let mut model = build_model::<f64>(&mini_config(true), seed).unwrap();
    let (image, target) = mini_target(seed);
    let loss_of = |m: &disclabel::model::Model<f64>| {
        let mut g = Graph::new();
        let vars = m.forward_graph(&mut g, &image).unwrap();
        let (total, _) = total_loss_graph(&mut g, &vars, &target, false).unwrap();
        (g, vars, total)
    };
    let (mut g, vars, total) = loss_of(&model);
    g.backward(total).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut r = rng(seed ^ 0xE2E);
    let n_tensors = model.params.tensors.len();
    let mut picks: Vec<(usize, usize)> = (0..n_tensors)
        .map(|t| (t, r.random_range(0..model.params.tensors[t].len())))
        .collect();
    while picks.len() < samples.max(n_tensors) {
        let t = r.random_range(0..n_tensors);
        picks.push((t, r.random_range(0..model.params.tensors[t].len())));
    }
    let mut worst = 0.0f64;
    for &(t, j) in &picks {
        let orig = model.params.tensors[t].data()[j];
        model.params.tensors[t].data_mut()[j] = orig + eps;
        let (g1, _, l1) = loss_of(&model);
        model.params.tensors[t].data_mut()[j] = orig - eps;
        let (g2, _, l2) = loss_of(&model);
        model.params.tensors[t].data_mut()[j] = orig;
        let numeric = (g1.value(l1).data()[0] - g2.value(l2).data()[0]) / (2.0 * eps);
        worst = worst.max(rel_err(grads[t][j], numeric));
    }
    (worst, picks.len())
}

/// Loop oracle of the visibility-masked MSE.
pub fn masked_mse_oracle(pred: &[f32], target: &HeatmapStack) -> f64 {
    let v = target.visibility.len();
    let n = pred.len() / v;
    let mut sum = 0.0;
    let mut visible = 0;
    for c in 0..v {
        if !target.visibility[c] {
            continue;
        }
        visible += 1;
        for i in 0..n {
            let d = pred[c * n + i] as f64 - target.maps.data()[c * n + i] as f64;
            sum += d * d;
        }
    }
    if visible == 0 {
        0.0
    } else {
        sum / (visible * n) as f64
    }
}

pub fn candidate(row: f64, col: f64, score: f32) -> Candidate {
    Candidate {
        row,
        col,
        peak: (row.max(0.0) as usize, col.max(0.0) as usize),
        score,
    }
}

/// Random skeleton (2..=7 discs) and up to 3 candidates per disc scattered
/// around a jittered column.
pub fn random_search_instance(r: &mut ChaCha8Rng) -> (Skeleton, CandidateSet) {
    let v = r.random_range(2..=7);
    let mut raw = Vec::with_capacity(v);
    let (mut x, mut y) = (0.0, 0.0);
    for i in 0..v {
        if i > 0 {
            x += r.random_range(-0.3..0.3);
            y += r.random_range(0.7..1.3);
        }
        raw.push(Some(Point::new(x, y)));
    }
    let skeleton = Skeleton {
        points: normalize_points(&raw).unwrap().into_iter().map(Option::unwrap).collect(),
    };
    let per_disc = (0..v)
        .map(|i| {
            let k = r.random_range(0..=3);
            let mut cs: Vec<Candidate> = (0..k)
                .map(|_| {
                    candidate(
                        20.0 + 10.0 * i as f64 + r.random_range(-15.0..15.0),
                        30.0 + r.random_range(-8.0..8.0),
                        r.random_range(0.3..1.0),
                    )
                })
                .collect();
            cs.sort_by(|a, b| b.score.total_cmp(&a.score));
            cs
        })
        .collect();
    (skeleton, CandidateSet { per_disc })
}
