//! Gradient checks: every tape operator in isolation, and the full stacked
//! model with its weighted loss.

use gsmo_core::autodiff::{BatchNormArgs, Mode, Padding, ParamId, Tape, Var};
use gsmo_core::labels::{one_hot_rows, JointLabelSpace, LabelSpace};
use gsmo_core::models::{BackboneConfig, GsmoConfig, HeadKind, ModelParams, ParamGroup};
use gsmo_core::training::{total_loss, BalanceWeights, TrainTargets};
use gsmo_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, check_groups, Arr, GradCheck, Pattern};

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

type TapeFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
type RefFn = Box<dyn Fn(&[Arr], &mut Pattern) -> Arr>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    tape: TapeFn,
    reference: RefFn,
}

fn arrs(values: &[Vec<f64>], shapes: &[Vec<usize>]) -> Vec<Arr> {
    values
        .iter()
        .zip(shapes)
        .map(|(v, s)| Arr::new(s.clone(), v.clone()))
        .collect()
}

/// Reduce an op output to a scalar through fixed random weights: `Σ y ⊙ R`.
fn run_case(case: OpCase, seed: u64, per_group: usize) -> (String, Vec<GradCheck>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t.clone()))
        .collect();
    let y = (case.tape)(&mut tape, &vars);
    let numel = tape.value(y).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let weights = random_tensor(&mut rng, &[numel, 1], 1.0);
    let flat = tape.reshape(y, &[1, numel]).unwrap();
    let rw = tape.constant(weights.clone());
    let zb = tape.constant(Tensor::zeros(&[1]));
    let d = tape.dense(flat, rw, zb).unwrap();
    let loss = tape.sum(d);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = (0..case.inputs.len())
        .map(|i| grads.get(ParamId(i)).unwrap().data().to_vec())
        .collect();
    let shapes: Vec<Vec<usize>> = case.inputs.iter().map(|t| t.shape().to_vec()).collect();
    let mut values: Vec<Vec<f64>> = case
        .inputs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let rw: Vec<f64> = weights.data().iter().map(|&v| v as f64).collect();
    let reference = case.reference;
    let f = move |vals: &[Vec<f64>]| {
        let mut pat = Pattern::default();
        let y = reference(&arrs(vals, &shapes), &mut pat);
        (y.data.iter().zip(&rw).map(|(a, b)| a * b).sum(), pat)
    };
    let checks = check_groups(case.name, &mut values, &analytic, per_group, seed, &f);
    (case.name.to_owned(), checks)
}

const EPS: f32 = 1e-5;

fn cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut t = |shape: &[usize]| random_tensor(rng, shape, 1.0);
    let probs = {
        let logits = t(&[3, 4]);
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let p = tape.softmax(l);
        tape.value(p).clone()
    };
    let targets = one_hot_rows(&[2, 0, 3], 4).unwrap();
    let targets4 = one_hot_rows(&[1, 4, 0, 2], 5).unwrap();
    let running_mean = vec![0.1f32, -0.2, 0.05, 0.3];
    let running_var = vec![0.8f32, 1.3, 0.5, 2.0];
    vec![
        OpCase {
            name: "conv2d same stride 1",
            inputs: vec![t(&[2, 5, 5, 3]), t(&[3, 3, 3, 4]), t(&[4])],
            tape: Box::new(|tp, v| tp.conv2d(v[0], v[1], v[2], Padding::Same, 1).unwrap()),
            reference: Box::new(|a, _| r::conv2d(&a[0], &a[1], &a[2].data, true, 1)),
        },
        OpCase {
            name: "conv2d valid stride 2",
            inputs: vec![t(&[2, 7, 6, 2]), t(&[3, 2, 2, 3]), t(&[3])],
            tape: Box::new(|tp, v| tp.conv2d(v[0], v[1], v[2], Padding::Valid, 2).unwrap()),
            reference: Box::new(|a, _| r::conv2d(&a[0], &a[1], &a[2].data, false, 2)),
        },
        OpCase {
            name: "conv2d same stride 2",
            inputs: vec![t(&[1, 6, 6, 2]), t(&[3, 3, 2, 2]), t(&[2])],
            tape: Box::new(|tp, v| tp.conv2d(v[0], v[1], v[2], Padding::Same, 2).unwrap()),
            reference: Box::new(|a, _| r::conv2d(&a[0], &a[1], &a[2].data, true, 2)),
        },
        OpCase {
            name: "batch_norm train",
            inputs: vec![t(&[2, 3, 3, 4]), t(&[4]), t(&[4])],
            tape: Box::new(|tp, v| {
                let args = BatchNormArgs {
                    mode: Mode::Train,
                    running_mean: &[0.0; 4],
                    running_var: &[1.0; 4],
                    epsilon: EPS,
                    momentum: 0.9,
                };
                tp.batch_norm(v[0], v[1], v[2], args).unwrap().0
            }),
            reference: Box::new(|a, _| {
                r::batch_norm_train(&a[0], &a[1].data, &a[2].data, EPS as f64)
            }),
        },
        OpCase {
            name: "batch_norm eval",
            inputs: vec![t(&[2, 3, 3, 4]), t(&[4]), t(&[4])],
            tape: Box::new(move |tp, v| {
                let args = BatchNormArgs {
                    mode: Mode::Eval,
                    running_mean: &running_mean,
                    running_var: &running_var,
                    epsilon: EPS,
                    momentum: 0.9,
                };
                tp.batch_norm(v[0], v[1], v[2], args).unwrap().0
            }),
            reference: Box::new(|a, _| {
                let m = [0.1, -0.2, 0.05, 0.3].map(|v: f32| v as f64);
                let var = [0.8, 1.3, 0.5, 2.0].map(|v: f32| v as f64);
                r::batch_norm_eval(&a[0], &a[1].data, &a[2].data, &m, &var, EPS as f64)
            }),
        },
        OpCase {
            name: "maxpool2d ragged",
            inputs: vec![t(&[2, 5, 5, 3])],
            tape: Box::new(|tp, v| tp.maxpool2d(v[0], 2).unwrap()),
            reference: Box::new(|a, p| r::maxpool(&a[0], 2, p)),
        },
        OpCase {
            name: "dense",
            inputs: vec![t(&[3, 5]), t(&[5, 4]), t(&[4])],
            tape: Box::new(|tp, v| tp.dense(v[0], v[1], v[2]).unwrap()),
            reference: Box::new(|a, _| r::dense(&a[0], &a[1], &a[2].data)),
        },
        OpCase {
            name: "relu",
            inputs: vec![t(&[3, 7])],
            tape: Box::new(|tp, v| tp.relu(v[0])),
            reference: Box::new(|a, p| r::relu(&a[0], p)),
        },
        OpCase {
            name: "softmax",
            inputs: vec![t(&[3, 5])],
            tape: Box::new(|tp, v| tp.softmax(v[0])),
            reference: Box::new(|a, _| r::softmax(&a[0])),
        },
        OpCase {
            name: "cross_entropy of probabilities",
            inputs: vec![probs],
            tape: Box::new(move |tp, v| tp.cross_entropy(v[0], &targets).unwrap()),
            reference: Box::new(|a, _| {
                Arr::new(vec![1], vec![r::cross_entropy(&a[0], &[2, 0, 3])])
            }),
        },
        OpCase {
            name: "cross_entropy of softmax",
            inputs: vec![t(&[4, 5])],
            tape: Box::new(move |tp, v| {
                let p = tp.softmax(v[0]);
                tp.cross_entropy(p, &targets4).unwrap()
            }),
            reference: Box::new(|a, _| {
                Arr::new(
                    vec![1],
                    vec![r::cross_entropy(&r::softmax(&a[0]), &[1, 4, 0, 2])],
                )
            }),
        },
        OpCase {
            name: "concat",
            inputs: vec![t(&[3, 2]), t(&[3, 4])],
            tape: Box::new(|tp, v| tp.concat(v[0], v[1]).unwrap()),
            reference: Box::new(|a, _| r::concat(&a[0], &a[1])),
        },
        OpCase {
            name: "scale",
            inputs: vec![t(&[2, 3])],
            tape: Box::new(|tp, v| tp.scale(v[0], 0.7)),
            reference: Box::new(|a, _| {
                Arr::new(
                    a[0].shape.clone(),
                    a[0].data.iter().map(|v| v * 0.7f32 as f64).collect(),
                )
            }),
        },
        OpCase {
            name: "add",
            inputs: vec![t(&[2, 3]), t(&[2, 3])],
            tape: Box::new(|tp, v| tp.add(v[0], v[1]).unwrap()),
            reference: Box::new(|a, _| {
                Arr::new(
                    a[0].shape.clone(),
                    a[0].data
                        .iter()
                        .zip(&a[1].data)
                        .map(|(x, y)| x + y)
                        .collect(),
                )
            }),
        },
        OpCase {
            name: "flatten",
            inputs: vec![t(&[2, 2, 2, 3])],
            tape: Box::new(|tp, v| tp.flatten(v[0]).unwrap()),
            reference: Box::new(|a, _| r::flatten(&a[0])),
        },
        OpCase {
            name: "sum",
            inputs: vec![t(&[4, 3])],
            tape: Box::new(|tp, v| tp.sum(v[0])),
            reference: Box::new(|a, _| Arr::new(vec![1], vec![a[0].data.iter().sum()])),
        },
    ]
}

/// Every operator, each input treated as one parameter group.
pub fn operator_checks(per_group: usize, seed: u64) -> Vec<(String, Vec<GradCheck>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases(&mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, c)| run_case(c, seed + i as u64, per_group))
        .collect()
}

pub fn small_spaces() -> JointLabelSpace {
    let p = LabelSpace::new(vec!["apple".into(), "grape".into(), "tomato".into()]).unwrap();
    let d = LabelSpace::new(vec!["healthy".into(), "rot".into()]).unwrap();
    JointLabelSpace::new(p, d, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]).unwrap()
}

pub fn small_config(extent: usize) -> GsmoConfig {
    GsmoConfig {
        backbone: BackboneConfig {
            channels: [3, 4, 4, 4],
            ..BackboneConfig::for_extent(extent)
        },
        hidden: 8,
    }
}

/// The stacked model plus weighted loss on a 2-sample batch at E=16;
/// one report per parameter group.
pub fn gsmo_checks(
    per_group: usize,
    seed: u64,
    weights: &BalanceWeights,
) -> Vec<(ParamGroup, GradCheck)> {
    let spaces = small_spaces();
    let cfg = small_config(16);
    let model = ModelParams::init(HeadKind::Gsmo, &cfg, &spaces, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let images = random_tensor(&mut rng, &[2, 16, 16, 3], 1.0);
    let (plant, disease) = (vec![0usize, 2], vec![1usize, 0]);

    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &images, Mode::Train).unwrap();
    let targets = TrainTargets::new(&plant, &disease, &spaces).unwrap();
    let loss = total_loss(&mut tape, &pass.outputs, &targets, weights).unwrap();
    let grads = tape.backward(loss).unwrap();

    let groups: Vec<ParamGroup> = HeadKind::Gsmo.groups().to_vec();
    let members: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            model
                .params()
                .iter()
                .enumerate()
                .filter(|(i, p)| p.trainable && model.group_of(ParamId(*i)) == *g)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut values: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            m.iter()
                .flat_map(|&i| model.params()[i].value.data().iter().map(|&v| v as f64))
                .collect()
        })
        .collect();
    let analytic: Vec<Vec<f32>> = members
        .iter()
        .map(|m| {
            m.iter()
                .flat_map(|&i| grads.get(ParamId(i)).unwrap().data().to_vec())
                .collect()
        })
        .collect();

    let base = r::params_of(&model);
    let img = Arr::from_tensor(&images);
    let pool = cfg.backbone.pool;
    let eps = cfg.backbone.bn_epsilon as f64;
    let f = |vals: &[Vec<f64>]| {
        let mut params = base.clone();
        for (m, v) in members.iter().zip(vals) {
            let mut off = 0;
            for &i in m {
                let p = &model.params()[i];
                let n = p.value.numel();
                params.get_mut(&p.name).unwrap().data = v[off..off + n].to_vec();
                off += n;
            }
        }
        let mut pat = Pattern::default();
        let l = r::gsmo_loss(
            &params, pool, eps, &img, &plant, &disease, weights, &mut pat,
        );
        (l, pat)
    };
    let reference_loss = f(&values).0;
    let tape_loss = tape.value(loss).item().unwrap() as f64;
    assert!(
        (reference_loss - tape_loss).abs() <= 1e-4 * reference_loss.abs().max(1.0),
        "reference loss {reference_loss} vs tape {tape_loss}"
    );
    let checks = check_groups("gsmo", &mut values, &analytic, per_group, seed, &f);
    groups.into_iter().zip(checks).collect()
}
