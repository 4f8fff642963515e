//! Straightforward f64 re-implementation of every layer, written from the
//! textbook definitions with plain loops. Used as an independent forward
//! model and as the function under central finite differences.

use std::collections::BTreeMap;

use gsmo_core::models::{HeadKind, ModelParams};
use gsmo_core::training::BalanceWeights;
use gsmo_core::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Arr { shape, data }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Arr::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| v as f64).collect(),
        )
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }
}

/// Discrete decisions taken during a forward pass (ReLU signs, pool winners).
/// Finite differences are only meaningful when both perturbed passes take
/// the same decisions as the unperturbed one.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pattern(pub Vec<u32>);

pub fn conv2d(x: &Arr, k: &Arr, b: &[f64], same: bool, stride: usize) -> Arr {
    let (n, h, w, cin) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (kh, kw, kc, cout) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
    assert_eq!(cin, kc);
    let (ho, wo, pt, pl) = if same {
        let ho = h.div_ceil(stride);
        let wo = w.div_ceil(stride);
        let ph = ((ho - 1) * stride + kh).saturating_sub(h);
        let pw = ((wo - 1) * stride + kw).saturating_sub(w);
        (ho, wo, ph / 2, pw / 2)
    } else {
        ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
    };
    let mut out = vec![0.0; n * ho * wo * cout];
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv =
                                    x.data[((s * h + iy as usize) * w + ix as usize) * cin + ci];
                                let kv = k.data[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((s * ho + oy) * wo + ox) * cout + co] = acc;
                }
            }
        }
    }
    Arr::new(vec![n, ho, wo, cout], out)
}

pub fn batch_norm_train(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> Arr {
    let c = x.cols();
    let m = x.rows() as f64;
    let mut out = x.clone();
    for ch in 0..c {
        let vals: Vec<f64> = (0..x.rows()).map(|r| x.data[r * c + ch]).collect();
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        for r in 0..x.rows() {
            out.data[r * c + ch] =
                gamma[ch] * (x.data[r * c + ch] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    out
}

pub fn batch_norm_eval(
    x: &Arr,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Arr {
    let c = x.cols();
    let mut out = x.clone();
    for r in 0..x.rows() {
        for ch in 0..c {
            out.data[r * c + ch] =
                gamma[ch] * (x.data[r * c + ch] - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch];
        }
    }
    out
}

pub fn relu(x: &Arr, pat: &mut Pattern) -> Arr {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        pat.0.push((*v > 0.0) as u32);
        *v = v.max(0.0);
    }
    out
}

/// Non-overlapping max pooling; a ragged last window covers what is left.
pub fn maxpool(x: &Arr, p: usize, pat: &mut Pattern) -> Arr {
    let (n, h, w, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (ho, wo) = (h.div_ceil(p), w.div_ceil(p));
    let mut out = Vec::with_capacity(n * ho * wo * c);
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0u32;
                    for y in oy * p..(oy * p + p).min(h) {
                        for xx in ox * p..(ox * p + p).min(w) {
                            let v = x.data[((s * h + y) * w + xx) * c + ch];
                            if v > best {
                                best = v;
                                arg = (y * w + xx) as u32;
                            }
                        }
                    }
                    pat.0.push(arg);
                    out.push(best);
                }
            }
        }
    }
    Arr::new(vec![n, ho, wo, c], out)
}

pub fn flatten(x: &Arr) -> Arr {
    let n = x.shape[0];
    Arr::new(vec![n, x.data.len() / n], x.data.clone())
}

pub fn dense(x: &Arr, w: &Arr, b: &[f64]) -> Arr {
    let (n, f) = (x.shape[0], x.shape[1]);
    let g = w.shape[1];
    assert_eq!(w.shape[0], f);
    let mut out = vec![0.0; n * g];
    for r in 0..n {
        for j in 0..g {
            let mut acc = b[j];
            for i in 0..f {
                acc += x.data[r * f + i] * w.data[i * g + j];
            }
            out[r * g + j] = acc;
        }
    }
    Arr::new(vec![n, g], out)
}

pub fn concat(a: &Arr, b: &Arr) -> Arr {
    let n = a.shape[0];
    let (fa, fb) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(n * (fa + fb));
    for r in 0..n {
        out.extend_from_slice(&a.data[r * fa..(r + 1) * fa]);
        out.extend_from_slice(&b.data[r * fb..(r + 1) * fb]);
    }
    Arr::new(vec![n, fa + fb], out)
}

pub fn softmax(x: &Arr) -> Arr {
    let k = x.cols();
    let mut out = x.clone();
    for row in out.data.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for v in row.iter_mut() {
            *v = (*v - m).exp() / z;
        }
    }
    out
}

/// Mean over rows of `-ln p[target]`.
pub fn cross_entropy(p: &Arr, targets: &[usize]) -> f64 {
    let k = p.cols();
    let n = p.rows();
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -p.data[r * k + t].max(1e-12).ln())
        .sum::<f64>()
        / n as f64
}

pub type Params = BTreeMap<String, Arr>;

pub fn params_of(model: &ModelParams) -> Params {
    model
        .params()
        .iter()
        .map(|p| (p.name.clone(), Arr::from_tensor(&p.value)))
        .collect()
}

/// Model probabilities (in the stacked model: `[p_temp, d_temp, p2, d2]`).
pub fn model_forward(
    kind: HeadKind,
    params: &Params,
    pool: usize,
    eps: f64,
    train: bool,
    images: &Arr,
    pat: &mut Pattern,
) -> Vec<Arr> {
    let get = |n: &str| params.get(n).unwrap_or_else(|| panic!("missing {n}"));
    let mut x = images.clone();
    for l in 1..=4 {
        x = conv2d(
            &x,
            get(&format!("backbone.conv{l}.kernel")),
            &get(&format!("backbone.conv{l}.bias")).data,
            true,
            1,
        );
        let g = &get(&format!("backbone.bn{l}.gamma")).data;
        let b = &get(&format!("backbone.bn{l}.beta")).data;
        x = if train {
            batch_norm_train(&x, g, b, eps)
        } else {
            batch_norm_eval(
                &x,
                g,
                b,
                &get(&format!("backbone.bn{l}.running_mean")).data,
                &get(&format!("backbone.bn{l}.running_var")).data,
                eps,
            )
        };
        x = relu(&x, pat);
        if l % 2 == 0 {
            x = maxpool(&x, pool, pat);
        }
    }
    let f = flatten(&x);
    let branch = |g: &str, pat: &mut Pattern| {
        let h = dense(
            &f,
            get(&format!("{g}.hidden.weight")),
            &get(&format!("{g}.hidden.bias")).data,
        );
        let h = relu(&h, pat);
        softmax(&dense(
            &h,
            get(&format!("{g}.out.weight")),
            &get(&format!("{g}.out.bias")).data,
        ))
    };
    match kind {
        HeadKind::SinglePlant => vec![branch("plant_branch", pat)],
        HeadKind::SingleDisease => vec![branch("disease_branch", pat)],
        HeadKind::Powerset => vec![branch("joint_branch", pat)],
        HeadKind::MultiOutput => vec![branch("plant_branch", pat), branch("disease_branch", pat)],
        HeadKind::Gsmo => {
            let pt = branch("plant_branch", pat);
            let dt = branch("disease_branch", pat);
            let p2 = softmax(&dense(
                &concat(&f, &dt),
                get("plant_head2.weight"),
                &get("plant_head2.bias").data,
            ));
            let d2 = softmax(&dense(
                &concat(&f, &pt),
                get("disease_head2.weight"),
                &get("disease_head2.bias").data,
            ));
            vec![pt, dt, p2, d2]
        }
    }
}

/// The stacked model's weighted training loss.
pub fn gsmo_loss(
    params: &Params,
    pool: usize,
    eps: f64,
    images: &Arr,
    plant: &[usize],
    disease: &[usize],
    w: &BalanceWeights,
    pat: &mut Pattern,
) -> f64 {
    let out = model_forward(HeadKind::Gsmo, params, pool, eps, true, images, pat);
    w.beta1 as f64 * cross_entropy(&out[0], plant)
        + w.beta2 as f64 * cross_entropy(&out[2], plant)
        + w.delta1 as f64 * cross_entropy(&out[1], disease)
        + w.delta2 as f64 * cross_entropy(&out[3], disease)
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
    /// Coordinates in the group.
    pub total: usize,
}

impl GradCheck {
    /// No mismatches, and `per_group` coordinates checked unless the group ran out.
    pub fn passed(&self, per_group: usize) -> bool {
        self.failures.is_empty()
            && self.checked > 0
            && (self.checked >= per_group || self.checked + self.skipped_kinks == self.total)
    }
}

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-2;
/// Denominator floor for the relative error, so that gradients that are
/// numerically zero compare by absolute error instead.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Check up to `per_group` randomly chosen coordinates of `values[g]`
/// against `analytic[g]`. `f` evaluates the loss and its decision pattern.
pub fn check_groups(
    label: &str,
    values: &mut [Vec<f64>],
    analytic: &[Vec<f32>],
    per_group: usize,
    seed: u64,
    f: &dyn Fn(&[Vec<f64>]) -> (f64, Pattern),
) -> Vec<GradCheck> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (_, base) = f(values);
    let mut out = Vec::new();
    for g in 0..values.len() {
        let mut report = GradCheck {
            total: values[g].len(),
            ..GradCheck::default()
        };
        let mut order: Vec<usize> = (0..values[g].len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            if report.checked >= per_group {
                break;
            }
            let orig = values[g][i];
            values[g][i] = orig + FD_STEP;
            let (lp, pp) = f(values);
            values[g][i] = orig - FD_STEP;
            let (lm, pm) = f(values);
            values[g][i] = orig;
            if pp != base || pm != base {
                report.skipped_kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = analytic[g][i] as f64;
            let e = rel_err(an, fd);
            report.max_rel_err = report.max_rel_err.max(e);
            if e >= REL_TOL {
                report.failures.push(format!(
                    "{label} group {g} coord {i}: analytic {an:e} vs fd {fd:e} (rel {e:.3e})"
                ));
            }
            report.checked += 1;
        }
        out.push(report);
    }
    out
}
