//! Central finite-difference checks of every differentiable operator.

use ecognet::tensor::ops::{self, BatchNormConfig, BatchNormStats, Mode, Stride3};
use ecognet::tensor::{Element, Tensor};
use ecognet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;

/// Worst error of one operator across its instances.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub worst_rel: f64,
}

type Build = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// One randomized instance: input tensors and a function of them.
struct Case {
    inputs: Vec<(Vec<usize>, Vec<f64>)>,
    f: Build,
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Values kept at least `4 * STEP` from zero so kinks are never straddled.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(4.0 * STEP..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), rand_vec(rng, n))
}

/// Scalar objective `sum(w * f(inputs))` with fixed random weights `w`.
fn objective(
    case: &Case,
    weights: &mut Option<Vec<f64>>,
    tensors: &[Tensor<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f64>> {
    let y = (case.f)(tensors)?;
    if y.rank() == 0 {
        return Ok(y);
    }
    let w = weights.get_or_insert_with(|| rand_vec(rng, y.numel()));
    let w = Tensor::from_vec(y.shape(), w.clone())?;
    Ok(ops::sum(&ops::mul(&y, &w)?))
}

/// Largest `|autodiff - numeric| / max(|numeric|_inf, 1e-3)` over all inputs.
fn check(case: Case, rng: &mut ChaCha8Rng) -> f64 {
    let mut weights = None;
    let params: Vec<Tensor<f64>> = case
        .inputs
        .iter()
        .map(|(s, v)| Tensor::parameter(s, v.clone()).unwrap())
        .collect();
    objective(&case, &mut weights, &params, rng)
        .unwrap()
        .backward()
        .unwrap();
    let mut worst = 0.0f64;
    for (i, (shape, values)) in case.inputs.iter().enumerate() {
        let analytic = params[i].grad().unwrap_or_else(|| vec![0.0; values.len()]);
        let mut numeric = vec![0.0; values.len()];
        for j in 0..values.len() {
            let eval = |delta: f64| {
                let tensors: Vec<Tensor<f64>> = case
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(k, (s, v))| {
                        let mut v = v.clone();
                        if k == i {
                            v[j] += delta;
                        }
                        Tensor::from_vec(s, v).unwrap()
                    })
                    .collect();
                let mut w = weights.clone();
                let mut unused = ChaCha8Rng::seed_from_u64(0);
                objective(&case, &mut w, &tensors, &mut unused)
                    .unwrap()
                    .item()
                    .unwrap()
            };
            numeric[j] = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        }
        let _ = shape;
        let scale = numeric.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / scale);
        }
    }
    worst
}

fn stats<T: Element>(c: usize, rng: &mut ChaCha8Rng) -> BatchNormStats<T> {
    BatchNormStats {
        mean: (0..c)
            .map(|_| T::from_f64_lossy(rng.random_range(-0.5..0.5)))
            .collect(),
        var: (0..c)
            .map(|_| T::from_f64_lossy(rng.random_range(0.5..2.0)))
            .collect(),
    }
}

fn make_case(op: &'static str, rng: &mut ChaCha8Rng) -> Case {
    let r = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| rng.random_range(lo..=hi);
    match op {
        "add" | "sub" | "mul" => {
            let shape = [r(rng, 1, 4), r(rng, 1, 8)];
            let f: Build = match op {
                "add" => Box::new(|t| ops::add(&t[0], &t[1])),
                "sub" => Box::new(|t| ops::sub(&t[0], &t[1])),
                _ => Box::new(|t| ops::mul(&t[0], &t[1])),
            };
            Case {
                inputs: vec![input(rng, &shape), input(rng, &shape)],
                f,
            }
        }
        "scale" => {
            let k: f64 = rng.random_range(-2.0..2.0);
            let n = r(rng, 1, 30);
            Case {
                inputs: vec![input(rng, &[n])],
                f: Box::new(move |t| Ok(ops::scale(&t[0], k))),
            }
        }
        "sum" => {
            let shape = [r(rng, 1, 5), r(rng, 1, 5)];
            Case {
                inputs: vec![input(rng, &shape)],
                f: Box::new(|t| Ok(ops::sum(&t[0]))),
            }
        }
        "elu" => {
            let n = r(rng, 1, 40);
            Case {
                inputs: vec![(vec![n], rand_away_from_zero(rng, n))],
                f: Box::new(|t| Ok(ops::elu(&t[0]))),
            }
        }
        "reshape" => Case {
            inputs: vec![input(rng, &[2, 3, 4])],
            f: Box::new(|t| ops::reshape(&t[0], &[4, 6])),
        },
        "concat" => {
            let (a, b, c) = (r(rng, 1, 3), r(rng, 1, 3), r(rng, 1, 4));
            Case {
                inputs: vec![input(rng, &[2, a, c]), input(rng, &[2, b, c])],
                f: Box::new(|t| ops::concat(&[&t[0], &t[1]], 1)),
            }
        }
        "narrow" => {
            let n = r(rng, 2, 8);
            let start = r(rng, 0, n - 1);
            let len = r(rng, 1, n - start);
            Case {
                inputs: vec![input(rng, &[3, n])],
                f: Box::new(move |t| ops::narrow(&t[0], 1, start, len)),
            }
        }
        "repeat_interleave" => {
            let k = r(rng, 1, 3);
            let shape = [r(rng, 1, 4), r(rng, 1, 5)];
            Case {
                inputs: vec![input(rng, &shape)],
                f: Box::new(move |t| ops::repeat_interleave(&t[0], k)),
            }
        }
        "conv_temporal" => {
            let (c, n, t, k) = (r(rng, 1, 2), r(rng, 1, 3), r(rng, 1, 10), r(rng, 1, 12));
            Case {
                inputs: vec![input(rng, &[c, n, t]), input(rng, &[k]), input(rng, &[1])],
                f: Box::new(|x| ops::conv_temporal(&x[0], &x[1], Some(&x[2]))),
            }
        }
        "conv_temporal_long" => {
            // Long kernels take the Toeplitz product path.
            let (t, k) = (r(rng, 1, 16), r(rng, 48, 64));
            Case {
                inputs: vec![input(rng, &[1, 1, t]), input(rng, &[k]), input(rng, &[1])],
                f: Box::new(|x| ops::conv_temporal(&x[0], &x[1], Some(&x[2]))),
            }
        }
        "conv_depthwise_temporal" => {
            let (b, c, t, k) = (r(rng, 1, 2), r(rng, 1, 3), r(rng, 1, 8), r(rng, 1, 9));
            Case {
                inputs: vec![
                    input(rng, &[b, c, 1, t]),
                    input(rng, &[c, k]),
                    input(rng, &[c]),
                ],
                f: Box::new(|x| ops::conv_depthwise_temporal(&x[0], &x[1], Some(&x[2]))),
            }
        }
        "conv_depthwise_temporal_long" => {
            let (b, t, k) = (r(rng, 1, 3), r(rng, 1, 12), r(rng, 48, 64));
            Case {
                inputs: vec![
                    input(rng, &[b, 1, 1, t]),
                    input(rng, &[1, k]),
                    input(rng, &[1]),
                ],
                f: Box::new(|x| ops::conv_depthwise_temporal(&x[0], &x[1], Some(&x[2]))),
            }
        }
        "conv_grouped" => loop {
            // Strided temporal kernels exercise the direct path; redraw until small.
            let g = r(rng, 1, 2);
            let (cpg, opg) = (r(rng, 1, 2), r(rng, 1, 2));
            let (h, w, t) = (r(rng, 1, 3), r(rng, 1, 3), r(rng, 2, 4));
            let (kh, kw, kt) = (r(rng, 1, h), r(rng, 1, w), r(rng, 1, t));
            let stride = Stride3::new(r(rng, 1, 2), r(rng, 1, 2), r(rng, 1, 2));
            if g * cpg * h * w * t > 64 || g * opg * cpg * kh * kw * kt > 64 {
                continue;
            }
            break Case {
                inputs: vec![
                    input(rng, &[1, g * cpg, h, w, t]),
                    input(rng, &[g * opg, cpg, kh, kw, kt]),
                    input(rng, &[g * opg]),
                ],
                f: Box::new(move |x| ops::conv_grouped(&x[0], &x[1], Some(&x[2]), stride, g)),
            };
        },
        "conv_grouped_gemm" => {
            // Unit temporal kernel and stride with enough taps for the product path.
            let g = r(rng, 1, 2);
            let (h, w) = (r(rng, 2, 4), r(rng, 2, 4));
            let t = r(rng, 1, 64 / (g * h * w)).max(1);
            let (kh, kw) = (r(rng, 2, h), r(rng, 2, w));
            let opg = 16usize.div_ceil(kh * kw).max(1);
            let stride = Stride3::new(r(rng, 1, 2), r(rng, 1, 2), 1);
            Case {
                inputs: vec![
                    input(rng, &[1, g, h, w, t]),
                    input(rng, &[g * opg, 1, kh, kw, 1]),
                    input(rng, &[g * opg]),
                ],
                f: Box::new(move |x| ops::conv_grouped(&x[0], &x[1], Some(&x[2]), stride, g)),
            }
        }
        "add_channel_bias" => {
            let (c, t) = (r(rng, 1, 4), r(rng, 1, 5));
            Case {
                inputs: vec![input(rng, &[2, c, t]), input(rng, &[c])],
                f: Box::new(|x| ops::add_channel_bias(&x[0], &x[1])),
            }
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mode = if op == "batch_norm_train" {
                Mode::Train
            } else {
                Mode::Eval
            };
            let (b, c, t) = (r(rng, 2, 3), r(rng, 1, 3), r(rng, 2, 6));
            let st = stats::<f64>(c, rng);
            Case {
                inputs: vec![input(rng, &[b, c, t]), input(rng, &[c]), input(rng, &[c])],
                f: Box::new(move |x| {
                    let mut s = st.clone();
                    ops::batch_norm(
                        &x[0],
                        &x[1],
                        &x[2],
                        &mut s,
                        mode,
                        BatchNormConfig::default(),
                    )
                }),
            }
        }
        "avg_pool_temporal" => {
            let k = r(rng, 1, 4);
            let t = r(rng, k, 12);
            Case {
                inputs: vec![input(rng, &[2, 2, t])],
                f: Box::new(move |x| ops::avg_pool_temporal(&x[0], k)),
            }
        }
        "linear" => {
            let (b, f, o) = (r(rng, 1, 3), r(rng, 1, 6), r(rng, 1, 5));
            Case {
                inputs: vec![input(rng, &[b, f]), input(rng, &[o, f]), input(rng, &[o])],
                f: Box::new(|x| ops::linear(&x[0], &x[1], &x[2])),
            }
        }
        "softmax_cross_entropy" => {
            let (b, k) = (r(rng, 1, 4), r(rng, 2, 6));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            Case {
                inputs: vec![input(rng, &[b, k])],
                f: Box::new(move |x| ops::softmax_cross_entropy(&x[0], &labels)),
            }
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "elu",
    "reshape",
    "concat",
    "narrow",
    "repeat_interleave",
    "conv_temporal",
    "conv_temporal_long",
    "conv_depthwise_temporal",
    "conv_depthwise_temporal_long",
    "conv_grouped",
    "conv_grouped_gemm",
    "add_channel_bias",
    "batch_norm_train",
    "batch_norm_eval",
    "avg_pool_temporal",
    "linear",
    "softmax_cross_entropy",
];

pub fn run_op(op: &'static str, instances: usize, seed: u64) -> OpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let case = make_case(op, &mut rng);
        assert!(
            case.inputs
                .iter()
                .all(|(s, _)| s.iter().product::<usize>() <= 64),
            "{op}: instance too large"
        );
        worst = worst.max(check(case, &mut rng));
    }
    OpReport {
        op,
        instances,
        worst_rel: worst,
    }
}

pub fn run_all(instances: usize, seed: u64) -> Vec<OpReport> {
    OPS.iter()
        .enumerate()
        .map(|(i, op)| run_op(op, instances, seed + i as u64))
        .collect()
}
