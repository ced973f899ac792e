//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use degrel_core::models::{init_model, ModelConfig, ModelParams, PairBatch};
use degrel_core::numcore::{GradTape, Tensor};
use degrel_core::StreamKey;

/// Plain f64 tensor for the reference computations.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn of(t: &Tensor) -> Arr {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

pub fn conv(x: &Arr, k: &Arr, pad: usize) -> Arr {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (f, ks) = (k.shape[0], k.shape[2]);
    let (oh, ow) = (h + 2 * pad + 1 - ks, w + 2 * pad + 1 - ks);
    let mut out = vec![0.0; b * f * oh * ow];
    for bi in 0..b {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy + ky) as isize - pad as isize;
                                let ix = (ox + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data[((bi * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data[((fi * c + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out[((bi * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Arr {
        shape: vec![b, f, oh, ow],
        data: out,
    }
}

pub fn add_bias(x: &Arr, bias: &Arr) -> Arr {
    let c = x.shape[1];
    let plane = x.shape[2] * x.shape[3];
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v + bias.data[(i / plane) % c])
        .collect();
    Arr {
        shape: x.shape.clone(),
        data,
    }
}

pub fn relu(x: &Arr) -> Arr {
    Arr {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    Arr {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

pub fn mse(a: &Arr, b: &Arr) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

/// Residual net forward pass in f64.
pub fn model_forward(params: &[Arr], pad: usize, x: &Arr) -> Arr {
    let n = params.len() / 2;
    let mut h = x.clone();
    for i in 0..n {
        h = add_bias(&conv(&h, &params[2 * i], pad), &params[2 * i + 1]);
        if i + 1 < n {
            h = relu(&h);
        }
    }
    add(x, &h)
}

/// Central differences of `f` with respect to every entry of `args[which]`.
pub fn numeric_grad(args: &[Arr], which: usize, f: &dyn Fn(&[Arr]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut work = args.to_vec();
    (0..args[which].data.len())
        .map(|i| {
            let v = args[which].data[i];
            work[which].data[i] = v + h;
            let up = f(&work);
            work[which].data[i] = v - h;
            let down = f(&work);
            work[which].data[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - n| / max |n|` over one tensor.
pub fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .data()
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (&a, &n)| m.max((f64::from(a) - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn randn(shape: &[usize], name: &str, scale: f32) -> Tensor {
    Tensor::randn(shape, StreamKey::new(77, name), scale).unwrap()
}

/// Values bounded away from the relu kink.
fn off_kink(t: Tensor) -> Tensor {
    t.map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

type RefFn = dyn Fn(&[Arr]) -> f64;
type TapeFn = dyn Fn(&mut GradTape, &[degrel_core::numcore::Var]) -> degrel_core::numcore::Var;

fn check_op(name: &str, inputs: &[Tensor], tape_fn: &TapeFn, reference: &RefFn, out: &mut Vec<(String, f64)>) {
    let mut tape = GradTape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad(true))).collect();
    let root = tape_fn(&mut tape, &vars);
    let grads = tape.backward(root).unwrap();
    let args: Vec<Arr> = inputs.iter().map(Arr::of).collect();
    for (i, v) in vars.iter().enumerate() {
        let num = numeric_grad(&args, i, reference);
        out.push((format!("{name}/arg{i}"), rel_err(grads.get(*v).unwrap(), &num)));
    }
}

/// Relative gradient error of every differentiable op and of two full models.
pub fn gradient_suite() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let target = randn(&[2, 3, 5, 6], "target", 1.0);
    let tgt = Arr::of(&target);

    for pad in [0usize, 1, 2] {
        let x = randn(&[2, 2, 7, 8], "conv-x", 1.0);
        let k = randn(&[3, 2, 3, 3], "conv-k", 0.5);
        let oh = 7 + 2 * pad - 2;
        let ow = 8 + 2 * pad - 2;
        let t = randn(&[2, 3, oh, ow], "conv-t", 1.0);
        let ta = Arr::of(&t);
        let t2 = t.clone();
        check_op(
            &format!("conv2d pad {pad}"),
            &[x, k],
            &move |tape, v| {
                let y = tape.conv2d(v[0], v[1], pad).unwrap();
                let c = tape.leaf(t2.clone());
                tape.mse(y, c).unwrap()
            },
            &move |a| mse(&conv(&a[0], &a[1], pad), &ta),
            &mut out,
        );
    }

    let x = randn(&[2, 3, 5, 6], "bias-x", 1.0);
    let b = randn(&[3], "bias-b", 1.0);
    let (t1, a1) = (target.clone(), tgt.clone());
    check_op(
        "add_bias",
        &[x, b],
        &move |tape, v| {
            let y = tape.add_bias(v[0], v[1]).unwrap();
            let c = tape.leaf(t1.clone());
            tape.mse(y, c).unwrap()
        },
        &move |a| mse(&add_bias(&a[0], &a[1]), &a1),
        &mut out,
    );

    let x = off_kink(randn(&[2, 3, 5, 6], "relu-x", 1.0));
    let (t1, a1) = (target.clone(), tgt.clone());
    check_op(
        "relu",
        &[x],
        &move |tape, v| {
            let y = tape.relu(v[0]).unwrap();
            let c = tape.leaf(t1.clone());
            tape.mse(y, c).unwrap()
        },
        &move |a| mse(&relu(&a[0]), &a1),
        &mut out,
    );

    let xa = randn(&[2, 3, 5, 6], "add-a", 1.0);
    let xb = randn(&[2, 3, 5, 6], "add-b", 1.0);
    let (t1, a1) = (target.clone(), tgt.clone());
    check_op(
        "add",
        &[xa, xb],
        &move |tape, v| {
            let y = tape.add(v[0], v[1]).unwrap();
            let c = tape.leaf(t1.clone());
            tape.mse(y, c).unwrap()
        },
        &move |a| mse(&add(&a[0], &a[1]), &a1),
        &mut out,
    );

    let x = randn(&[2, 3, 5, 6], "sum-x", 1.0);
    check_op(
        "sum",
        &[x],
        &|tape, v| tape.sum(v[0]).unwrap(),
        &|a| a[0].data.iter().sum(),
        &mut out,
    );

    let p = randn(&[2, 3, 5, 6], "mse-p", 1.0);
    let q = randn(&[2, 3, 5, 6], "mse-q", 1.0);
    check_op(
        "mse",
        &[p, q],
        &|tape, v| tape.mse(v[0], v[1]).unwrap(),
        &|a| mse(&a[0], &a[1]),
        &mut out,
    );

    for channels in [1usize, 3] {
        let cfg = ModelConfig {
            zero_final: false,
            ..ModelConfig::desk(channels, 5)
        };
        let model = init_model(&cfg).unwrap();
        let x = randn(&[2, channels, 6, 7], "model-x", 0.5).map(|v| v + 0.5);
        let y = randn(&[2, channels, 6, 7], "model-y", 0.5).map(|v| v + 0.5);
        for (name, err) in model_errors(&model, &PairBatch::new(x, y).unwrap()) {
            out.push((format!("model {channels}ch/{name}"), err));
        }
    }
    out
}

/// Tape gradient of the training loss against f64 central differences, per
/// parameter tensor.
pub fn model_errors(model: &ModelParams, batch: &PairBatch) -> Vec<(String, f64)> {
    let (_, grads) = model.loss_and_grad(batch).unwrap();
    let pad = model.config().padding();
    let params: Vec<Arr> = model.tensors().iter().map(Arr::of).collect();
    let (x, y) = (Arr::of(&batch.degraded), Arr::of(&batch.clean));
    let loss = |p: &[Arr]| mse(&model_forward(p, pad, &x), &y);
    (0..params.len())
        .map(|i| {
            let kind = if i % 2 == 0 { "kernel" } else { "bias" };
            let num = numeric_grad(&params, i, &loss);
            (format!("{kind}{}", i / 2), rel_err(&grads[i], &num))
        })
        .collect()
}

/// `((x a + y b + ch k) mod m) / (m - 1)` on a `c x h x w` grid.
pub fn pattern(c: usize, h: usize, w: usize, (a, b, m, k): (usize, usize, usize, usize)) -> Tensor {
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data.push((((x * a + y * b + ch * k) % m) as f64 / (m - 1) as f64) as f32);
            }
        }
    }
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

type Pattern = (usize, usize, usize, usize);
type Fixture = (usize, usize, usize, Pattern, Pattern, f64, f64, f64);

/// Values frozen from scikit-image `structural_similarity` with
/// `gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
/// data_range=1` on the f32-rounded patterns: `(c, h, w, x, y, ssim(x, y),
/// psnr(x, y), ssim(x, 1 - x))`.
pub const FIXTURES: [Fixture; 4] = [
    (1, 16, 16, (7, 13, 17, 5), (3, 5, 23, 11), 0.08467597563647682, 7.0497635154156635, -0.9892694674799003),
    (3, 20, 24, (7, 13, 17, 5), (3, 5, 23, 11), -0.01301444123170224, 7.315727523867225, -0.9893072457390137),
    (1, 32, 32, (1, 2, 31, 0), (2, 1, 29, 3), 0.1565377286973752, 7.490826272566134, -0.7196181868351387),
    (3, 12, 12, (5, 3, 11, 2), (5, 3, 11, 4), 0.242154381765015, 8.160714479090721, -0.9897435376415887),
];

/// A ramp and a lightly perturbed copy, `24 x 20`, with frozen SSIM and PSNR.
pub fn smooth_fixture() -> (Tensor, Tensor, f64, f64) {
    let (h, w) = (24usize, 20usize);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for yy in 0..h {
        for xx in 0..w {
            let v = ((xx + yy) as f64 / (h + w - 2) as f64) as f32;
            let d = ((xx * 3 + yy * 7) % 5) as f64 - 2.0;
            x.push(v);
            y.push((f64::from(v) + d / 40.0).clamp(0.0, 1.0) as f32);
        }
    }
    (
        Tensor::from_vec(&[1, h, w], x).unwrap(),
        Tensor::from_vec(&[1, h, w], y).unwrap(),
        0.8273152082802093,
        29.056961497544943,
    )
}
