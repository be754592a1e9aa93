//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the code under test except
//! to obtain the value being checked.

#![allow(dead_code)]

use e2edrive::pilotnet::{PilotNet, PilotNetConfig};
use e2edrive::tensor::gradcheck::{grad_check, relative_error, ABS_FLOOR};
use e2edrive::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, mse_loss, mse_loss_backward, relu_backward,
    relu_forward, AdamConfig, AdamState, Tensor,
};
use e2edrive::vision::RawFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Straightforward nested loops over `(b, co, y, x, ci, i, j)`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    [b, ci, h, w]: [usize; 4],
    k: &[f64],
    [co, kh, kw]: [usize; 3],
    bias: &[f64],
    stride: usize,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    for n in 0..b {
        for o in 0..co {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let xv = x[((n * ci + c) * h + y * stride + i) * w + xo * stride + j];
                                acc += xv * k[((o * ci + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((n * co + o) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    (out, [b, co, ho, wo])
}

/// Conv2d (f32) against the naive loop (f64) over `shapes` random geometries.
/// Returns the worst relative error (unit floor on the denominator).
pub fn conv_oracle_suite(shapes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let b = r.gen_range(1..=3);
        let ci = r.gen_range(1..=4);
        let co = r.gen_range(1..=5);
        let kh = r.gen_range(1..=5);
        let kw = r.gen_range(1..=5);
        let stride = r.gen_range(1..=3);
        let h = kh + r.gen_range(0..=9);
        let w = kw + r.gen_range(0..=9);
        let x = to_f32(&random_vec(&mut r, b * ci * h * w));
        let k = to_f32(&random_vec(&mut r, co * ci * kh * kw));
        let bias = to_f32(&random_vec(&mut r, co));
        let got = conv2d_forward(
            &Tensor::new(&[b, ci, h, w], x.clone()).unwrap(),
            &Tensor::new(&[co, ci, kh, kw], k.clone()).unwrap(),
            &Tensor::new(&[co], bias.clone()).unwrap(),
            stride,
        )
        .unwrap();
        let (want, shape) = naive_conv(&to_f64(&x), [b, ci, h, w], &to_f64(&k), [co, kh, kw], &to_f64(&bias), stride);
        assert_eq!(got.shape(), &shape);
        for (&g, &e) in got.data().iter().zip(&want) {
            worst = worst.max((g as f64 - e).abs() / e.abs().max(1.0));
        }
    }
    worst
}

/// Per-pixel bilinear evaluation with half-pixel centres, computed in f64.
pub fn bilinear_oracle(src: &RawFrame, width: usize, height: usize) -> Vec<u8> {
    let (sw, sh) = (src.width(), src.height());
    let coord = |d: usize, s_len: usize, d_len: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * s_len as f64 / d_len as f64 - 0.5).clamp(0.0, (s_len - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(s_len - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sh, height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, sw, width);
            for c in 0..3 {
                let p = |xx: usize, yy: usize| src.pixel(xx, yy)[c] as f64;
                let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + p(x1, y0) * fx * (1.0 - fy)
                    + p(x0, y1) * (1.0 - fx) * fy
                    + p(x1, y1) * fx * fy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn checkerboard(width: usize, height: usize, cell: usize) -> RawFrame {
    let mut px = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let on = ((x / cell) + (y / cell)) % 2 == 0;
            px.extend_from_slice(&if on { [250, 20, 120] } else { [10, 200, 60] });
        }
    }
    RawFrame::new(width, height, px).unwrap()
}

pub const FD_EPS: f64 = 1e-3;

/// Worst relative error of the conv backward pass (input, kernel and bias
/// gradients) against central differences of `sum(out · w)` in f64.
pub fn conv_grad_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, ci, h, w, co, k, stride) = (2, 3, 9, 11, 4, 3, 2);
    let x = random_vec(&mut r, b * ci * h * w);
    let kern = random_vec(&mut r, co * ci * k * k);
    let bias = random_vec(&mut r, co);
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let up = random_vec(&mut r, b * co * ho * wo);
    let g = conv2d_backward(
        &t64(&[b, ci, h, w], x.clone()),
        &t64(&[co, ci, k, k], kern.clone()),
        &t64(&[b, co, ho, wo], up.clone()),
        stride,
    )
    .unwrap();
    let loss = |x: &[f64], kern: &[f64], bias: &[f64]| -> f64 {
        let (out, _) = naive_conv(x, [b, ci, h, w], kern, [co, k, k], bias, stride);
        out.iter().zip(&up).map(|(o, u)| o * u).sum()
    };
    let ex = grad_check(|p| loss(p, &kern, &bias), &x, g.input.data(), FD_EPS, None);
    let ek = grad_check(|p| loss(&x, p, &bias), &kern, g.kernels.data(), FD_EPS, None);
    let eb = grad_check(|p| loss(&x, &kern, p), &bias, g.bias.data(), FD_EPS, None);
    ex.max_rel_error.max(ek.max_rel_error).max(eb.max_rel_error)
}

pub fn dense_grad_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, n, m) = (3, 7, 5);
    let x = random_vec(&mut r, b * n);
    let wt = random_vec(&mut r, m * n);
    let bias = random_vec(&mut r, m);
    let up = random_vec(&mut r, b * m);
    let g = dense_backward(&t64(&[b, n], x.clone()), &t64(&[m, n], wt.clone()), &t64(&[b, m], up.clone())).unwrap();
    let loss = |x: &[f64], wt: &[f64], bias: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..b {
            for j in 0..m {
                let y = bias[j] + (0..n).map(|q| x[i * n + q] * wt[j * n + q]).sum::<f64>();
                s += y * up[i * m + j];
            }
        }
        s
    };
    let ex = grad_check(|p| loss(p, &wt, &bias), &x, g.input.data(), FD_EPS, None);
    let ew = grad_check(|p| loss(&x, p, &bias), &wt, g.weights.data(), FD_EPS, None);
    let eb = grad_check(|p| loss(&x, &wt, p), &bias, g.bias.data(), FD_EPS, None);
    ex.max_rel_error.max(ew.max_rel_error).max(eb.max_rel_error)
}

/// ReLU probed away from the kink: inputs are kept at |x| > 10·eps.
pub fn relu_grad_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..64)
        .map(|_| {
            let v: f64 = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let up = random_vec(&mut r, 64);
    let g = relu_backward(&t64(&[64], x.clone()), &t64(&[64], up.clone())).unwrap();
    let loss = |p: &[f64]| -> f64 { p.iter().zip(&up).map(|(v, u)| v.max(0.0) * u).sum() };
    // Forward agrees with the same definition.
    let fwd = relu_forward(&t64(&[64], x.clone()));
    assert!(fwd.data().iter().zip(&x).all(|(a, b)| *a == b.max(0.0)));
    grad_check(loss, &x, g.data(), FD_EPS, None).max_rel_error
}

pub fn mse_grad_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let p = random_vec(&mut r, 8);
    let y = random_vec(&mut r, 8);
    let g = mse_loss_backward(&t64(&[4, 2], p.clone()), &t64(&[4, 2], y.clone())).unwrap();
    let loss = |q: &[f64]| -> f64 { q.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 8.0 };
    let direct = mse_loss(&t64(&[4, 2], p.clone()), &t64(&[4, 2], y.clone())).unwrap();
    assert!((direct - loss(&p)).abs() < 1e-12);
    grad_check(loss, &p, g.data(), FD_EPS, None).max_rel_error
}

pub struct FullNetCheck {
    /// f64 backward pass vs f64 central differences.
    pub f64_error: f64,
    /// f32 backward pass vs f64 central differences. Entries are compared
    /// relative to `max(|numeric|, F32_FLOOR · max|grad| of their tensor)`:
    /// below that scale an f32 gradient has no significant digits left.
    pub f32_error: f64,
    pub coordinates: usize,
    /// Probes skipped because the perturbation flipped a ReLU.
    pub straddled: usize,
}

pub const F32_FLOOR: f64 = 1e-3;

fn relu_pattern<T: e2edrive::tensor::Scalar>(trace: &e2edrive::pilotnet::Trace<T>) -> Vec<bool> {
    trace.inputs()[1..]
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
        .collect()
}

/// Full-network check on a 4-sample batch. Every coordinate of tensors with
/// at most `per_tensor` entries is probed, the larger ones get a seeded
/// sample of `per_tensor` coordinates. Probes whose ±eps perturbation flips
/// any ReLU are excluded (kink neighbourhood) and counted.
pub fn full_net_grad_check(seed: u64, per_tensor: usize) -> FullNetCheck {
    let cfg = PilotNetConfig::default();
    let net = PilotNet::<f32>::build(cfg.clone(), seed).unwrap();
    let mut r = rng(seed ^ 0xfd);
    let x = Tensor::new(&[4, 3, 66, 200], to_f32(&random_vec(&mut r, 4 * 3 * 66 * 200))).unwrap();
    let y = Tensor::new(&[4, 2], to_f32(&random_vec(&mut r, 8))).unwrap();
    let (pred, trace32) = net.forward_train(&x).unwrap();
    let g32 = net.backward(&trace32, &mse_loss_backward(&pred, &y).unwrap(), false).unwrap();

    let x64: Tensor<f64> = x.cast();
    let y64: Tensor<f64> = y.cast();
    let net64: PilotNet<f64> = net.cast();
    let (pred64, trace64) = net64.forward_train(&x64).unwrap();
    let g64 = net64.backward(&trace64, &mse_loss_backward(&pred64, &y64).unwrap(), false).unwrap();
    let base_pattern = relu_pattern(&trace64);
    assert_eq!(relu_pattern(&trace32), base_pattern, "f32 and f64 activation patterns differ at the base point");

    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    let (mut checked, mut straddled) = (0, 0);
    let eps = 1e-5;
    for (k, (a32, a64)) in g32.params.iter().zip(&g64.params).enumerate() {
        let n = a64.numel();
        let scale = a32.data().iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| r.gen_range(0..n)).collect()
        };
        for i in picks {
            let probe = |delta: f64| {
                let mut m = net64.clone();
                m.params_mut()[k].data_mut()[i] += delta;
                let (out, tr) = m.forward_train(&x64).unwrap();
                (mse_loss(&out, &y64).unwrap(), relu_pattern(&tr) == base_pattern)
            };
            let (plus, clean_p) = probe(eps);
            let (minus, clean_m) = probe(-eps);
            if !(clean_p && clean_m) {
                straddled += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst64 = worst64.max(relative_error(a64.data()[i], numeric));
            let a = a32.data()[i] as f64;
            worst32 = worst32.max((a - numeric).abs() / numeric.abs().max(F32_FLOOR * scale).max(ABS_FLOOR));
            checked += 1;
        }
    }
    FullNetCheck {
        f64_error: worst64,
        f32_error: worst32,
        coordinates: checked,
        straddled,
    }
}

/// Absolute error of one Adam step on a scalar θ=1, g=1 against the update
/// evaluated by hand: m̂ = v̂ = 1 after bias correction, so
/// θ' = 1 − lr · 1/(1 + eps).
pub fn adam_hand_error() -> f64 {
    let mut p = Tensor::new(&[1], vec![1.0f32]).unwrap();
    p.set_grad(vec![1.0]).unwrap();
    let cfg = AdamConfig::default();
    let mut st = AdamState::for_params(cfg, [&p]);
    e2edrive::tensor::adam_step(&mut [&mut p], &mut st).unwrap();
    let want = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
    (p.data()[0] as f64 - want).abs()
}

/// Ratio-style error used where f32 results are compared with f64 oracles.
pub fn rel(a: f64, b: f64) -> f64 {
    relative_error(a, b)
}
