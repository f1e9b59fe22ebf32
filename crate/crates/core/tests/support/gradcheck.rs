//! Central finite differences against every differentiable tape op.
//!
//! Each check evaluates an independent f64 re-implementation of the forward
//! pass (naive loops, no shared kernels) at the f32 point the tape saw, so the
//! only approximation on the numeric side is the O(h²) difference itself.
//! Each public check returns the worst relative error over `TRIALS` draws.

use unsir_core::{SplitMix64, Tape, Tensor, Var};

const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-3;
pub const TRIALS: usize = 100;
/// Denominators are floored so components near zero are compared absolutely.
const FLOOR: f64 = 1e-2;

type Inputs = Vec<(Vec<usize>, Vec<f64>)>;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Max relative error between the tape's gradients and central differences
/// of `reference` at the same point.
fn check(
    inputs: &Inputs,
    reference: impl Fn(&[Vec<f64>]) -> f64,
    build: impl Fn(&mut Tape, &[Var]) -> unsir_core::Result<Var>,
) -> f64 {
    // The tape works in f32; evaluate the reference at exactly those values.
    let point: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(_, v)| v.iter().map(|&x| x as f32 as f64).collect())
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&point)
        .map(|((shape, _), vals)| {
            let t = Tensor::new(shape.clone(), vals.iter().map(|&x| x as f32).collect())
                .unwrap()
                .with_requires_grad(true);
            tape.leaf(t).unwrap()
        })
        .collect();
    let loss = build(&mut tape, &vars).unwrap();
    let forward = tape.value(loss).data()[0] as f64;
    assert!(
        (forward - reference(&point)).abs() <= 1e-3 * forward.abs().max(1.0),
        "forward mismatch: tape {forward}, reference {}",
        reference(&point)
    );
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("leaf gradient").to_vec();
        for j in 0..point[i].len() {
            let mut plus = point.clone();
            plus[i][j] += STEP;
            let mut minus = point.clone();
            minus[i][j] -= STEP;
            let numeric = (reference(&plus) - reference(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[j] as f64, numeric));
        }
    }
    worst
}

fn randn(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Normal draws kept at least `gap` away from zero (ReLU's kink).
fn randn_off_kink(rng: &mut SplitMix64, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.normal();
            if v.abs() >= gap {
                break v;
            }
        })
        .collect()
}

fn dim(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn half_sum_squares(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

fn ref_conv(
    x: &[f64],
    w: &[f64],
    (n, c, h, wd): (usize, usize, usize, usize),
    (f, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * ho * wo];
    for b in 0..n {
        for o in 0..f {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w[((o * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * f + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

fn ref_mean_ce(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / n as f64
}

/// Worst relative error over `TRIALS` draws seeded from `name`.
fn run_trials(name: &str, mut trial: impl FnMut(&mut SplitMix64) -> f64) -> f64 {
    let mut rng = SplitMix64::new(unsir_core::rng::tag_hash(name));
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        worst = worst.max(trial(&mut rng));
    }
    worst
}

pub fn matmul() -> f64 {
    run_trials("matmul", |rng| {
        let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
        let inputs = vec![(vec![m, k], randn(rng, m * k)), (vec![k, n], randn(rng, k * n))];
        check(
            &inputs,
            |p| half_sum_squares(&ref_matmul(&p[0], &p[1], m, k, n)),
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn dense_bias() -> f64 {
    run_trials("bias_add_dense", |rng| {
        let (n, f) = (dim(rng, 1, 4), dim(rng, 1, 6));
        let inputs = vec![(vec![n, f], randn(rng, n * f)), (vec![f], randn(rng, f))];
        check(
            &inputs,
            |p| {
                let out: Vec<f64> = (0..n * f).map(|i| p[0][i] + p[1][i % f]).collect();
                half_sum_squares(&out)
            },
            |t, v| {
                let y = t.bias_add(v[0], v[1])?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn channel_bias() -> f64 {
    run_trials("bias_add_channel", |rng| {
        let (n, f, h, w) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![(vec![n, f, h, w], randn(rng, n * f * h * w)), (vec![f], randn(rng, f))];
        check(
            &inputs,
            |p| {
                let out: Vec<f64> = (0..n * f * h * w).map(|i| p[0][i] + p[1][(i / (h * w)) % f]).collect();
                half_sum_squares(&out)
            },
            |t, v| {
                let y = t.bias_add(v[0], v[1])?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn conv2d() -> f64 {
    run_trials("conv2d", |rng| {
        // Pick an output size, then an input size that produces it exactly.
        let (stride, pad, kh, kw, ho, wo, h, w) = loop {
            let stride = dim(rng, 1, 2);
            let pad = rng.below(2);
            let (kh, kw) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let (ho, wo) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let h = ((ho - 1) * stride + kh) as isize - 2 * pad as isize;
            let w = ((wo - 1) * stride + kw) as isize - 2 * pad as isize;
            if h >= 1 && w >= 1 {
                break (stride, pad, kh, kw, ho, wo, h as usize, w as usize);
            }
        };
        let (n, c, f) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![
            (vec![n, c, h, w], randn(rng, n * c * h * w)),
            (vec![f, c, kh, kw], randn(rng, f * c * kh * kw)),
        ];
        check(
            &inputs,
            |p| {
                let (out, oh, ow) = ref_conv(&p[0], &p[1], (n, c, h, w), (f, kh, kw), stride, pad);
                assert_eq!((oh, ow), (ho, wo));
                half_sum_squares(&out)
            },
            |t, v| {
                let y = t.conv2d(v[0], v[1], stride, pad)?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn relu() -> f64 {
    run_trials("relu", |rng| {
        let (n, f) = (dim(rng, 1, 4), dim(rng, 1, 6));
        let inputs = vec![(vec![n, f], randn_off_kink(rng, n * f, 10.0 * STEP))];
        check(
            &inputs,
            |p| half_sum_squares(&p[0].iter().map(|&x| x.max(0.0)).collect::<Vec<_>>()),
            |t, v| {
                let y = t.relu(v[0])?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn global_avg_pool() -> f64 {
    run_trials("global_avg_pool", |rng| {
        let (n, c, h, w) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4));
        let inputs = vec![(vec![n, c, h, w], randn(rng, n * c * h * w))];
        check(
            &inputs,
            |p| {
                let out: Vec<f64> = (0..n * c)
                    .map(|i| p[0][i * h * w..(i + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                    .collect();
                half_sum_squares(&out)
            },
            |t, v| {
                let y = t.global_avg_pool(v[0])?;
                let s = t.sum_squares(y)?;
                t.scale(s, 0.5)
            },
        )
    })
}

pub fn cross_entropy() -> f64 {
    run_trials("softmax_cross_entropy", |rng| {
        let (n, k) = (dim(rng, 1, 5), dim(rng, 2, 6));
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let logits: Vec<f64> = randn(rng, n * k).iter().map(|v| 3.0 * v).collect();
        let inputs = vec![(vec![n, k], logits)];
        let l2 = labels.clone();
        check(&inputs, move |p| ref_mean_ce(&p[0], &l2, k), |t, v| t.softmax_cross_entropy(v[0], &labels))
    })
}

pub fn reduction_and_arithmetic() -> f64 {
    run_trials("sum_scale_add_reshape", |rng| {
        let (n, f) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let alpha = rng.uniform(-2.0, 2.0);
        let inputs = vec![(vec![n, f], randn(rng, n * f)), (vec![n, f], randn(rng, n * f))];
        check(
            &inputs,
            |p| {
                let added: Vec<f64> = p[0].iter().zip(&p[1]).map(|(a, b)| a + alpha as f32 as f64 * b).collect();
                half_sum_squares(&added) + added.iter().sum::<f64>()
            },
            |t, v| {
                let b = t.scale(v[1], alpha as f32)?;
                let s = t.add(v[0], b)?;
                let flat = t.reshape(s, vec![n * f])?;
                let sq = t.sum_squares(flat)?;
                let half = t.scale(sq, 0.5)?;
                let total = t.sum(flat)?;
                t.add(half, total)
            },
        )
    })
}

pub fn two_layer_mlp() -> f64 {
    let mut rng = SplitMix64::new(unsir_core::rng::tag_hash("mlp"));
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < TRIALS {
        let (n, d, h, k) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 5), dim(&mut rng, 1, 6), dim(&mut rng, 2, 5));
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let inputs: Inputs = vec![
            (vec![n, d], randn(&mut rng, n * d)),
            (vec![d, h], randn(&mut rng, d * h)),
            (vec![h], randn(&mut rng, h)),
            (vec![h, k], randn(&mut rng, h * k)),
            (vec![k], randn(&mut rng, k)),
        ];
        let pre = |p: &[Vec<f64>]| -> Vec<f64> {
            let z = ref_matmul(&p[0], &p[1], n, d, h);
            z.iter().enumerate().map(|(i, v)| v + p[2][i % h]).collect()
        };
        let point: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.iter().map(|&x| x as f32 as f64).collect()).collect();
        // Perturbing any weight moves a pre-activation by at most ~STEP·|x|;
        // skip draws that sit that close to the ReLU kink.
        if pre(&point).iter().any(|z| z.abs() < 0.05) {
            continue;
        }
        let l2 = labels.clone();
        let reference = move |p: &[Vec<f64>]| {
            let a: Vec<f64> = pre(p).iter().map(|v| v.max(0.0)).collect();
            let logits: Vec<f64> = ref_matmul(&a, &p[3], n, h, k)
                .iter()
                .enumerate()
                .map(|(i, v)| v + p[4][i % k])
                .collect();
            ref_mean_ce(&logits, &l2, k)
        };
        worst = worst.max(check(&inputs, reference, |t, v| {
            let z = t.matmul(v[0], v[1])?;
            let z = t.bias_add(z, v[2])?;
            let a = t.relu(z)?;
            let o = t.matmul(a, v[3])?;
            let o = t.bias_add(o, v[4])?;
            t.softmax_cross_entropy(o, &labels)
        }));
        done += 1;
    }
    worst
}

/// Every check, by name.
pub fn all() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("matmul", matmul),
        ("dense_bias", dense_bias),
        ("channel_bias", channel_bias),
        ("conv2d", conv2d),
        ("relu", relu),
        ("global_avg_pool", global_avg_pool),
        ("cross_entropy", cross_entropy),
        ("reduction_and_arithmetic", reduction_and_arithmetic),
        ("two_layer_mlp", two_layer_mlp),
    ]
}
