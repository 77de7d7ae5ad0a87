#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topofield::autodiff::{Tape, Tensor};
use topofield::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` for one input tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Largest per-input relative error between backward and central
/// differences of step `h` for a scalar-valued `f`.
pub fn gradcheck(inputs: &[Tensor], h: f64, f: impl Fn(&mut Tape, &[Tensor]) -> Result<Tensor>) -> f64 {
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &leaves).unwrap();
    assert_eq!(out.len(), 1, "gradcheck needs a scalar output");
    let grads = tape.backward(&out).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::inference();
        f(&mut t, xs).unwrap().item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let analytic = grads.wrt(&leaves[i]);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let mut probe: Vec<Tensor> = inputs.to_vec();
            let mut d = inputs[i].to_vec();
            d[j] += h;
            probe[i] = Tensor::new(inputs[i].shape().to_vec(), d.clone()).unwrap();
            let fp = eval(&probe);
            d[j] -= 2.0 * h;
            probe[i] = Tensor::new(inputs[i].shape().to_vec(), d).unwrap();
            let fm = eval(&probe);
            numeric.push((fp - fm) / (2.0 * h));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Mean of squares, the usual scalar head for checks.
pub fn mse(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let s = tape.square(x);
    tape.mean(&s)
}

/// Random MLP with `layers` ≤ 3 and widths ≤ 32; returns the max relative
/// gradient error over its weights and input.
pub fn micro_network_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let layers = r.gen_range(1..=3);
    let mut dims = vec![r.gen_range(1..=8)];
    for _ in 0..layers {
        dims.push(r.gen_range(1..=32));
    }
    let batch = r.gen_range(1..=4);
    let act = r.gen_range(0..4);
    let norm = r.gen_bool(0.5);
    let mut inputs = vec![random(&mut r, &[batch, dims[0]], -1.0, 1.0)];
    for l in 0..layers {
        let s = 1.0 / (dims[l] as f64).sqrt();
        inputs.push(random(&mut r, &[dims[l], dims[l + 1]], -s, s));
        inputs.push(random(&mut r, &[dims[l + 1]], -0.1, 0.1));
    }
    gradcheck(&inputs, 1e-4, |tape, xs| {
        let mut h = xs[0].clone();
        for l in 0..layers {
            h = tape.matmul(&h, &xs[1 + 2 * l])?;
            h = tape.add(&h, &xs[2 + 2 * l])?;
            if norm && l + 1 < layers && h.last_dim() > 1 {
                h = tape.layer_norm(&h, None, None)?;
            }
            h = match act {
                0 => tape.tanh(&h),
                1 => tape.sigmoid(&h),
                2 => tape.softplus(&h),
                _ => tape.sin(&h),
            };
        }
        mse(tape, &h)
    })
}

/// Away from kinks: magnitude in `[0.2, 1]` with a random sign.
fn signed(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap()
}

/// Gradient-check error of every tape primitive plus the composite ops
/// built from custom backward rules.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    use topofield::nets::{conv2d, positional_encode};
    use topofield::renderer::{lstm_step, LstmState};
    let mut r = rng(11);
    let a = random(&mut r, &[3, 4], -1.0, 1.0);
    let b = random(&mut r, &[3, 4], -1.0, 1.0);
    let row = random(&mut r, &[4], -1.0, 1.0);
    let m = random(&mut r, &[4, 2], -1.0, 1.0);
    let pos = random(&mut r, &[3, 4], 0.2, 2.0);
    let s = signed(&mut r, &[3, 4]);
    let h = 1e-4;
    let mut out: Vec<(&'static str, f64)> = vec![
        ("add", gradcheck(&[a.clone(), b.clone()], h, |t, x| { let y = t.add(&x[0], &x[1])?; mse(t, &y) })),
        ("add_broadcast", gradcheck(&[a.clone(), row.clone()], h, |t, x| { let y = t.add(&x[0], &x[1])?; mse(t, &y) })),
        ("sub", gradcheck(&[a.clone(), b.clone()], h, |t, x| { let y = t.sub(&x[0], &x[1])?; mse(t, &y) })),
        ("mul", gradcheck(&[a.clone(), b.clone()], h, |t, x| { let y = t.mul(&x[0], &x[1])?; mse(t, &y) })),
        ("mul_broadcast", gradcheck(&[a.clone(), row.clone()], h, |t, x| { let y = t.mul(&x[0], &x[1])?; mse(t, &y) })),
        ("matmul", gradcheck(&[a.clone(), m.clone()], h, |t, x| { let y = t.matmul(&x[0], &x[1])?; mse(t, &y) })),
        ("sum", gradcheck(&[a.clone()], h, |t, x| { let y = t.square(&x[0]); Ok(t.sum(&y)) })),
        ("sum_last", gradcheck(&[a.clone()], h, |t, x| { let y = t.sum_last(&x[0]); mse(t, &y) })),
        ("mean", gradcheck(&[a.clone()], h, |t, x| { let y = t.sin(&x[0]); t.mean(&y) })),
        ("square", gradcheck(&[a.clone()], h, |t, x| { let y = t.square(&x[0]); t.mean(&y) })),
        ("sqrt", gradcheck(&[pos.clone()], h, |t, x| { let y = t.sqrt(&x[0]); mse(t, &y) })),
        ("abs", gradcheck(&[s.clone()], h, |t, x| { let y = t.abs(&x[0]); mse(t, &y) })),
        ("hinge", gradcheck(&[s.clone()], h, |t, x| { let y = t.hinge(&x[0], 0.0); mse(t, &y) })),
        ("relu", gradcheck(&[s.clone()], h, |t, x| { let y = t.relu(&x[0]); mse(t, &y) })),
        ("softplus", gradcheck(&[a.clone()], h, |t, x| { let y = t.softplus(&x[0]); mse(t, &y) })),
        ("sigmoid", gradcheck(&[a.clone()], h, |t, x| { let y = t.sigmoid(&x[0]); mse(t, &y) })),
        ("tanh", gradcheck(&[a.clone()], h, |t, x| { let y = t.tanh(&x[0]); mse(t, &y) })),
        ("sin", gradcheck(&[a.clone()], h, |t, x| { let y = t.sin(&x[0]); mse(t, &y) })),
        ("cos", gradcheck(&[a.clone()], h, |t, x| { let y = t.cos(&x[0]); mse(t, &y) })),
        ("scale", gradcheck(&[a.clone()], h, |t, x| { let y = t.scale(&x[0], -2.5); mse(t, &y) })),
        ("add_scalar", gradcheck(&[a.clone()], h, |t, x| { let y = t.add_scalar(&x[0], 0.7); mse(t, &y) })),
        ("concat", gradcheck(&[a.clone(), m.clone().reshape_rows()], h, |t, x| {
            let y = t.concat(&[&x[0], &x[1]])?;
            let y = t.sin(&y);
            mse(t, &y)
        })),
        ("slice", gradcheck(&[a.clone()], h, |t, x| { let y = t.slice(&x[0], 1, 2)?; mse(t, &y) })),
        ("reshape", gradcheck(&[a.clone()], h, |t, x| {
            let y = t.reshape(&x[0], &[2, 6])?;
            let w = Tensor::new(vec![6], (0..6).map(|i| i as f64 - 2.5).collect())?;
            let y = t.mul(&y, &w)?;
            mse(t, &y)
        })),
        ("layer_norm", gradcheck(&[a.clone(), row.clone(), random(&mut r, &[4], -0.5, 0.5)], h, |t, x| {
            let y = t.layer_norm(&x[0], Some(&x[1]), Some(&x[2]))?;
            let y = t.sin(&y);
            mse(t, &y)
        })),
    ];
    let img = random(&mut r, &[2, 36], -1.0, 1.0);
    let cw = random(&mut r, &[3, 18], -0.5, 0.5);
    let cb = random(&mut r, &[3, 1], -0.1, 0.1);
    out.push((
        "conv2d_im2col",
        gradcheck(&[img, cw, cb], h, |t, x| {
            let y = conv2d(t, &x[0], (2, 6, 6), &x[1], &x[2])?;
            let y = t.tanh(&y);
            mse(t, &y)
        }),
    ));
    let pts = random(&mut r, &[3, 3], -1.0, 1.0);
    out.push((
        "positional_encode",
        gradcheck(&[pts], h, |t, x| {
            let y = positional_encode(t, &x[0], 3)?;
            mse(t, &y)
        }),
    ));
    let hid = 3;
    let inp = random(&mut r, &[2, 4], -1.0, 1.0);
    let w = random(&mut r, &[4 + hid, 4 * hid], -0.5, 0.5);
    let bb = random(&mut r, &[4 * hid], -0.2, 0.2);
    let ow = random(&mut r, &[hid, 1], -0.5, 0.5);
    let ob = random(&mut r, &[1], -0.5, 0.5);
    let h0 = random(&mut r, &[2, hid], -0.5, 0.5);
    let c0 = random(&mut r, &[2, hid], -0.5, 0.5);
    out.push((
        "lstm_step",
        gradcheck(&[inp, w, bb, ow, ob, h0, c0], h, |t, x| {
            let st = LstmState { h: x[5].clone(), c: x[6].clone() };
            let (next, d) = lstm_step(t, &x[1], &x[2], &x[3], &x[4], 0.01, &st, &x[0])?;
            let (next2, d2) = lstm_step(t, &x[1], &x[2], &x[3], &x[4], 0.01, &next, &x[0])?;
            let a = t.sum(&d);
            let b2 = t.sum(&d2);
            let c = mse(t, &next2.c)?;
            let s = t.add(&a, &b2)?;
            t.add(&s, &c)
        }),
    ));
    out
}

trait ReshapeRows {
    fn reshape_rows(self) -> Tensor;
}

impl ReshapeRows for Tensor {
    /// `[4, 2]` → `[3, k]` compatible block for concat checks.
    fn reshape_rows(self) -> Tensor {
        let d = self.to_vec();
        Tensor::new(vec![3, 2], d[..6].to_vec()).unwrap()
    }
}

pub fn cloud(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

fn d(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn brute_nn(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter().map(|&p| to.iter().map(|&q| d(p, q)).fold(f64::INFINITY, f64::min)).collect()
}

/// `[acc, cov, overall, precision, recall, fscore]` by exhaustive search.
pub fn brute_metrics(pred: &[[f64; 3]], gt: &[[f64; 3]], t: f64) -> [f64; 6] {
    let a = brute_nn(pred, gt);
    let c = brute_nn(gt, pred);
    let acc = a.iter().sum::<f64>() / a.len() as f64;
    let cov = c.iter().sum::<f64>() / c.len() as f64;
    let p = a.iter().filter(|&&x| x <= t).count() as f64 / a.len() as f64;
    let r = c.iter().filter(|&&x| x <= t).count() as f64 / c.len() as f64;
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    [acc, cov, (acc + cov) / 2.0, p, r, f]
}

/// Largest absolute deviation between the library metrics and the brute
/// force oracle on one random 32-point pair.
pub fn metrics_deviation(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pred = cloud(&mut r, 32);
    let gt = cloud(&mut r, 32);
    let t = 0.3;
    let c = topofield::metrics::chamfer(&pred, &gt).unwrap();
    let pr = topofield::metrics::precision_recall_f(&pred, &gt, t).unwrap();
    let got = [c.acc, c.cov, c.overall, pr.precision, pr.recall, pr.fscore];
    let want = brute_metrics(&pred, &gt, t);
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Minimum mean matching cost over every permutation (Heap's algorithm).
pub fn brute_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| d(a[i], b[j])).sum::<f64>() / n as f64;
    let mut best = cost(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn emd_deviation(seed: u64) -> f64 {
    let mut r = rng(1000 + seed);
    let a = cloud(&mut r, 8);
    let b = cloud(&mut r, 8);
    (topofield::metrics::emd(&a, &b).unwrap() - brute_emd(&a, &b)).abs()
}

/// Small networks and budgets for end-to-end CLI runs; the sphere stage is
/// long enough that reconstructions are non-empty.
pub fn tiny_run_config(root: &std::path::Path) -> topofield::cli::RunConfig {
    use topofield::autodiff::AdamConfig;
    use topofield::nets::NetConfig;
    use topofield::renderer::MarchConfig;
    use topofield::trainer::{PhaseBudget, TrainConfig};
    let mut cfg = topofield::cli::RunConfig {
        data_dir: root.join("data"),
        run_dir: root.join("run"),
        output_dir: root.join("out"),
        ..Default::default()
    };
    cfg.gen.count = 2;
    cfg.gen.resolution = 32;
    cfg.gen.views_per_instance = 1;
    cfg.gen.genus_mix = 0.5;
    cfg.train = TrainConfig {
        resolution: 32,
        net: NetConfig {
            k: 2,
            latent_dim: 8,
            trunk_width: 16,
            trunk_depth: 2,
            hyper_hidden: 8,
            pe_point_freqs: 4,
            pe_feature_freqs: 2,
            uncond_hidden: 8,
            encoder_channels: vec![4, 4, 8, 8, 8],
            lstm_hidden: 8,
        },
        march: MarchConfig {
            steps: 4,
            ..MarchConfig::default()
        },
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        iterations: PhaseBudget {
            sphere: 300,
            direct: 4,
            deform_init: 3,
            deform: 3,
        },
        rays_per_iteration: 16,
        omega_samples: 64,
        pretrain_max_mae: 10.0,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    cfg.reconstruct.resolution = 24;
    cfg.eval.points = 256;
    cfg.eval.emd_points = 64;
    cfg.eval.gt_resolution = 32;
    cfg
}

pub fn write_config(root: &std::path::Path, cfg: &topofield::cli::RunConfig) -> std::path::PathBuf {
    let p = root.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn cli(args: &[&str]) -> i32 {
    topofield::cli::run(std::iter::once("topofield").chain(args.iter().copied()))
}
