//! Small strided convolutional image encoder.

use std::sync::Arc;

use rand::Rng;

use super::{kaiming_uniform, linear};
use crate::autodiff::{Bound, CustomBackward, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

fn out_extent(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Gather table for a 3×3 / stride-2 / pad-1 patch extraction.
struct PatchTable {
    /// source index per `(row, col)` of the column matrix, `u32::MAX` for padding
    src: Vec<u32>,
    in_len: usize,
}

fn patch_table(c: usize, h: usize, w: usize) -> PatchTable {
    let (ho, wo) = (out_extent(h), out_extent(w));
    let cols = ho * wo;
    let mut src = vec![u32::MAX; c * KERNEL * KERNEL * cols];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            src[row * cols + oy * wo + ox] = (ci * h * w + iy as usize * w + ix as usize) as u32;
                        }
                    }
                }
            }
        }
    }
    PatchTable { src, in_len: c * h * w }
}

struct PatchBackward(Arc<PatchTable>);

impl CustomBackward for PatchBackward {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn backward(&self, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; self.0.in_len];
        for (&s, &v) in self.0.src.iter().zip(grad_out) {
            if s != u32::MAX {
                g[s as usize] += v;
            }
        }
        vec![Some(g)]
    }
}

/// Unfolds `[C, H·W]` into `[C·9, Ho·Wo]` patch columns.
pub fn im2col(tape: &mut Tape, x: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    if x.len() != c * h * w {
        return Err(Error::shape("im2col", format!("[{c}, {}]", h * w), format!("{:?}", x.shape())));
    }
    let table = Arc::new(patch_table(c, h, w));
    let data: Vec<f64> = table
        .src
        .iter()
        .map(|&s| if s == u32::MAX { 0.0 } else { x.data()[s as usize] })
        .collect();
    let shape = vec![c * KERNEL * KERNEL, out_extent(h) * out_extent(w)];
    tape.custom(&[x], shape, data, Box::new(PatchBackward(table)))
}

/// 3×3 stride-2 convolution on a single `[C, H·W]` feature map.
pub fn conv2d(tape: &mut Tape, x: &Tensor, (c, h, w): (usize, usize, usize), weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let cols = im2col(tape, x, c, h, w)?;
    let y = tape.matmul(weight, &cols)?;
    tape.add(&y, bias)
}

/// Five strided conv blocks, global average pool, linear projection.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub resolution: usize,
}

impl ImageEncoder {
    pub fn new(channels: Vec<usize>, latent_dim: usize, resolution: usize) -> Self {
        ImageEncoder {
            channels,
            latent_dim,
            resolution,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let mut cin = 3;
        for (i, &co) in self.channels.iter().enumerate() {
            let fan_in = cin * KERNEL * KERNEL;
            store.insert(format!("enc/conv{i}/w"), kaiming_uniform(rng, &[co, fan_in], fan_in))?;
            store.insert(format!("enc/conv{i}/b"), Tensor::zeros(&[co, 1]))?;
            cin = co;
        }
        store.insert("enc/fc/w", kaiming_uniform(rng, &[cin, self.latent_dim], cin))?;
        store.insert("enc/fc/b", Tensor::zeros(&[self.latent_dim]))?;
        Ok(())
    }

    /// `image`: row-major `H×W×3` values in `[0,1]`. Returns `[1, latent_dim]`.
    pub fn encode(&self, tape: &mut Tape, params: &Bound, image: &[f64], height: usize, width: usize) -> Result<Tensor> {
        if height != self.resolution || width != self.resolution || image.len() != height * width * 3 {
            return Err(Error::shape(
                "encode_image",
                format!("{0}×{0}×3 image", self.resolution),
                format!("{height}×{width} with {} values", image.len()),
            ));
        }
        let hw = height * width;
        let mut chw = vec![0.0; 3 * hw];
        for p in 0..hw {
            for ch in 0..3 {
                chw[ch * hw + p] = image[p * 3 + ch];
            }
        }
        let mut x = Tensor::new(vec![3, hw], chw)?;
        let (mut c, mut h, mut w) = (3, height, width);
        for i in 0..self.channels.len() {
            let y = conv2d(
                tape,
                &x,
                (c, h, w),
                params.get(&format!("enc/conv{i}/w")),
                params.get(&format!("enc/conv{i}/b")),
            )?;
            x = tape.relu(&y);
            c = self.channels[i];
            h = out_extent(h);
            w = out_extent(w);
        }
        let pooled = tape.sum_last(&x);
        let pooled = tape.scale(&pooled, 1.0 / (h * w) as f64);
        let pooled = tape.reshape(&pooled, &[1, c])?;
        linear(tape, &pooled, params.get("enc/fc/w"), params.get("enc/fc/b"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extents() {
        assert_eq!(out_extent(64), 32);
        assert_eq!(out_extent(48), 24);
        assert_eq!(out_extent(3), 2);
        assert_eq!(out_extent(1), 1);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let (c, h, w, co) = (2, 5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..co * c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::inference();
        let y = conv2d(
            &mut tape,
            &Tensor::new(vec![c, h * w], x.clone()).unwrap(),
            (c, h, w),
            &Tensor::new(vec![co, c * 9], wt.clone()).unwrap(),
            &Tensor::zeros(&[co, 1]),
        )
        .unwrap();
        let (ho, wo) = (out_extent(h), out_extent(w));
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[o * c * 9 + ci * 9 + ky * 3 + kx] * x[ci * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    assert!((y.data()[o * ho * wo + oy * wo + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn encoder_is_finite_and_deterministic() {
        let enc = ImageEncoder::new(vec![4, 4, 4, 4, 4], 8, 16);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let img = vec![0.0; 16 * 16 * 3];
        let run = |img: &[f64]| {
            let mut tape = Tape::inference();
            enc.encode(&mut tape, &store.frozen(), img, 16, 16).unwrap().to_vec()
        };
        let a = run(&img);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, run(&img));
        let mut tape = Tape::inference();
        assert!(enc.encode(&mut tape, &store.frozen(), &vec![0.0; 8 * 8 * 3], 8, 8).is_err());
    }
}
