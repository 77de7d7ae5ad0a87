use std::f64::consts::PI;

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;

/// Sinusoidal encoding of each input coordinate.
///
/// For input `[N, d]` returns `[N, 2·F·d]`, laid out per input dimension as
/// `sin(2⁰πx), cos(2⁰πx), …, sin(2^{F-1}πx), cos(2^{F-1}πx)`.
pub fn positional_encode(tape: &mut Tape, x: &Tensor, num_freqs: usize) -> Result<Tensor> {
    let d = x.last_dim();
    if num_freqs == 0 || d == 0 {
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = 0;
        return Ok(Tensor::zeros(&shape));
    }
    let mut parts = Vec::with_capacity(2 * num_freqs * d);
    for j in 0..d {
        let col = tape.slice(x, j, 1)?;
        for f in 0..num_freqs {
            let scaled = tape.scale(&col, (1u64 << f) as f64 * PI);
            parts.push(tape.sin(&scaled));
            parts.push(tape.cos(&scaled));
        }
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    tape.concat(&refs)
}

/// Output width of [`positional_encode`].
pub fn encoded_dim(d: usize, num_freqs: usize) -> usize {
    2 * num_freqs * d
}
