use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nets::{encoded_dim, uniform};

/// Recurrent state for a batch of rays, each `[N, hidden]`.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Anything that turns per-point input into a positive march distance.
pub trait StepModel {
    fn initial_state(&self, n: usize) -> LstmState;
    /// Returns the next state and the (unclamped) step `[N, 1]`.
    fn step(&self, tape: &mut Tape, state: &LstmState, input: &Tensor) -> Result<(LstmState, Tensor)>;
}

/// One LSTM cell update followed by the step head.
///
/// Gates are laid out `[input, forget, cell, output]` along the last axis of
/// `concat(input, h)·w + b`. The step is `softplus(h'·out_w + out_b) + d_min`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step(
    tape: &mut Tape,
    w: &Tensor,
    b: &Tensor,
    out_w: &Tensor,
    out_b: &Tensor,
    d_min: f64,
    state: &LstmState,
    input: &Tensor,
) -> Result<(LstmState, Tensor)> {
    let hidden = state.h.last_dim();
    if w.shape() != [input.last_dim() + hidden, 4 * hidden] {
        return Err(Error::shape(
            "lstm_step",
            format!("[{}, {}]", input.last_dim() + hidden, 4 * hidden),
            format!("{:?}", w.shape()),
        ));
    }
    let xh = tape.concat(&[input, &state.h])?;
    let z = tape.matmul(&xh, w)?;
    let z = tape.add(&z, b)?;
    let zi = tape.slice(&z, 0, hidden)?;
    let zf = tape.slice(&z, hidden, hidden)?;
    let zg = tape.slice(&z, 2 * hidden, hidden)?;
    let zo = tape.slice(&z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(&zi);
    let f = tape.sigmoid(&zf);
    let g = tape.tanh(&zg);
    let o = tape.sigmoid(&zo);
    let fc = tape.mul(&f, &state.c)?;
    let ig = tape.mul(&i, &g)?;
    let c = tape.add(&fc, &ig)?;
    let tc = tape.tanh(&c);
    let h = tape.mul(&o, &tc)?;
    let s = tape.matmul(&h, out_w)?;
    let s = tape.add(&s, out_b)?;
    let s = tape.softplus(&s);
    let d = tape.add_scalar(&s, d_min);
    Ok((LstmState { h, c }, d))
}

/// Parameter layout for the LSTM ray marcher.
#[derive(Clone, Debug)]
pub struct LstmMarcher {
    pub feature_dim: usize,
    pub hidden: usize,
    pub pe_point_freqs: usize,
    pub d_min: f64,
    /// Initial step length the output bias is set to produce.
    pub init_step: f64,
}

impl LstmMarcher {
    pub fn new(feature_dim: usize, hidden: usize, pe_point_freqs: usize) -> Self {
        LstmMarcher {
            feature_dim,
            hidden,
            pe_point_freqs,
            d_min: 0.01,
            init_step: 0.2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + encoded_dim(3, self.pe_point_freqs)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        store.insert("lstm/w", uniform(rng, &[self.input_dim() + h, 4 * h], bound))?;
        let mut b = vec![0.0; 4 * h];
        // forget gate open
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        store.insert("lstm/b", Tensor::from_vec(b))?;
        store.insert("lstm/out_w", uniform(rng, &[h, 1], 0.1 * bound))?;
        // softplus⁻¹(init_step − d_min)
        let target = (self.init_step - self.d_min).max(1e-6);
        store.insert("lstm/out_b", Tensor::from_vec(vec![target.exp_m1().ln()]))?;
        Ok(())
    }

    pub fn with_params<'a>(&'a self, params: &'a Bound) -> BoundLstm<'a> {
        BoundLstm { marcher: self, params }
    }
}

pub struct BoundLstm<'a> {
    marcher: &'a LstmMarcher,
    params: &'a Bound,
}

impl StepModel for BoundLstm<'_> {
    fn initial_state(&self, n: usize) -> LstmState {
        LstmState {
            h: Tensor::zeros(&[n, self.marcher.hidden]),
            c: Tensor::zeros(&[n, self.marcher.hidden]),
        }
    }

    fn step(&self, tape: &mut Tape, state: &LstmState, input: &Tensor) -> Result<(LstmState, Tensor)> {
        lstm_step(
            tape,
            self.params.get("lstm/w"),
            self.params.get("lstm/b"),
            self.params.get("lstm/out_w"),
            self.params.get("lstm/out_b"),
            self.marcher.d_min,
            state,
            input,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_softplus_zero_step() {
        let (n, hid, inp) = (3, 32, 5);
        let state = LstmState {
            h: Tensor::zeros(&[n, hid]),
            c: Tensor::zeros(&[n, hid]),
        };
        let mut tape = Tape::inference();
        let (next, d) = lstm_step(
            &mut tape,
            &Tensor::zeros(&[inp + hid, 4 * hid]),
            &Tensor::zeros(&[4 * hid]),
            &Tensor::zeros(&[hid, 1]),
            &Tensor::zeros(&[1]),
            0.01,
            &state,
            &Tensor::full(&[n, inp], 0.7),
        )
        .unwrap();
        for &v in d.data() {
            assert!((v - (2f64.ln() + 0.01)).abs() < 1e-6);
        }
        assert_eq!(next.h.shape(), [n, 32]);
        assert_eq!(next.c.shape(), [n, 32]);
    }

    #[test]
    fn init_step_bias_produces_requested_step() {
        let m = LstmMarcher::new(4, 32, 2);
        let mut store = ParamStore::new();
        m.init(&mut store, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0)).unwrap();
        let b = store.value("lstm/out_b").item();
        let sp = b.max(0.0) + (-b.abs()).exp().ln_1p();
        assert!((sp + m.d_min - m.init_step).abs() < 1e-12);
    }
}
