use serde::{Deserialize, Serialize};

use super::mlp::Linear;
use super::params::ParamStore;
use crate::scalar::{sigmoid, Scalar};
use crate::{HydraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentConfig {
    pub input: usize,
    pub hidden: usize,
}

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(W_z x + b_z + U_z h + c_z)
/// r  = σ(W_r x + b_r + U_r h + c_r)
/// n  = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
///
/// Gate rows are stacked `[z; r; n]` in both projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub config: RecurrentConfig,
    pub input_proj: Linear,
    pub hidden_proj: Linear,
}

/// Intermediates of one step, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct GruTrace<S> {
    pub x: Vec<S>,
    pub h: Vec<S>,
    pub z: Vec<S>,
    pub r: Vec<S>,
    pub n: Vec<S>,
    /// `U_n h + c_n`
    pub hn: Vec<S>,
}

impl Gru {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, config: RecurrentConfig) -> Result<Self> {
        if config.input == 0 || config.hidden == 0 {
            return Err(HydraError::validation(format!(
                "recurrent sizes must be positive: {config:?}"
            )));
        }
        let h = config.hidden;
        let input_proj = Linear::new(ps, &format!("{name}.input"), config.input, 3 * h);
        let hidden_proj = Linear::new(ps, &format!("{name}.hidden"), h, 3 * h);
        Ok(Self {
            config,
            input_proj,
            hidden_proj,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden
    }

    pub fn zero_state<S: Scalar>(&self) -> Vec<S> {
        vec![S::zero(); self.config.hidden]
    }

    /// Checked single step.
    pub fn step<S: Scalar>(&self, ps: &ParamStore<S>, h: &[S], x: &[S]) -> Result<Vec<S>> {
        if h.len() != self.config.hidden || x.len() != self.config.input {
            return Err(HydraError::validation(format!(
                "recurrent cell expects hidden {} / input {}, got {} / {}",
                self.config.hidden,
                self.config.input,
                h.len(),
                x.len()
            )));
        }
        Ok(self.step_traced(ps, h, x).0)
    }

    pub fn step_traced<S: Scalar>(
        &self,
        ps: &ParamStore<S>,
        h: &[S],
        x: &[S],
    ) -> (Vec<S>, GruTrace<S>) {
        let hs = self.config.hidden;
        let mut gi = Vec::with_capacity(3 * hs);
        let mut gh = Vec::with_capacity(3 * hs);
        self.input_proj.forward_into(ps, x, &mut gi);
        self.hidden_proj.forward_into(ps, h, &mut gh);
        let mut z = Vec::with_capacity(hs);
        let mut r = Vec::with_capacity(hs);
        let mut n = Vec::with_capacity(hs);
        let mut out = Vec::with_capacity(hs);
        for j in 0..hs {
            let zj = sigmoid(gi[j] + gh[j]);
            let rj = sigmoid(gi[hs + j] + gh[hs + j]);
            let nj = (gi[2 * hs + j] + rj * gh[2 * hs + j]).tanh();
            out.push((S::one() - zj) * nj + zj * h[j]);
            z.push(zj);
            r.push(rj);
            n.push(nj);
        }
        let hn = gh[2 * hs..].to_vec();
        let trace = GruTrace {
            x: x.to_vec(),
            h: h.to_vec(),
            z,
            r,
            n,
            hn,
        };
        (out, trace)
    }

    /// Given `dL/dh'`, accumulate parameter gradients and return `(dL/dh, dL/dx)`.
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        t: &GruTrace<S>,
        dh_next: &[S],
    ) -> (Vec<S>, Vec<S>) {
        let hs = self.config.hidden;
        let mut d_in = vec![S::zero(); 3 * hs];
        let mut d_hid = vec![S::zero(); 3 * hs];
        let mut dh = vec![S::zero(); hs];
        for j in 0..hs {
            let g = dh_next[j];
            let (z, r, n) = (t.z[j], t.r[j], t.n[j]);
            dh[j] = g * z;
            let dz = g * (t.h[j] - n) * z * (S::one() - z);
            let dn = g * (S::one() - z) * (S::one() - n * n);
            let dr = dn * t.hn[j] * r * (S::one() - r);
            d_in[j] = dz;
            d_in[hs + j] = dr;
            d_in[2 * hs + j] = dn;
            d_hid[j] = dz;
            d_hid[hs + j] = dr;
            d_hid[2 * hs + j] = dn * r;
        }
        let mut dx = vec![S::zero(); self.config.input];
        self.input_proj.backward(ps, &t.x, &d_in, Some(&mut dx));
        self.hidden_proj.backward(ps, &t.h, &d_hid, Some(&mut dh));
        (dh, dx)
    }
}
