//! Small differentiable building blocks with hand-derived reverse passes.

mod adam;
mod checkpoint;
mod gmm;
mod gradcheck;
mod gru;
mod mlp;
mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Archive, TensorRecord, ARCHIVE_FORMAT, ARCHIVE_VERSION};
pub use gmm::{gmm_mode, gmm_nll, gmm_width, mse, unit_gaussian_nll, GmmHeadConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{Gru, GruTrace, RecurrentConfig};
pub use mlp::{Activation, Linear, Mlp, MlpConfig, MlpTrace};
pub use params::{Param, ParamId, ParamStore};

use crate::scalar::Scalar;
use crate::Result;

/// Checked forward pass through `mlp`.
pub fn mlp_forward<S: Scalar>(mlp: &Mlp, ps: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
    mlp.forward(ps, x)
}

/// Checked single recurrent update.
pub fn gru_step<S: Scalar>(gru: &Gru, ps: &ParamStore<S>, h: &[S], x: &[S]) -> Result<Vec<S>> {
    gru.step(ps, h, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain triple-loop reference for a tanh MLP, written independently of `Linear`.
    fn reference_forward(ps: &ParamStore<f64>, widths: &[usize], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..widths.len() - 1 {
            let w = &ps.params()[2 * l].value;
            let b = &ps.params()[2 * l + 1].value;
            let (nin, nout) = (widths[l], widths[l + 1]);
            let mut next = vec![0.0; nout];
            for o in 0..nout {
                let mut s = b[o];
                for i in 0..nin {
                    s += w[o * nin + i] * cur[i];
                }
                next[o] = if l + 2 < widths.len() { s.tanh() } else { s };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn mlp_matches_reference() {
        let mut ps = ParamStore::<f64>::new(11);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(7, &[13], 5)).unwrap();
        for p in ps.params_mut() {
            let mut rng = ChaCha8Rng::seed_from_u64(p.value.len() as u64);
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = mlp_forward(&mlp, &ps, &x).unwrap();
        let want = reference_forward(&ps, &[7, 13, 5], &x);
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_loss_gradient_is_exact() {
        let mut ps = ParamStore::<f64>::new(2);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(3, &[], 2)).unwrap();
        let x = [0.3, -0.7, 1.1];
        let report = grad_check(
            &mut ps,
            |ps| {
                let tr = mlp.run_traced(ps, &x);
                let y = tr.output().to_vec();
                mlp.backward(ps, &tr, &[1.0, -2.0]);
                y[0] - 2.0 * y[1]
            },
            1e-5,
        );
        assert!(report.max_rel_error <= 1e-9, "{report:?}");
    }

    #[test]
    fn mlp_mse_gradients() {
        let mut ps = ParamStore::<f64>::new(5);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(4, &[16, 16], 3)).unwrap();
        let x = [0.2, -0.1, 0.5, 0.9];
        let t = [0.1, 0.4, -0.3];
        let report = grad_check(
            &mut ps,
            |ps| {
                let tr = mlp.run_traced(ps, &x);
                let (l, g) = mse(tr.output(), &t);
                mlp.backward(ps, &tr, &g);
                l
            },
            1e-5,
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn gru_bptt_gradients() {
        let mut ps = ParamStore::<f64>::new(8);
        let gru = Gru::new(&mut ps, "g", RecurrentConfig { input: 3, hidden: 6 }).unwrap();
        let head = Mlp::new(&mut ps, "h", MlpConfig::new(6, &[], 2)).unwrap();
        let xs = [[0.1, 0.5, -0.2], [0.4, -0.3, 0.8], [-0.6, 0.2, 0.1], [0.0, 0.9, -0.5]];
        let targets = [[0.2, -0.1], [0.0, 0.3], [0.5, 0.5], [-0.4, 0.1]];
        let report = grad_check(
            &mut ps,
            |ps| {
                let mut h = gru.zero_state();
                let mut traces = Vec::new();
                let mut heads = Vec::new();
                let mut loss = 0.0;
                let mut dys = Vec::new();
                for (x, t) in xs.iter().zip(&targets) {
                    let (h2, tr) = gru.step_traced(ps, &h, x);
                    let ht = head.run_traced(ps, &h2);
                    let (l, g) = mse(ht.output(), t);
                    loss += l;
                    traces.push(tr);
                    heads.push(ht);
                    dys.push(g);
                    h = h2;
                }
                let mut dh = vec![0.0; 6];
                for i in (0..xs.len()).rev() {
                    let dh_head = head.backward(ps, &heads[i], &dys[i]);
                    for (a, b) in dh.iter_mut().zip(dh_head) {
                        *a += b;
                    }
                    dh = gru.backward(ps, &traces[i], &dh).0;
                }
                loss
            },
            1e-5,
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn gmm_gradients() {
        let mut ps = ParamStore::<f64>::new(21);
        let head = Mlp::new(&mut ps, "g", MlpConfig::new(3, &[8], gmm_width(3, 2))).unwrap();
        let x = [0.3, 0.1, -0.4];
        let t = [0.25, -0.5];
        let report = grad_check(
            &mut ps,
            |ps| {
                let tr = head.run_traced(ps, &x);
                let (l, g) = gmm_nll(tr.output(), &t, 3).unwrap();
                head.backward(ps, &tr, &g);
                l
            },
            1e-5,
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn archive_round_trip() {
        let mut ps = ParamStore::<f64>::new(4);
        Mlp::new(&mut ps, "m", MlpConfig::new(3, &[4], 2)).unwrap();
        let ar = Archive::from_store("cfg".to_string(), &ps);
        let text = serde_json::to_string(&ar).unwrap();
        let back: Archive<String> = serde_json::from_str(&text).unwrap();
        let mut fresh = ParamStore::<f64>::new(99);
        Mlp::new(&mut fresh, "m", MlpConfig::new(3, &[4], 2)).unwrap();
        back.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh.params()[0].value, ps.params()[0].value);
        let mut other = ParamStore::<f64>::new(99);
        Mlp::new(&mut other, "m", MlpConfig::new(3, &[5], 2)).unwrap();
        assert!(back.restore_into(&mut other).is_err());
    }
}
