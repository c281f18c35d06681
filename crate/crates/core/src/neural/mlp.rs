use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::scalar::{axpy, dot, Scalar};
use crate::{HydraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn grad_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Tanh => S::one() - y * y,
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Fully connected layer `y = W x + b` with `W` stored row-major `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = ps.uniform(format!("{name}.weight"), &[output, input], bound);
        let bias = ps.zeros(format!("{name}.bias"), &[output]);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    #[inline]
    pub fn forward_into<S: Scalar>(&self, ps: &ParamStore<S>, x: &[S], y: &mut Vec<S>) {
        debug_assert_eq!(x.len(), self.input);
        let w = ps.value(self.weight);
        let b = ps.value(self.bias);
        y.clear();
        y.extend(
            w.chunks_exact(self.input)
                .zip(b)
                .map(|(row, &bi)| dot(row, x) + bi),
        );
    }

    /// Accumulate parameter gradients for upstream `dy`; adds `W^T dy` into `dx` if given.
    #[inline]
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        x: &[S],
        dy: &[S],
        dx: Option<&mut [S]>,
    ) {
        {
            let gw = ps.grad_mut(self.weight);
            for (row, &g) in gw.chunks_exact_mut(self.input).zip(dy) {
                if g != S::zero() {
                    axpy(g, x, row);
                }
            }
        }
        {
            let gb = ps.grad_mut(self.bias);
            for (b, &g) in gb.iter_mut().zip(dy) {
                *b += g;
            }
        }
        if let Some(dx) = dx {
            let w = ps.value(self.weight);
            for (row, &g) in w.chunks_exact(self.input).zip(dy) {
                if g != S::zero() {
                    axpy(g, row, dx);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(HydraError::validation(format!(
                "MLP widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Feed-forward stack; hidden layers use the configured activation, the output is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub config: MlpConfig,
    pub layers: Vec<Linear>,
}

/// Per-layer activations recorded for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace<S> {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Vec<S>>,
}

impl<S: Scalar> MlpTrace<S> {
    pub fn output(&self) -> &[S] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input];
        widths.extend(&config.hidden);
        widths.push(config.output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn input_size(&self) -> usize {
        self.config.input
    }

    pub fn output_size(&self) -> usize {
        self.config.output
    }

    /// Checked forward pass.
    pub fn forward<S: Scalar>(&self, ps: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.config.input {
            return Err(HydraError::validation(format!(
                "MLP expects input of {}, got {}",
                self.config.input,
                x.len()
            )));
        }
        Ok(self.run(ps, x))
    }

    pub fn run<S: Scalar>(&self, ps: &ParamStore<S>, x: &[S]) -> Vec<S> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(ps, &cur, &mut next);
            if i != last {
                let act = self.config.activation;
                next.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn run_traced<S: Scalar>(&self, ps: &ParamStore<S>, x: &[S]) -> MlpTrace<S> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.output);
            layer.forward_into(ps, &acts[i], &mut y);
            if i != last {
                let act = self.config.activation;
                y.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(y);
        }
        MlpTrace { acts }
    }

    /// Backpropagate `dout` through a recorded pass; returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        trace: &MlpTrace<S>,
        dout: &[S],
    ) -> Vec<S> {
        let mut dy = dout.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i != last {
                let act = self.config.activation;
                for (g, &y) in dy.iter_mut().zip(&trace.acts[i + 1]) {
                    *g *= act.grad_from_output(y);
                }
            }
            let layer = &self.layers[i];
            let mut dx = vec![S::zero(); layer.input];
            layer.backward(ps, &trace.acts[i], &dy, Some(&mut dx));
            dy = dx;
        }
        dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_output() {
        let mut ps = ParamStore::<f64>::new(0);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(3, &[5], 2)).unwrap();
        for p in ps.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(mlp.forward(&ps, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut ps = ParamStore::<f64>::new(0);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(3, &[], 3)).unwrap();
        let w = mlp.layers[0].weight;
        let v = ps.value_mut(w);
        v.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..3 {
            v[i * 3 + i] = 1.0;
        }
        assert_eq!(mlp.forward(&ps, &[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut ps = ParamStore::<f64>::new(0);
        let mlp = Mlp::new(&mut ps, "m", MlpConfig::new(3, &[4], 2)).unwrap();
        assert!(mlp.forward(&ps, &[1.0]).is_err());
        assert!(Mlp::new(&mut ps, "z", MlpConfig::new(3, &[0], 2)).is_err());
    }
}
