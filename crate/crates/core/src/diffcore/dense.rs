use rand::Rng;

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Affine map over the channel axis, applied independently at every `(n, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `[outputs, inputs]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(format!(
                "dense {inputs}->{outputs} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            grad_weight: vec![0.0; weight.len()],
            grad_bias: vec![0.0; outputs],
            weight,
            bias,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self::new(n, n, w, vec![0.0; n]).expect("square identity")
    }

    /// He-uniform initialization, zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(inputs, outputs, w, vec![0.0; outputs]).expect("sizes agree")
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub fn dense_forward(x: &Tensor4, layer: &Dense) -> Result<Tensor4> {
    let s = x.shape();
    if s.c != layer.inputs {
        return Err(Error::shape(format!(
            "dense expects {} channels, got {}",
            layer.inputs, s.c
        )));
    }
    let os = s.with_channels(layer.outputs);
    let mut out = Tensor4::zeros(os);
    let p = s.plane();
    let mut column = vec![0.0; layer.inputs];
    for n in 0..s.n {
        for pos in 0..p {
            for (i, v) in column.iter_mut().enumerate() {
                *v = x.data()[(n * s.c + i) * p + pos];
            }
            for o in 0..layer.outputs {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let v = layer.bias[o] + row.iter().zip(&column).map(|(w, c)| w * c).sum::<f64>();
                out.data_mut()[(n * os.c + o) * p + pos] = v;
            }
        }
    }
    Ok(out)
}

pub fn dense_backward(x: &mut Tensor4, layer: &mut Dense, out: &Tensor4) -> Result<()> {
    let s = x.shape();
    let os = s.with_channels(layer.outputs);
    if s.c != layer.inputs || out.shape() != os {
        return Err(Error::shape(format!(
            "dense backward: input {s}, upstream {}",
            out.shape()
        )));
    }
    let p = s.plane();
    let (xd, xg) = x.split_mut();
    for n in 0..s.n {
        for pos in 0..p {
            for o in 0..layer.outputs {
                let up = out.grad[(n * os.c + o) * p + pos];
                if up == 0.0 {
                    continue;
                }
                layer.grad_bias[o] += up;
                for i in 0..layer.inputs {
                    let xi = (n * s.c + i) * p + pos;
                    layer.grad_weight[o * layer.inputs + i] += up * xd[xi];
                    xg[xi] += up * layer.weight[o * layer.inputs + i];
                }
            }
        }
    }
    Ok(())
}
