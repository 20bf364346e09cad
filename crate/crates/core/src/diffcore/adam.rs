use crate::error::{Error, Result};

/// Anything owning trainable parameter buffers with matching gradient buffers.
///
/// `visit_params` must visit the same buffers in the same order on every call;
/// the optimizer keys its moment buffers by visit position.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every buffer `model` exposes. Fails without touching any
    /// parameter if a gradient is non-finite.
    pub fn step(&mut self, model: &mut dyn Parameterized) -> Result<()> {
        let mut bad = None;
        let mut slot = 0;
        model.visit_params(&mut |p, g| {
            if bad.is_none() {
                if let Some(v) = g.iter().find(|v| !v.is_finite()) {
                    bad = Some(format!(
                        "non-finite gradient {v} in parameter buffer {slot} (len {})",
                        p.len()
                    ));
                }
            }
            slot += 1;
        });
        if let Some(msg) = bad {
            return Err(Error::Numerical(msg));
        }

        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        let mut slot = 0;
        let mut shape_err = None;
        model.visit_params(&mut |p, g| {
            if moments.len() == slot {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[slot];
            slot += 1;
            if m.len() != p.len() || g.len() != p.len() {
                shape_err.get_or_insert_with(|| format!("buffer {} changed size", slot - 1));
                return;
            }
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        });
        match shape_err {
            Some(e) => Err(Error::shape(e)),
            None => Ok(()),
        }
    }
}

/// Single-buffer update, for callers holding bare slices.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut Adam) -> Result<()> {
    struct One<'a>(&'a mut [f64], Vec<f64>);
    impl Parameterized for One<'_> {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
            f(self.0, &mut self.1)
        }
    }
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    state.step(&mut One(params, grads.to_vec()))
}
