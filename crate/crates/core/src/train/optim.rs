use crate::error::{Error, Result};
use crate::tensor::{GradientRecord, ParameterSet};
use crate::train::config::AdamConfig;

/// Adam state for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: ParameterSet,
    v: ParameterSet,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParameterSet) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientRecord) -> Result<()> {
        params.ensure_congruent(grads.as_set())?;
        params.ensure_congruent(&self.m)?;
        if !grads.all_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("congruent");
            let m = self.m.get_mut(name).expect("congruent");
            let v = self.v.get_mut(name).expect("congruent");
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
