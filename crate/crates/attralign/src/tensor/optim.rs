//! Parameter updates. A step touches only the registered trainable tensors;
//! everything else is untouched by construction.

use super::Tensor;
use crate::error::{Error, Result};

enum Kind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
}

pub struct Optimizer {
    params: Vec<Tensor>,
    learning_rate: f64,
    kind: Kind,
}

impl Optimizer {
    pub fn sgd(params: Vec<Tensor>, learning_rate: f64) -> Result<Self> {
        Self::validate(&params)?;
        Ok(Optimizer {
            params,
            learning_rate,
            kind: Kind::Sgd,
        })
    }

    /// Adam with beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn adam(params: Vec<Tensor>, learning_rate: f64) -> Result<Self> {
        Self::validate(&params)?;
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Optimizer {
            params,
            learning_rate,
            kind: Kind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m,
                v,
                step: 0,
            },
        })
    }

    fn validate(params: &[Tensor]) -> Result<()> {
        for p in params {
            if !p.requires_grad() {
                return Err(Error::config(
                    "optimizer registered a tensor without requires_grad",
                ));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Apply one update from the accumulated gradients. Parameters whose
    /// gradient slot is empty are skipped.
    pub fn step(&mut self) {
        let lr = self.learning_rate;
        match &mut self.kind {
            Kind::Sgd => {
                for p in &self.params {
                    let Some(g) = p.grad() else { continue };
                    p.with_data_mut(|data| {
                        for (x, &gi) in data.iter_mut().zip(&g) {
                            *x = (*x as f64 - lr * gi as f64) as f32;
                        }
                    });
                }
            }
            Kind::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                step,
            } => {
                *step += 1;
                let t = *step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, p) in self.params.iter().enumerate() {
                    let Some(g) = p.grad() else { continue };
                    let (mi, vi) = (&mut m[i], &mut v[i]);
                    p.with_data_mut(|data| {
                        for j in 0..data.len() {
                            let gj = g[j] as f64;
                            mi[j] = *beta1 * mi[j] + (1.0 - *beta1) * gj;
                            vi[j] = *beta2 * vi[j] + (1.0 - *beta2) * gj * gj;
                            let mhat = mi[j] / bc1;
                            let vhat = vi[j] / bc2;
                            data[j] = (data[j] as f64 - lr * mhat / (vhat.sqrt() + *eps)) as f32;
                        }
                    });
                }
            }
        }
    }

    /// Clear gradient slots of all registered parameters.
    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ops, Tape};

    #[test]
    fn rejects_frozen_params() {
        let p = Tensor::zeros(vec![2], false);
        assert!(Optimizer::sgd(vec![p], 0.1).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let p = Tensor::new(vec![2], vec![1.0, -1.0], true).unwrap();
        let tape = Tape::recording();
        let s = ops::sum(&tape, &p).unwrap();
        tape.backward(&s).unwrap();
        let mut opt = Optimizer::sgd(vec![p.clone()], 0.5).unwrap();
        opt.step();
        assert_eq!(p.to_vec(), vec![0.5, -1.5]);
    }

    #[test]
    fn step_skips_params_without_grad_and_leaves_others_untouched() {
        let p = Tensor::new(vec![2], vec![1.0, 2.0], true).unwrap();
        let bystander = Tensor::new(vec![2], vec![3.0, 4.0], false).unwrap();
        let mut opt = Optimizer::adam(vec![p.clone()], 0.1).unwrap();
        opt.step();
        assert_eq!(p.to_vec(), vec![1.0, 2.0]);
        assert_eq!(bystander.to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // minimize sum(x^2) via grad = 2x supplied manually
        let p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5], true).unwrap();
        let mut opt = Optimizer::adam(vec![p.clone()], 0.05).unwrap();
        for _ in 0..300 {
            opt.zero_grad();
            let g: Vec<f32> = p.to_vec().iter().map(|&x| 2.0 * x).collect();
            p.accumulate_grad(&g);
            opt.step();
        }
        for x in p.to_vec() {
            assert!(x.abs() < 1e-2, "did not converge: {x}");
        }
    }
}
