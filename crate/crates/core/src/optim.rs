//! First-order optimisers over named parameter blocks.

use alloc::vec::Vec;

use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[cfg_attr(feature = "serde", serde(default = "default_beta1"))]
        beta1: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_beta2"))]
        beta2: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_eps"))]
        eps: f64,
    },
}

#[cfg(feature = "serde")]
fn default_beta1() -> f64 {
    0.9
}

#[cfg(feature = "serde")]
fn default_beta2() -> f64 {
    0.999
}

#[cfg(feature = "serde")]
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    steps: u32,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Minimises: every step moves parameters against the supplied gradient.
/// State is kept per slot so different blocks never share moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    slots: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            slots: Vec::new(),
        }
    }

    pub fn step(&mut self, slot: usize, params: &mut Matrix, grad: &Matrix, lr: f64) {
        assert_eq!(params.shape(), grad.shape());
        if lr == 0.0 {
            return;
        }
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(grad, -lr),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.slots.len() <= slot {
                    self.slots.resize_with(slot + 1, Moments::default);
                }
                let st = &mut self.slots[slot];
                if st.first.len() != grad.as_slice().len() {
                    st.first = alloc::vec![0.0; grad.as_slice().len()];
                    st.second = alloc::vec![0.0; grad.as_slice().len()];
                    st.steps = 0;
                }
                st.steps += 1;
                let c1 = 1.0 - libm::pow(beta1, f64::from(st.steps));
                let c2 = 1.0 - libm::pow(beta2, f64::from(st.steps));
                let p = params.as_mut_slice();
                for (i, &g) in grad.as_slice().iter().enumerate() {
                    let m = &mut st.first[i];
                    let v = &mut st.second[i];
                    if g == 0.0 && *m == 0.0 && *v == 0.0 {
                        continue;
                    }
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    p[i] -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = Matrix::filled(1, 2, 1.0);
        let g = Matrix::from_rows(&[&[1.0, -2.0]]);
        Optimizer::new(OptimizerKind::Sgd).step(0, &mut p, &g, 0.5);
        assert_eq!(p.as_slice(), &[0.5, 2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Matrix::zeros(1, 2);
        let g = Matrix::from_rows(&[&[3.0, -0.01]]);
        Optimizer::new(OptimizerKind::default()).step(0, &mut p, &g, 0.1);
        assert!((p[(0, 0)] + 0.1).abs() < 1e-6);
        assert!((p[(0, 1)] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = Matrix::filled(1, 1, 5.0);
        let mut opt = Optimizer::new(OptimizerKind::default());
        for _ in 0..2000 {
            let g = p.scaled(2.0);
            opt.step(0, &mut p, &g, 0.05);
        }
        assert!(p[(0, 0)].abs() < 1e-2);
    }

    #[test]
    fn zero_rate_is_noop() {
        let mut p = Matrix::filled(2, 2, 1.5);
        let before = p.clone();
        Optimizer::new(OptimizerKind::default()).step(3, &mut p, &Matrix::filled(2, 2, 1.0), 0.0);
        assert_eq!(p, before);
    }
}
