//! First-order update rules for the inner optimization loops.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
}

/// Per-parameter-block updater. SGD is stateless; Adam keeps first and
/// second moment estimates.
#[derive(Debug, Clone)]
pub struct Updater {
    kind: OptimKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Updater {
    pub fn new(kind: OptimKind, lr: f64, dim: usize) -> Self {
        let state = match kind {
            OptimKind::Sgd => 0,
            OptimKind::Adam => dim,
        };
        Updater {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_descends_quadratic() {
        let mut p = vec![5.0];
        let mut u = Updater::new(OptimKind::Sgd, 0.1, 1);
        for _ in 0..100 {
            let g = vec![2.0 * p[0]];
            u.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-4);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut u = Updater::new(OptimKind::Adam, 0.05, 2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|&x| 2.0 * x).collect();
            u.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }
}
