//! First-order updates of the latent positions and sociability vector.
//!
//! The global rate `η_t` follows a cosine schedule from `eta0` down to zero.
//! Latent positions use `η_t / ‖Z‖²_F` and sociability uses `η_t / (2n)`;
//! both rates are then fed to ADAM or Adagrad coordinate-wise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::model::{LatentState, OptimizerKind};
use crate::objective::Gradients;

/// Below this squared Frobenius norm the latent step falls back to `η_t`.
const ZERO_NORM_GUARD: f64 = 1e-12;

/// Cosine annealing from `eta0` at `t = 0` to zero at `t = total`.
pub fn cosine_anneal(eta0: f64, t: usize, total: usize) -> f64 {
    let total = total.max(1);
    let t = t.min(total) as f64;
    0.5 * eta0 * (1.0 + (PI * t / total as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta_t: f64,
    pub eta_z: f64,
    pub eta_alpha: f64,
}

pub fn step_sizes(eta_t: f64, z: &DMatrix<f64>, n: usize) -> StepSizes {
    let norm2 = z.norm_squared();
    let eta_z = if norm2 < ZERO_NORM_GUARD {
        eta_t
    } else {
        eta_t / norm2
    };
    StepSizes {
        eta_t,
        eta_z,
        eta_alpha: eta_t / (2.0 * n as f64),
    }
}

/// Per-coordinate accumulators shaped like `(Z, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub z: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

impl Moments {
    fn zeros(n: usize, k: usize) -> Self {
        Moments {
            z: DMatrix::zeros(n, k),
            alpha: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// ADAM first moment; unused by Adagrad.
    pub first_moment: Moments,
    /// ADAM second moment, or the Adagrad running sum of squared gradients.
    pub second_moment: Moments,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n: usize, k: usize) -> Self {
        OptimizerState {
            kind,
            first_moment: Moments::zeros(n, k),
            second_moment: Moments::zeros(n, k),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One optimizer step on `(Z, α)`. `β` and `γ` are left untouched.
pub fn apply_step(
    state: &LatentState,
    grads: &Gradients,
    opt: &OptimizerState,
    sizes: &StepSizes,
) -> (LatentState, OptimizerState) {
    let mut state = state.clone();
    let mut opt = opt.clone();
    apply_step_in_place(&mut state, grads, &mut opt, sizes);
    (state, opt)
}

pub(crate) fn apply_step_in_place(
    state: &mut LatentState,
    grads: &Gradients,
    opt: &mut OptimizerState,
    sizes: &StepSizes,
) {
    opt.step_count += 1;
    let rule = Rule::new(opt);
    rule.update(
        state.z.as_mut_slice(),
        grads.d_z.as_slice(),
        opt.first_moment.z.as_mut_slice(),
        opt.second_moment.z.as_mut_slice(),
        sizes.eta_z,
    );
    rule.update(
        state.alpha.as_mut_slice(),
        grads.d_alpha.as_slice(),
        opt.first_moment.alpha.as_mut_slice(),
        opt.second_moment.alpha.as_mut_slice(),
        sizes.eta_alpha,
    );
}

struct Rule {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bias1: f64,
    bias2: f64,
}

impl Rule {
    fn new(opt: &OptimizerState) -> Self {
        let t = opt.step_count as i32;
        Rule {
            kind: opt.kind,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
            bias1: 1.0 - opt.beta1.powi(t),
            bias2: 1.0 - opt.beta2.powi(t),
        }
    }

    fn update(&self, x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64) {
        match self.kind {
            OptimizerKind::Adam => {
                for i in 0..x.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / self.bias1;
                    let v_hat = v[i] / self.bias2;
                    x[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
            OptimizerKind::Adagrad => {
                for i in 0..x.len() {
                    v[i] += g[i] * g[i];
                    x[i] -= lr * g[i] / (v[i].sqrt() + self.epsilon);
                }
            }
        }
    }
}
