//! Adam with bias correction.
//!
//! Row-sparse slots (embedding tables) are updated lazily when no L2 term is
//! active: rows absent from the batch gradient keep their parameters and
//! moments untouched. With `l2 > 0` the decay gradient `2λθ` is folded in and
//! every entry of every slot is updated.

use crate::error::{Error, Result};
use crate::params::{Parameters, SlotGrad};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

struct Moments {
    lr: f64,
    bias1: f64,
    bias2: f64,
}

impl Moments {
    #[inline]
    fn update(&self, theta: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / self.bias1;
        let v_hat = *v / self.bias2;
        *theta -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.slots().iter().map(|s| vec![0.0; s.data.len()]).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with learning rate `lr` and L2 weight `l2` (adds
    /// `2·l2·θ` to every gradient entry). Rejects non-finite gradients before
    /// touching any state.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &[SlotGrad], lr: f64, l2: f64) -> Result<()> {
        let mut slots = params.slots_mut();
        if slots.len() != grads.len() || slots.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "adam: {} parameter slots, {} gradients, {} moment buffers",
                slots.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (slot, g) in slots.iter().zip(grads) {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of {}", slot.name)));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let moments = Moments {
            lr,
            bias1: 1.0 - BETA1.powi(t),
            bias2: 1.0 - BETA2.powi(t),
        };

        for (((slot, g), m), v) in slots
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let theta = &mut *slot.data;
            match g {
                SlotGrad::Dense(dense) => {
                    if dense.len() != theta.len() {
                        return Err(Error::Dimension(format!("adam: gradient shape of {}", slot.name)));
                    }
                    for i in 0..theta.len() {
                        let gi = dense[i] + 2.0 * l2 * theta[i];
                        moments.update(&mut theta[i], &mut m[i], &mut v[i], gi);
                    }
                }
                SlotGrad::Rows { row_len, rows } if l2 == 0.0 => {
                    for (&r, vals) in rows {
                        let base = r * row_len;
                        for (c, &gi) in vals.iter().enumerate() {
                            let i = base + c;
                            moments.update(&mut theta[i], &mut m[i], &mut v[i], gi);
                        }
                    }
                }
                sparse @ SlotGrad::Rows { .. } => {
                    let dense = sparse.to_dense(theta.len());
                    for i in 0..theta.len() {
                        let gi = dense[i] + 2.0 * l2 * theta[i];
                        moments.update(&mut theta[i], &mut m[i], &mut v[i], gi);
                    }
                }
            }
        }
        Ok(())
    }
}
