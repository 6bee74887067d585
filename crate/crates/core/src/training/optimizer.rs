//! Adam with linear warmup/decay and global-norm gradient clipping.

use ndiff::Array;

use crate::model::{AdamState, ModelParams};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const CLIP_NORM: f64 = 1.0;

/// Linear warmup from 0 to `lr` over `warmup_proportion * total` steps,
/// then linear decay to 0 at `total`. `step` is 0-based.
pub fn lr_at(step: u64, total: u64, lr: f64, warmup_proportion: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    let warmup = (total as f64 * warmup_proportion).floor() as u64;
    if step < warmup {
        lr * step as f64 / warmup as f64
    } else {
        lr * (total - step) as f64 / (total - warmup) as f64
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update at the given (already scheduled) rate.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &[Array],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let n = params.arrays().len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Config(format!(
            "optimizer arity mismatch: {n} params, {} grads, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.arrays_mut().iter_mut().enumerate() {
        if p.shape() != grads[i].shape() {
            return Err(Error::Config(format!(
                "gradient {i} shape {:?} != parameter shape {:?}",
                grads[i].shape(),
                p.shape()
            )));
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i].data()[j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let (lr, total) = (1e-3, 100);
        assert_eq!(lr_at(0, total, lr, 0.1), 0.0);
        assert!((lr_at(10, total, lr, 0.1) - lr).abs() < 1e-15);
        assert!((lr_at(5, total, lr, 0.1) - lr * 0.5).abs() < 1e-15);
        assert!(lr_at(55, total, lr, 0.1) < lr);
        assert_eq!(lr_at(100, total, lr, 0.1), 0.0);
        // No warmup: starts at full rate.
        assert_eq!(lr_at(0, total, lr, 0.0), lr);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![
            Array::vector(&[3.0, 0.0]),
            Array::vector(&[0.0, 4.0]),
        ];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads[0].data()[0] - 0.6).abs() < 1e-12);
        assert!((grads[1].data()[1] - 0.8).abs() < 1e-12);
        // Already small: untouched.
        let mut small = vec![Array::vector(&[0.1])];
        let norm = clip_global_norm(&mut small, 1.0);
        assert!((norm - 0.1).abs() < 1e-15);
        assert_eq!(small[0].data()[0], 0.1);
    }

    /// Convex oracle: Adam on f(x) = (x-3)^2 reaches the minimum.
    #[test]
    fn quadratic_converges_within_1e6() {
        let mut params = ModelParams::from_parts(
            vec!["x".into()],
            vec![Array::vector(&[0.0])],
        );
        let mut state = AdamState::zeros_like(&params);
        for _ in 0..2000 {
            let x = params.arrays()[0].data()[0];
            let grads = [Array::vector(&[2.0 * (x - 3.0)])];
            optimizer_step(&mut params, &grads, &mut state, 0.05).unwrap();
        }
        let x = params.arrays()[0].data()[0];
        assert!((x - 3.0).abs() < 1e-6, "converged to {x}");
    }
}
