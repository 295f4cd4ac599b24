use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Moment estimates for every parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`, with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let zeros: Vec<Vec<T>> = params.into_iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            second_moment: zeros.clone(),
            first_moment: zeros,
            step: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }
}

/// One bias-corrected ADAM update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[k].len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {k}: {} values, {} grads", p.len(), g.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for (((w, &g), m), v) in p.values_mut().iter_mut().zip(&grads[k]).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap().with_grad()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(3.5);
        let mut s = AdamState::new([&p]);
        for _ in 0..10 {
            adam_step(&mut [&mut p], &[vec![0.0]], &mut s, 0.1).unwrap();
        }
        assert_eq!(p.values(), &[3.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [-7.0, 0.003, 250.0] {
            let mut p = param(1.0);
            let mut s = AdamState::new([&p]);
            adam_step(&mut [&mut p], &[vec![g]], &mut s, 0.01).unwrap();
            // m_hat = g, v_hat = g^2 after bias correction
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.values()[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p.values()[0]).abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 2)^2
        let mut p = param(1.5);
        let mut s = AdamState::new([&p]);
        for _ in 0..100 {
            let g = 2.0 * (p.values()[0] - 2.0);
            adam_step(&mut [&mut p], &[vec![g]], &mut s, 0.02).unwrap();
        }
        // the oracle: an independent scalar simulation of the same recursion
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (x - 2.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.02 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.values()[0] - x).abs() < 1e-12);
        assert!((x - 2.0).abs() < 1e-3, "{x}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = param(1.0);
        let mut s = AdamState::new([&p]);
        assert!(adam_step(&mut [&mut p], &[vec![0.0, 1.0]], &mut s, 0.1).is_err());
    }
}
