use super::mlp::{Gradients, MlpModel};
use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: MlpModel,
    pub v: MlpModel,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState {
            m: MlpModel::zeros_like(model),
            v: MlpModel::zeros_like(model),
            step: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
///
/// The model and state are left untouched when the gradient is not finite.
pub fn adamw_step(
    model: &mut MlpModel,
    grads: &Gradients,
    lr: f64,
    weight_decay: f64,
    state: &mut AdamState,
) -> Result<(), TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::Diverged(format!(
            "non-finite gradient at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let decay = 1.0 - lr * weight_decay;

    let params = model.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            p[i] = p[i] * decay - lr * update;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut model = MlpModel::init(3, 1);
        let before = model.clone();
        let g = MlpModel::zeros_like(&model);
        let mut s = AdamState::new(&model);
        adamw_step(&mut model, &g, 1e-2, 0.0, &mut s).unwrap();
        assert_eq!(model, before);
        assert_eq!(s.step, 1);
        adamw_step(&mut model, &g, 1e-2, 0.0, &mut s).unwrap();
        assert_eq!(s.step, 2);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut model = MlpModel::init(3, 1);
        let before = model.clone();
        let g = MlpModel::zeros_like(&model);
        let mut s = AdamState::new(&model);
        adamw_step(&mut model, &g, 1e-3, 0.1, &mut s).unwrap();
        for (a, b) in model.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y * (1.0 - 1e-3 * 0.1)).abs() <= 1e-15 * y.abs());
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut model = MlpModel::zeros_like(&MlpModel::init(2, 0));
        let mut g = MlpModel::zeros_like(&model);
        g.b3[0] = 3.0;
        g.b1[0] = -0.5;
        let mut s = AdamState::new(&model);
        adamw_step(&mut model, &g, 0.01, 0.0, &mut s).unwrap();
        assert!((model.b3[0] + 0.01).abs() < 1e-9);
        assert!((model.b1[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut model = MlpModel::init(2, 0);
        let before = model.clone();
        let mut g = MlpModel::zeros_like(&model);
        g.w2[[0, 0]] = f64::NAN;
        let mut s = AdamState::new(&model);
        assert!(matches!(
            adamw_step(&mut model, &g, 0.01, 0.0, &mut s),
            Err(TrainError::Diverged(_))
        ));
        assert_eq!((model, s.step), (before, 0));
    }
}
