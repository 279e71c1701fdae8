use super::{Gradients, NumericsError, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every parameter of one store, indexed like it.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub lr: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, clip: Option<f64>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.tensor.numel()]).collect();
        OptimizerState { config: AdamConfig::default(), lr, clip, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clip_factor: f64,
}

/// One clipped Adam update of every trainable parameter. Frozen parameters
/// are never read from `grads` nor written.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Gradients<T>, state: &mut OptimizerState<T>) -> Result<StepReport, NumericsError> {
    if state.m.len() != store.len() {
        return Err(NumericsError::Contract(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    let trainable: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for &id in &trainable {
        match grads.get(id) {
            None => {
                return Err(NumericsError::Contract(format!("trainable parameter `{}` has no gradient", store.get(id).name)));
            }
            Some(g) if g.len() != store.get(id).tensor.numel() => {
                return Err(NumericsError::dim("adam_step", format!("gradient of `{}` has {} values", store.get(id).name, g.len())));
            }
            Some(_) => {}
        }
    }
    let norm = trainable
        .iter()
        .flat_map(|&id| grads.get(id).unwrap_or_default().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(NumericsError::Domain(format!("non-finite gradient norm {norm}")));
    }
    let clip_factor = match state.clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2, cf) = (T::lit(beta1), T::lit(beta2), T::lit(clip_factor));
    let step_size = T::lit(state.lr / bc1);
    let inv_bc2 = T::lit(1.0 / bc2);
    let eps = T::lit(eps);
    for id in trainable {
        let g = grads.get(id).unwrap_or_default();
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let w = store.tensor_mut(id).data_mut();
        for i in 0..w.len() {
            let gi = g[i] * cf;
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            w[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(StepReport { grad_norm: norm, clip_factor })
}
