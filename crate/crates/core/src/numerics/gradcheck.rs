//! Central finite-difference verification of analytic gradients (f64 only).

use super::{Graph, NumericsError, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name, flat index, analytic and numeric values of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor; entries where both derivatives are tiny are
    /// compared absolutely against it.
    pub floor: f64,
    /// Upper bound on entries probed per parameter (evenly strided).
    pub max_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-3, floor: 1e-4, max_per_param: usize::MAX }
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `backward` of the scalar built by `loss` against central
/// differences for every trainable parameter of `store`.
pub fn check<F>(store: &ParamStore<f64>, cfg: GradCheckConfig, loss: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NumericsError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let root = loss(&mut g, s)?;
        Ok(g.value(root).data()[0])
    };
    let mut g = Graph::new();
    let root = loss(&mut g, store)?;
    let grads = g.backward(root, store.len())?;

    let mut probe = store.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let numel = store.get(id).tensor.numel();
        let stride = numel.div_ceil(cfg.max_per_param.max(1)).max(1);
        for i in (0..numel).step_by(stride) {
            let orig = store.get(id).tensor.data()[i];
            probe.tensor_mut(id).data_mut()[i] = orig + cfg.step;
            let up = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig - cfg.step;
            let down = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let e = rel_err(analytic, numeric, cfg.floor);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some((store.get(id).name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// Gradient checks of each differentiable primitive on small random
/// operands, returning `(primitive, report)` pairs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>, NumericsError> {
    use super::{Group, Tensor};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rand_tensor = |shape: Vec<usize>, scale: f64| -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("consistent shape")
    };
    type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>>;
    let conv = |stride: usize, padding: usize, groups: usize, bias: bool| -> Build {
        Box::new(move |g, v| g.conv2d(v[0], v[1], bias.then(|| v[2]), stride, padding, groups))
    };
    let cases: Vec<(&'static str, Vec<Tensor<f64>>, Build)> = vec![
        ("conv2d", vec![rand_tensor(vec![2, 3, 5, 5], 1.0), rand_tensor(vec![4, 3, 3, 3], 0.5), rand_tensor(vec![4], 0.5)], conv(1, 1, 1, true)),
        ("conv2d_strided", vec![rand_tensor(vec![1, 2, 6, 6], 1.0), rand_tensor(vec![3, 2, 2, 2], 0.5)], conv(2, 0, 1, false)),
        ("conv2d_grouped", vec![rand_tensor(vec![1, 4, 4, 4], 1.0), rand_tensor(vec![6, 2, 3, 3], 0.5), rand_tensor(vec![6], 0.5)], conv(1, 1, 2, true)),
        ("conv2d_depthwise", vec![rand_tensor(vec![2, 3, 5, 5], 1.0), rand_tensor(vec![3, 1, 3, 3], 0.5), rand_tensor(vec![3], 0.5)], conv(1, 1, 3, true)),
        ("conv2d_pointwise", vec![rand_tensor(vec![2, 3, 3, 3], 1.0), rand_tensor(vec![5, 3, 1, 1], 0.5), rand_tensor(vec![5], 0.5)], conv(1, 0, 1, true)),
        ("upsample_nearest2x", vec![rand_tensor(vec![2, 2, 2, 3], 1.0)], Box::new(|g, v| g.upsample_nearest2x(v[0]))),
        ("pixel_shuffle", vec![rand_tensor(vec![1, 8, 2, 2], 1.0)], Box::new(|g, v| g.pixel_shuffle(v[0], 2))),
        ("channel_norm", vec![rand_tensor(vec![2, 4, 3, 3], 1.0)], Box::new(|g, v| g.channel_norm(v[0], 1e-6))),
        (
            "affine_modulate",
            vec![rand_tensor(vec![2, 3, 2, 2], 1.0), rand_tensor(vec![2, 3], 0.5), rand_tensor(vec![2, 3], 0.5)],
            Box::new(|g, v| g.affine_modulate(v[0], v[1], v[2])),
        ),
        ("gelu", vec![rand_tensor(vec![1, 2, 3, 3], 3.0)], Box::new(|g, v| Ok(g.gelu(v[0])))),
        ("softplus", vec![rand_tensor(vec![1, 2, 3, 3], 3.0)], Box::new(|g, v| Ok(g.softplus(v[0])))),
        ("add", vec![rand_tensor(vec![1, 2, 2, 2], 1.0), rand_tensor(vec![1, 2, 2, 2], 1.0)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![rand_tensor(vec![1, 2, 2, 2], 1.0), rand_tensor(vec![1, 2, 2, 2], 1.0)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![rand_tensor(vec![1, 2, 2, 2], 1.0), rand_tensor(vec![1, 2, 2, 2], 1.0)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_scalar", vec![rand_tensor(vec![1, 1, 2, 2], 1.0)], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("scale", vec![rand_tensor(vec![1, 1, 2, 2], 1.0)], Box::new(|g, v| Ok(g.scale(v[0], -1.3)))),
        (
            "concat_channels",
            vec![rand_tensor(vec![2, 1, 2, 2], 1.0), rand_tensor(vec![2, 3, 2, 2], 1.0)],
            Box::new(|g, v| g.concat_channels(&[v[0], v[1]])),
        ),
        ("broadcast_spatial", vec![rand_tensor(vec![3], 1.0)], Box::new(|g, v| g.broadcast_spatial(v[0], 2, 2, 3))),
        ("slice_channels", vec![rand_tensor(vec![2, 5, 2, 2], 1.0)], Box::new(|g, v| g.slice_channels(v[0], 1, 3))),
        ("reshape", vec![rand_tensor(vec![2, 6], 1.0)], Box::new(|g, v| g.reshape(v[0], vec![2, 3, 2, 1]))),
        (
            "gaussian_bits",
            vec![rand_tensor(vec![1, 2, 3, 3], 3.0), rand_tensor(vec![1, 2, 3, 3], 1.5)],
            Box::new(|g, v| {
                let s = g.softplus(v[1]);
                let s = g.add_scalar(s, 0.1);
                g.gaussian_bits(v[0], s)
            }),
        ),
        ("sum_per_sample", vec![rand_tensor(vec![3, 2, 2, 2], 1.0)], Box::new(|g, v| g.sum_per_sample(v[0]))),
        (
            "mse_per_sample",
            vec![rand_tensor(vec![2, 3, 2, 2], 1.0)],
            Box::new(|g, v| {
                let target = Tensor::new(vec![2, 3, 2, 2], (0..24).map(|i| (i as f64 * 0.37).sin()).collect())?;
                g.mse_per_sample(v[0], &target)
            }),
        ),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, operands, build) in cases {
        let mut store = ParamStore::new();
        for (i, t) in operands.into_iter().enumerate() {
            store.add(format!("{name}.{i}"), Group::Enc, t)?;
        }
        // Contract the output with fixed weights so every element matters.
        let report = check(&store, GradCheckConfig::default(), |g, s| {
            let vars: Vec<Var> = s.iter().map(|(id, _)| g.param(s, id)).collect();
            let y = build(g, &vars)?;
            let n = g.value(y).numel();
            let w: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * 7919 % 13) as f64 / 13.0 - 0.5)).collect();
            g.dot(y, &w)
        })?;
        out.push((name, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_matches_finite_differences() {
        for (name, r) in primitive_suite(11).unwrap() {
            assert!(r.checked > 0, "{name}");
            assert!(r.max_rel_err < 1e-3, "{name}: {:?} rel {}", r.worst, r.max_rel_err);
        }
    }
}
