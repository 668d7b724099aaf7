//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Bipn, BipnConfig};
use crate::tensor::{Conv2dOptions, Deconv2dOptions, Graph, ParamStore, Tensor, Var};

/// Relative error with the denominator floored, so entries whose true
/// gradient is near zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over the compared coordinates.
    pub max_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation moved a ReLU input across zero. The
    /// function is not differentiable on that interval, so central
    /// differences say nothing about the gradient there.
    pub skipped: usize,
}

impl GradCheck {
    /// At most `tolerance` with at least one coordinate compared.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_error <= tolerance
    }
}

#[derive(Default)]
struct Tally {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn record(
        &mut self,
        analytic: f64,
        plus: (f64, Vec<bool>),
        minus: (f64, Vec<bool>),
        base: &[bool],
        step: f64,
    ) {
        if plus.1 != base || minus.1 != base {
            self.skipped += 1;
            return;
        }
        self.checked += 1;
        self.worst = self
            .worst
            .max(relative_error(analytic, (plus.0 - minus.0) / (2.0 * step)));
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            max_error: self.worst,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

/// Compares reverse-mode gradients of `sum(build(inputs))` with central
/// differences on every element of every input.
///
/// `build` is re-run for each perturbed evaluation.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g.value(out).sum(), g.relu_pattern()))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = build(&mut g, &vars)?;
    let base = g.relu_pattern();
    let loss = g.sum(out);
    g.backward(loss)?;
    let mut tally = Tally::default();
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g
            .grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            xs[i].data_mut()[j] = orig + step;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = orig - step;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            tally.record(analytic.data()[j], plus, minus, &base, step);
        }
    }
    Ok(tally.finish())
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Values bounded away from zero so ReLU kinks sit outside the step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Weighted sum `sum(w * y)` so every output element gets a distinct upstream gradient.
fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(y), 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Runs the finite-difference check for every layer type and for a full
/// single-scale model on 8x8 inputs.
pub fn gradcheck_suite(seed: u64, step: f64) -> Result<Vec<(String, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, check: GradCheck| out.push((name.to_string(), check));

    let x = random(&mut rng, &[2, 2, 6, 6], 1.0);
    let k = random(&mut rng, &[3, 2, 3, 3], 0.5);
    let b = random(&mut rng, &[3], 0.5);
    push(
        "conv2d",
        check_gradients(&[x, k, b], step, |g, v| {
            let y = g.conv2d_with(v[0], v[1], Some(v[2]), Conv2dOptions::new(2, 1))?;
            weighted(g, y, 1)
        })?,
    );

    let x = random(&mut rng, &[2, 3, 3, 3], 1.0);
    let k = random(&mut rng, &[3, 2, 3, 3], 0.5);
    let b = random(&mut rng, &[2], 0.5);
    push(
        "deconv2d",
        check_gradients(&[x, k, b], step, |g, v| {
            let opts = Deconv2dOptions {
                stride: [2; 2],
                padding: [1; 2],
                output_padding: [1; 2],
            };
            let y = g.deconv2d_with(v[0], v[1], Some(v[2]), opts)?;
            weighted(g, y, 2)
        })?,
    );

    let x = random(&mut rng, &[1, 2, 3, 4, 4], 1.0);
    let k = random(&mut rng, &[2, 2, 3, 3, 3], 0.5);
    let b = random(&mut rng, &[2], 0.5);
    push(
        "conv3d",
        check_gradients(&[x, k, b], step, |g, v| {
            let y = g.conv3d(v[0], v[1], Some(v[2]), [1, 2, 2], [1, 1, 1])?;
            weighted(g, y, 3)
        })?,
    );

    let x = random(&mut rng, &[3, 5], 1.0);
    let w = random(&mut rng, &[4, 5], 0.5);
    let b = random(&mut rng, &[4], 0.5);
    push(
        "fully_connected",
        check_gradients(&[x, w, b], step, |g, v| {
            let y = g.fully_connected(v[0], v[1], Some(v[2]))?;
            weighted(g, y, 4)
        })?,
    );

    let x = away_from_zero(&mut rng, &[2, 7]);
    push(
        "relu",
        check_gradients(&[x], step, |g, v| {
            let y = g.relu(v[0]);
            weighted(g, y, 5)
        })?,
    );

    let x = random(&mut rng, &[1, 2, 3, 4], 1.0);
    push(
        "resize_bilinear",
        check_gradients(&[x], step, |g, v| {
            let y = g.resize_bilinear(v[0], 5, 7)?;
            weighted(g, y, 6)
        })?,
    );

    let a = random(&mut rng, &[2, 1, 3, 3], 1.0);
    let b = random(&mut rng, &[2, 2, 3, 3], 1.0);
    push(
        "concat",
        check_gradients(&[a, b], step, |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            weighted(g, y, 7)
        })?,
    );

    let p = Tensor::from_fn(&[6], |_| rng.random_range(0.1..0.9));
    push(
        "bce",
        check_gradients(&[p], step, |g, v| Ok(g.bce(v[0], 1.0)))?,
    );

    let x = random(&mut rng, &[2, 6], 2.0);
    push(
        "tanh",
        check_gradients(&[x], step, |g, v| {
            let y = g.tanh(v[0]);
            weighted(g, y, 8)
        })?,
    );

    let model = Bipn::new(BipnConfig {
        scales: 1,
        frames: 3,
        resolution: 8,
        channels: 1,
        enc_channels: [3, 3, 3],
        dec_channels: [3, 3, 3],
        noise_dim: None,
    })?;
    let mut params = model.init_params::<f64>(seed)?;
    let biases: Vec<String> = params
        .names()
        .filter(|n| n.ends_with("bias"))
        .map(String::from)
        .collect();
    // non-zero biases keep pre-activations away from exact zeros
    for n in biases {
        let shape = params.value(&n)?.shape().to_vec();
        params.entry_mut(&n)?.value = random(&mut rng, &shape, 0.1);
    }
    let start = random(&mut rng, &[2, 1, 8, 8], 1.0);
    let end = random(&mut rng, &[2, 1, 8, 8], 1.0);
    let target = random(&mut rng, &[2, 3, 8, 8], 1.0);
    push(
        "bipn_single_scale",
        check_param_gradients(&params, step, |g, store| {
            let s = g.constant(start.clone());
            let e = g.constant(end.clone());
            let t = g.constant(target.clone());
            let preds = model.forward(g, store, s, e, None)?;
            g.mse(preds[0], t)
        })?,
    );
    Ok(out)
}

/// Like [`check_gradients`] but over every entry of a parameter store, for
/// graphs that load their weights by name.
pub fn check_param_gradients<F>(params: &ParamStore<f64>, step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::inference();
        let out = build(&mut g, store)?;
        Ok((g.value(out).sum(), g.relu_pattern()))
    };
    let mut store = params.clone();
    store.zero_grads();
    let mut g = Graph::new();
    let out = build(&mut g, &store)?;
    let base = g.relu_pattern();
    let loss = g.sum(out);
    g.backward(loss)?;
    store.absorb_grads(&g);
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut tally = Tally::default();
    for name in &names {
        let analytic = store
            .grad(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.value(name).expect("listed").shape()));
        for j in 0..analytic.len() {
            let orig = store.value(name)?.data()[j];
            store.entry_mut(name)?.value.data_mut()[j] = orig + step;
            let plus = eval(&store)?;
            store.entry_mut(name)?.value.data_mut()[j] = orig - step;
            let minus = eval(&store)?;
            store.entry_mut(name)?.value.data_mut()[j] = orig;
            tally.record(analytic.data()[j], plus, minus, &base, step);
        }
    }
    Ok(tally.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-6, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let ok = check_gradients(std::slice::from_ref(&x), 1e-4, |g, v| g.mul(v[0], v[0])).unwrap();
        assert!(ok.passes(1e-8));
        assert_eq!((ok.checked, ok.skipped), (3, 0));
        // detaching one factor halves the analytic gradient
        let bad = check_gradients(&[x], 1e-4, |g, v| {
            let c = g.constant(g.value(v[0]).clone());
            g.mul(c, v[0])
        })
        .unwrap();
        assert!((bad.max_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::from_f64(&[3], &[5e-5, -0.5, 0.5]).unwrap();
        let r = check_gradients(&[x], 1e-4, |g, v| Ok(g.relu(v[0]))).unwrap();
        assert_eq!((r.checked, r.skipped), (2, 1));
        assert!(r.passes(1e-8));
    }
}
