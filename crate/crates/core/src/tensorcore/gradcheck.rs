use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::MlpParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Location of a scalar parameter inside an [`MlpParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLocation {
    pub layer: usize,
    pub is_bias: bool,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: ParamLocation,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// How many parameters to perturb (all of them if larger than the count).
    pub n_params: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            n_params: 100,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

fn locate(net: &MlpParams, mut flat: usize) -> ParamLocation {
    for (layer, l) in net.layers.iter().enumerate() {
        if flat < l.weights.len() {
            return ParamLocation { layer, is_bias: false, index: flat };
        }
        flat -= l.weights.len();
        if flat < l.bias.len() {
            return ParamLocation { layer, is_bias: true, index: flat };
        }
        flat -= l.bias.len();
    }
    unreachable!("flat index beyond parameter count")
}

fn slot(net: &mut MlpParams, at: ParamLocation) -> &mut f64 {
    let l = &mut net.layers[at.layer];
    let t = if at.is_bias { &mut l.bias } else { &mut l.weights };
    &mut t.data_mut()[at.index]
}

fn read(net: &MlpParams, at: ParamLocation) -> f64 {
    let l = &net.layers[at.layer];
    let t = if at.is_bias { &l.bias } else { &l.weights };
    t.data()[at.index]
}

/// Compares reverse-mode gradients with central differences.
///
/// The scalar objective is `sum(P .* net(input))` for a seeded random
/// projection `P`, so every output channel contributes.
pub fn grad_check(net: &MlpParams, input: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    grad_check_with(net, input, opts, |net, input, seed| {
        net.forward(input)?.backward(net, seed)
    })
}

/// Like [`grad_check`] but with a caller-supplied analytic gradient, so
/// alternative (or deliberately broken) backward paths can be audited.
pub fn grad_check_with(
    net: &MlpParams,
    input: &Tensor,
    opts: &GradCheckOptions,
    analytic: impl Fn(&MlpParams, &Tensor, &Tensor) -> Result<MlpParams>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out_shape = [input.rows(), net.output_dim()];
    let proj = Tensor::new(
        out_shape.to_vec(),
        (0..out_shape[0] * out_shape[1]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let objective = |n: &MlpParams| -> Result<f64> {
        let out = n.evaluate(input)?;
        Ok(out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };
    let grads = analytic(net, input, &proj)?;
    if !grads.congruent(net) {
        return Err(Error::shape("analytic gradient is not congruent with the network"));
    }

    let total = net.param_count();
    let picks = sample(&mut rng, total, opts.n_params.min(total));
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: locate(net, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for flat in picks.iter() {
        let at = locate(net, flat);
        let orig = read(net, at);
        *slot(&mut probe, at) = orig + opts.step;
        let up = objective(&probe)?;
        *slot(&mut probe, at) = orig - opts.step;
        let down = objective(&probe)?;
        *slot(&mut probe, at) = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = read(&grads, at);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = rel;
            report.worst = at;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    if report.max_rel_error > opts.tolerance {
        return Err(Error::GradCheck(format!(
            "relative error {:.3e} exceeds {:.1e} at layer {} {} index {} (analytic {:.6e}, numeric {:.6e})",
            report.max_rel_error,
            opts.tolerance,
            report.worst.layer,
            if report.worst.is_bias { "bias" } else { "weights" },
            report.worst.index,
            report.analytic,
            report.numeric
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{Activation, Layer};

    fn net(dims: &[usize], act: Activation, seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        MlpParams::new(
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let bound = (6.0 / w[0] as f64).sqrt();
                    Layer {
                        weights: Tensor::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound)),
                        bias: Tensor::new(vec![w[1]], (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect())
                            .unwrap(),
                        activation: if i + 2 == n { Activation::Identity } else { act },
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_network_is_exact() {
        let n = net(&[3, 8, 2], Activation::Identity, 1);
        let opts = GradCheckOptions { tolerance: 1e-8, ..Default::default() };
        let r = grad_check(&n, &input(6, 3, 2), &opts).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn sine_network_width16_depth3() {
        let n = net(&[2, 16, 16, 3], Activation::Sine(1.0), 4);
        let r = grad_check(&n, &input(7, 2, 5), &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-4);
        assert_eq!(r.checked, 100);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let n = net(&[2, 16, 16, 3], Activation::Sine(1.0), 4);
        let err = grad_check_with(&n, &input(7, 2, 5), &GradCheckOptions::default(), |net, x, seed| {
            let mut g = net.forward(x)?.backward(net, seed)?;
            for v in g.layers[1].weights.data_mut() {
                *v *= 2.0;
            }
            Ok(g)
        })
        .unwrap_err();
        match err {
            Error::GradCheck(msg) => assert!(msg.contains("layer 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
