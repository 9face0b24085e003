//! Finite-difference gradient verification. Meant to run in f64 mode; the
//! forward closure rebuilds the graph from scratch on every call, so the
//! recorded computation must be deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::ParamSet;
use super::tensor::Scalar;
use crate::error::Result;

/// Compares backprop gradients against central finite differences on
/// randomly probed coordinates, cycling through parameters so every tensor
/// gets probed when `probe_count >= param count`. Returns the worst relative
/// error seen. Coordinates where both sides are below 1e-7 in magnitude are
/// counted as exact matches.
pub fn gradient_check<S, F>(
    params: &mut ParamSet<S>,
    mut forward: F,
    probe_count: usize,
    fd_epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64>
where
    S: Scalar,
    F: FnMut(&ParamSet<S>) -> Result<(Graph<S>, NodeId)>,
{
    params.zero_grads();
    let (graph, loss) = forward(params)?;
    graph.backward(loss, params)?;

    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.as_f64()).collect())
        .collect();

    let n_params = params.len();
    let mut worst = 0.0f64;
    for probe in 0..probe_count {
        let slot = probe % n_params;
        let numel = params.by_slot(slot).value.numel();
        if numel == 0 {
            continue;
        }
        let idx = rng.gen_range(0..numel);
        let theta = params.by_slot(slot).value.data()[idx].as_f64();
        let eps = fd_epsilon * theta.abs().max(1.0);

        params.by_slot_mut(slot).value.data_mut()[idx] = S::from_f64(theta + eps);
        let (gp, lp) = forward(params)?;
        let loss_plus = gp.value(lp).item().as_f64();

        params.by_slot_mut(slot).value.data_mut()[idx] = S::from_f64(theta - eps);
        let (gm, lm) = forward(params)?;
        let loss_minus = gm.value(lm).item().as_f64();

        params.by_slot_mut(slot).value.data_mut()[idx] = S::from_f64(theta);

        let fd = (loss_plus - loss_minus) / (2.0 * eps);
        let an = analytic[slot][idx];
        let scale = fd.abs().max(an.abs());
        if scale > 1e-7 {
            let rel = (fd - an).abs() / scale;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use rand::SeedableRng;

    fn randn_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn linear_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamSet::<f64>::new();
        let w = ps.register("w", randn_tensor(&[4, 4], &mut rng)).unwrap();
        let b = ps.register("b", randn_tensor(&[1, 4], &mut rng)).unwrap();
        let x = randn_tensor(&[3, 4], &mut rng);
        let err = gradient_check(
            &mut ps,
            |ps| {
                let mut g = Graph::new();
                let xn = g.input(x.clone());
                let wn = g.param(ps, w);
                let bn = g.param(ps, b);
                let y = g.matmul(xn, wn)?;
                let y = g.add_row(y, bn)?;
                let y = g.relu(y);
                let loss = g.mean_all(y);
                Ok((g, loss))
            },
            40,
            1e-6,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn conv_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::<f64>::new();
        let w = ps
            .register("w", randn_tensor(&[3, 2, 3], &mut rng))
            .unwrap();
        let b = ps.register("b", randn_tensor(&[1, 3], &mut rng)).unwrap();
        let x = randn_tensor(&[5, 2], &mut rng);
        let err = gradient_check(
            &mut ps,
            |ps| {
                let mut g = Graph::new();
                let xn = g.input(x.clone());
                let wn = g.param(ps, w);
                let bn = g.param(ps, b);
                let y = g.conv1d_same(xn, wn, bn)?;
                let y = g.relu(y);
                let loss = g.mean_all(y);
                Ok((g, loss))
            },
            40,
            1e-6,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn layer_norm_softmax_ce_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParamSet::<f64>::new();
        let w = ps.register("w", randn_tensor(&[4, 3], &mut rng)).unwrap();
        let x = randn_tensor(&[6, 4], &mut rng);
        let labels = vec![0, 2, 1, 1, 0, 2];
        let weights = vec![1.0, 5.0, 5.0];
        let mask = vec![true, true, false, true, true, true];
        let err = gradient_check(
            &mut ps,
            |ps| {
                let mut g = Graph::new();
                let xn = g.input(x.clone());
                let normed = g.layer_norm_rows(xn, 1e-5);
                let wn = g.param(ps, w);
                let logits = g.matmul(normed, wn)?;
                let loss =
                    g.ce_from_logits(logits, labels.clone(), weights.clone(), mask.clone())?;
                Ok((g, loss))
            },
            30,
            1e-6,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-6, "max rel err {err}");
    }
}
