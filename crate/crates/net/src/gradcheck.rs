//! Central finite-difference oracle for reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Uniform values in `[lo, hi)`.
pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per
/// input, maximized over inputs. Non-scalar outputs are contracted with a
/// fixed random weight tensor first. Returns 0 when both gradients vanish.
pub fn max_relative_error(
    inputs: &[Tensor],
    step: f64,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |ts: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let shape = g.value(out).shape();
        let w = g.constant(random_tensor(shape, 0.5, 1.5, 0x5eed));
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|a| a.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut work = inputs.to_vec();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + step;
            let (gp, _, lp) = eval(&work)?;
            work[k].data_mut()[i] = x0 - step;
            let (gm, _, lm) = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * step);
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff2.sqrt() / scale);
        }
    }
    Ok(worst)
}
