use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Relative error floor; gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Compares tape gradients of `f` with central finite differences.
///
/// `f` receives the parameters as tape leaves (same order as `params`) and
/// returns a scalar. Up to `samples` coordinates, drawn uniformly across all
/// parameters with `seed`, are perturbed by `±eps`. The relative error of a
/// coordinate is `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn grad_check<F>(
    f: F,
    params: &mut [Tensor<f64>],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |params: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = params
        .iter()
        .zip(&vars)
        .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, samples).into_vec();
        v.sort_unstable();
        v
    };

    let mut max_rel = 0.0f64;
    for &flat in &picks {
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let i = flat - offsets[p];
        let orig = params[p].data()[i];
        params[p].data_mut()[i] = orig + eps;
        let plus = eval(params)?;
        params[p].data_mut()[i] = orig - eps;
        let minus = eval(params)?;
        params[p].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[p].data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coordinates: picks.len(),
    })
}
