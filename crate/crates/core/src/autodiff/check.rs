//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tape, Tensor, Var};

/// Builds a scalar loss from leaf variables bound to `params`, in order.
pub trait LossBuilder: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>> LossBuilder for F {}

fn eval_loss<F: LossBuilder>(build: &F, params: &[Tensor]) -> Result<f64, AutodiffError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(AutodiffError::NonFinite {
            context: "finite-difference evaluation".into(),
        });
    }
    Ok(v)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn check_coords<F: LossBuilder>(
    build: &F,
    params: &[Tensor],
    coords: &[(usize, usize)],
    step: f64,
) -> Result<f64, AutodiffError> {
    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(AutodiffError::NonFinite {
            context: "loss evaluation".into(),
        });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.wrt_or_zeros(*v, p.shape()))
        .collect();

    let mut worst = 0.0f64;
    for &(pi, ci) in coords {
        let mut perturbed = params.to_vec();
        perturbed[pi].data_mut()[ci] += step;
        let plus = eval_loss(build, &perturbed)?;
        perturbed[pi].data_mut()[ci] -= 2.0 * step;
        let minus = eval_loss(build, &perturbed)?;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[pi].data()[ci], numeric));
    }
    Ok(worst)
}

/// Compare the analytic gradient of `build` against central finite
/// differences at every coordinate of every parameter. Returns the maximum
/// relative error `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F: LossBuilder>(
    build: &F,
    params: &[Tensor],
    step: f64,
) -> Result<f64, AutodiffError> {
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ci| (pi, ci)))
        .collect();
    check_coords(build, params, &coords, step)
}

/// Same check restricted to `per_param` randomly chosen coordinates of each
/// parameter tensor. Used where a full sweep would be too slow.
pub fn finite_diff_check_sampled<F: LossBuilder>(
    build: &F,
    params: &[Tensor],
    per_param: usize,
    step: f64,
    seed: u64,
) -> Result<f64, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        if p.len() <= per_param {
            coords.extend((0..p.len()).map(|ci| (pi, ci)));
        } else {
            for _ in 0..per_param {
                coords.push((pi, rng.gen_range(0..p.len())));
            }
        }
    }
    check_coords(build, params, &coords, step)
}
