//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Step used for the central differences.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of `f` against central differences at every input
/// coordinate. Non-scalar outputs are contracted with a fixed random tensor so
/// that every output element contributes.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    check_coords(inputs, &coords, f)
}

/// Like [`check`] but only perturbs the listed `(input, flat index)` pairs.
pub fn check_coords<F>(inputs: &[Tensor], coords: &[(usize, usize)], f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), want_grad))
            .collect();
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out)?;
        let value = tape.value(loss)?[0];
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(loss)?;
            for v in &vars {
                grads.push(tape.grad(*v)?.map(|g| g.to_vec()));
            }
        }
        Ok((value, grads))
    };

    let (_, grads) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + STEP;
        let (plus, _) = eval(&work, false)?;
        work[i].data_mut()[j] = orig - STEP;
        let (minus, _) = eval(&work, false)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let analytic = grads[i].as_ref().map_or(0.0, |g| g[j]);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(GradReport {
        max_rel_err: worst,
        checked: coords.len(),
    })
}

/// Gradient check of `f` with respect to the parameters of `store`. At most
/// `per_param` randomly chosen entries of each parameter are perturbed.
pub fn check_store<F>(store: &ParamStore, per_param: usize, f: F) -> Result<GradReport>
where
    F: for<'s> Fn(&mut Tape<'s>, &Bound<'s>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    let mut coords = Vec::new();
    for (i, p) in store.params().iter().enumerate() {
        let n = p.data.len();
        if n <= per_param {
            coords.extend((0..n).map(|j| (i, j)));
        } else {
            coords.extend((0..per_param).map(|_| (i, rng.random_range(0..n))));
        }
    }
    check_store_coords(store, &coords, f)
}

/// Gradient check at `count` entries drawn uniformly from all parameter
/// entries of `store`.
pub fn check_store_sampled<F>(store: &ParamStore, count: usize, seed: u64, f: F) -> Result<GradReport>
where
    F: for<'s> Fn(&mut Tape<'s>, &Bound<'s>) -> Result<Var>,
{
    let flat: Vec<(usize, usize)> = store
        .params()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.data.len()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<_> = (0..count).map(|_| flat[rng.random_range(0..flat.len())]).collect();
    check_store_coords(store, &coords, f)
}

/// Gradient check at the given `(parameter index, flat index)` entries.
pub fn check_store_coords<F>(store: &ParamStore, coords: &[(usize, usize)], f: F) -> Result<GradReport>
where
    F: for<'s> Fn(&mut Tape<'s>, &Bound<'s>) -> Result<Var>,
{
    let eval = |store: &ParamStore, want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape)?;
        let out = f(&mut tape, &bound)?;
        let loss = project(&mut tape, out)?;
        let value = tape.value(loss)?[0];
        let mut grads = store.zeros_like();
        if want_grad {
            tape.backward(loss)?;
            bound.accumulate_grads(&mut tape, &mut grads)?;
        }
        Ok((value, grads))
    };

    let (_, grads) = eval(store, true)?;
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for &(i, j) in coords {
        let orig = work.params()[i].data[j];
        work.params_mut()[i].data[j] = orig + STEP;
        let (plus, _) = eval(&work, false)?;
        work.params_mut()[i].data[j] = orig - STEP;
        let (minus, _) = eval(&work, false)?;
        work.params_mut()[i].data[j] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(rel_err(grads[i][j], numeric));
    }
    Ok(GradReport {
        max_rel_err: worst,
        checked: coords.len(),
    })
}

fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out)?.to_vec();
    let n: usize = shape.iter().product();
    if n == 1 {
        return tape.sum(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(shape, weights)?;
    let prod = tape.hadamard(out, w)?;
    tape.sum(prod)
}

/// Uniform random tensor in `[-scale, scale]`.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}
