use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors. Central differences at step 1e-5
/// carry roundoff near 1e-11, so gradients below this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub pass: bool,
    /// Number of scalar coordinates compared.
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Cap on sampled coordinates per parameter; `None` checks all of them.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(store: &ParameterStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let value = tape.value(loss);
    if value.len() != 1 || !value.item().is_finite() {
        return Err(Error::Numerical(format!("loss evaluation produced {:?}", value.data())));
    }
    Ok(value.item())
}

/// Compare the tape's analytic gradients against central differences.
///
/// Every non-frozen parameter is checked; frozen ones must come back with a
/// zero gradient slot.
pub fn finite_difference_check<F>(
    op: &str,
    store: &ParameterStore,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    if !(opts.step > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::contract("gradient check needs step > 0 and tol > 0"));
    }
    let mut analytic = store.clone();
    analytic.zero_grads();
    {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, &analytic)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        tape.backward(loss, &mut analytic)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let entry = analytic.entry(name)?;
        if entry.frozen {
            if entry.grad.data().iter().any(|&g| g != 0.0) {
                return Err(Error::contract(format!(
                    "frozen parameter `{name}` received a gradient"
                )));
            }
            continue;
        }
        let n = entry.value.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(cap) if cap < n => {
                let mut c = sample(&mut rng, n, cap).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let grad = entry.grad.clone();
        for idx in coords {
            let original = probe.value(name)?.data()[idx];
            probe.value_mut(name)?.data_mut()[idx] = original + opts.step;
            let plus = eval_loss(&probe, &loss_fn)?;
            probe.value_mut(name)?.data_mut()[idx] = original - opts.step;
            let minus = eval_loss(&probe, &loss_fn)?;
            probe.value_mut(name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let rel = relative_error(grad.data()[idx], numeric);
            checked += 1;
            if rel >= max_rel {
                max_rel = rel;
                worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_error: max_rel,
        pass: max_rel < opts.tol,
        checked,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{OpKind, Tensor};

    fn quadratic(tape: &mut Tape, store: &ParameterStore) -> Result<Var> {
        let w = tape.param(store, "w")?;
        let wt = tape.transpose(w)?;
        let sq = tape.matmul(w, wt)?;
        tape.sum_all(sq)
    }

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::row_vector(vec![0.3, -1.2, 2.0]), false);
        s
    }

    #[test]
    fn quadratic_passes_tightly() {
        let report = finite_difference_check("quadratic", &store(), quadratic, &Default::default()).unwrap();
        assert!(report.pass);
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let report = finite_difference_check(
            "quadratic-corrupted",
            &store(),
            |tape: &mut Tape, s: &ParameterStore| {
                tape.inject_gradient_fault(OpKind::MatMul, 1.05);
                quadratic(tape, s)
            },
            &Default::default(),
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn rejects_bad_options() {
        let opts = GradCheckOptions {
            step: 0.0,
            ..Default::default()
        };
        assert!(finite_difference_check("q", &store(), quadratic, &opts).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let res = finite_difference_check(
            "log",
            &store(),
            |tape: &mut Tape, s: &ParameterStore| {
                let w = tape.param(s, "w")?;
                let l = tape.log(w)?;
                tape.sum_all(l)
            },
            &Default::default(),
        );
        assert!(res.is_err());
    }
}
