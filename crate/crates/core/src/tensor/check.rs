//! Central finite-difference gradient checking.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::{DiffTensor, Tape};

/// Worst coordinate found by a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdOutcome<T> {
    pub max_rel_err: T,
    pub worst_coord: usize,
    pub analytic: T,
    pub numeric: T,
}

/// Compare the analytic gradient of `f` at `x` against central differences
/// over every coordinate. The relative error uses a
/// max(1, |analytic|, |numeric|) denominator.
pub fn finite_difference_check<T, F>(f: F, x: &[T], shape: &[usize], eps: T) -> Result<FdOutcome<T>>
where
    T: Scalar,
    F: Fn(&Tape<T>, &DiffTensor<T>) -> Result<DiffTensor<T>>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_coords(f, x, shape, eps, &coords)
}

/// Same as [`finite_difference_check`] but probing only selected coordinates
/// (used for large weight tensors).
pub fn finite_difference_check_coords<T, F>(
    f: F,
    x: &[T],
    shape: &[usize],
    eps: T,
    coords: &[usize],
) -> Result<FdOutcome<T>>
where
    T: Scalar,
    F: Fn(&Tape<T>, &DiffTensor<T>) -> Result<DiffTensor<T>>,
{
    let tape = Tape::new();
    let xt = tape.leaf(x.to_vec(), shape.to_vec(), true)?;
    let loss = f(&tape, &xt)?;
    tape.backward(&loss)?;
    let grad = xt
        .grad()
        .ok_or_else(|| CoreError::Tape("no gradient recorded for checked tensor".into()))?;

    let eval = |values: &[T]| -> Result<T> {
        let t = Tape::new();
        let xt = t.leaf(values.to_vec(), shape.to_vec(), false)?;
        let l = f(&t, &xt)?;
        Ok(l.value_scalar())
    };

    let mut out = FdOutcome {
        max_rel_err: T::zero(),
        worst_coord: 0,
        analytic: T::zero(),
        numeric: T::zero(),
    };
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = eval(&probe)?;
        probe[i] = orig - eps;
        let fm = eval(&probe)?;
        probe[i] = orig;
        let numeric = (fp - fm) / (eps + eps);
        let analytic = grad[i];
        let denom = T::one().max(analytic.abs()).max(numeric.abs());
        let rel = (analytic - numeric).abs() / denom;
        if rel > out.max_rel_err {
            out = FdOutcome {
                max_rel_err: rel,
                worst_coord: i,
                analytic,
                numeric,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = sum(x ⊙ x) has zero third derivative; central differences
        // are exact up to roundoff.
        let x = vec![0.3, -1.2, 2.5, 0.01];
        let out = finite_difference_check(
            |_t, xt| xt.mul(xt)?.sum_all(),
            &x,
            &[4],
            1e-5,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-8, "rel err {:?}", out);
    }

    #[test]
    fn relu_away_from_kink() {
        let mut rng = Rng::new(11);
        let x: Vec<f64> = (0..16)
            .map(|_| {
                // keep coordinates away from the kink
                let v = rng.uniform(0.1, 2.0);
                if rng.unit_f64() < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        let out = finite_difference_check(
            |_t, xt| xt.relu()?.mul(xt)?.sum_all(),
            &x,
            &[16],
            1e-5,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-6, "rel err {:?}", out);
    }

    #[test]
    fn matmul_chain() {
        let mut rng = Rng::new(5);
        let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let out = finite_difference_check(
            |t, xt| {
                let w = t.constant((0..8).map(|i| 0.1 * (i as f64 + 1.0)).collect(), vec![4, 2])?;
                xt.matmul(&w)?.tanh()?.sum_all()
            },
            &x,
            &[3, 4],
            1e-5,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-9, "rel err {:?}", out);
    }
}
