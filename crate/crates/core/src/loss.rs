//! Distillation losses between a student and a teacher embedding batch.
//!
//! Each loss has a value-only form and a form that also returns the gradient
//! with respect to the student (first) argument. Sums accumulate in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::LossKind;
use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;
use crate::scalar::Scalar;

/// Norm floor for the cosine loss.
pub const COSINE_EPS: f64 = 1e-12;

fn check<S: Scalar>(a: &EmbeddingBatch<S>, b: &EmbeddingBatch<S>) -> Result<()> {
    if a.rows != b.rows || a.dim != b.dim || a.values.len() != b.values.len() {
        return Err(Error::Shape(format!(
            "loss operands {}×{} vs {}×{}",
            a.rows, a.dim, b.rows, b.dim
        )));
    }
    if a.rows == 0 || a.dim == 0 {
        return Err(Error::Shape("empty loss operands".into()));
    }
    Ok(())
}

/// Mean over all elements of `(a - b)²`.
pub fn mse_loss<S: Scalar>(a: &EmbeddingBatch<S>, b: &EmbeddingBatch<S>) -> Result<f64> {
    Ok(mse_with_grad(a, b, false)?.0)
}

/// Mean over rows of `1 - cos(a_i, b_i)`.
pub fn cosine_loss<S: Scalar>(a: &EmbeddingBatch<S>, b: &EmbeddingBatch<S>) -> Result<f64> {
    Ok(cosine_with_grad(a, b, false)?.0)
}

/// Mean over rows of `max_j (a_ij - b_ij)²`.
pub fn salient_loss<S: Scalar>(a: &EmbeddingBatch<S>, b: &EmbeddingBatch<S>) -> Result<f64> {
    Ok(salient_with_grad(a, b, false)?.0)
}

pub fn loss_value<S: Scalar>(kind: LossKind, a: &EmbeddingBatch<S>, b: &EmbeddingBatch<S>) -> Result<f64> {
    match kind {
        LossKind::Mse => mse_loss(a, b),
        LossKind::Cosine => cosine_loss(a, b),
        LossKind::Salient => salient_loss(a, b),
    }
}

/// Loss value and `d loss / d a`.
pub fn loss_and_grad<S: Scalar>(
    kind: LossKind,
    a: &EmbeddingBatch<S>,
    b: &EmbeddingBatch<S>,
) -> Result<(f64, Vec<S>)> {
    let (v, g) = match kind {
        LossKind::Mse => mse_with_grad(a, b, true)?,
        LossKind::Cosine => cosine_with_grad(a, b, true)?,
        LossKind::Salient => salient_with_grad(a, b, true)?,
    };
    Ok((v, g.expect("gradient requested")))
}

fn mse_with_grad<S: Scalar>(
    a: &EmbeddingBatch<S>,
    b: &EmbeddingBatch<S>,
    want_grad: bool,
) -> Result<(f64, Option<Vec<S>>)> {
    check(a, b)?;
    let count = a.values.len() as f64;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let grad = want_grad.then(|| {
        let k = S::from_f64(2.0 / count);
        a.values.iter().zip(&b.values).map(|(&x, &y)| k * (x - y)).collect()
    });
    Ok((sum / count, grad))
}

fn cosine_with_grad<S: Scalar>(
    a: &EmbeddingBatch<S>,
    b: &EmbeddingBatch<S>,
    want_grad: bool,
) -> Result<(f64, Option<Vec<S>>)> {
    check(a, b)?;
    let rows = a.rows as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![S::zero(); a.values.len()]);
    for i in 0..a.rows {
        let (ra, rb) = (a.row(i), b.row(i));
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in ra.iter().zip(rb) {
            let (x, y) = (x.as_f64(), y.as_f64());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (na, nb) = (libm::sqrt(na), libm::sqrt(nb));
        let (ca, cb) = (na.max(COSINE_EPS), nb.max(COSINE_EPS));
        let cos = dot / (ca * cb);
        total += 1.0 - cos;
        if let Some(g) = grad.as_mut() {
            // d(-cos)/da = -(b / (|a||b|) - cos · a / |a|²), with the floor
            // treated as a constant once it is active.
            let kb = S::from_f64(-1.0 / (rows * ca * cb));
            let ka = if na > COSINE_EPS { S::from_f64(cos / (rows * ca * ca)) } else { S::zero() };
            for ((d, &x), &y) in g[i * a.dim..(i + 1) * a.dim].iter_mut().zip(ra).zip(rb) {
                *d = kb * y + ka * x;
            }
        }
    }
    Ok((total / rows, grad))
}

fn salient_with_grad<S: Scalar>(
    a: &EmbeddingBatch<S>,
    b: &EmbeddingBatch<S>,
    want_grad: bool,
) -> Result<(f64, Option<Vec<S>>)> {
    check(a, b)?;
    let rows = a.rows as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![S::zero(); a.values.len()]);
    for i in 0..a.rows {
        let (ra, rb) = (a.row(i), b.row(i));
        // First index of the largest squared difference.
        let (mut best, mut best_sq) = (0usize, -1.0f64);
        for (j, (&x, &y)) in ra.iter().zip(rb).enumerate() {
            let d = x.as_f64() - y.as_f64();
            if d * d > best_sq {
                best_sq = d * d;
                best = j;
            }
        }
        total += best_sq;
        if let Some(g) = grad.as_mut() {
            g[i * a.dim + best] = S::from_f64(2.0 / rows) * (ra[best] - rb[best]);
        }
    }
    Ok((total / rows, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eb(rows: usize, dim: usize, v: &[f64]) -> EmbeddingBatch<f64> {
        EmbeddingBatch::from_values(v.to_vec(), rows, dim).unwrap()
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let a = eb(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.5, 0.5]);
        for k in LossKind::ALL {
            assert!(loss_value(*k, &a, &a).unwrap().abs() < 1e-15, "{k}");
        }
    }

    #[test]
    fn mse_closed_form() {
        let a = eb(1, 2, &[3.0, 4.0]);
        let b = eb(1, 2, &[0.0, 0.0]);
        assert_eq!(mse_loss(&a, &b).unwrap(), 12.5);
    }

    #[test]
    fn cosine_orthogonal_and_opposite() {
        let a = eb(1, 2, &[1.0, 0.0]);
        assert!((cosine_loss(&a, &eb(1, 2, &[0.0, 2.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_loss(&a, &eb(1, 2, &[-3.0, 0.0])).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_row_is_guarded() {
        let a = eb(1, 2, &[0.0, 0.0]);
        let b = eb(1, 2, &[1.0, 0.0]);
        let (v, g) = loss_and_grad(LossKind::Cosine, &a, &b).unwrap();
        assert_eq!(v, 1.0);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn salient_max_of_squares() {
        let a = eb(1, 3, &[0.1, -0.5, 0.2]);
        let b = eb(1, 3, &[0.0, 0.0, 0.0]);
        assert!((salient_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn salient_equals_mse_for_one_dimension() {
        let a = eb(3, 1, &[0.3, -1.0, 2.0]);
        let b = eb(3, 1, &[0.1, 0.5, 2.5]);
        assert_eq!(salient_loss(&a, &b).unwrap(), mse_loss(&a, &b).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = eb(1, 2, &[1.0, 2.0]);
        let b = eb(2, 1, &[1.0, 2.0]);
        assert!(matches!(mse_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        let a0: Vec<f64> = (0..12).map(|j| ((j * 7 % 5) as f64 - 2.0) * 0.3 + 0.01 * j as f64).collect();
        let b = eb(3, 4, &(0..12).map(|j| ((j * 3 % 7) as f64 - 3.0) * 0.2).collect::<Vec<_>>());
        for kind in LossKind::ALL {
            let (_, g) = loss_and_grad(*kind, &eb(3, 4, &a0), &b).unwrap();
            for j in 0..12 {
                let h = 1e-6;
                let mut p = a0.clone();
                p[j] += h;
                let mut m = a0.clone();
                m[j] -= h;
                let fd = (loss_value(*kind, &eb(3, 4, &p), &b).unwrap()
                    - loss_value(*kind, &eb(3, 4, &m), &b).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{kind} j={j}: fd {fd} vs {}", g[j]);
            }
        }
    }
}
