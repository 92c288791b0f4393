use ndarray::{Array2, ArrayView2};

use super::DcError;

fn check(v: ArrayView2<'_, f64>, labels: &[usize], weights: &[f64]) -> Result<usize, DcError> {
    let m = v.nrows();
    if labels.len() != m || weights.len() != m {
        return Err(DcError::ShapeMismatch(format!(
            "{m} embeddings, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(DcError::NegativeWeight(*w));
    }
    Ok(labels.iter().copied().max().map_or(0, |l| l + 1))
}

/// `V^T W V`, `V^T W Y` and the per-class weight sums `diag(Y^T W Y)`.
fn moments(v: ArrayView2<'_, f64>, labels: &[usize], weights: &[f64], classes: usize) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let d = v.ncols();
    let wv = Array2::from_shape_fn(v.dim(), |(i, k)| weights[i] * v[[i, k]]);
    let p = v.t().dot(&wv);
    let mut q = Array2::zeros((d, classes));
    let mut s = vec![0.0; classes];
    for (i, &l) in labels.iter().enumerate() {
        s[l] += weights[i];
        for k in 0..d {
            q[[k, l]] += wv[[i, k]];
        }
    }
    (p, q, s)
}

fn frob2(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `||W^1/2 (V V^T - Y Y^T) W^1/2||_F^2` for one-hot `Y` built from `labels`,
/// evaluated through `D x D`, `D x N` and `N x N` products only.
pub fn weighted_dc_loss(v: ArrayView2<'_, f64>, labels: &[usize], weights: &[f64]) -> Result<f64, DcError> {
    let classes = check(v, labels, weights)?;
    let (p, q, s) = moments(v, labels, weights, classes);
    let loss = frob2(&p) - 2.0 * frob2(&q) + s.iter().map(|x| x * x).sum::<f64>();
    Ok(loss.max(0.0))
}

/// Loss and `dL/dV = 4 W (V (V^T W V) - Y (Y^T W V))`.
pub fn weighted_dc_loss_grad(
    v: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Array2<f64>), DcError> {
    let classes = check(v, labels, weights)?;
    let (p, q, s) = moments(v, labels, weights, classes);
    let loss = (frob2(&p) - 2.0 * frob2(&q) + s.iter().map(|x| x * x).sum::<f64>()).max(0.0);
    let mut grad = v.dot(&p);
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let l = labels[i];
        let w4 = 4.0 * weights[i];
        for (k, g) in row.iter_mut().enumerate() {
            *g = w4 * (*g - q[[k, l]]);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_hot_embeddings_give_zero() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(weighted_dc_loss(v.view(), &[0, 1, 0], &[0.2, 0.5, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn two_bin_hand_value() {
        let v = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(weighted_dc_loss(v.view(), &[0, 1], &[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = array![[1.0, 0.0], [1.0, 0.0]];
        assert!(matches!(weighted_dc_loss(v.view(), &[0], &[1.0, 1.0]), Err(DcError::ShapeMismatch(_))));
        assert!(matches!(weighted_dc_loss(v.view(), &[0, 1], &[1.0, -1.0]), Err(DcError::NegativeWeight(_))));
    }
}
