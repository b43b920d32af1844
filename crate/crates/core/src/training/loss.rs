use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Mean of `w(row) (pred - target)^2` over every element, with the row
/// weights rescaled to mean 1. Accepts `[.., H, W]` tensors.
pub fn latitude_weighted_mse(pred: &Tensor, target: &Tensor, row_weights: &[f64]) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("loss: prediction {:?} vs target {:?}", pred.shape(), target.shape()));
    }
    let nd = pred.ndim();
    if nd < 2 || pred.shape()[nd - 2] != row_weights.len() {
        return Err(shape_err!("loss: {} row weights for shape {:?}", row_weights.len(), pred.shape()));
    }
    let w_mean = row_weights.iter().sum::<f64>() / row_weights.len() as f64;
    if !(w_mean > 0.0) || row_weights.iter().any(|w| *w < 0.0) {
        return Err(shape_err!("loss: row weights must be non-negative with a positive mean"));
    }
    let width = pred.shape()[nd - 1];
    let plane = row_weights.len() * width;
    let w: Vec<f64> = (0..pred.numel())
        .map(|i| row_weights[(i % plane) / width] / w_mean)
        .collect();
    let w = Tensor::new(pred.shape().to_vec(), w)?;
    Ok(pred.sub(target)?.square().mul(&w)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_rows_weigh_two_to_one() {
        let w = [1.0, 60f64.to_radians().cos()];
        let p = Tensor::new(vec![1, 2, 1], vec![1.0, 1.0]).unwrap();
        let t = Tensor::zeros(vec![1, 2, 1]);
        let l = latitude_weighted_mse(&p, &t, &w).unwrap().item();
        // normalized weights 4/3 and 2/3
        assert!((l - 1.0).abs() < 1e-12);
        let p = Tensor::new(vec![1, 2, 1], vec![1.0, 0.0]).unwrap();
        let a = latitude_weighted_mse(&p, &t, &w).unwrap().item();
        let p = Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        let b = latitude_weighted_mse(&p, &t, &w).unwrap().item();
        assert!((a / b - 2.0).abs() < 1e-12);
    }
}
