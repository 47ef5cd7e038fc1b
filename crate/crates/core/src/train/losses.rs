use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn loss_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len().max(1) as f64)
}

/// Mean absolute error between predicted and true codes.
pub fn loss_latent_regression(c_pred: &Tensor, c: &Tensor) -> Result<f64> {
    loss_l1(c_pred, c)
}

/// Least-squares GAN loss: mean (d - label)^2.
pub fn loss_lsgan(d_out: &Tensor, label: f64) -> f64 {
    d_out.data().iter().map(|d| (d - label) * (d - label)).sum::<f64>() / d_out.len().max(1) as f64
}
