//! Central finite-difference checks of analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative error between analytic and numeric gradients.
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_REL_TOL
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Uniform values in [-2, 2].
pub fn random_values<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let dist = Uniform::new_inclusive(-2.0, 2.0).expect("valid range");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_values(rng, n)).expect("valid shape")
}

/// Checks `d sum(f(x) * r) / dx` for a random projection `r`, at a random
/// point `x` with the given shape. At most `max_coords` coordinates are
/// perturbed (all of them when `None`).
pub fn check_op<R, F>(rng: &mut R, shape: &[usize], max_coords: Option<usize>, f: F) -> GradCheckReport
where
    R: Rng,
    F: Fn(&Tensor) -> Tensor,
{
    let n: usize = shape.iter().product();
    let x0 = random_values(rng, n);
    check_at(rng, shape, &x0, max_coords, f)
}

pub fn check_at<R, F>(
    rng: &mut R,
    shape: &[usize],
    x0: &[f64],
    max_coords: Option<usize>,
    f: F,
) -> GradCheckReport
where
    R: Rng,
    F: Fn(&Tensor) -> Tensor,
{
    let n = x0.len();
    let x = Tensor::param(shape.to_vec(), x0.to_vec()).expect("valid shape");
    let y = f(&x);
    let proj = random_values(rng, y.numel());
    let projected = |t: &Tensor| -> f64 { t.data().iter().zip(&proj).map(|(a, b)| a * b).sum() };
    let r = Tensor::new(y.shape().to_vec(), proj.clone()).expect("same shape");
    y.mul(&r).expect("same shape").sum().backward().expect("scalar");
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; n]);

    let coords: Vec<usize> = match max_coords {
        Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
        _ => (0..n).collect(),
    };
    let mut max_rel_error: f64 = 0.0;
    for &i in &coords {
        let mut plus = x0.to_vec();
        plus[i] += FD_STEP;
        let mut minus = x0.to_vec();
        minus[i] -= FD_STEP;
        let fp = projected(&super::no_grad(|| f(&Tensor::new(shape.to_vec(), plus).unwrap())));
        let fm = projected(&super::no_grad(|| f(&Tensor::new(shape.to_vec(), minus).unwrap())));
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        max_rel_error = max_rel_error.max(rel_error(analytic[i], numeric));
    }
    GradCheckReport {
        checked: coords.len(),
        max_rel_error,
    }
}

/// Panicking form of [`check_op`] used by unit tests.
pub fn assert_gradients<R, F>(rng: &mut R, shape: &[usize], f: F)
where
    R: Rng,
    F: Fn(&Tensor) -> Tensor,
{
    let report = check_op(rng, shape, None, f);
    assert!(
        report.passed(),
        "gradient mismatch: max relative error {:.3e} over {} coords",
        report.max_rel_error,
        report.checked
    );
}
