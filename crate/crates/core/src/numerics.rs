//! Dense linear-algebra substrate: row-major `f64` matrices, the handful of
//! vector kernels the model needs, seeded initialization, and the central
//! finite-difference gradient oracle.

use rand::distributions::{Distribution, Uniform};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::Parameters;

/// Row-major dense matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `A · x`, checked.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {}x{} matrix against vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.mul_vec(x))
    }

    /// `A · x` without the shape check; callers guarantee `x.len() == cols`.
    pub(crate) fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ · x`; callers guarantee `x.len() == rows`.
    pub(crate) fn mul_vec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `A += scale · u vᵀ`.
    pub(crate) fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let coef = scale * ur;
            if coef != 0.0 {
                axpy(coef, v, self.row_mut(r));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Vector-Jacobian product of softmax: given `p = softmax(x)` and `dL/dp`,
/// returns `dL/dx`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let inner = dot(p, grad_p);
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - inner)).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Seedable random stream. Identical seeds give identical streams.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream for worker `index`, derived as `seed + index`.
    pub fn for_worker(seed: u64, index: u64) -> Self {
        Self::new(seed.wrapping_add(index))
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Glorot-uniform matrix: entries in `[-√(6/(rows+cols)), +√(6/(rows+cols))]`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    let bound = glorot_bound(rows, cols);
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseMatrix { rows, cols, data }
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Central-difference gradient of `loss_fn` at `params`, one dense vector per
/// parameter slot (same order as [`Parameters::slots`]).
pub fn finite_diff_grad<P, F>(mut loss_fn: F, params: &P, eps: f64) -> Result<Vec<Vec<f64>>>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = params.clone();
    let shapes: Vec<(String, usize)> = params.slots().iter().map(|s| (s.name.clone(), s.data.len())).collect();
    let mut grads = Vec::with_capacity(shapes.len());
    for (slot, (name, len)) in shapes.iter().enumerate() {
        let mut g = vec![0.0; *len];
        for (idx, gi) in g.iter_mut().enumerate() {
            let original = probe.slots_mut()[slot].data[idx];
            probe.slots_mut()[slot].data[idx] = original + eps;
            let up = loss_fn(&probe);
            probe.slots_mut()[slot].data[idx] = original - eps;
            let down = loss_fn(&probe);
            probe.slots_mut()[slot].data[idx] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!("loss while perturbing {name}[{idx}]")));
            }
            *gi = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn slots(&self) -> Vec<crate::params::Slot<'_>> {
            vec![crate::params::Slot::new("theta", vec![self.0.len()], &self.0)]
        }
        fn slots_mut(&mut self) -> Vec<crate::params::SlotMut<'_>> {
            let n = self.0.len();
            vec![crate::params::SlotMut::new("theta", vec![n], &mut self.0)]
        }
    }

    #[test]
    fn matvec_examples() {
        let id = DenseMatrix::identity(3);
        assert_eq!(id.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let z = DenseMatrix::zeros(2, 3);
        assert_eq!(z.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(matches!(a.matvec(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn transpose_product_and_outer() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(a.mul_vec_t(&[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
        let mut m = DenseMatrix::zeros(2, 2);
        m.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m.data(), &[6.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[5.0]).unwrap(), vec![1.0]);
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(softmax(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-1.0, -3.0]), vec![0.0, 0.0]);
        assert_eq!(relu(&[0.5, 3.0]), vec![0.5, 3.0]);
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = glorot_init(7, 5, &mut Rng::new(11));
        let b = glorot_init(7, 5, &mut Rng::new(11));
        assert_eq!(a, b);
        let bound = glorot_bound(7, 5);
        assert!(a.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn glorot_mean_is_centered() {
        let m = glorot_init(1000, 1000, &mut Rng::new(3));
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        // Uniform(-b, b) has variance b²/3.
        let b = glorot_bound(1000, 1000);
        let sigma = (b * b / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn finite_diff_of_square() {
        let g = finite_diff_grad(|p: &Scalar| p.0[0] * p.0[0], &Scalar(vec![3.0]), 1e-5).unwrap();
        assert!((g[0][0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_of_constant() {
        let g = finite_diff_grad(|_: &Scalar| 4.2, &Scalar(vec![1.0, -2.0, 0.5]), 1e-5).unwrap();
        assert_eq!(g[0], vec![0.0; 3]);
    }

    #[test]
    fn finite_diff_reports_non_finite_loss() {
        let err = finite_diff_grad(
            |p: &Scalar| if p.0[1] > 1.0 { f64::NAN } else { 0.0 },
            &Scalar(vec![0.0, 1.0]),
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("theta[1]"), "{err}");
        assert!(finite_diff_grad(|_: &Scalar| 0.0, &Scalar(vec![0.0]), 0.0).is_err());
    }

    #[test]
    fn softmax_backward_matches_finite_difference() {
        let x = [0.3, -1.2, 0.7];
        let upstream = [0.5, 2.0, -1.0];
        let p = softmax(&x).unwrap();
        let analytic = softmax_backward(&p, &upstream);
        let f = |s: &Scalar| dot(&softmax(&s.0).unwrap(), &upstream);
        let numeric = finite_diff_grad(f, &Scalar(x.to_vec()), 1e-6).unwrap();
        for (a, n) in analytic.iter().zip(&numeric[0]) {
            assert!(relative_error(*a, *n) < 1e-6);
        }
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            data in small_vec(12), x in small_vec(4), y in small_vec(4),
            a in -5.0f64..5.0, b in -5.0f64..5.0,
        ) {
            let m = DenseMatrix::from_vec(3, 4, data).unwrap();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
            let lhs = m.matvec(&combo).unwrap();
            let mx = m.matvec(&x).unwrap();
            let my = m.matvec(&y).unwrap();
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * mx[i] + b * my[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_is_shift_invariant(x in small_vec(5), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let p = softmax(&x).unwrap();
            let q = softmax(&shifted).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (pi, qi) in p.iter().zip(&q) {
                prop_assert!((pi - qi).abs() < 1e-12);
                prop_assert!(*pi > 0.0);
            }
        }

        #[test]
        fn relu_is_idempotent(x in small_vec(8)) {
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }
    }
}
