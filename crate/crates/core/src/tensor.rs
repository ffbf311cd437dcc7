//! Dense tensors and multi-linear algebra.
//!
//! Layout convention, used by every module in the crate:
//!
//! * storage is row-major, the last index varies fastest;
//! * `vec(X)` is the flat storage order;
//! * the mode-`d` unfolding is `p_d × (p / p_d)` with the remaining indices
//!   enumerated in their original order, last fastest;
//! * consequently `vec(F ×_1 A_1 ⋯ ×_D A_D) = (A_1 ⊗ A_2 ⊗ ⋯ ⊗ A_D) vec(F)`,
//!   which is what [`kron_chain`] builds. Under a column-major `vec` the same
//!   operator is written with the factors in reverse order.
//!
//! Modes are zero-based in code.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("tensor must have at least one mode".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-sized mode in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidArgument(format!("shape {dims:?} overflows usize")))?;
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// `(left, p_d, right)` block sizes around `mode`.
    fn split_at(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.dims[..mode].iter().product();
        let right = self.dims[mode + 1..].iter().product();
        (left, self.dims[mode], right)
    }

    fn with_dim(&self, mode: usize, size: usize) -> TensorShape {
        let mut dims = self.dims.clone();
        dims[mode] = size;
        TensorShape { dims }
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.dims.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.dims.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {:?}",
                data.len(),
                shape.dims()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(TensorShape::new(dims.to_vec())?, data)
    }

    pub fn zeros(shape: &TensorShape) -> Self {
        Self {
            shape: shape.clone(),
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: &TensorShape, value: f64) -> Self {
        Self {
            shape: shape.clone(),
            data: vec![value; shape.numel()],
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        self.same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseTensor {
        self.map(|v| v * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &DenseTensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn reshape(self, shape: TensorShape) -> Result<DenseTensor> {
        DenseTensor::new(shape, self.data)
    }

    fn same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        Ok(())
    }
}

/// Mode-`mode` unfolding: a `p_mode × (p / p_mode)` matrix.
pub fn mode_unfold(x: &DenseTensor, mode: usize) -> Result<Matrix> {
    x.shape.check_mode(mode)?;
    let (left, pd, right) = x.shape.split_at(mode);
    let mut out = Matrix::zeros(pd, left * right);
    let cols = left * right;
    let buf = out.as_mut_slice();
    for l in 0..left {
        for j in 0..pd {
            let src = &x.data[(l * pd + j) * right..(l * pd + j + 1) * right];
            buf[j * cols + l * right..j * cols + (l + 1) * right].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Inverse of [`mode_unfold`].
pub fn mode_fold(m: &Matrix, mode: usize, shape: &TensorShape) -> Result<DenseTensor> {
    shape.check_mode(mode)?;
    let (left, pd, right) = shape.split_at(mode);
    if m.rows() != pd || m.cols() != left * right {
        return Err(Error::ShapeMismatch(format!(
            "cannot fold a {}x{} matrix into {:?} along mode {mode}",
            m.rows(),
            m.cols(),
            shape.dims()
        )));
    }
    let cols = left * right;
    let src = m.as_slice();
    let mut data = vec![0.0; shape.numel()];
    for l in 0..left {
        for j in 0..pd {
            data[(l * pd + j) * right..(l * pd + j + 1) * right]
                .copy_from_slice(&src[j * cols + l * right..j * cols + (l + 1) * right]);
        }
    }
    DenseTensor::new(shape.clone(), data)
}

/// `x ×_mode m` for a `q × p_mode` matrix `m`.
pub fn mode_product(x: &DenseTensor, m: &Matrix, mode: usize) -> Result<DenseTensor> {
    x.shape.check_mode(mode)?;
    let (left, pd, right) = x.shape.split_at(mode);
    if m.cols() != pd {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} product needs {pd} columns, matrix is {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let q = m.rows();
    let shape = x.shape.with_dim(mode, q);
    let mut data = vec![0.0; left * q * right];
    for l in 0..left {
        let xin = &x.data[l * pd * right..(l + 1) * pd * right];
        let yout = &mut data[l * q * right..(l + 1) * q * right];
        for a in 0..q {
            let yrow = &mut yout[a * right..(a + 1) * right];
            for (j, &coef) in m.row(a).iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                for (y, xv) in yrow.iter_mut().zip(&xin[j * right..(j + 1) * right]) {
                    *y += coef * xv;
                }
            }
        }
    }
    Ok(DenseTensor { shape, data })
}

/// `x ×_1 mats[0] ×_2 mats[1] ⋯`, applied in mode order.
pub fn multi_mode_product(x: &DenseTensor, mats: &[Matrix]) -> Result<DenseTensor> {
    if mats.len() != x.shape.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} matrices for a tensor of order {}",
            mats.len(),
            x.shape.order()
        )));
    }
    let mut out = x.clone();
    for (d, m) in mats.iter().enumerate() {
        out = mode_product(&out, m, d)?;
    }
    Ok(out)
}

/// Product over every mode except `skip`.
pub fn multi_mode_product_except(x: &DenseTensor, mats: &[Matrix], skip: usize) -> Result<DenseTensor> {
    let mut out = x.clone();
    for (d, m) in mats.iter().enumerate() {
        if d != skip {
            out = mode_product(&out, m, d)?;
        }
    }
    Ok(out)
}

/// Entrywise `x ⊘ y`; every divisor must be strictly positive.
pub fn elementwise_div(x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
    x.same_shape(y)?;
    if let Some((index, &value)) = y.data.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveDivisor { index, value });
    }
    x.zip_map(y, |a, b| a / b)
}

pub fn frobenius_norm(x: &DenseTensor) -> f64 {
    x.frobenius_norm()
}

pub fn sample_standard_normal(shape: &TensorShape, rng: &mut Rng) -> DenseTensor {
    let mut data = vec![0.0; shape.numel()];
    rng.fill_normal(&mut data);
    DenseTensor {
        shape: shape.clone(),
        data,
    }
}

/// `mats[0] ⊗ mats[1] ⊗ ⋯`, the matrix acting on row-major `vec`.
pub fn kron_chain(mats: &[Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty Kronecker chain".into()))?;
    Ok(rest.iter().fold(first.clone(), |acc, m| acc.kron(m)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(dims: &[usize], rng: &mut Rng) -> DenseTensor {
        sample_standard_normal(&TensorShape::new(dims.to_vec()).unwrap(), rng)
    }

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    #[test]
    fn shape_validation() {
        assert!(TensorShape::new(vec![]).is_err());
        assert!(TensorShape::new(vec![2, 0]).is_err());
        assert!(TensorShape::new(vec![usize::MAX, 2]).is_err());
        assert_eq!(TensorShape::new(vec![2, 3, 4]).unwrap().numel(), 24);
    }

    #[test]
    fn unfold_matrix_identity_case() {
        let x = DenseTensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = mode_unfold(&x, 0).unwrap();
        assert_eq!(m.as_slice(), x.data());
    }

    #[test]
    fn unfold_mode_two_matches_index_formula() {
        let mut rng = Rng::new(1);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let m = mode_unfold(&x, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 8));
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let flat = (i * 3 + j) * 4 + k;
                    assert_eq!(m[(j, i * 4 + k)], x.data()[flat]);
                }
            }
        }
    }

    #[test]
    fn fold_inverts_unfold_bitwise() {
        let mut rng = Rng::new(2);
        for case in 0..50 {
            let dims: Vec<usize> = (0..1 + case % 4).map(|_| 1 + rng.below(4)).collect();
            let x = random_tensor(&dims, &mut rng);
            for d in 0..dims.len() {
                let back = mode_fold(&mode_unfold(&x, d).unwrap(), d, x.shape()).unwrap();
                assert_eq!(back, x);
            }
        }
    }

    #[test]
    fn mode_out_of_range() {
        let x = DenseTensor::zeros(&TensorShape::new(vec![2, 2]).unwrap());
        assert!(matches!(
            mode_unfold(&x, 2),
            Err(Error::ModeOutOfRange { mode: 2, order: 2 })
        ));
        assert!(mode_product(&x, &Matrix::identity(2), 5).is_err());
    }

    #[test]
    fn mode_product_row_sum() {
        let x = DenseTensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let y = mode_product(&x, &m, 0).unwrap();
        assert_eq!(y.dims(), &[1, 2]);
        // explicit loop
        let mut expect = [0.0; 2];
        for (k, e) in expect.iter_mut().enumerate() {
            for j in 0..2 {
                *e += m[(0, j)] * x.data()[j * 2 + k];
            }
        }
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let x = DenseTensor::zeros(&TensorShape::new(vec![2, 3]).unwrap());
        assert!(matches!(
            mode_product(&x, &Matrix::zeros(2, 2), 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mode_product_matches_unfold_definition() {
        let mut rng = Rng::new(3);
        let x = random_tensor(&[3, 4, 2], &mut rng);
        let m = random_matrix(5, 4, &mut rng);
        let y = mode_product(&x, &m, 1).unwrap();
        let via = mode_fold(
            &m.matmul(&mode_unfold(&x, 1).unwrap()).unwrap(),
            1,
            &TensorShape::new(vec![3, 5, 2]).unwrap(),
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(via.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_products_are_noops() {
        let mut rng = Rng::new(4);
        let x = random_tensor(&[3, 2, 4], &mut rng);
        assert_eq!(mode_product(&x, &Matrix::identity(2), 1).unwrap(), x);
        let ids: Vec<Matrix> = x.dims().iter().map(|&d| Matrix::identity(d)).collect();
        assert_eq!(multi_mode_product(&x, &ids).unwrap(), x);
    }

    #[test]
    fn products_commute_across_modes() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let x = random_tensor(&[3, 4], &mut rng);
            let a = random_matrix(2, 3, &mut rng);
            let b = random_matrix(5, 4, &mut rng);
            let ab = mode_product(&mode_product(&x, &a, 0).unwrap(), &b, 1).unwrap();
            let ba = mode_product(&mode_product(&x, &b, 1).unwrap(), &a, 0).unwrap();
            for (u, v) in ab.data().iter().zip(ba.data()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let core = DenseTensor::from_dims(&[1, 1], vec![1.0]).unwrap();
        let u = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![-1.0], vec![0.5]]).unwrap();
        let x = multi_mode_product(&core, &[u.clone(), v.clone()]).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(x.data()[i * 2 + j], u[(i, 0)] * v[(j, 0)]);
            }
        }
    }

    #[test]
    fn vec_identity_with_explicit_kronecker() {
        let mut rng = Rng::new(6);
        for _ in 0..10 {
            let f = random_tensor(&[2, 3], &mut rng);
            let a = random_matrix(4, 2, &mut rng);
            let b = random_matrix(5, 3, &mut rng);
            let y = multi_mode_product(&f, &[a.clone(), b.clone()]).unwrap();
            let k = kron_chain(&[a, b]).unwrap();
            let v = k.matvec(f.data()).unwrap();
            for (p, q) in y.data().iter().zip(&v) {
                assert!((p - q).abs() < 1e-12 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn elementwise_division() {
        let mut rng = Rng::new(7);
        let x = random_tensor(&[3, 3], &mut rng);
        let ones = DenseTensor::filled(x.shape(), 1.0);
        assert_eq!(elementwise_div(&x, &ones).unwrap(), x);
        let y = x.map(|v| v.abs() + 0.1);
        let self_div = elementwise_div(&y, &y).unwrap();
        assert!(self_div.data().iter().all(|v| *v == 1.0));
        let back = elementwise_div(&x, &y).unwrap().mul(&y).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-14 * (1.0 + b.abs()));
        }
        let mut bad = y.clone();
        bad.data_mut()[4] = 0.0;
        assert!(matches!(
            elementwise_div(&x, &bad),
            Err(Error::NonPositiveDivisor { index: 4, .. })
        ));
        let other = DenseTensor::filled(&TensorShape::new(vec![9]).unwrap(), 1.0);
        assert!(matches!(elementwise_div(&x, &other), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn frobenius_cases() {
        let s = TensorShape::new(vec![2, 3]).unwrap();
        assert_eq!(frobenius_norm(&DenseTensor::zeros(&s)), 0.0);
        assert!((frobenius_norm(&DenseTensor::filled(&s, 1.0)) - 6f64.sqrt()).abs() < 1e-15);
        let mut rng = Rng::new(8);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        assert_eq!(mode_unfold(&x, 2).unwrap().frobenius_norm(), x.frobenius_norm());
    }

    #[test]
    fn normal_sampling_statistics() {
        let s = TensorShape::new(vec![1000, 1000]).unwrap();
        let x = sample_standard_normal(&s, &mut Rng::new(42));
        let n = x.len() as f64;
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn normal_sampling_determinism() {
        let s = TensorShape::new(vec![4, 5]).unwrap();
        let a = sample_standard_normal(&s, &mut Rng::new(9));
        let b = sample_standard_normal(&s, &mut Rng::new(9));
        let c = sample_standard_normal(&s, &mut Rng::new(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
