//! Orthonormal frames, small dense factorizations, HOSVD/HOOI subspace
//! estimation and the scaled projection metric.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor::{mode_unfold, multi_mode_product, multi_mode_product_except, DenseTensor};

/// Tolerance for the Stiefel invariant `‖UᵀU − I‖_F`.
pub const STIEFEL_TOL: f64 = 1e-10;

/// Samples per partial sum in chunked reductions. Fixed so results do not
/// depend on the worker count.
pub(crate) const REDUCE_CHUNK: usize = 32;

/// Sum of `f(item)` over `items`, computed in fixed-size chunks that may run
/// in parallel and are then added in chunk order.
pub(crate) fn chunked_matrix_sum<T: Sync>(
    items: &[T],
    rows: usize,
    cols: usize,
    f: impl Fn(&T, &mut Matrix) + Sync,
) -> Matrix {
    let partials: Vec<Matrix> = items
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = Matrix::zeros(rows, cols);
            for item in chunk {
                f(item, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = Matrix::zeros(rows, cols);
    for p in &partials {
        for (t, v) in total.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *t += v;
        }
    }
    total
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the second element.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let mut m = a.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Leading `k` eigenvectors of a symmetric matrix as a `n × k` matrix.
pub fn top_eigenvectors(a: &Matrix, k: usize) -> Result<Matrix> {
    let (_, vecs) = symmetric_eigen(a)?;
    Ok(Matrix::from_fn(a.rows(), k, |i, j| vecs[(i, j)]))
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::ShapeMismatch("Cholesky of a non-square matrix".into()));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!("pivot {j} is {d:e}")));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    pub fn log_det(&self) -> f64 {
        (0..self.l.rows()).map(|i| 2.0 * self.l[(i, i)].ln()).sum()
    }
}

/// `p × r` matrix with orthonormal columns, tagged with its mode.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelFrame {
    matrix: Matrix,
    mode: usize,
}

impl StiefelFrame {
    /// Wraps `matrix` after checking `‖UᵀU − I‖_F ≤ STIEFEL_TOL`.
    pub fn new(matrix: Matrix, mode: usize) -> Result<Self> {
        if matrix.cols() > matrix.rows() || matrix.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame of shape {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let err = orthonormality_error(&matrix);
        if !(err <= STIEFEL_TOL) {
            return Err(Error::InvalidArgument(format!(
                "columns not orthonormal (error {err:e})"
            )));
        }
        Ok(Self { matrix, mode })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.cols()
    }

    pub fn projector(&self) -> Matrix {
        self.matrix.gram_rows()
    }
}

pub fn orthonormality_error(m: &Matrix) -> f64 {
    let g = m.t_matmul(m).expect("square gram");
    g.sub(&Matrix::identity(m.cols())).expect("same shape").frobenius_norm()
}

/// One orthonormal frame per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerBasis {
    frames: Vec<StiefelFrame>,
}

impl TuckerBasis {
    pub fn new(frames: Vec<StiefelFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("basis needs at least one frame".into()));
        }
        for (d, f) in frames.iter().enumerate() {
            if f.mode != d {
                return Err(Error::InvalidArgument(format!(
                    "frame {d} is tagged with mode {}",
                    f.mode
                )));
            }
        }
        Ok(Self { frames })
    }

    /// Orthonormalizes each matrix and wraps the result.
    pub fn from_matrices(mats: Vec<Matrix>) -> Result<Self> {
        let frames = mats
            .into_iter()
            .enumerate()
            .map(|(d, m)| qr_orthonormalize(&m, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn frames(&self) -> &[StiefelFrame] {
        &self.frames
    }

    pub fn frame(&self, d: usize) -> &StiefelFrame {
        &self.frames[d]
    }

    pub fn order(&self) -> usize {
        self.frames.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.frames.iter().map(StiefelFrame::rank).collect()
    }

    pub fn ambient_dims(&self) -> Vec<usize> {
        self.frames.iter().map(StiefelFrame::ambient_dim).collect()
    }

    pub fn matrices(&self) -> Vec<Matrix> {
        self.frames.iter().map(|f| f.matrix.clone()).collect()
    }

    pub fn transposes(&self) -> Vec<Matrix> {
        self.frames.iter().map(|f| f.matrix.transpose()).collect()
    }

    /// `x ×_d U_dᵀ` over every mode.
    pub fn encode(&self, x: &DenseTensor) -> Result<DenseTensor> {
        multi_mode_product(x, &self.transposes())
    }

    /// `g ×_d U_d` over every mode.
    pub fn decode(&self, g: &DenseTensor) -> Result<DenseTensor> {
        multi_mode_product(g, &self.matrices())
    }

    pub fn check_shape(&self, dims: &[usize]) -> Result<()> {
        if self.ambient_dims() != dims {
            return Err(Error::ShapeMismatch(format!(
                "basis for {:?} applied to {:?}",
                self.ambient_dims(),
                dims
            )));
        }
        Ok(())
    }
}

/// Orthonormal basis for the column span of `m` via twice-iterated modified
/// Gram-Schmidt. The triangular factor has a positive diagonal, so an input
/// that is already orthonormal comes back unchanged up to rounding.
pub fn qr_orthonormalize(m: &Matrix, mode: usize) -> Result<StiefelFrame> {
    let (p, r) = (m.rows(), m.cols());
    if r == 0 || r > p {
        return Err(Error::RankDeficient(format!("{p}x{r} matrix cannot have full column rank")));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("orthonormalization input".into()));
    }
    let mut cols: Vec<Vec<f64>> = (0..r).map(|j| m.column(j)).collect();
    for j in 0..r {
        let orig = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[k].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                let (done, cur) = cols.split_at_mut(j);
                for (c, q) in cur[0].iter_mut().zip(&done[k]) {
                    *c -= dot * q;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * orig.max(f64::MIN_POSITIVE)) || norm == 0.0 {
            return Err(Error::RankDeficient(format!("column {j} is dependent on earlier columns")));
        }
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let out = Matrix::from_fn(p, r, |i, j| cols[j][i]);
    StiefelFrame::new(out, mode)
}

/// QR retraction onto the Stiefel manifold.
pub fn retract_to_stiefel(m: &Matrix, mode: usize) -> Result<StiefelFrame> {
    qr_orthonormalize(m, mode)
}

/// `(2r)^{-1/2} ‖UUᵀ − VVᵀ‖_F`: 0 for equal spans, 1 for orthogonal spans.
pub fn projection_metric(u: &StiefelFrame, v: &StiefelFrame) -> Result<f64> {
    if u.ambient_dim() != v.ambient_dim() || u.rank() != v.rank() {
        return Err(Error::ShapeMismatch(format!(
            "frames {}x{} and {}x{}",
            u.ambient_dim(),
            u.rank(),
            v.ambient_dim(),
            v.rank()
        )));
    }
    let diff = u.projector().sub(&v.projector())?;
    Ok(diff.frobenius_norm() / (2.0 * u.rank() as f64).sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct HooiOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HooiReport {
    pub basis: TuckerBasis,
    pub iterations: usize,
    /// Explained energy `Σ_i ‖X_i ×_d U_dᵀ‖²` at the HOSVD start and after each sweep.
    pub energy: Vec<f64>,
    /// Largest per-mode projection-metric change in each sweep.
    pub changes: Vec<f64>,
}

fn check_hooi_inputs(samples: &[DenseTensor], ranks: &[usize]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("HOOI on an empty dataset".into()))?;
    let dims = first.dims();
    if ranks.len() != dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks for a tensor of order {}",
            ranks.len(),
            dims.len()
        )));
    }
    for (d, (&r, &p)) in ranks.iter().zip(dims).enumerate() {
        if r == 0 || r > p {
            return Err(Error::InvalidArgument(format!(
                "rank {r} for mode {d} of dimension {p}"
            )));
        }
    }
    if samples.iter().any(|s| s.dims() != dims) {
        return Err(Error::ShapeMismatch("samples of differing shapes".into()));
    }
    Ok(())
}

fn mode_second_moment(samples: &[DenseTensor], mode: usize, proj: Option<(&[Matrix], usize)>) -> Result<Matrix> {
    let pd = samples[0].dims()[mode];
    let failed = std::sync::Mutex::new(None);
    let gram = chunked_matrix_sum(samples, pd, pd, |x, acc| {
        let y = match proj {
            Some((mats, skip)) => match multi_mode_product_except(x, mats, skip) {
                Ok(y) => y,
                Err(e) => {
                    *failed.lock().unwrap() = Some(e);
                    return;
                }
            },
            None => x.clone(),
        };
        let unf = mode_unfold(&y, mode).expect("mode checked");
        let g = unf.gram_rows();
        for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += b;
        }
    });
    if let Some(e) = failed.into_inner().unwrap() {
        return Err(e);
    }
    Ok(gram)
}

fn explained_energy(samples: &[DenseTensor], basis: &TuckerBasis) -> Result<f64> {
    let t = basis.transposes();
    let mut total = 0.0;
    for x in samples {
        total += multi_mode_product(x, &t)?.norm_sq();
    }
    Ok(total)
}

/// Per-mode leading eigenvectors of the pooled unprojected second moments.
pub fn hosvd(samples: &[DenseTensor], ranks: &[usize]) -> Result<TuckerBasis> {
    check_hooi_inputs(samples, ranks)?;
    let frames = (0..ranks.len())
        .map(|d| {
            let g = mode_second_moment(samples, d, None)?;
            qr_orthonormalize(&top_eigenvectors(&g, ranks[d])?, d)
        })
        .collect::<Result<Vec<_>>>()?;
    TuckerBasis::new(frames)
}

/// Higher-order orthogonal iteration started from HOSVD.
pub fn hooi(samples: &[DenseTensor], ranks: &[usize], opts: HooiOptions) -> Result<TuckerBasis> {
    Ok(hooi_with_report(samples, ranks, opts)?.basis)
}

pub fn hooi_with_report(samples: &[DenseTensor], ranks: &[usize], opts: HooiOptions) -> Result<HooiReport> {
    let mut basis = hosvd(samples, ranks)?;
    let mut energy = vec![explained_energy(samples, &basis)?];
    let mut changes = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let previous = basis.clone();
        let mut frames = basis.frames.clone();
        for d in 0..ranks.len() {
            let t: Vec<Matrix> = frames.iter().map(|f| f.matrix.transpose()).collect();
            let g = mode_second_moment(samples, d, Some((&t, d)))?;
            frames[d] = qr_orthonormalize(&top_eigenvectors(&g, ranks[d])?, d)?;
        }
        basis = TuckerBasis::new(frames)?;
        energy.push(explained_energy(samples, &basis)?);
        let change = previous
            .frames
            .iter()
            .zip(&basis.frames)
            .map(|(a, b)| projection_metric(a, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        changes.push(change);
        log::debug!("hooi sweep {iterations}: change {change:.3e}");
        if change < opts.tol {
            break;
        }
    }
    Ok(HooiReport {
        basis,
        iterations,
        energy,
        changes,
    })
}
