//! Evaluation metrics: projection distance between frames, core Fréchet
//! distance, test reconstruction error and top-k overlap.

use crate::error::{Error, Result};
use crate::factor_model::Dataset;
use crate::io::{MetricRecord, MetricValue};
use crate::linalg::{hooi, projection_metric, symmetric_eigen, HooiOptions, TuckerBasis};
use crate::matrix::Matrix;

/// `vec(X ×_d U_dᵀ)` for every sample.
pub fn project_cores(data: &Dataset, basis: &TuckerBasis) -> Result<Vec<Vec<f64>>> {
    basis.check_shape(data.shape().dims())?;
    data.samples()
        .iter()
        .map(|x| Ok(basis.encode(x)?.into_data()))
        .collect()
}

/// Mean and unbiased covariance of a set of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl MomentSummary {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let r = mean.len();
        if cov.rows() != r || cov.cols() != r {
            return Err(Error::ShapeMismatch(format!(
                "covariance {}x{} for mean of length {r}",
                cov.rows(),
                cov.cols()
            )));
        }
        let asym = cov.sub(&cov.transpose())?.frobenius_norm();
        if asym > 1e-10 * cov.frobenius_norm().max(1.0) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_vectors(vs: &[Vec<f64>]) -> Result<Self> {
        if vs.len() < 2 {
            return Err(Error::InvalidArgument("need at least two vectors for a covariance".into()));
        }
        let r = vs[0].len();
        if vs.iter().any(|v| v.len() != r) {
            return Err(Error::ShapeMismatch("vectors of unequal length".into()));
        }
        let n = vs.len() as f64;
        let mut mean = vec![0.0; r];
        for v in vs {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = Matrix::zeros(r, r);
        for v in vs {
            for i in 0..r {
                let di = v[i] - mean[i];
                for j in 0..r {
                    cov[(i, j)] += di * (v[j] - mean[j]);
                }
            }
        }
        Self::new(mean, cov.scale(1.0 / (n - 1.0)).symmetrize())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `V diag(f(λ)) Vᵀ` for symmetric `a`, with eigenvalues clamped at 0.
fn psd_apply(a: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let (vals, vecs) = symmetric_eigen(&a.symmetrize())?;
    let n = vals.len();
    let fv: Vec<f64> = vals.iter().map(|v| f(v.max(0.0))).collect();
    Ok(Matrix::from_fn(n, n, |i, j| (0..n).map(|k| vecs[(i, k)] * fv[k] * vecs[(j, k)]).sum()))
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
pub fn core_frechet_distance(a: &MomentSummary, b: &MomentSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("CFD between dimensions {} and {}", a.dim(), b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = psd_apply(&a.cov, f64::sqrt)?;
    let inner = sa.matmul(&b.cov)?.matmul(&sa)?;
    let (vals, _) = symmetric_eigen(&inner.symmetrize())?;
    let cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// `Σ‖X − X̂‖_F² / Σ‖X‖_F²` with `X̂ = (X ×_d U_dᵀ) ×_d U_d`.
pub fn reconstruction_error(test: &Dataset, basis: &TuckerBasis) -> Result<f64> {
    basis.check_shape(test.shape().dims())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for x in test.samples() {
        let recon = basis.decode(&basis.encode(x)?)?;
        num += x.sub(&recon)?.norm_sq();
        den += x.norm_sq();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("test data are identically zero".into()));
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Number of shared indices among the `k` largest entries of `a` and `b`;
/// ties go to the lower index.
pub fn topk_overlap(a: &[f64], b: &[f64], k: usize) -> Result<usize> {
    if a.len() != b.len() || k > a.len() {
        return Err(Error::InvalidArgument(format!(
            "top-{k} overlap of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let top = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
        idx.truncate(k);
        idx
    };
    let ta = top(a);
    let tb = top(b);
    Ok(ta.iter().filter(|i| tb.contains(i)).count())
}

/// Inputs to [`evaluate_generation`].
pub struct EvalInputs<'a> {
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub generated: &'a Dataset,
    pub truth: Option<&'a TuckerBasis>,
    pub ranks: &'a [usize],
}

fn num(name: impl Into<String>, v: f64) -> (String, MetricValue) {
    (name.into(), MetricValue::Num(v))
}

/// Computes every metric the inputs allow.
///
/// * with a ground-truth basis: `D_mode<d>` between HOOI on the generated
///   set and the truth, their mean `D_mean`, and `CFD` between train and
///   generated cores projected on the truth;
/// * always: `CFD_train`, train versus generated cores under HOOI(train);
/// * with a test set: `RE_test` under HOOI(generated) and `CFD_test`,
///   test versus generated cores under HOOI(train).
pub fn evaluate_generation(inp: &EvalInputs<'_>) -> Result<MetricRecord> {
    let shape = inp.train.shape();
    for d in [Some(inp.generated), inp.test].into_iter().flatten() {
        if d.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "dataset shape {:?} differs from train {:?}",
                d.shape().dims(),
                shape.dims()
            )));
        }
    }
    let opts = HooiOptions::default();
    let gen_basis = hooi(inp.generated.samples(), inp.ranks, opts)?;
    let train_basis = hooi(inp.train.samples(), inp.ranks, opts)?;
    let gen_cores_train = MomentSummary::from_vectors(&project_cores(inp.generated, &train_basis)?)?;
    let mut rec = MetricRecord::new();
    if let Some(truth) = inp.truth {
        truth.check_shape(shape.dims())?;
        let mut total = 0.0;
        for d in 0..truth.order() {
            let v = projection_metric(gen_basis.frame(d), truth.frame(d))?;
            total += v;
            rec.push(num(format!("D_mode{d}"), v));
        }
        rec.push(num("D_mean", total / truth.order() as f64));
        let a = MomentSummary::from_vectors(&project_cores(inp.train, truth)?)?;
        let b = MomentSummary::from_vectors(&project_cores(inp.generated, truth)?)?;
        rec.push(num("CFD", core_frechet_distance(&a, &b)?));
    }
    let train_cores = MomentSummary::from_vectors(&project_cores(inp.train, &train_basis)?)?;
    rec.push(num("CFD_train", core_frechet_distance(&train_cores, &gen_cores_train)?));
    if let Some(test) = inp.test {
        rec.push(num("RE_test", reconstruction_error(test, &gen_basis)?));
        let test_cores = MomentSummary::from_vectors(&project_cores(test, &train_basis)?)?;
        rec.push(num("CFD_test", core_frechet_distance(&test_cores, &gen_cores_train)?));
    }
    Ok(rec)
}
