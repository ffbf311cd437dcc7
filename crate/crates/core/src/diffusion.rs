//! Forward Ornstein-Uhlenbeck process with unit speed and exact Gaussian
//! score oracles.
//!
//! With `v_t = 1`, `α_t = e^{-t/2}` and `h_t = 1 − α_t²`, so
//! `X_t | X_0 ~ N(α_t X_0, h_t I)`.
//!
//! For a Gaussian Tucker model `X_0 = F ×_d A_d + p^{-β/2} E` with
//! `vec F ~ N(μ_f, Σ_f)` and diagonal `Cov(vec E) = Σ_e`, the marginal of
//! `X_t` is Gaussian and its score is available three ways:
//!
//! * [`oracle_score_general`]: the subspace/complement decomposition through
//!   the `r × r` core system, valid for heterogeneous noise;
//! * [`oracle_score_gaussian_homog`]: the closed form for `Σ_e = σ² I` and
//!   diagonal `Σ_f`;
//! * [`brute_force_gaussian_score`]: a dense `p × p` solve against the
//!   assembled vectorized covariance.
//!
//! The three share no code beyond tensor primitives, so agreement between
//! them is a meaningful check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_model::{CoreLaw, FactorModelSpec, ScaleMode};
use crate::linalg::{Cholesky, StiefelFrame, TuckerBasis};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tensor::{
    elementwise_div, kron_chain, multi_mode_product, DenseTensor, TensorShape,
};

/// Largest vectorized dimension accepted by the dense oracle.
pub const BRUTE_FORCE_MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    /// Early-stopping time.
    pub t0: f64,
    /// Terminal time.
    pub t_end: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self { t0: 1e-3, t_end: 5.0 }
    }
}

impl DiffusionSchedule {
    pub fn new(t0: f64, t_end: f64) -> Result<Self> {
        if !(t0 > 0.0 && t_end > t0 && t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < t0 < T, got t0={t0}, T={t_end}"
            )));
        }
        Ok(Self { t0, t_end })
    }

    /// `(α_t, h_t)`.
    pub fn alpha_h(&self, t: f64) -> Result<(f64, f64)> {
        alpha_h(t)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.t_end;
        if !(t >= self.t0 - slack && t <= self.t_end + slack) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [{}, {}]",
                self.t0, self.t_end
            )));
        }
        Ok(())
    }
}

/// `α_t = e^{-t/2}`, `h_t = 1 − α_t²`.
pub fn alpha_h(t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
    }
    let alpha = (-0.5 * t).exp();
    // -expm1(-t) keeps h accurate for small t
    let h = -(-t).exp_m1();
    Ok((alpha, h))
}

/// Draws `X_t = α_t X_0 + √h_t Z`.
pub fn forward_sample(x0: &DenseTensor, t: f64, sched: &DiffusionSchedule, rng: &mut Rng) -> Result<DenseTensor> {
    if t > sched.t_end * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("time {t} beyond T = {}", sched.t_end)));
    }
    let (alpha, h) = alpha_h(t)?;
    let sd = h.sqrt();
    let mut out = x0.scale(alpha);
    for v in out.data_mut() {
        *v += sd * rng.normal();
    }
    Ok(out)
}

/// `∇ log Φ_t(X_t | X_0) = −(X_t − α_t X_0) / h_t`.
pub fn transition_score(xt: &DenseTensor, x0: &DenseTensor, t: f64) -> Result<DenseTensor> {
    let (alpha, h) = alpha_h(t)?;
    if h <= 0.0 {
        return Err(Error::InvalidArgument("transition score is undefined at t = 0".into()));
    }
    xt.zip_map(x0, |x, y| -(x - alpha * y) / h)
}

/// Gaussian low-rank Tucker model used as a ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    pub basis: TuckerBasis,
    /// `Σ_f`, symmetric positive definite, `r × r` in row-major `vec` order.
    pub core_cov: Matrix,
    /// `μ_f`; zero for the textbook example.
    pub core_mean: Vec<f64>,
    /// Per-entry variance of `E` (the diagonal of `Σ_e`, reshaped).
    pub noise_var: DenseTensor,
    pub betas: Vec<f64>,
}

impl GaussianModel {
    pub fn new(
        basis: TuckerBasis,
        core_cov: Matrix,
        core_mean: Vec<f64>,
        noise_var: DenseTensor,
        betas: Vec<f64>,
    ) -> Result<Self> {
        basis.check_shape(noise_var.dims())?;
        let r: usize = basis.ranks().iter().product();
        if core_cov.rows() != r || core_cov.cols() != r || core_mean.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "core moments of size {}x{} / {} for r = {r}",
                core_cov.rows(),
                core_cov.cols(),
                core_mean.len()
            )));
        }
        Cholesky::new(&core_cov.symmetrize())
            .map_err(|_| Error::InvalidArgument("core covariance must be positive definite".into()))?;
        if noise_var.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be finite and nonnegative".into()));
        }
        if betas.len() != basis.order() || betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidArgument(format!("betas {betas:?} invalid")));
        }
        Ok(Self {
            basis,
            core_cov,
            core_mean,
            noise_var,
            betas,
        })
    }

    /// Zero-mean model with diagonal core covariance.
    pub fn with_diagonal_core(
        basis: TuckerBasis,
        core_var: &[f64],
        noise_var: DenseTensor,
        betas: Vec<f64>,
    ) -> Result<Self> {
        let r = core_var.len();
        Self::new(basis, Matrix::diag(core_var), vec![0.0; r], noise_var, betas)
    }

    /// Gaussian model matching the law of data drawn from `spec` in `mode`.
    ///
    /// For raw order-2 data `R F Cᵀ + E`, write `R = A_R T_R`, `C = A_C T_C`;
    /// the model then uses frames `A_R, A_C`, `β = 0` and the folded core
    /// `T_R F T_Cᵀ`, whose moments follow from `(T_R ⊗ T_C) vec F`.
    pub fn from_factor_spec(spec: &FactorModelSpec, mode: ScaleMode) -> Result<Self> {
        let CoreLaw::GaussianDiag { mean, std } = &spec.core_law else {
            return Err(Error::InvalidArgument("only Gaussian cores have a Gaussian model".into()));
        };
        let noise_var = spec.noise_std.map(|s| s * s);
        let var: Vec<f64> = std.data().iter().map(|s| s * s).collect();
        match mode {
            ScaleMode::Normalized => Self::new(
                spec.frames.clone(),
                Matrix::diag(&var),
                mean.data().to_vec(),
                noise_var,
                spec.betas.clone(),
            ),
            ScaleMode::RawLoadings => {
                let raw = spec
                    .raw_loadings
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("spec has no raw loadings".into()))?;
                let folds: Vec<Matrix> = spec
                    .frames
                    .frames()
                    .iter()
                    .zip(raw)
                    .map(|(f, r)| f.matrix().t_matmul(r))
                    .collect::<Result<_>>()?;
                let k = kron_chain(&folds)?;
                let mean_f = k.matvec(mean.data())?;
                let cov = k.matmul(&Matrix::diag(&var))?.matmul(&k.transpose())?.symmetrize();
                Self::new(spec.frames.clone(), cov, mean_f, noise_var, vec![0.0; spec.betas.len()])
            }
        }
    }

    pub fn shape(&self) -> &TensorShape {
        self.noise_var.shape()
    }

    pub fn rank(&self) -> usize {
        self.core_mean.len()
    }

    pub fn core_shape(&self) -> TensorShape {
        TensorShape::new(self.basis.ranks()).expect("ranks are positive")
    }

    /// `p^{-β} = Π_d p_d^{-β_d}`
    pub fn p_neg_beta(&self) -> f64 {
        p_neg_beta(self.shape().dims(), &self.betas)
    }

    /// `Σ_t^Tucker`: entries `h_t + α_t² p^{-β} σ²_entry`.
    pub fn sigma_t_tucker(&self, t: f64) -> Result<DenseTensor> {
        let (alpha, h) = alpha_h(t)?;
        let c = alpha * alpha * self.p_neg_beta();
        Ok(self.noise_var.map(|v| h + c * v))
    }

    pub fn is_homogeneous(&self) -> bool {
        let d = self.noise_var.data();
        let first = d[0];
        d.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs().max(1e-300))
    }

    /// Dense `p × p` covariance of `vec X_t`.
    pub fn marginal_covariance(&self, t: f64) -> Result<Matrix> {
        let p = self.shape().numel();
        if p > BRUTE_FORCE_MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dense covariance of dimension {p} exceeds {BRUTE_FORCE_MAX_DIM}"
            )));
        }
        let (alpha, h) = alpha_h(t)?;
        let a = kron_chain(&self.basis.matrices())?;
        let signal = a.matmul(&self.core_cov)?.matmul(&a.transpose())?;
        let c = self.p_neg_beta();
        let mut cov = signal.scale(alpha * alpha);
        for (i, v) in self.noise_var.data().iter().enumerate() {
            cov[(i, i)] += alpha * alpha * c * v + h;
        }
        Ok(cov.symmetrize())
    }

    /// `vec E[X_t] = α_t A μ_f`.
    pub fn marginal_mean(&self, t: f64) -> Result<DenseTensor> {
        let (alpha, _) = alpha_h(t)?;
        let core = DenseTensor::new(self.core_shape(), self.core_mean.clone())?;
        Ok(self.basis.decode(&core)?.scale(alpha))
    }

    /// Draw from the data law at time 0.
    pub fn sample(&self, rng: &mut Rng) -> Result<DenseTensor> {
        let ch = Cholesky::new(&self.core_cov.symmetrize())?;
        let z: Vec<f64> = (0..self.rank()).map(|_| rng.normal()).collect();
        let l = ch.factor();
        let f: Vec<f64> = (0..self.rank())
            .map(|i| self.core_mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
            .collect();
        let mut x = self.basis.decode(&DenseTensor::new(self.core_shape(), f)?)?;
        let s = self.p_neg_beta().sqrt();
        for (v, var) in x.data_mut().iter_mut().zip(self.noise_var.data()) {
            *v += s * var.sqrt() * rng.normal();
        }
        Ok(x)
    }

    pub fn to_file(&self) -> GaussianModelFile {
        GaussianModelFile {
            dims: self.shape().dims().to_vec(),
            ranks: self.basis.ranks(),
            frames: self.basis.frames().iter().map(|f| f.matrix().as_slice().to_vec()).collect(),
            core_cov: self.core_cov.as_slice().to_vec(),
            core_mean: self.core_mean.clone(),
            noise_var: self.noise_var.data().to_vec(),
            betas: self.betas.clone(),
        }
    }

    pub fn from_file(f: &GaussianModelFile) -> Result<Self> {
        if f.dims.len() != f.ranks.len() || f.frames.len() != f.dims.len() {
            return Err(Error::InvalidArgument("inconsistent Gaussian model file".into()));
        }
        let frames = f
            .frames
            .iter()
            .enumerate()
            .map(|(d, v)| StiefelFrame::new(Matrix::from_vec(f.dims[d], f.ranks[d], v.clone())?, d))
            .collect::<Result<Vec<_>>>()?;
        let r: usize = f.ranks.iter().product();
        Self::new(
            TuckerBasis::new(frames)?,
            Matrix::from_vec(r, r, f.core_cov.clone())?,
            f.core_mean.clone(),
            DenseTensor::from_dims(&f.dims, f.noise_var.clone())?,
            f.betas.clone(),
        )
    }
}

/// JSON form of a [`GaussianModel`]; matrices are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModelFile {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub frames: Vec<Vec<f64>>,
    pub core_cov: Vec<f64>,
    pub core_mean: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub betas: Vec<f64>,
}

pub(crate) fn p_neg_beta(dims: &[usize], betas: &[f64]) -> f64 {
    dims.iter()
        .zip(betas)
        .map(|(&p, b)| (p as f64).powf(-b))
        .product()
}

/// `Uᵀ diag(vec w) U` for `U = U_1 ⊗ ⋯ ⊗ U_D`, computed through mode
/// products with the per-mode pair matrices `K_d[(a,b), j] = U_d[j,a] U_d[j,b]`
/// so the `p × r` Kronecker matrix is never formed.
pub fn weighted_kron_gram(w: &DenseTensor, frames: &[Matrix]) -> Result<Matrix> {
    let pair_mats: Vec<Matrix> = frames.iter().map(pair_matrix).collect();
    let t = multi_mode_product(w, &pair_mats)?;
    let ranks: Vec<usize> = frames.iter().map(Matrix::cols).collect();
    Ok(pairs_to_matrix(&t, &ranks))
}

/// `K[(a,b), j] = U[j,a] U[j,b]`, shape `r² × p`.
pub(crate) fn pair_matrix(u: &Matrix) -> Matrix {
    let r = u.cols();
    Matrix::from_fn(r * r, u.rows(), |ab, j| u[(j, ab / r)] * u[(j, ab % r)])
}

/// Reorders a tensor indexed by `((a_1,b_1), …, (a_D,b_D))` into the
/// `r × r` matrix indexed by `((a_1…a_D), (b_1…b_D))`.
pub(crate) fn pairs_to_matrix(t: &DenseTensor, ranks: &[usize]) -> Matrix {
    let r: usize = ranks.iter().product();
    let mut m = Matrix::zeros(r, r);
    for (flat, v) in t.data().iter().enumerate() {
        let (a, b) = pair_index(flat, ranks);
        m[(a, b)] = *v;
    }
    m
}

/// Inverse of [`pairs_to_matrix`].
pub(crate) fn matrix_to_pairs(m: &Matrix, ranks: &[usize]) -> DenseTensor {
    let dims: Vec<usize> = ranks.iter().map(|r| r * r).collect();
    let shape = TensorShape::new(dims).expect("positive ranks");
    let mut data = vec![0.0; shape.numel()];
    for (flat, v) in data.iter_mut().enumerate() {
        let (a, b) = pair_index(flat, ranks);
        *v = m[(a, b)];
    }
    DenseTensor::new(shape, data).expect("sized")
}

fn pair_index(mut flat: usize, ranks: &[usize]) -> (usize, usize) {
    let mut a = 0;
    let mut b = 0;
    let mut stride = 1;
    for &r in ranks.iter().rev() {
        let ab = flat % (r * r);
        flat /= r * r;
        a += (ab / r) * stride;
        b += (ab % r) * stride;
        stride *= r;
    }
    (a, b)
}

/// Per-time quantities of the decomposition, reusable across inputs.
#[derive(Clone, Debug)]
pub struct GaussianScoreAt {
    alpha: f64,
    sigma_t: DenseTensor,
    /// Factor of `A_t = Aᵀ Σ_t⁻¹ A`, so `Σ_{A_t} = A_t⁻¹`.
    precision: Cholesky,
    /// Factor of `Σ_{A_t} + α_t² Σ_f`.
    core_marginal: Cholesky,
}

/// The two terms of the decomposition for one input.
#[derive(Clone, Debug)]
pub struct ScoreTerms {
    pub g: Vec<f64>,
    pub subspace: DenseTensor,
    pub complement: DenseTensor,
}

impl ScoreTerms {
    pub fn total(&self) -> Result<DenseTensor> {
        self.subspace.sub(&self.complement)
    }
}

impl GaussianModel {
    pub fn score_at(&self, t: f64) -> Result<GaussianScoreAt> {
        let (alpha, _) = alpha_h(t)?;
        let sigma_t = self.sigma_t_tucker(t)?;
        let inv = sigma_t.map(|v| 1.0 / v);
        if let Some(v) = sigma_t.data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveDivisor { index: 0, value: *v });
        }
        let m = weighted_kron_gram(&inv, &self.basis.matrices())?.symmetrize();
        let precision = Cholesky::new(&m)?;
        let sigma_a = precision.inverse();
        let core_marginal = Cholesky::new(&sigma_a.add(&self.core_cov.scale(alpha * alpha))?.symmetrize())?;
        Ok(GaussianScoreAt {
            alpha,
            sigma_t,
            precision,
            core_marginal,
        })
    }
}

impl GaussianScoreAt {
    /// `g_t = Σ_{A_t} vec((X_t ⊘ Σ_t^Tucker) ×_d A_dᵀ)`.
    pub fn encode(&self, m: &GaussianModel, xt: &DenseTensor) -> Result<Vec<f64>> {
        let z = elementwise_div(xt, &self.sigma_t)?;
        let g0 = m.basis.encode(&z)?;
        Ok(self.precision.solve(g0.data()))
    }

    /// `∇ log p_core^t(g) = −(Σ_{A_t} + α_t² Σ_f)⁻¹ (g − α_t μ_f)`.
    pub fn core_score(&self, m: &GaussianModel, g: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = g
            .iter()
            .zip(&m.core_mean)
            .map(|(a, mu)| a - self.alpha * mu)
            .collect();
        self.core_marginal.solve(&centered).into_iter().map(|v| -v).collect()
    }

    /// `ξ(g, t) = Σ_{A_t} ∇ log p_core^t(g) + g`.
    pub fn xi(&self, m: &GaussianModel, g: &[f64]) -> Vec<f64> {
        let s = self.core_score(m, g);
        let sigma_a_s = self.precision.solve(&s);
        sigma_a_s.iter().zip(g).map(|(a, b)| a + b).collect()
    }

    pub fn terms(&self, m: &GaussianModel, xt: &DenseTensor) -> Result<ScoreTerms> {
        let g = self.encode(m, xt)?;
        let s = self.core_score(m, &g);
        let sub_core = self.precision.solve(&s);
        let core_shape = m.core_shape();
        let subspace = elementwise_div(
            &m.basis.decode(&DenseTensor::new(core_shape.clone(), sub_core)?)?,
            &self.sigma_t,
        )?;
        let recon = m.basis.decode(&DenseTensor::new(core_shape, g.clone())?)?;
        let complement = elementwise_div(&xt.sub(&recon)?, &self.sigma_t)?;
        Ok(ScoreTerms {
            g,
            subspace,
            complement,
        })
    }

    pub fn score(&self, m: &GaussianModel, xt: &DenseTensor) -> Result<DenseTensor> {
        self.terms(m, xt)?.total()
    }

    pub fn sigma_t(&self) -> &DenseTensor {
        &self.sigma_t
    }
}

/// Score of a Gaussian Tucker model through the subspace/complement split.
pub fn oracle_score_general(
    m: &GaussianModel,
    xt: &DenseTensor,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<DenseTensor> {
    sched.check_time(t)?;
    m.score_at(t)?.score(m, xt)
}

/// Closed-form score for homogeneous noise and a zero-mean diagonal core.
pub fn oracle_score_gaussian_homog(
    m: &GaussianModel,
    xt: &DenseTensor,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<DenseTensor> {
    sched.check_time(t)?;
    if !m.is_homogeneous() {
        return Err(Error::InvalidArgument("homogeneous oracle given heterogeneous noise".into()));
    }
    let r = m.rank();
    let diagonal = (0..r).all(|i| (0..r).all(|j| i == j || m.core_cov[(i, j)] == 0.0));
    if !diagonal || m.core_mean.iter().any(|v| *v != 0.0) {
        return Err(Error::InvalidArgument(
            "homogeneous oracle needs a zero-mean diagonal core".into(),
        ));
    }
    let (alpha, h) = alpha_h(t)?;
    let sigma2 = m.noise_var.data()[0];
    let c = h + sigma2 * alpha * alpha * m.p_neg_beta();
    let frames = m.basis.matrices();
    let proj = m.basis.encode(xt)?;
    let mut scaled = proj.clone();
    for (k, v) in scaled.data_mut().iter_mut().enumerate() {
        *v /= c + alpha * alpha * m.core_cov[(k, k)];
    }
    let subspace = multi_mode_product(&scaled, &frames)?;
    let in_span = multi_mode_product(&proj, &frames)?;
    let complement = xt.sub(&in_span)?.scale(1.0 / c);
    subspace.scale(-1.0).sub(&complement)
}

/// `−Σ_full⁻¹ (vec X_t − α_t A μ_f)` with the covariance assembled densely.
pub fn brute_force_gaussian_score(
    m: &GaussianModel,
    xt: &DenseTensor,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<DenseTensor> {
    sched.check_time(t)?;
    let cov = m.marginal_covariance(t)?;
    let ch = Cholesky::new(&cov)?;
    let mean = m.marginal_mean(t)?;
    let centered = xt.sub(&mean)?;
    let sol = ch.solve(centered.data());
    DenseTensor::new(xt.shape().clone(), sol.into_iter().map(|v| -v).collect())
}

/// Exact log-density of `X_t` for a Gaussian model.
pub fn gaussian_log_density(m: &GaussianModel, xt: &DenseTensor, t: f64) -> Result<f64> {
    let cov = m.marginal_covariance(t)?;
    let ch = Cholesky::new(&cov)?;
    let centered = xt.sub(&m.marginal_mean(t)?)?;
    let sol = ch.solve(centered.data());
    let quad: f64 = sol.iter().zip(centered.data()).map(|(a, b)| a * b).sum();
    let p = centered.len() as f64;
    Ok(-0.5 * quad - 0.5 * ch.log_det() - 0.5 * p * (2.0 * std::f64::consts::PI).ln())
}

/// Ground-truth core function `ξ(g, t)` for a Gaussian model.
pub fn core_function_xi(m: &GaussianModel, g: &[f64], t: f64, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    sched.check_time(t)?;
    if g.len() != m.rank() {
        return Err(Error::ShapeMismatch(format!("g of length {} for r = {}", g.len(), m.rank())));
    }
    Ok(m.score_at(t)?.xi(m, g))
}
