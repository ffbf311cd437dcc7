//! Tucker-structured score network.
//!
//! For input `X_t` at time `t` the network computes
//!
//! ```text
//! Ω  = h_t + α_t² p^{-β} (ω_1 ⊗ ⋯ ⊗ ω_D)        heterogeneity on
//! Ω  = h_t + α_t² p^{-β} ω                       heterogeneity off
//! Z  = X_t ⊘ Ω
//! g  = (Uᵀ Ω⁻¹ U)⁻¹ vec(Z ×_d U_dᵀ)
//! S  = (ζ_θ(g, t) ×_d U_d − X_t) ⊘ Ω
//! ```
//!
//! With heterogeneity off the `r × r` system is replaced by the scalar `Ω`,
//! its value whenever the frames are orthonormal. Gradients with respect to
//! the core MLP, the ambient frames and `ω` are derived by hand; the
//! `r × r` Gram matrix is differentiated through the pair-matrix form used
//! by [`crate::diffusion::weighted_kron_gram`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    alpha_h, matrix_to_pairs, p_neg_beta, pair_matrix, pairs_to_matrix, DiffusionSchedule, GaussianModel,
};
use crate::error::{Error, Result};
use crate::factor_model::Dataset;
use crate::linalg::{hooi, qr_orthonormalize, Cholesky, HooiOptions, StiefelFrame, TuckerBasis};
use crate::matrix::Matrix;
use crate::nn::{load_checkpoint, mlp_backward, mlp_forward, save_checkpoint, Mlp, MlpSpec, MlpTape, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{
    elementwise_div, mode_unfold, multi_mode_product, multi_mode_product_except, DenseTensor, TensorShape,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Random orthonormal frames, trained.
    Cold,
    /// HOOI frames from the training data, trained.
    Warm,
    /// HOOI frames, frozen.
    Fixed,
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Self::Cold),
            "warm" => Ok(Self::Warm),
            "fixed" => Ok(Self::Fixed),
            _ => Err(Error::Config(format!("unknown init mode {s:?}"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cold => "cold",
            Self::Warm => "warm",
            Self::Fixed => "fixed",
        })
    }
}

/// Settings that determine the network's architecture and initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub betas: Vec<f64>,
    pub sched: DiffusionSchedule,
    pub mode: InitMode,
    pub heterogeneity: bool,
    /// Upper clamp for ω; defaults to four times the per-entry data variance.
    pub sigma_max2: Option<f64>,
    /// Constant initial ω; defaults to the HOOI residual variance.
    pub omega_init: Option<f64>,
    /// Hidden widths of the core MLP; defaults to four layers of `max(128, 8r)`.
    pub hidden: Option<Vec<usize>>,
}

impl NetConfig {
    pub fn new(dims: Vec<usize>, ranks: Vec<usize>, mode: InitMode) -> Self {
        let betas = vec![0.0; dims.len()];
        Self {
            dims,
            ranks,
            betas,
            sched: DiffusionSchedule::default(),
            mode,
            heterogeneity: true,
            sigma_max2: None,
            omega_init: None,
            hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims.len();
        if d == 0 || self.ranks.len() != d || self.betas.len() != d {
            return Err(Error::InvalidArgument("dims, ranks and betas must have equal nonzero length".into()));
        }
        for (p, r) in self.dims.iter().zip(&self.ranks) {
            if *r == 0 || r > p {
                return Err(Error::InvalidArgument(format!("rank {r} invalid for dimension {p}")));
            }
        }
        if let Some(s) = self.sigma_max2 {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("sigma_max2 must be positive".into()));
            }
        }
        DiffusionSchedule::new(self.sched.t0, self.sched.t_end)?;
        Ok(())
    }

    pub fn core_rank(&self) -> usize {
        self.ranks.iter().product()
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        let r = self.core_rank();
        let hidden = self.hidden.clone().unwrap_or_else(|| vec![128.max(8 * r); 4]);
        MlpSpec::new(r + 1, r, hidden)
    }
}

/// Closed-form core function `(g, t) ↦ ζ`.
pub type AnalyticCore = Arc<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum CoreFunction {
    Net(Mlp),
    Analytic(AnalyticCore),
}

impl fmt::Debug for CoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Net(m) => f.debug_tuple("Net").field(&m.spec).finish(),
            Self::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuckerScoreNet {
    pub store: ParamStore,
    pub config: NetConfig,
    sigma_max2: f64,
    frame_ids: Vec<ParamId>,
    omega_ids: Vec<ParamId>,
    core: CoreFunction,
}

/// Per-sample intermediates of a forward pass.
#[derive(Clone, Debug)]
struct SampleTape {
    t: f64,
    c: f64,
    omega: DenseTensor,
    z: DenseTensor,
    /// `vec(Z ×_d U_dᵀ)`
    b: Vec<f64>,
    g: Vec<f64>,
    /// Factor of `Uᵀ Ω⁻¹ U` (heterogeneous mode only).
    gram: Option<Cholesky>,
    zeta: Vec<f64>,
    score: DenseTensor,
}

#[derive(Clone, Debug)]
pub struct NetTape {
    version: u64,
    samples: Vec<SampleTape>,
    mlp: Option<MlpTape>,
}

/// Outer product `v_1 ⊗ ⋯ ⊗ v_D` as a row-major tensor.
fn outer(vectors: &[&[f64]]) -> DenseTensor {
    let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let mut data = vec![1.0];
    for v in vectors {
        data = data.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    DenseTensor::from_dims(&dims, data).expect("sizes agree")
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

impl TuckerScoreNet {
    fn assemble(
        config: NetConfig,
        sigma_max2: f64,
        frames: Vec<Matrix>,
        omega: Vec<Vec<f64>>,
        rng: Option<&mut Rng>,
        core: Option<AnalyticCore>,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let trainable_frames = config.mode != InitMode::Fixed;
        let frame_ids = frames
            .into_iter()
            .enumerate()
            .map(|(d, u)| store.add(&format!("frame.{d}"), vec![u.rows(), u.cols()], u.into_vec(), trainable_frames))
            .collect::<Result<Vec<_>>>()?;
        let omega_ids = if config.heterogeneity {
            omega
                .into_iter()
                .enumerate()
                .map(|(d, w)| store.add(&format!("omega.{d}"), vec![w.len()], w, true))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![store.add("omega", vec![1], omega[0].clone(), true)?]
        };
        let core = match (core, rng) {
            (Some(f), _) => CoreFunction::Analytic(f),
            (None, Some(rng)) => CoreFunction::Net(Mlp::init(config.mlp_spec()?, &mut store, "core", rng, true)?),
            (None, None) => CoreFunction::Net(Mlp::attach(config.mlp_spec()?, &store, "core")?),
        };
        Ok(Self {
            store,
            config,
            sigma_max2,
            frame_ids,
            omega_ids,
            core,
        })
    }

    /// Network whose parameters reproduce the exact score of a Gaussian model:
    /// frames `A_d`, `ω` equal to the noise variances and the analytic core `ξ`.
    /// With heterogeneity on, the noise variance tensor must be separable.
    pub fn from_gaussian(m: &GaussianModel, sched: DiffusionSchedule, heterogeneity: bool) -> Result<Self> {
        let dims = m.shape().dims().to_vec();
        let omega = if heterogeneity {
            let factors = separable_factors(&m.noise_var)?;
            let rebuilt = outer(&factors.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
            let err = rebuilt.sub(&m.noise_var)?.frobenius_norm() / m.noise_var.frobenius_norm().max(1e-300);
            if err > 1e-12 {
                return Err(Error::InvalidArgument("noise variances are not separable across modes".into()));
            }
            factors
        } else {
            if !m.is_homogeneous() {
                return Err(Error::InvalidArgument("shared ω needs homogeneous noise".into()));
            }
            vec![vec![m.noise_var.data()[0]]]
        };
        let mut config = NetConfig::new(dims, m.basis.ranks(), InitMode::Fixed);
        config.betas = m.betas.clone();
        config.sched = sched;
        config.heterogeneity = heterogeneity;
        let sigma_max2 = omega.iter().flatten().fold(1.0f64, |a, b| a.max(*b)) * 4.0;
        let model = m.clone();
        let core: AnalyticCore = Arc::new(move |g: &[f64], t: f64| Ok(model.score_at(t)?.xi(&model, g)));
        Self::assemble(config, sigma_max2, m.basis.matrices(), omega, None, Some(core))
    }

    /// Replaces the core function, e.g. with a closed form for testing.
    pub fn set_analytic_core(&mut self, f: AnalyticCore) {
        self.core = CoreFunction::Analytic(f);
    }

    pub fn core(&self) -> &CoreFunction {
        &self.core
    }

    pub fn sigma_max2(&self) -> f64 {
        self.sigma_max2
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape::new(self.config.dims.clone()).expect("validated")
    }

    pub fn frame_ids(&self) -> &[ParamId] {
        &self.frame_ids
    }

    pub fn omega_ids(&self) -> &[ParamId] {
        &self.omega_ids
    }

    pub fn frame_matrices(&self) -> Vec<Matrix> {
        self.frame_ids.iter().map(|&id| self.store.matrix(id)).collect()
    }

    /// Current frames as a validated orthonormal basis.
    pub fn basis(&self) -> Result<TuckerBasis> {
        TuckerBasis::new(
            self.frame_matrices()
                .into_iter()
                .enumerate()
                .map(|(d, m)| StiefelFrame::new(m, d))
                .collect::<Result<_>>()?,
        )
    }

    /// Per-entry noise variance implied by `ω`.
    pub fn omega_tensor(&self) -> DenseTensor {
        if self.config.heterogeneity {
            outer(&self.omega_ids.iter().map(|&id| self.store.value(id)).collect::<Vec<_>>())
        } else {
            DenseTensor::filled(&self.shape(), self.store.value(self.omega_ids[0])[0])
        }
    }

    fn p_neg_beta(&self) -> f64 {
        p_neg_beta(&self.config.dims, &self.config.betas)
    }

    /// Retracts trainable frames onto the Stiefel manifold and clamps `ω`.
    pub fn project_parameters(&mut self) -> Result<()> {
        if self.config.mode != InitMode::Fixed {
            for (d, &id) in self.frame_ids.iter().enumerate() {
                let q = qr_orthonormalize(&self.store.matrix(id), d)?;
                self.store.value_mut(id).copy_from_slice(q.matrix().as_slice());
            }
        }
        let hi = self.sigma_max2;
        for &id in &self.omega_ids {
            for v in self.store.value_mut(id) {
                *v = v.clamp(0.0, hi);
            }
        }
        Ok(())
    }

    /// Scores for a batch of inputs, one time per input.
    pub fn forward_batch(&self, xs: &[DenseTensor], ts: &[f64]) -> Result<(Vec<DenseTensor>, NetTape)> {
        if xs.len() != ts.len() {
            return Err(Error::ShapeMismatch(format!("{} inputs for {} times", xs.len(), ts.len())));
        }
        let shape = self.shape();
        for x in xs {
            if x.shape() != &shape {
                return Err(Error::ShapeMismatch(format!("input {:?} for net {:?}", x.dims(), shape.dims())));
            }
        }
        for &t in ts {
            self.config.sched.check_time(t)?;
        }
        let frames = self.frame_matrices();
        let transposes: Vec<Matrix> = frames.iter().map(Matrix::transpose).collect();
        let pairs: Vec<Matrix> = if self.config.heterogeneity {
            frames.iter().map(pair_matrix).collect()
        } else {
            Vec::new()
        };
        let omega = self.omega_tensor();
        let pnb = self.p_neg_beta();
        let ranks = self.config.ranks.clone();

        let mut partial: Vec<SampleTape> = xs
            .par_iter()
            .zip(ts.par_iter())
            .map(|(x, &t)| -> Result<SampleTape> {
                let (alpha, h) = alpha_h(t)?;
                let c = alpha * alpha * pnb;
                let om = omega.map(|w| h + c * w);
                let z = elementwise_div(x, &om)?;
                let b = multi_mode_product(&z, &transposes)?.into_data();
                let (g, gram) = if self.config.heterogeneity {
                    let inv = om.map(|v| 1.0 / v);
                    let gm = pairs_to_matrix(&multi_mode_product(&inv, &pairs)?, &ranks).symmetrize();
                    let ch = Cholesky::new(&gm)?;
                    (ch.solve(&b), Some(ch))
                } else {
                    let o = om.data()[0];
                    (b.iter().map(|v| o * v).collect(), None)
                };
                Ok(SampleTape {
                    t,
                    c,
                    omega: om,
                    z,
                    b,
                    g,
                    gram,
                    zeta: Vec::new(),
                    score: DenseTensor::zeros(x.shape()),
                })
            })
            .collect::<Result<_>>()?;

        let r = self.config.core_rank();
        let mlp_tape = match &self.core {
            CoreFunction::Net(mlp) => {
                let input = Matrix::from_fn(partial.len(), r + 1, |i, j| {
                    if j < r {
                        partial[i].g[j]
                    } else {
                        partial[i].t
                    }
                });
                let (out, tape) = mlp_forward(mlp, &self.store, &input)?;
                for (i, s) in partial.iter_mut().enumerate() {
                    s.zeta = out.row(i).to_vec();
                }
                Some(tape)
            }
            CoreFunction::Analytic(f) => {
                for s in partial.iter_mut() {
                    s.zeta = f(&s.g, s.t)?;
                }
                None
            }
        };

        let core_shape = TensorShape::new(ranks.clone())?;
        partial
            .par_iter_mut()
            .zip(xs.par_iter())
            .try_for_each(|(s, x)| -> Result<()> {
                let zeta = DenseTensor::new(core_shape.clone(), s.zeta.clone())?;
                let y = multi_mode_product(&zeta, &frames)?;
                s.score = elementwise_div(&y.sub(x)?, &s.omega)?;
                if !s.score.is_finite() {
                    return Err(Error::NonFinite(format!("score at t = {}", s.t)));
                }
                Ok(())
            })?;
        let scores = partial.iter().map(|s| s.score.clone()).collect();
        Ok((
            scores,
            NetTape {
                version: self.store.version(),
                samples: partial,
                mlp: mlp_tape,
            },
        ))
    }

    pub fn score_forward(&self, xt: &DenseTensor, t: f64) -> Result<(DenseTensor, NetTape)> {
        let (mut s, tape) = self.forward_batch(std::slice::from_ref(xt), &[t])?;
        Ok((s.pop().expect("one sample"), tape))
    }

    /// Accumulates gradients of `Σ_i ⟨grads_i, S_i⟩` into the store.
    /// Frame gradients are ambient (no tangent projection) and skipped for
    /// frozen frames.
    pub fn score_backward(&mut self, tape: &NetTape, grads: &[DenseTensor]) -> Result<()> {
        if tape.version != self.store.version() {
            return Err(Error::InvalidArgument("tape recorded against different parameter values".into()));
        }
        if grads.len() != tape.samples.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} output gradients for {} samples",
                grads.len(),
                tape.samples.len()
            )));
        }
        let frames = self.frame_matrices();
        let transposes: Vec<Matrix> = frames.iter().map(Matrix::transpose).collect();
        let ranks = self.config.ranks.clone();
        let core_shape = TensorShape::new(ranks.clone())?;
        let r = self.config.core_rank();
        let train_frames = self.frame_ids.iter().all(|&id| self.store.param(id).trainable);
        let order = frames.len();

        // decoder and output stage
        let stage1: Vec<(Vec<f64>, DenseTensor, Vec<Matrix>)> = tape
            .samples
            .par_iter()
            .zip(grads.par_iter())
            .map(|(s, ds)| -> Result<_> {
                let dy = elementwise_div(ds, &s.omega)?;
                let d_omega = ds.zip_map(&s.score, |a, b| a * b)?.zip_map(&s.omega, |v, o| -v / o)?;
                let dzeta = multi_mode_product(&dy, &transposes)?.into_data();
                let mut du = Vec::new();
                if train_frames {
                    let zeta = DenseTensor::new(core_shape.clone(), s.zeta.clone())?;
                    for d in 0..order {
                        let a = mode_unfold(&multi_mode_product_except(&dy, &transposes, d)?, d)?;
                        du.push(a.matmul_t(&mode_unfold(&zeta, d)?)?);
                    }
                }
                Ok((dzeta, d_omega, du))
            })
            .collect::<Result<_>>()?;

        // core function
        let dg_all: Vec<Vec<f64>> = match &self.core {
            CoreFunction::Net(mlp) => {
                let mlp_tape = tape.mlp.as_ref().expect("net core records a tape");
                let dout = Matrix::from_fn(stage1.len(), r, |i, j| stage1[i].0[j]);
                let mlp = mlp.clone();
                let din = mlp_backward(&mlp, &mut self.store, mlp_tape, &dout)?;
                (0..din.rows()).map(|i| din.row(i)[..r].to_vec()).collect()
            }
            CoreFunction::Analytic(_) => {
                return Err(Error::InvalidArgument("analytic core has no trainable backward pass".into()))
            }
        };

        let pairs: Vec<Matrix> = if self.config.heterogeneity {
            frames.iter().map(pair_matrix).collect()
        } else {
            Vec::new()
        };
        let pairs_t: Vec<Matrix> = pairs.iter().map(Matrix::transpose).collect();
        let shape = self.shape();

        // encoder, Gram system and Ω
        let stage2: Vec<(Vec<Matrix>, DenseTensor, f64)> = tape
            .samples
            .par_iter()
            .zip(stage1.into_par_iter())
            .zip(dg_all.par_iter())
            .map(|((s, (_, mut d_omega, mut du)), dg)| -> Result<_> {
                let mut d_omega0 = 0.0;
                let db: Vec<f64> = match &s.gram {
                    Some(ch) => ch.solve(dg),
                    None => {
                        let o = s.omega.data()[0];
                        d_omega0 = dg.iter().zip(&s.b).map(|(a, b)| a * b).sum();
                        dg.iter().map(|v| o * v).collect()
                    }
                };
                let dgt = DenseTensor::new(core_shape.clone(), db.clone())?;
                let dz = multi_mode_product(&dgt, &frames)?;
                d_omega.axpy(1.0, &dz.zip_map(&s.z, |a, b| a * b)?.zip_map(&s.omega, |v, o| -v / o)?)?;
                if train_frames {
                    for d in 0..order {
                        let a = mode_unfold(&multi_mode_product_except(&dgt, &frames, d)?, d)?;
                        let enc = mode_unfold(&s.z, d)?.matmul_t(&a)?;
                        add_into(du[d].as_mut_slice(), enc.as_slice());
                    }
                }
                if s.gram.is_some() {
                    // M = Uᵀ diag(1/Ω) U, g = M⁻¹ b  ⇒  dM = −(M⁻¹ dg) gᵀ
                    let dm = Matrix::from_fn(r, r, |i, j| -db[i] * s.g[j]);
                    let dt = matrix_to_pairs(&dm, &ranks);
                    let dw = multi_mode_product(&dt, &pairs_t)?;
                    d_omega.axpy(1.0, &dw.zip_map(&s.omega, |v, o| -v / (o * o))?)?;
                    if train_frames {
                        let w = s.omega.map(|o| 1.0 / o);
                        for d in 0..order {
                            let a = mode_unfold(&multi_mode_product_except(&dt, &pairs_t, d)?, d)?;
                            let dk = a.matmul_t(&mode_unfold(&w, d)?)?;
                            let u = &frames[d];
                            let rd = u.cols();
                            let acc = du[d].as_mut_slice();
                            for j in 0..u.rows() {
                                for a_ in 0..rd {
                                    for b_ in 0..rd {
                                        let k = dk[(a_ * rd + b_, j)];
                                        acc[j * rd + a_] += k * u[(j, b_)];
                                        acc[j * rd + b_] += k * u[(j, a_)];
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((du, d_omega.scale(s.c), d_omega0 * s.c))
            })
            .collect::<Result<_>>()?;

        // ordered reduction into the store
        let omega_vals: Vec<Matrix> = if self.config.heterogeneity {
            self.omega_ids
                .iter()
                .map(|&id| Matrix::from_vec(1, self.store.value(id).len(), self.store.value(id).to_vec()))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mut d_p = DenseTensor::zeros(&shape);
        let mut d_scalar = 0.0;
        for (du, dp, d0) in stage2 {
            if train_frames {
                for (d, m) in du.iter().enumerate() {
                    add_into(self.store.grad_mut(self.frame_ids[d]), m.as_slice());
                }
            }
            d_p.axpy(1.0, &dp)?;
            d_scalar += d0;
        }
        if self.config.heterogeneity {
            for d in 0..order {
                let g = multi_mode_product_except(&d_p, &omega_vals, d)?;
                add_into(self.store.grad_mut(self.omega_ids[d]), g.data());
            }
        } else {
            let total: f64 = d_p.data().iter().sum::<f64>() + d_scalar;
            self.store.grad_mut(self.omega_ids[0])[0] += total;
        }
        Ok(())
    }

    /// Saves parameters, Adam state and configuration to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if matches!(self.core, CoreFunction::Analytic(_)) {
            return Err(Error::InvalidArgument("cannot checkpoint an analytic core".into()));
        }
        let extra = serde_json::json!({
            "net": self.config,
            "sigma_max2": self.sigma_max2,
        });
        save_checkpoint(&self.store, dir, extra)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, extra) = load_checkpoint(dir)?;
        let config: NetConfig = serde_json::from_value(extra["net"].clone())?;
        let sigma_max2 = extra["sigma_max2"]
            .as_f64()
            .ok_or_else(|| Error::InvalidArgument("checkpoint lacks sigma_max2".into()))?;
        config.validate()?;
        let frame_ids = (0..config.dims.len())
            .map(|d| store.id(&format!("frame.{d}")))
            .collect::<Result<Vec<_>>>()?;
        let omega_ids = if config.heterogeneity {
            (0..config.dims.len())
                .map(|d| store.id(&format!("omega.{d}")))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![store.id("omega")?]
        };
        let core = CoreFunction::Net(Mlp::attach(config.mlp_spec()?, &store, "core")?);
        Ok(Self {
            store,
            config,
            sigma_max2,
            frame_ids,
            omega_ids,
            core,
        })
    }
}

/// Factors `v ≈ ω_1 ⊗ ⋯ ⊗ ω_D` from marginal means; exact when `v` is
/// separable: `ω_d[j] = mean_{mode d = j}(v) / mean(v)^{(D−1)/D}`.
pub fn separable_factors(v: &DenseTensor) -> Result<Vec<Vec<f64>>> {
    let dims = v.dims().to_vec();
    let order = dims.len();
    let total = v.data().iter().sum::<f64>() / v.len() as f64;
    if !(total > 0.0) {
        return Ok(dims.iter().map(|&p| vec![0.0; p]).collect());
    }
    let scale = total.powf((order as f64 - 1.0) / order as f64);
    let mut out = Vec::with_capacity(order);
    for d in 0..order {
        let unf = mode_unfold(v, d)?;
        let cols = unf.cols() as f64;
        out.push((0..dims[d]).map(|j| unf.row(j).iter().sum::<f64>() / cols / scale).collect());
    }
    Ok(out)
}

/// Per-entry mean squared residual of projecting `data` onto `basis`.
pub fn residual_variance(data: &Dataset, basis: &TuckerBasis) -> Result<DenseTensor> {
    let mut acc = DenseTensor::zeros(data.shape());
    for x in data.samples() {
        let recon = basis.decode(&basis.encode(x)?)?;
        let res = x.sub(&recon)?;
        acc.axpy(1.0, &res.mul(&res)?)?;
    }
    Ok(acc.scale(1.0 / data.len() as f64))
}

/// Builds a network in the requested mode.
///
/// Cold frames come from the `"frames"` substream of `rng`; warm and fixed
/// frames from HOOI on `train`. `ω` starts at `config.omega_init` if set,
/// otherwise at the HOOI residual variance of `train` (factored across modes
/// when heterogeneity is on), clamped to `[0, σ_max²]`.
pub fn init_net(config: &NetConfig, train: Option<&Dataset>, rng: &Rng) -> Result<TuckerScoreNet> {
    config.validate()?;
    if let Some(data) = train {
        if data.shape().dims() != config.dims.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "data shape {:?} for net {:?}",
                data.shape().dims(),
                config.dims
            )));
        }
    }
    let needs_hooi = config.mode != InitMode::Cold || config.omega_init.is_none();
    let est = match (train, needs_hooi) {
        (Some(data), true) => Some(hooi(data.samples(), &config.ranks, HooiOptions::default())?),
        (None, true) => {
            return Err(Error::InvalidArgument(format!(
                "{} initialization needs training data",
                config.mode
            )))
        }
        _ => None,
    };
    let sigma_max2 = match (config.sigma_max2, train) {
        (Some(s), _) => s,
        (None, Some(data)) => 4.0 * data.mean_entry_variance(),
        (None, None) => {
            return Err(Error::InvalidArgument("sigma_max2 needs training data or an explicit value".into()))
        }
    };
    let frames: Vec<Matrix> = match config.mode {
        InitMode::Cold => {
            let mut frng = rng.substream("frames", 0);
            config
                .dims
                .iter()
                .zip(&config.ranks)
                .enumerate()
                .map(|(d, (&p, &r))| {
                    let g = Matrix::from_fn(p, r, |_, _| frng.normal());
                    Ok(qr_orthonormalize(&g, d)?.into_matrix())
                })
                .collect::<Result<_>>()?
        }
        InitMode::Warm | InitMode::Fixed => est.as_ref().expect("computed above").matrices(),
    };
    let omega: Vec<Vec<f64>> = match config.omega_init {
        Some(w) => {
            if config.heterogeneity {
                let order = config.dims.len() as f64;
                let per = w.max(0.0).powf(1.0 / order);
                config.dims.iter().map(|&p| vec![per; p]).collect()
            } else {
                vec![vec![w]]
            }
        }
        None => {
            let res = residual_variance(train.expect("checked"), est.as_ref().expect("computed"))?;
            if config.heterogeneity {
                separable_factors(&res)?
            } else {
                vec![vec![res.data().iter().sum::<f64>() / res.len() as f64]]
            }
        }
    };
    let mut core_rng = rng.substream("core-net", 0);
    let mut net = TuckerScoreNet::assemble(config.clone(), sigma_max2, frames, omega, Some(&mut core_rng), None)?;
    net.project_parameters()?;
    Ok(net)
}
