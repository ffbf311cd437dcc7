//! Ground-truth low-rank Tucker factor models and synthetic data.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{qr_orthonormalize, TuckerBasis};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tensor::{multi_mode_product, sample_standard_normal, DenseTensor, TensorShape};

pub type CoreSampler = Arc<dyn Fn(&mut Rng) -> DenseTensor + Send + Sync>;

/// Law of the core tensor `F`.
#[derive(Clone)]
pub enum CoreLaw {
    /// Independent Gaussian entries with the given means and standard deviations.
    GaussianDiag { mean: DenseTensor, std: DenseTensor },
    Custom(CoreSampler),
}

impl fmt::Debug for CoreLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreLaw::GaussianDiag { mean, std } => f
                .debug_struct("GaussianDiag")
                .field("mean", &mean.dims())
                .field("std", &std.dims())
                .finish(),
            CoreLaw::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl CoreLaw {
    fn sample(&self, rng: &mut Rng) -> DenseTensor {
        match self {
            CoreLaw::GaussianDiag { mean, std } => {
                let mut out = sample_standard_normal(mean.shape(), rng);
                for ((o, m), s) in out.data_mut().iter_mut().zip(mean.data()).zip(std.data()) {
                    *o = m + s * *o;
                }
                out
            }
            CoreLaw::Custom(f) => f(rng),
        }
    }
}

/// How a sample is assembled from core, loadings and noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `X = (F ×_d Λ_d + E) / Π_d p_d^{β_d/2}`
    Normalized,
    /// `X = R F Cᵀ + E` with the raw Gaussian loadings (order 2 only).
    RawLoadings,
}

/// How the per-entry heterogeneity factor `z` is drawn from `u ~ Uniform(0, 2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMixing {
    /// `z ~ N(0, u)`
    #[default]
    UniformVariance,
    /// `z ~ N(0, u²)`
    UniformStdDev,
}

#[derive(Clone, Debug)]
pub struct FactorModelSpec {
    pub shape: TensorShape,
    pub ranks: Vec<usize>,
    /// The orthonormal `A_d`; loadings are `Λ_d = p_d^{β_d/2} A_d`.
    pub frames: TuckerBasis,
    pub betas: Vec<f64>,
    pub core_law: CoreLaw,
    /// Per-entry noise standard deviation.
    pub noise_std: DenseTensor,
    /// Unnormalized loadings used by [`ScaleMode::RawLoadings`].
    pub raw_loadings: Option<Vec<Matrix>>,
}

impl FactorModelSpec {
    pub fn new(
        frames: TuckerBasis,
        betas: Vec<f64>,
        core_law: CoreLaw,
        noise_std: DenseTensor,
    ) -> Result<Self> {
        let shape = noise_std.shape().clone();
        frames.check_shape(shape.dims())?;
        let ranks = frames.ranks();
        if betas.len() != shape.order() || betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidArgument(format!("betas {betas:?} must be D values in [0,1]")));
        }
        if noise_std.data().iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("noise stddevs must be finite and nonnegative".into()));
        }
        if let CoreLaw::GaussianDiag { mean, std } = &core_law {
            if mean.dims() != ranks.as_slice() || std.dims() != ranks.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "core law of shape {:?} for ranks {ranks:?}",
                    mean.dims()
                )));
            }
        }
        Ok(Self {
            shape,
            ranks,
            frames,
            betas,
            core_law,
            noise_std,
            raw_loadings: None,
        })
    }

    pub fn loadings(&self) -> Vec<Matrix> {
        self.frames
            .frames()
            .iter()
            .zip(&self.betas)
            .map(|(f, b)| f.matrix().scale((f.ambient_dim() as f64).powf(b / 2.0)))
            .collect()
    }

    /// `Π_d p_d^{β_d/2}`
    pub fn signal_scale(&self) -> f64 {
        self.shape
            .dims()
            .iter()
            .zip(&self.betas)
            .map(|(&p, b)| (p as f64).powf(b / 2.0))
            .product()
    }

    pub fn noise_range(&self) -> (f64, f64) {
        let d = self.noise_std.data();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }

    /// SHA-256 over the numeric content of the spec, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |xs: &[f64]| {
            for x in xs {
                h.update(x.to_le_bytes());
            }
        };
        put(&self.shape.dims().iter().map(|&d| d as f64).collect::<Vec<_>>());
        put(&self.ranks.iter().map(|&d| d as f64).collect::<Vec<_>>());
        put(&self.betas);
        for f in self.frames.frames() {
            put(f.matrix().as_slice());
        }
        if let Some(raw) = &self.raw_loadings {
            for m in raw {
                put(m.as_slice());
            }
        }
        put(self.noise_std.data());
        let mut tag = Vec::new();
        match &self.core_law {
            CoreLaw::GaussianDiag { mean, std } => {
                tag.extend_from_slice(mean.data());
                tag.extend_from_slice(std.data());
                put(&tag);
            }
            CoreLaw::Custom(_) => h.update(b"custom-core"),
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The order-2 synthetic design: uniform core means with proportional
/// standard deviations, Gaussian loadings and a fixed heterogeneous noise
/// field.
pub fn build_synthetic_spec(
    p1: usize,
    p2: usize,
    r1: usize,
    r2: usize,
    sigma: f64,
    mixing: NoiseMixing,
    rng: &Rng,
) -> Result<FactorModelSpec> {
    if r1 == 0 || r2 == 0 || r1 > p1 || r2 > p2 {
        return Err(Error::InvalidArgument(format!(
            "ranks ({r1},{r2}) for dimensions ({p1},{p2})"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise scale {sigma} must be positive")));
    }
    let mut core_rng = rng.substream("core-mean", 0);
    let mean_data: Vec<f64> = (0..r1 * r2).map(|_| core_rng.uniform(0.0, 0.1)).collect();
    let mean = DenseTensor::from_dims(&[r1, r2], mean_data)?;
    let std = mean.scale(1.5);

    let mut load_rng = rng.substream("loadings", 0);
    let r = Matrix::from_fn(p1, r1, |_, _| load_rng.normal());
    let c = Matrix::from_fn(p2, r2, |_, _| load_rng.normal());
    let frames = TuckerBasis::new(vec![qr_orthonormalize(&r, 0)?, qr_orthonormalize(&c, 1)?])?;

    let mut z_rng = rng.substream("noise-field", 0);
    let noise: Vec<f64> = (0..p1 * p2)
        .map(|_| {
            let u = z_rng.uniform(0.0, 2.0);
            let z = match mixing {
                NoiseMixing::UniformVariance => u.sqrt() * z_rng.normal(),
                NoiseMixing::UniformStdDev => u * z_rng.normal(),
            };
            sigma * z.abs()
        })
        .collect();
    let noise_std = DenseTensor::from_dims(&[p1, p2], noise)?;

    let mut spec = FactorModelSpec::new(
        frames,
        vec![0.0, 0.0],
        CoreLaw::GaussianDiag { mean, std },
        noise_std,
    )?;
    spec.raw_loadings = Some(vec![r, c]);
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    /// Spec fingerprint, or `"external"` for data read from disk.
    pub provenance: String,
    pub split: String,
}

impl DatasetMeta {
    pub fn external() -> Self {
        Self {
            seed: None,
            provenance: "external".into(),
            split: "all".into(),
        }
    }
}

/// Non-empty ordered collection of equally shaped tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<DenseTensor>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<DenseTensor>, meta: DatasetMeta) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset must contain at least one sample".into()))?;
        if samples.iter().any(|s| s.shape() != first.shape()) {
            return Err(Error::ShapeMismatch("dataset samples have differing shapes".into()));
        }
        Ok(Self { samples, meta })
    }

    pub fn samples(&self) -> &[DenseTensor] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<DenseTensor> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> &TensorShape {
        self.samples[0].shape()
    }

    /// Mean over entries of the per-entry sample variance.
    pub fn mean_entry_variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let p = self.shape().numel();
        let mut sum = vec![0.0; p];
        let mut sq = vec![0.0; p];
        for s in &self.samples {
            for (j, v) in s.data().iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        let denom = (n - 1.0).max(1.0);
        (0..p)
            .map(|j| (sq[j] - sum[j] * sum[j] / n) / denom)
            .sum::<f64>()
            / p as f64
    }
}

pub fn sample_dataset(spec: &FactorModelSpec, n: usize, rng: &Rng, mode: ScaleMode) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let raw = match mode {
        ScaleMode::RawLoadings => {
            if spec.shape.order() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "raw-loadings sampling needs an order-2 model, got order {}",
                    spec.shape.order()
                )));
            }
            Some(
                spec.raw_loadings
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("spec has no raw loadings".into()))?,
            )
        }
        ScaleMode::Normalized => None,
    };
    let loadings = raw.unwrap_or_else(|| spec.loadings());
    let scale = match mode {
        ScaleMode::Normalized => 1.0 / spec.signal_scale(),
        ScaleMode::RawLoadings => 1.0,
    };
    let samples = (0..n)
        .map(|i| {
            let mut r = rng.substream("sample", i as u64);
            let core = spec.core_law.sample(&mut r);
            if core.dims() != spec.ranks.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "core sampler produced {:?}, expected {:?}",
                    core.dims(),
                    spec.ranks
                )));
            }
            let mut x = multi_mode_product(&core, &loadings)?;
            for (v, s) in x.data_mut().iter_mut().zip(spec.noise_std.data()) {
                *v = (*v + s * r.normal()) * scale;
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        samples,
        DatasetMeta {
            seed: Some(rng.key()),
            provenance: spec.fingerprint(),
            split: "all".into(),
        },
    )
}

/// Random disjoint partition into `(train, test)` with `round(n · fraction)`
/// training samples. Each side keeps the original sample order.
pub fn split(data: &Dataset, train_fraction: f64, rng: &Rng) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(data.len(), train_fraction, rng)?;
    let pick = |idx: &[usize], tag: &str| {
        Dataset::new(
            idx.iter().map(|&i| data.samples[i].clone()).collect(),
            DatasetMeta {
                split: tag.into(),
                ..data.meta.clone()
            },
        )
    };
    Ok((pick(&train_idx, "train")?, pick(&test_idx, "test")?))
}

pub fn split_indices(n: usize, train_fraction: f64, rng: &Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "splitting {n} samples at {train_fraction} leaves an empty side"
        )));
    }
    let perm = rng.substream("split", 0).permutation(n);
    let mut train: Vec<usize> = perm[..n_train].to_vec();
    let mut test: Vec<usize> = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
