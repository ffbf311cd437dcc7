//! Dense ReLU networks with hand-written reverse mode, a named parameter
//! store, Adam, and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor, Dtype};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub trainable: bool,
}

/// Named parameters with gradient and Adam moment buffers.
///
/// Every mutable access to a value bumps `version`, which tapes record so a
/// stale tape cannot be replayed against changed parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
    version: u64,
}

pub type ParamId = usize;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, dims: Vec<usize>, value: Vec<f64>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let n: usize = dims.iter().product();
        if n != value.len() || dims.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name}: dims {dims:?} for {} values",
                value.len()
            )));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            dims,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        self.version += 1;
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.version += 1;
        &mut self.params[id].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id].grad
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id].trainable = trainable;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Matrix view of a 2-D parameter.
    pub fn matrix(&self, id: ParamId) -> Matrix {
        let p = &self.params[id];
        let (r, c) = match p.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => panic!("parameter {} is not a matrix", p.name),
        };
        Matrix::from_vec(r, c, p.value.clone()).expect("dims checked at insertion")
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter, then zeroes
/// all gradients. A non-finite gradient aborts before anything changes.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for p in &store.params {
        if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    store.step += 1;
    store.version += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in &mut store.params {
        if p.trainable {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                p.value[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        p.grad.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        let s = Self {
            input_dim,
            output_dim,
            hidden,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Handles of an MLP's weights `W_l` (`out × in`) and biases `b_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    /// He-uniform weights and zero biases; `zero_output` also zeroes the last
    /// layer's weights.
    pub fn init(spec: MlpSpec, store: &mut ParamStore, prefix: &str, rng: &mut Rng, zero_output: bool) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = if zero_output && l == last {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect()
            };
            weights.push(store.add(&format!("{prefix}.w{l}"), vec![fan_out, fan_in], w, true)?);
            biases.push(store.add(&format!("{prefix}.b{l}"), vec![fan_out], vec![0.0; fan_out], true)?);
        }
        Ok(Self { spec, weights, biases })
    }

    /// Re-binds to parameters already present in `store` (e.g. a checkpoint).
    pub fn attach(spec: MlpSpec, store: &ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, &(fan_in, fan_out)) in spec.layer_dims().iter().enumerate() {
            let w = store.id(&format!("{prefix}.w{l}"))?;
            let b = store.id(&format!("{prefix}.b{l}"))?;
            if store.param(w).dims != [fan_out, fan_in] || store.param(b).dims != [fan_out] {
                return Err(Error::ShapeMismatch(format!("layer {l} of {prefix} has the wrong shape")));
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self { spec, weights, biases })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }
}

/// Activations retained by [`mlp_forward`].
#[derive(Clone, Debug)]
pub struct MlpTape {
    version: u64,
    /// Layer inputs: the network input, then each post-ReLU activation.
    inputs: Vec<Matrix>,
}

/// Forward pass over a batch given as rows of `input`.
pub fn mlp_forward(mlp: &Mlp, store: &ParamStore, input: &Matrix) -> Result<(Matrix, MlpTape)> {
    if input.cols() != mlp.spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "MLP expects input width {}, got {}",
            mlp.spec.input_dim,
            input.cols()
        )));
    }
    let n = mlp.weights.len();
    let mut inputs = Vec::with_capacity(n);
    let mut x = input.clone();
    for l in 0..n {
        let w = store.matrix(mlp.weights[l]);
        let b = store.value(mlp.biases[l]);
        let mut z = x.matmul_t(&w)?;
        for i in 0..z.rows() {
            for (v, bj) in z.as_mut_slice()[i * b.len()..(i + 1) * b.len()].iter_mut().zip(b) {
                *v += bj;
            }
        }
        if cfg!(debug_assertions) {
            let wn = w.frobenius_norm();
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..z.rows() {
                let xn = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                let zn = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                debug_assert!(zn <= (wn * xn + bn) * (1.0 + 1e-12) + 1e-300);
            }
        }
        if l + 1 < n {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut x, z));
    }
    Ok((
        x,
        MlpTape {
            version: store.version(),
            inputs,
        },
    ))
}

/// Accumulates parameter gradients of `⟨output_grad, output⟩` into `store`
/// and returns the gradient with respect to the input batch.
pub fn mlp_backward(mlp: &Mlp, store: &mut ParamStore, tape: &MlpTape, output_grad: &Matrix) -> Result<Matrix> {
    if tape.version != store.version() {
        return Err(Error::InvalidArgument("tape recorded against different parameter values".into()));
    }
    let n = mlp.weights.len();
    let batch = tape.inputs[0].rows();
    if output_grad.rows() != batch || output_grad.cols() != mlp.spec.output_dim {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {}x{} for batch {batch} and width {}",
            output_grad.rows(),
            output_grad.cols(),
            mlp.spec.output_dim
        )));
    }
    let mut dz = output_grad.clone();
    for l in (0..n).rev() {
        let a = &tape.inputs[l];
        let dw = dz.t_matmul(a)?;
        for (g, v) in store.grad_mut(mlp.weights[l]).iter_mut().zip(dw.as_slice()) {
            *g += v;
        }
        let db = store.grad_mut(mlp.biases[l]);
        for i in 0..dz.rows() {
            for (g, v) in db.iter_mut().zip(dz.row(i)) {
                *g += v;
            }
        }
        let mut da = dz.matmul(&store.matrix(mlp.weights[l]))?;
        if l > 0 {
            // post-ReLU activation is positive exactly where the unit was active
            for (d, act) in da.as_mut_slice().iter_mut().zip(a.as_slice()) {
                if *act <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        dz = da;
    }
    Ok(dz)
}

/// Result of a directional finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

/// Compares the analytic directional derivative `⟨∇L, v⟩` with a central
/// difference along `n_dirs` random Gaussian directions over the trainable
/// parameters. `analytic` must hold `∇L` laid out like the store's params.
pub fn directional_grad_check(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    n_dirs: usize,
    step: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    for _ in 0..n_dirs {
        let dir: Vec<Vec<f64>> = store
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    (0..p.value.len()).map(|_| rng.normal()).collect()
                } else {
                    vec![0.0; p.value.len()]
                }
            })
            .collect();
        let exact: f64 = analytic
            .iter()
            .zip(&dir)
            .flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b))
            .sum();
        let shifted = |s: f64| {
            let mut st = store.clone();
            for (id, d) in dir.iter().enumerate() {
                for (v, dv) in st.value_mut(id).iter_mut().zip(d) {
                    *v += s * dv;
                }
            }
            st
        };
        let fd = (loss(&shifted(step))? - loss(&shifted(-step))?) / (2.0 * step);
        let rel = (exact - fd).abs() / exact.abs().max(fd.abs()).max(1e-12);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / n_dirs.max(1) as f64,
    })
}

pub fn grads_snapshot(store: &ParamStore) -> Vec<Vec<f64>> {
    store.params.iter().map(|p| p.grad.clone()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    dims: Vec<usize>,
    trainable: bool,
    file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    step: u64,
    params: Vec<ParamEntry>,
    extra: serde_json::Value,
}

const CHECKPOINT_FORMAT: &str = "tuckerdiff-params-v1";

/// Writes `dir/manifest.json` plus one TEN1 file per parameter holding the
/// rows value, first moment, second moment. `extra` is stored verbatim.
pub fn save_checkpoint(store: &ParamStore, dir: &Path, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (i, p) in store.params.iter().enumerate() {
        let file = format!("param_{i:03}.ten");
        let mut rows = p.value.clone();
        rows.extend(&p.m);
        rows.extend(&p.v);
        let t = DenseTensor::from_dims(&[3, p.value.len()], rows)?;
        write_tensor(&t, &dir.join(&file), Dtype::F64)?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            dims: p.dims.clone(),
            trainable: p.trainable,
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        step: store.step,
        params: entries,
        extra,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidArgument(format!("unknown checkpoint format {}", manifest.format)));
    }
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let t = read_tensor(&dir.join(&e.file))?;
        let n: usize = e.dims.iter().product();
        if t.dims() != [3, n] {
            return Err(Error::ShapeMismatch(format!("checkpoint entry {} has dims {:?}", e.name, t.dims())));
        }
        let d = t.data();
        let id = store.add(&e.name, e.dims.clone(), d[..n].to_vec(), e.trainable)?;
        store.params[id].m = d[n..2 * n].to_vec();
        store.params[id].v = d[2 * n..].to_vec();
    }
    store.step = manifest.step;
    Ok((store, manifest.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(b: usize, d: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(b, d, |_, _| rng.normal())
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let mlp = Mlp::init(MlpSpec::new(3, 2, vec![4]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let (out, _) = mlp_forward(&mlp, &store, &random_input(5, 3, &mut rng)).unwrap();
        assert!(out.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(2);
        let mlp = Mlp::init(MlpSpec::new(3, 2, vec![]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        let b_id = store.id("f.b0").unwrap();
        store.value_mut(b_id).copy_from_slice(&[0.5, -1.0]);
        let x = random_input(4, 3, &mut rng);
        let (out, _) = mlp_forward(&mlp, &store, &x).unwrap();
        let w = store.matrix(store.id("f.w0").unwrap());
        for i in 0..4 {
            let expect = w.matvec(x.row(i)).unwrap();
            for j in 0..2 {
                let e = expect[j] + [0.5, -1.0][j];
                assert!((out[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batch_equivariance() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let mlp = Mlp::init(MlpSpec::new(4, 3, vec![8, 8]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        let x = random_input(6, 4, &mut rng);
        let perm = rng.permutation(6);
        let xp = Matrix::from_fn(6, 4, |i, j| x[(perm[i], j)]);
        let (a, _) = mlp_forward(&mlp, &store, &x).unwrap();
        let (b, _) = mlp_forward(&mlp, &store, &xp).unwrap();
        assert!(a.is_finite());
        for i in 0..6 {
            assert_eq!(b.row(i), a.row(perm[i]));
        }
    }

    fn loss_and_grad(mlp: &Mlp, store: &mut ParamStore, x: &Matrix, c: &Matrix) -> f64 {
        let (out, tape) = mlp_forward(mlp, store, x).unwrap();
        mlp_backward(mlp, store, &tape, c).unwrap();
        out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        let mlp = Mlp::init(MlpSpec::new(3, 2, vec![6, 5]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.value_mut(id).iter_mut().for_each(|v| *v += 0.1 * rng.normal());
        }
        let x = random_input(7, 3, &mut rng);
        let c = random_input(7, 2, &mut rng);
        loss_and_grad(&mlp, &mut store, &x, &c);
        let analytic = grads_snapshot(&store);
        let loss = |s: &ParamStore| -> Result<f64> {
            let (out, _) = mlp_forward(&mlp, s, &x)?;
            Ok(out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
        };
        let rep = directional_grad_check(&store, &analytic, loss, 20, 1e-5, &mut rng).unwrap();
        assert!(rep.mean_rel_err < 1e-5, "{rep:?}");

        // input gradient, coordinate-wise
        let (_, tape) = mlp_forward(&mlp, &store, &x).unwrap();
        let dx = mlp_backward(&mlp, &mut store.clone(), &tape, &c).unwrap();
        for k in 0..x.as_slice().len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_mut_slice()[k] += 1e-6;
            b.as_mut_slice()[k] -= 1e-6;
            let fa: f64 = mlp_forward(&mlp, &store, &a).unwrap().0.as_slice().iter().zip(c.as_slice()).map(|(p, q)| p * q).sum();
            let fb: f64 = mlp_forward(&mlp, &store, &b).unwrap().0.as_slice().iter().zip(c.as_slice()).map(|(p, q)| p * q).sum();
            assert!((dx.as_slice()[k] - (fa - fb) / 2e-6).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_and_linear_output_grad() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(5);
        let mlp = Mlp::init(MlpSpec::new(2, 2, vec![4]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        let x = random_input(3, 2, &mut rng);
        let (_, tape) = mlp_forward(&mlp, &store, &x).unwrap();
        mlp_backward(&mlp, &mut store, &tape, &Matrix::zeros(3, 2)).unwrap();
        assert!(store.params().iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));

        let c = random_input(3, 2, &mut rng);
        mlp_backward(&mlp, &mut store, &tape, &c).unwrap();
        let g1 = grads_snapshot(&store);
        store.zero_grad();
        mlp_backward(&mlp, &mut store, &tape, &c.scale(3.0)).unwrap();
        for (a, b) in g1.iter().flatten().zip(grads_snapshot(&store).iter().flatten()) {
            assert!((3.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn stale_tape_rejected() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(6);
        let mlp = Mlp::init(MlpSpec::new(2, 1, vec![3]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
        let x = random_input(2, 2, &mut rng);
        let (_, tape) = mlp_forward(&mlp, &store, &x).unwrap();
        store.value_mut(0)[0] += 1.0;
        assert!(mlp_backward(&mlp, &mut store, &tape, &Matrix::zeros(2, 1)).is_err());
        assert!(mlp_forward(&mlp, &store, &random_input(2, 3, &mut rng)).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![5], vec![1.0; 5], true).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        for _ in 0..200 {
            let g: Vec<f64> = store.value(id).iter().map(|w| 2.0 * w).collect();
            store.grad_mut(id).copy_from_slice(&g);
            adam_step(&mut store, &cfg).unwrap();
        }
        let norm = store.value(id).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn adam_zero_gradient_and_nonfinite() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![2], vec![0.3, -0.2], true).unwrap();
        store.grad_mut(id).copy_from_slice(&[1.0, 1.0]);
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        let before = store.param(id).clone();
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        let after = store.param(id);
        for i in 0..2 {
            assert_eq!(after.m[i], 0.9 * before.m[i]);
            assert_eq!(after.v[i], 0.999 * before.v[i]);
        }
        // a zero gradient still moves along the decayed first moment
        assert!(after.value != before.value);

        let mut fresh = ParamStore::new();
        let id = fresh.add("w", vec![2], vec![0.3, -0.2], true).unwrap();
        adam_step(&mut fresh, &AdamConfig::default()).unwrap();
        assert_eq!(fresh.value(id), &[0.3, -0.2]);

        fresh.grad_mut(id)[1] = f64::NAN;
        let snapshot = fresh.clone();
        assert!(matches!(adam_step(&mut fresh, &AdamConfig::default()), Err(Error::NonFinite(_))));
        assert_eq!(fresh.value(id), snapshot.value(id));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let id = store.add("u", vec![2], vec![1.0, 2.0], false).unwrap();
        store.grad_mut(id).copy_from_slice(&[5.0, 5.0]);
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        assert_eq!(store.value(id), &[1.0, 2.0]);
        assert_eq!(store.grad(id), &[0.0, 0.0]);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(7);
            let mlp = Mlp::init(MlpSpec::new(2, 1, vec![8]).unwrap(), &mut store, "f", &mut rng, false).unwrap();
            let x = random_input(16, 2, &mut rng);
            for _ in 0..20 {
                let (out, tape) = mlp_forward(&mlp, &store, &x).unwrap();
                let g = Matrix::from_fn(16, 1, |i, _| out[(i, 0)] - x[(i, 0)] * x[(i, 1)]);
                mlp_backward(&mlp, &mut store, &tape, &g).unwrap();
                adam_step(&mut store, &AdamConfig::default()).unwrap();
            }
            store
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(8);
        let mlp = Mlp::init(MlpSpec::new(3, 2, vec![4]).unwrap(), &mut store, "core", &mut rng, true).unwrap();
        store.add("frozen", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.grad_mut(id).iter_mut().for_each(|g| *g = rng.normal());
        }
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&store, dir.path(), serde_json::json!({"k": 1})).unwrap();
        let (back, extra) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(extra["k"], 1);
        assert_eq!(back.step(), store.step());
        for (a, b) in back.params().iter().zip(store.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.m, b.m);
            assert_eq!(a.v, b.v);
            assert_eq!(a.trainable, b.trainable);
        }
        assert!(Mlp::attach(mlp.spec.clone(), &back, "core").is_ok());
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
