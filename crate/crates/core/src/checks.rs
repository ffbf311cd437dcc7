//! Self-contained numerical self-checks run by `tuckerdiff oracle-check`.
//!
//! Each check builds random models from the given seed and compares
//! independent computations of the same quantity.

use crate::diffusion::{
    brute_force_gaussian_score, oracle_score_gaussian_homog, oracle_score_general, DiffusionSchedule, GaussianModel,
};
use crate::error::Result;
use crate::linalg::{projection_metric, qr_orthonormalize, TuckerBasis};
use crate::matrix::Matrix;
use crate::nn::{directional_grad_check, grads_snapshot, mlp_backward, mlp_forward, Mlp, MlpSpec, ParamStore};
use crate::rng::Rng;
use crate::sampler::{generate_tucker_gaussian_check, SamplerConfig, Scheme};
use crate::tensor::{sample_standard_normal, DenseTensor, TensorShape};
use crate::tucker_unet::{init_net, InitMode, NetConfig, TuckerScoreNet};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).map(|d| d.frobenius_norm()).unwrap_or(f64::INFINITY) / b.frobenius_norm().max(1e-300)
}

fn random_basis(dims: &[usize], ranks: &[usize], rng: &mut Rng) -> Result<TuckerBasis> {
    TuckerBasis::new(
        dims.iter()
            .zip(ranks)
            .enumerate()
            .map(|(d, (&p, &r))| qr_orthonormalize(&Matrix::from_fn(p, r, |_, _| rng.normal()), d))
            .collect::<Result<_>>()?,
    )
}

/// Random Gaussian Tucker model with noise standard deviations in
/// `[0.5, 1.5]`; `separable` makes the variance field a Kronecker product.
pub fn random_gaussian_model(
    dims: &[usize],
    ranks: &[usize],
    homogeneous: bool,
    separable: bool,
    rng: &mut Rng,
) -> Result<GaussianModel> {
    let basis = random_basis(dims, ranks, rng)?;
    let shape = TensorShape::new(dims.to_vec())?;
    let noise = if homogeneous {
        DenseTensor::filled(&shape, rng.uniform(0.5, 1.5).powi(2))
    } else if separable {
        let order = dims.len() as f64;
        let mut t = DenseTensor::filled(&shape, 1.0);
        for (d, &p) in dims.iter().enumerate() {
            let f: Vec<f64> = (0..p).map(|_| rng.uniform(0.5, 1.5).powf(2.0 / order)).collect();
            let mut idx = vec![0usize; dims.len()];
            for v in t.data_mut() {
                *v *= f[idx[d]];
                for k in (0..dims.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < dims[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
        t
    } else {
        DenseTensor::new(shape.clone(), (0..shape.numel()).map(|_| rng.uniform(0.5, 1.5).powi(2)).collect())?
    };
    let r: usize = ranks.iter().product();
    let var: Vec<f64> = (0..r).map(|_| rng.uniform(0.5, 9.0)).collect();
    let betas: Vec<f64> = dims.iter().map(|_| rng.uniform(0.0, 1.0)).collect();
    GaussianModel::with_diagonal_core(basis, &var, noise, betas)
}

fn random_dims(rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let order = 2 + rng.below(2);
    let max_p = [6, 5, 4];
    let max_r = [3, 2, 2];
    let dims: Vec<usize> = (0..order).map(|d| 2 + rng.below(max_p[d] - 1)).collect();
    let ranks: Vec<usize> = (0..order).map(|d| 1 + rng.below(max_r[d].min(dims[d]))).collect();
    (dims, ranks)
}

/// Subspace/complement score, closed form and dense solve agree pairwise.
/// `perturb` scales the decomposition score by `1 + perturb`.
pub fn oracle_triangle(seed: u64, cases: usize, perturb: f64) -> Result<CheckOutcome> {
    let mut rng = Rng::new(seed).substream("triangle", 0);
    let sched = DiffusionSchedule::default();
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (dims, ranks) = random_dims(&mut rng);
        let homogeneous = case % 3 == 0;
        let m = random_gaussian_model(&dims, &ranks, homogeneous, false, &mut rng)?;
        let t = rng.uniform(sched.t0, sched.t_end);
        let x = sample_standard_normal(m.shape(), &mut rng).scale(rng.uniform(0.5, 3.0));
        let general = oracle_score_general(&m, &x, t, &sched)?.scale(1.0 + perturb);
        let brute = brute_force_gaussian_score(&m, &x, t, &sched)?;
        worst = worst.max(rel_err(&general, &brute));
        if homogeneous {
            let homog = oracle_score_gaussian_homog(&m, &x, t, &sched)?;
            worst = worst.max(rel_err(&general, &homog)).max(rel_err(&homog, &brute));
        }
    }
    Ok(outcome("oracle triangle", worst <= 1e-8, format!("{cases} cases, max rel err {worst:.3e}")))
}

/// A network assembled from ground-truth parameters reproduces the score.
pub fn representability(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut rng = Rng::new(seed).substream("representability", 0);
    let sched = DiffusionSchedule::default();
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (dims, ranks) = random_dims(&mut rng);
        let homogeneous = case % 2 == 0;
        let m = random_gaussian_model(&dims, &ranks, homogeneous, true, &mut rng)?;
        let net = TuckerScoreNet::from_gaussian(&m, sched, !homogeneous)?;
        let t = rng.uniform(sched.t0, sched.t_end);
        let x = sample_standard_normal(m.shape(), &mut rng).scale(2.0);
        let (s, _) = net.score_forward(&x, t)?;
        worst = worst.max(rel_err(&s, &oracle_score_general(&m, &x, t, &sched)?));
    }
    Ok(outcome("representability", worst <= 1e-8, format!("{cases} cases, max rel err {worst:.3e}")))
}

/// Directional finite differences for the MLP and the full network.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed).substream("gradients", 0);

    let mut store = ParamStore::new();
    let mlp = Mlp::init(MlpSpec::new(4, 3, vec![8, 6])?, &mut store, "f", &mut rng, false)?;
    let x = Matrix::from_fn(5, 4, |_, _| rng.normal());
    let c = Matrix::from_fn(5, 3, |_, _| rng.normal());
    let (_, tape) = mlp_forward(&mlp, &store, &x)?;
    mlp_backward(&mlp, &mut store, &tape, &c)?;
    let analytic = grads_snapshot(&store);
    let rep = directional_grad_check(
        &store,
        &analytic,
        |s| {
            let (out, _) = mlp_forward(&mlp, s, &x)?;
            Ok(out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
        },
        20,
        1e-5,
        &mut rng,
    )?;
    let mlp_check = outcome(
        "mlp gradients",
        rep.max_rel_err < 1e-4,
        format!("max rel err {:.3e}", rep.max_rel_err),
    );

    let mut worst: f64 = 0.0;
    for heterogeneity in [true, false] {
        let mut cfg = NetConfig::new(vec![4, 3], vec![2, 2], InitMode::Cold);
        cfg.heterogeneity = heterogeneity;
        cfg.sigma_max2 = Some(10.0);
        cfg.omega_init = Some(0.7);
        cfg.hidden = Some(vec![16, 16]);
        let mut net = init_net(&cfg, None, &rng.substream("net", heterogeneity as u64))?;
        for id in 0..net.store.len() {
            for v in net.store.value_mut(id) {
                *v += 0.1 * rng.normal();
            }
        }
        for id in net.omega_ids().to_vec() {
            for v in net.store.value_mut(id) {
                *v = v.abs() + 0.2;
            }
        }
        let shape = net.shape();
        let xs: Vec<DenseTensor> = (0..3).map(|_| sample_standard_normal(&shape, &mut rng)).collect();
        let ts = [0.01, 0.5, 3.0];
        let cs: Vec<DenseTensor> = (0..3).map(|_| sample_standard_normal(&shape, &mut rng)).collect();
        let (_, tape) = net.forward_batch(&xs, &ts)?;
        net.score_backward(&tape, &cs)?;
        let analytic = grads_snapshot(&net.store);
        let probe = net.clone();
        let rep = directional_grad_check(
            &net.store,
            &analytic,
            |s| {
                let mut n = probe.clone();
                n.store = s.clone();
                let (out, _) = n.forward_batch(&xs, &ts)?;
                Ok(out.iter().zip(&cs).map(|(a, b)| a.dot(b).unwrap_or(f64::NAN)).sum())
            },
            20,
            1e-6,
            &mut rng,
        )?;
        worst = worst.max(rep.max_rel_err);
    }
    let net_check = outcome("network gradients", worst < 1e-4, format!("max rel err {worst:.3e}"));
    Ok(vec![mlp_check, net_check])
}

/// Shape (6, 5), ranks (2, 2) test model for the sampler. Noise variance at
/// entry (i, j) is `0.25 q^(i + 6j)`: separable, and every bulk level is
/// distinct, so sorted sample eigenvalues track their analytic partners
/// instead of smearing across a cluster.
pub fn sampler_check_model(seed: u64) -> Result<GaussianModel> {
    const Q: f64 = 1.08;
    let mut rng = Rng::new(seed).substream("sampler-model", 0);
    let (dims, ranks) = ([6usize, 5], [2usize, 2]);
    let basis = random_basis(&dims, &ranks, &mut rng)?;
    let shape = TensorShape::new(dims.to_vec())?;
    let noise = DenseTensor::new(
        shape,
        (0..30).map(|k| 0.25 * Q.powi(k / 5 + 6 * (k % 5))).collect(),
    )?;
    GaussianModel::with_diagonal_core(basis, &[20.0, 12.0, 7.0, 4.0], noise, vec![0.0, 0.0])
}

/// Generated covariance spectrum and recovered frames for the sampler
/// test model.
pub fn sampler_covariance(seed: u64, n_gen: usize, steps: usize) -> Result<CheckOutcome> {
    let m = sampler_check_model(seed)?;
    let cfg = SamplerConfig {
        steps,
        scheme: Scheme::EulerMaruyama,
        sched: DiffusionSchedule::default(),
        seed,
        n_gen,
    };
    let (_, rep) = generate_tucker_gaussian_check(&m, &cfg)?;
    let mut dmax: f64 = 0.0;
    for d in 0..2 {
        dmax = dmax.max(projection_metric(rep.recovered.frame(d), m.basis.frame(d))?);
    }
    let passed = rep.top_max_rel_err <= 0.10 && rep.bulk_max_rel_err <= 0.15 && dmax <= 0.1;
    Ok(outcome(
        "sampler covariance",
        passed,
        format!(
            "top {:.3}, bulk {:.3}, D {:.3e}",
            rep.top_max_rel_err, rep.bulk_max_rel_err, dmax
        ),
    ))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64, perturb: f64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![oracle_triangle(seed, 100, perturb)?, representability(seed, 20)?];
    out.extend(gradient_checks(seed)?);
    out.push(sampler_covariance(seed, 5000, 200)?);
    Ok(out)
}
