//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use vbhmm::{DirichletRow, GaussWishart, HmmParams, HmmPosterior, ObservationSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Marginals by summing over every state path.
pub struct Enumerated {
    pub gamma: DMatrix<f64>,
    pub xi: Vec<DMatrix<f64>>,
    pub log_z: f64,
}

pub fn enumerate_paths(log_pi: &[f64], log_a: &DMatrix<f64>, log_b: &DMatrix<f64>) -> Enumerated {
    let n = log_b.nrows();
    let j = log_b.ncols();
    let total = j.pow(n as u32);
    let mut path = vec![0usize; n];
    let mut weights = Vec::with_capacity(total);
    let mut paths = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % j;
            c /= j;
        }
        let mut w = log_pi[path[0]] + log_b[(0, path[0])];
        for t in 1..n {
            w += log_a[(path[t - 1], path[t])] + log_b[(t, path[t])];
        }
        weights.push(w);
        paths.push(path.clone());
    }
    let log_z = log_sum_exp(&weights);
    let mut gamma = DMatrix::zeros(n, j);
    let mut xi = vec![DMatrix::zeros(j, j); n.saturating_sub(1)];
    for (w, p) in weights.iter().zip(&paths) {
        let prob = (w - log_z).exp();
        for t in 0..n {
            gamma[(t, p[t])] += prob;
            if t + 1 < n {
                xi[t][(p[t], p[t + 1])] += prob;
            }
        }
    }
    Enumerated { gamma, xi, log_z }
}

pub fn random_dirichlet(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> DirichletRow {
    DirichletRow::new((0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&b * b.transpose() + DMatrix::identity(d, d) * 0.5) * scale
}

pub fn random_gauss_wishart(rng: &mut ChaCha8Rng, d: usize) -> GaussWishart {
    let m = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let beta = rng.random_range(0.2..20.0);
    let scale = rng.random_range(0.1..2.0);
    let w = random_spd(rng, d, scale);
    let nu = d as f64 - 1.0 + rng.random_range(0.5..30.0);
    GaussWishart::new(m, beta, w, nu).unwrap()
}

pub fn random_posterior(rng: &mut ChaCha8Rng, j: usize, d: usize) -> HmmPosterior {
    let initial = random_dirichlet(rng, j, 0.3, 5.0);
    let transitions = (0..j).map(|_| random_dirichlet(rng, j, 0.3, 5.0)).collect();
    let emissions = (0..j).map(|_| random_gauss_wishart(rng, d)).collect();
    HmmPosterior::new(initial, transitions, emissions).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> ObservationSequence {
    let obs = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| spread * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    ObservationSequence::new(obs).unwrap()
}

/// Closed-form conjugate update of a Gaussian-Wishart prior with raw data,
/// written from the natural-parameter sums rather than weighted statistics.
pub fn conjugate_update(prior: &GaussWishart, xs: &[DVector<f64>]) -> (DVector<f64>, f64, DMatrix<f64>, f64) {
    let d = prior.dim();
    let n = xs.len() as f64;
    let sum = xs.iter().fold(DVector::zeros(d), |acc, x| acc + x);
    let outer = xs.iter().fold(DMatrix::zeros(d, d), |acc, x| acc + x * x.transpose());
    let beta = prior.beta() + n;
    let nu = prior.nu() + n;
    let m = (prior.m() * prior.beta() + &sum) / beta;
    let w_inv = prior.w().clone().try_inverse().unwrap() + outer + prior.m() * prior.m().transpose() * prior.beta()
        - &m * m.transpose() * beta;
    (m, beta, w_inv.try_inverse().unwrap(), nu)
}

pub fn ln_gamma_ref(x: f64) -> f64 {
    vbhmm::special::ln_gamma(x).unwrap()
}

/// ln of the Wishart density at `lambda`, assembled term by term.
pub fn ln_wishart_pdf(lambda: &DMatrix<f64>, w: &DMatrix<f64>, nu: f64) -> f64 {
    let d = w.nrows();
    let df = d as f64;
    let ln_det_w = w.determinant().ln();
    let ln_det_l = lambda.determinant().ln();
    let mut ln_mg = df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for i in 1..=d {
        ln_mg += ln_gamma_ref((nu + 1.0 - i as f64) / 2.0);
    }
    let tr = (w.clone().try_inverse().unwrap() * lambda).trace();
    0.5 * (nu - df - 1.0) * ln_det_l - 0.5 * tr - 0.5 * nu * df * 2f64.ln() - 0.5 * nu * ln_det_w - ln_mg
}

pub fn ln_gauss_pdf(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    0.5 * precision.determinant().ln()
        - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * (diff.transpose() * precision * &diff)[(0, 0)]
}

/// Bartlett-decomposition Wishart draw.
pub fn sample_wishart(rng: &mut ChaCha8Rng, w: &DMatrix<f64>, nu: f64) -> DMatrix<f64> {
    let d = w.nrows();
    let l = w.clone().cholesky().unwrap().l();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        a[(i, i)] = ChiSquared::new(nu - i as f64).unwrap().sample(rng).sqrt();
        for k in 0..i {
            a[(i, k)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    &la * la.transpose()
}

pub fn sample_gauss_wishart(rng: &mut ChaCha8Rng, gw: &GaussWishart) -> (DVector<f64>, DMatrix<f64>) {
    let lambda = sample_wishart(rng, gw.w(), gw.nu());
    let cov = (&lambda * gw.beta()).try_inverse().unwrap();
    let l = cov.cholesky().unwrap().l();
    let z = DVector::from_fn(gw.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    (gw.m() + l * z, lambda)
}

pub fn ln_gauss_wishart_pdf(gw: &GaussWishart, mu: &DVector<f64>, lambda: &DMatrix<f64>) -> f64 {
    ln_gauss_pdf(mu, gw.m(), &(lambda * gw.beta())) + ln_wishart_pdf(lambda, gw.w(), gw.nu())
}

/// Monte Carlo KL(q‖p) and its standard error.
pub fn mc_gauss_wishart_kl(rng: &mut ChaCha8Rng, q: &GaussWishart, p: &GaussWishart, draws: usize) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let (mu, lambda) = sample_gauss_wishart(rng, q);
        let v = ln_gauss_wishart_pdf(q, &mu, &lambda) - ln_gauss_wishart_pdf(p, &mu, &lambda);
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// A small well-separated model with `j` states in `d` dimensions.
pub fn separated_model(j: usize, d: usize, stay: f64) -> HmmParams {
    let a = if j == 1 {
        DMatrix::from_element(1, 1, 1.0)
    } else {
        DMatrix::from_fn(j, j, |r, c| if r == c { stay } else { (1.0 - stay) / (j as f64 - 1.0) })
    };
    let means = (0..j)
        .map(|k| DVector::from_fn(d, |i, _| 4.0 * k as f64 * if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect();
    let covs = (0..j).map(|_| DMatrix::identity(d, d)).collect();
    HmmParams::new(vec![1.0 / j as f64; j], a, means, covs).unwrap()
}

/// Best permutation for matching estimated means to true means by total distance.
pub fn align(estimated: &[DVector<f64>], truth: &[DVector<f64>]) -> Vec<usize> {
    let j = truth.len();
    let mut best = (f64::INFINITY, (0..j).collect::<Vec<_>>());
    permutations(j, &mut |perm: &[usize]| {
        let cost: f64 = (0..j).map(|k| (&estimated[perm[k]] - &truth[k]).norm()).sum();
        if cost < best.0 {
            best = (cost, perm.to_vec());
        }
    });
    best.1
}

pub fn permutations(n: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(k: usize, p: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, f);
            p.swap(k, i);
        }
    }
    let mut p: Vec<usize> = (0..n).collect();
    rec(0, &mut p, f);
}
