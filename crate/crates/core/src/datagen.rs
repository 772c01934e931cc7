//! Sampling labelled sequences from a known HMM.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VbError};
use crate::linalg;
use crate::model::GroundTruthHmm;
use crate::sequence::ObservationSequence;

fn categorical(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = k;
        }
        if u < acc {
            return k;
        }
    }
    last
}

/// Draws `n` steps: the state path from π then A, each observation from the
/// state's Gaussian. The same seed always gives the same output.
pub fn sample(model: &GroundTruthHmm, n: usize, seed: u64) -> Result<(ObservationSequence, Vec<usize>)> {
    if n == 0 {
        return Err(VbError::InvalidConfig("sequence length must be at least 1".into()));
    }
    model.validate()?;
    let factors: Vec<DMatrix<f64>> = model
        .covariances
        .iter()
        .map(|c| linalg::cholesky(c).map(|ch| ch.l()))
        .collect::<Result<_>>()?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    let mut z = categorical(&mut rng, model.pi.iter().copied());
    for t in 0..n {
        if t > 0 {
            z = categorical(&mut rng, model.a.row(z).iter().copied());
        }
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        obs.push(&model.means[z] + &factors[z] * eps);
        states.push(z);
    }
    Ok((ObservationSequence::new(obs)?, states))
}

/// Two 2-D unit-covariance states at (0,0) and (10,10) with 0.9 self-transitions.
pub fn benchmark_two_state() -> GroundTruthHmm {
    GroundTruthHmm::new(
        vec![0.5, 0.5],
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
        vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![10.0, 10.0])],
        vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
    )
    .expect("valid benchmark model")
}

/// `copies` repetitions of one point followed by `scattered` points spread
/// around it in 2-D.
pub fn duplicate_point_dataset(copies: usize, scattered: usize, seed: u64) -> Result<ObservationSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = DVector::from_vec(vec![1.0, -1.0]);
    let mut obs = vec![point; copies];
    for _ in 0..scattered {
        obs.push(DVector::from_fn(2, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal)));
    }
    ObservationSequence::new(obs)
}
