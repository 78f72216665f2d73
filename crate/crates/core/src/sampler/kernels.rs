use rand::Rng;
use rand_distr::StandardNormal;

use super::models::LogDensity;

/// Current position of one chain with its cached log density and gradient.
#[derive(Debug, Clone)]
pub struct State {
    pub q: Vec<f64>,
    pub lp: f64,
    pub grad: Vec<f64>,
}

impl State {
    pub fn new(target: &dyn LogDensity, q: Vec<f64>) -> Self {
        let (lp, grad) = target.log_density_and_gradient(&q);
        Self { q, lp, grad }
    }
}

fn metropolis<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if !log_ratio.is_finite() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// One random-walk Metropolis step with isotropic Gaussian proposals.
pub fn rwmh_step<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    state: &mut State,
    step: f64,
    rng: &mut R,
) -> bool {
    let proposal: Vec<f64> = state
        .q
        .iter()
        .map(|x| x + step * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = target.log_density(&proposal);
    let accepted = metropolis(rng, lp - state.lp);
    if accepted {
        *state = State::new(target, proposal);
    }
    accepted
}

/// One HMC transition: `n_leapfrog` leapfrog steps with identity mass, then
/// a Metropolis correction on the Hamiltonian error.
pub fn hmc_step<R: Rng + ?Sized>(
    target: &dyn LogDensity,
    state: &mut State,
    step: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> bool {
    let mut p: Vec<f64> = (0..state.q.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let kinetic = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let h0 = -state.lp + kinetic(&p);

    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    let mut lp = state.lp;
    for _ in 0..n_leapfrog {
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * step * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step * pi;
        }
        (lp, grad) = target.log_density_and_gradient(&q);
        if !lp.is_finite() {
            break;
        }
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * step * gi;
        }
    }
    let h1 = -lp + kinetic(&p);
    let accepted = metropolis(rng, h0 - h1);
    if accepted {
        *state = State { q, lp, grad };
    }
    accepted
}
