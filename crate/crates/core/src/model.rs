//! Pluggable toy models standing in for a real simulation code: propagate,
//! observe, perturb, truth/observation generation, and an exact Kalman
//! oracle for the linear-Gaussian case.
//!
//! Propagation is a pure function of (state, spec, task seed). The seed is
//! derived from the experiment seed and the task's structural position, so
//! re-running a task on another runner, or after a crash, reproduces the
//! result bit for bit.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::ObsVector;
use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
}

/// A model state vector; all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Divergence("non-finite state entry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearGaussian,
    Lorenz96,
    SyntheticDelay,
}

/// Model configuration. `a` applies to linear-Gaussian, `forcing`/`dt` to
/// Lorenz-96, `base_ms`/`jitter_ms` to the synthetic-delay model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_x: usize,
    #[serde(default)]
    pub process_noise_sigma: f64,
    #[serde(default = "default_steps")]
    pub steps_per_cycle: u32,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub forcing: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub base_ms: Option<f64>,
    #[serde(default)]
    pub jitter_ms: Option<f64>,
}

fn default_steps() -> u32 {
    1
}

impl ModelSpec {
    pub fn linear_gaussian(d_x: usize, a: f64, process_noise_sigma: f64) -> Self {
        ModelSpec {
            kind: ModelKind::LinearGaussian,
            d_x,
            process_noise_sigma,
            steps_per_cycle: 1,
            a: Some(a),
            forcing: None,
            dt: None,
            base_ms: None,
            jitter_ms: None,
        }
    }

    pub fn lorenz96(d_x: usize, forcing: f64, dt: f64, steps_per_cycle: u32) -> Self {
        ModelSpec {
            kind: ModelKind::Lorenz96,
            d_x,
            process_noise_sigma: 0.0,
            steps_per_cycle,
            a: None,
            forcing: Some(forcing),
            dt: Some(dt),
            base_ms: None,
            jitter_ms: None,
        }
    }

    pub fn synthetic_delay(base_ms: f64, jitter_ms: f64) -> Self {
        ModelSpec {
            kind: ModelKind::SyntheticDelay,
            d_x: 1,
            process_noise_sigma: 0.0,
            steps_per_cycle: 1,
            a: None,
            forcing: None,
            dt: None,
            base_ms: Some(base_ms),
            jitter_ms: Some(jitter_ms),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_x == 0 {
            return Err(ModelError::Spec("d_x must be positive".into()));
        }
        if self.steps_per_cycle == 0 {
            return Err(ModelError::Spec("steps_per_cycle must be positive".into()));
        }
        if !(self.process_noise_sigma.is_finite() && self.process_noise_sigma >= 0.0) {
            return Err(ModelError::Spec(
                "process_noise_sigma must be non-negative".into(),
            ));
        }
        match self.kind {
            ModelKind::LinearGaussian => {
                if self.a.is_none() {
                    return Err(ModelError::Spec("linear-gaussian requires `a`".into()));
                }
            }
            ModelKind::Lorenz96 => {
                if self.forcing.is_none() || self.dt.is_none() {
                    return Err(ModelError::Spec(
                        "lorenz96 requires `forcing` and `dt`".into(),
                    ));
                }
                if self.d_x < 4 {
                    return Err(ModelError::Spec("lorenz96 requires d_x >= 4".into()));
                }
            }
            ModelKind::SyntheticDelay => {
                if self.base_ms.is_none() {
                    return Err(ModelError::Spec("synthetic-delay requires `base_ms`".into()));
                }
            }
        }
        Ok(())
    }
}

/// Projection from state space to observation space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ObservationOperatorSpec {
    Identity,
    Subsample { indices: Vec<usize> },
}

impl ObservationOperatorSpec {
    pub fn validate(&self, d_x: usize) -> Result<(), ModelError> {
        if let ObservationOperatorSpec::Subsample { indices } = self {
            let mut seen = std::collections::BTreeSet::new();
            for &i in indices {
                if i >= d_x {
                    return Err(ModelError::Shape(format!(
                        "observed index {i} out of range for d_x {d_x}"
                    )));
                }
                if !seen.insert(i) {
                    return Err(ModelError::Shape(format!("duplicate observed index {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self, d_x: usize) -> usize {
        match self {
            ObservationOperatorSpec::Identity => d_x,
            ObservationOperatorSpec::Subsample { indices } => indices.len(),
        }
    }
}

fn gaussian_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    normal.sample(rng)
}

fn lorenz96_tendency(x: &[f64], forcing: f64, out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
}

fn lorenz96_rk4_step(x: &mut Vec<f64>, forcing: f64, dt: f64) {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    lorenz96_tendency(x, forcing, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    lorenz96_tendency(&tmp, forcing, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    lorenz96_tendency(&tmp, forcing, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    lorenz96_tendency(&tmp, forcing, &mut k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Advance one particle state through one assimilation cycle.
///
/// Seeded process noise is added after each step for the stochastic models;
/// the synthetic-delay model sleeps `base_ms` plus seeded jitter drawn
/// uniformly from [0, jitter_ms] and increments a step counter in the state.
pub fn propagate(
    state: &StateVector,
    spec: &ModelSpec,
    task_seed: u64,
) -> Result<StateVector, ModelError> {
    spec.validate()?;
    if state.dim() != spec.d_x {
        return Err(ModelError::Shape(format!(
            "state dim {} != model d_x {}",
            state.dim(),
            spec.d_x
        )));
    }
    let mut rng = rng::seeded_rng(task_seed);
    let mut x = state.0.clone();
    match spec.kind {
        ModelKind::LinearGaussian => {
            let a = spec.a.unwrap();
            for _ in 0..spec.steps_per_cycle {
                for v in x.iter_mut() {
                    *v = a * *v + gaussian_noise(&mut rng, spec.process_noise_sigma);
                }
            }
        }
        ModelKind::Lorenz96 => {
            let forcing = spec.forcing.unwrap();
            let dt = spec.dt.unwrap();
            for _ in 0..spec.steps_per_cycle {
                lorenz96_rk4_step(&mut x, forcing, dt);
                if spec.process_noise_sigma > 0.0 {
                    for v in x.iter_mut() {
                        *v += gaussian_noise(&mut rng, spec.process_noise_sigma);
                    }
                }
            }
        }
        ModelKind::SyntheticDelay => {
            let base = spec.base_ms.unwrap();
            let jitter = spec.jitter_ms.unwrap_or(0.0);
            for step in 0..spec.steps_per_cycle {
                let extra = jitter * rng::unit_uniform(task_seed, step as u64);
                let total_ms = base.max(0.0) + extra.max(0.0);
                if total_ms > 0.0 {
                    std::thread::sleep(std::time::Duration::from_secs_f64(total_ms / 1000.0));
                }
                // x[0] counts propagation steps; any further components take
                // the seeded process noise so ensembles can still spread.
                x[0] += 1.0;
                for v in x.iter_mut().skip(1) {
                    *v += gaussian_noise(&mut rng, spec.process_noise_sigma);
                }
            }
        }
    }
    let out = StateVector(x);
    out.check_finite()?;
    Ok(out)
}

/// Apply the observation operator H (no noise; noise belongs to likelihood
/// evaluation and truth generation).
pub fn observe(state: &StateVector, op: &ObservationOperatorSpec) -> Result<ObsVector, ModelError> {
    op.validate(state.dim())?;
    match op {
        ObservationOperatorSpec::Identity => Ok(ObsVector(state.0.clone())),
        ObservationOperatorSpec::Subsample { indices } => {
            Ok(ObsVector(indices.iter().map(|&i| state.0[i]).collect()))
        }
    }
}

/// Add seeded zero-mean Gaussian noise of the given standard deviation to
/// every component. Magnitude zero returns the input bit-exactly.
pub fn perturb(state: &StateVector, magnitude: f64, seed: u64) -> StateVector {
    if magnitude == 0.0 {
        return state.clone();
    }
    let mut rng = rng::seeded_rng(seed);
    StateVector(
        state
            .0
            .iter()
            .map(|v| v + gaussian_noise(&mut rng, magnitude))
            .collect(),
    )
}

/// Exact 1-D Kalman filter recursion for the linear-Gaussian model; the
/// oracle that the particle-filter acceptance run is checked against.
///
/// Returns one (posterior mean, posterior variance) pair per observation.
pub fn kalman_oracle(
    spec: &ModelSpec,
    obs_sigma: f64,
    observations: &[ObsVector],
    prior_mean: f64,
    prior_var: f64,
) -> Result<Vec<(f64, f64)>, ModelError> {
    spec.validate()?;
    if spec.kind != ModelKind::LinearGaussian || spec.d_x != 1 {
        return Err(ModelError::Spec(
            "kalman oracle requires the 1-D linear-gaussian model".into(),
        ));
    }
    if !(prior_var > 0.0) || !(obs_sigma > 0.0) {
        return Err(ModelError::Spec(
            "prior variance and obs sigma must be positive".into(),
        ));
    }
    let a = spec.a.unwrap();
    let q = spec.process_noise_sigma * spec.process_noise_sigma;
    let r = obs_sigma * obs_sigma;
    let mut mean = prior_mean;
    let mut var = prior_var;
    let mut out = Vec::with_capacity(observations.len());
    for obs in observations {
        if obs.dim() != 1 {
            return Err(ModelError::Shape("oracle expects 1-D observations".into()));
        }
        // Predict through steps_per_cycle applications of x -> a x + noise.
        for _ in 0..spec.steps_per_cycle {
            mean = a * mean;
            var = a * a * var + q;
        }
        // Update with the identity observation operator.
        let gain = var / (var + r);
        mean += gain * (obs.0[0] - mean);
        var *= 1.0 - gain;
        out.push((mean, var));
    }
    Ok(out)
}

/// Propagate a designated truth state and emit noisy projections of it, one
/// observation per cycle. Pure in the seed.
pub fn generate_truth_and_observations(
    spec: &ModelSpec,
    op: &ObservationOperatorSpec,
    obs_sigma: f64,
    initial: &StateVector,
    cycles: u64,
    experiment_seed: u64,
) -> Result<(Vec<StateVector>, Vec<ObsVector>), ModelError> {
    spec.validate()?;
    op.validate(spec.d_x)?;
    if !(obs_sigma >= 0.0) {
        return Err(ModelError::Spec("obs_sigma must be non-negative".into()));
    }
    let mut truth = Vec::with_capacity(cycles as usize);
    let mut observations = Vec::with_capacity(cycles as usize);
    let mut x = initial.clone();
    for cycle in 1..=cycles {
        let seed = rng::derive_seed(experiment_seed, rng::SALT_OBS_NOISE, &[cycle, 0]);
        x = propagate(&x, spec, rng::derive_seed(experiment_seed, rng::SALT_OBS_NOISE, &[cycle, 1]))?;
        let mut y = observe(&x, op)?;
        let mut noise_rng = rng::seeded_rng(seed);
        for v in y.0.iter_mut() {
            *v += gaussian_noise(&mut noise_rng, obs_sigma);
        }
        truth.push(x.clone());
        observations.push(y);
    }
    Ok((truth, observations))
}

/// Draw the initial ensemble around a prior mean; member `i` is a pure
/// function of (experiment seed, i).
pub fn initial_ensemble(
    d_x: usize,
    mean: f64,
    sigma: f64,
    ensemble_size: usize,
    experiment_seed: u64,
) -> Vec<StateVector> {
    (0..ensemble_size)
        .map(|i| {
            let seed = rng::derive_seed(experiment_seed, rng::SALT_INIT, &[i as u64]);
            let mut rng = rng::seeded_rng(seed);
            StateVector((0..d_x).map(|_| mean + gaussian_noise(&mut rng, sigma)).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_dynamics() {
        let spec = ModelSpec::linear_gaussian(1, 1.0, 0.0);
        let out = propagate(&StateVector(vec![3.0]), &spec, 9).unwrap();
        assert_eq!(out.0, vec![3.0]);
    }

    #[test]
    fn linear_two_steps_halving() {
        let mut spec = ModelSpec::linear_gaussian(1, 0.5, 0.0);
        spec.steps_per_cycle = 2;
        let out = propagate(&StateVector(vec![4.0]), &spec, 9).unwrap();
        assert_eq!(out.0, vec![1.0]);
    }

    #[test]
    fn lorenz96_is_finite_and_deterministic() {
        let spec = ModelSpec::lorenz96(40, 8.0, 0.05, 10);
        let mut init = vec![8.0; 40];
        init[0] += 0.01;
        let a = propagate(&StateVector(init.clone()), &spec, 1234).unwrap();
        let b = propagate(&StateVector(init), &spec, 1234).unwrap();
        a.check_finite().unwrap();
        assert_eq!(a, b, "same task seed must give bit-identical states");
    }

    #[test]
    fn lorenz96_fixed_point_maps_to_itself() {
        let spec = ModelSpec::lorenz96(40, 8.0, 0.01, 1);
        let fixed = StateVector(vec![8.0; 40]);
        let out = propagate(&fixed, &spec, 0).unwrap();
        for v in &out.0 {
            assert!((v - 8.0).abs() < 1e-9, "fixed point drifted to {v}");
        }
    }

    #[test]
    fn observe_identity_and_subsample() {
        let x = StateVector(vec![1.0, 2.0, 3.0]);
        let id = observe(&x, &ObservationOperatorSpec::Identity).unwrap();
        assert_eq!(id.0, vec![1.0, 2.0, 3.0]);
        let sub = observe(
            &x,
            &ObservationOperatorSpec::Subsample { indices: vec![0, 2] },
        )
        .unwrap();
        assert_eq!(sub.0, vec![1.0, 3.0]);
        let bad = observe(
            &x,
            &ObservationOperatorSpec::Subsample { indices: vec![5] },
        );
        assert!(matches!(bad, Err(ModelError::Shape(_))));
    }

    #[test]
    fn perturb_zero_magnitude_is_bit_exact() {
        let x = StateVector(vec![1.0, -2.5, 3.25]);
        let out = perturb(&x, 0.0, 77);
        assert_eq!(out, x);
    }

    #[test]
    fn perturb_is_deterministic_in_seed() {
        let x = StateVector(vec![0.0; 16]);
        assert_eq!(perturb(&x, 1.0, 5), perturb(&x, 1.0, 5));
        assert_ne!(perturb(&x, 1.0, 5), perturb(&x, 1.0, 6));
    }

    #[test]
    fn perturb_sample_std_near_magnitude() {
        let x = StateVector(vec![0.0; 1000]);
        let out = perturb(&x, 1.0, 99);
        let mean: f64 = out.0.iter().sum::<f64>() / 1000.0;
        let var: f64 = out.0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 999.0;
        let std = var.sqrt();
        assert!((0.9..=1.1).contains(&std), "sample std {std}");
    }

    #[test]
    fn observe_of_zero_perturb_matches_observe() {
        let x = StateVector(vec![4.0, 5.0]);
        let a = observe(&perturb(&x, 0.0, 3), &ObservationOperatorSpec::Identity).unwrap();
        let b = observe(&x, &ObservationOperatorSpec::Identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kalman_single_update_hand_values() {
        let spec = ModelSpec::linear_gaussian(1, 1.0, 0.0);
        let posts = kalman_oracle(&spec, 1.0, &[ObsVector(vec![0.0])], 2.0, 1.0).unwrap();
        assert!((posts[0].0 - 1.0).abs() < 1e-12);
        assert!((posts[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kalman_two_updates_hand_recursion() {
        let spec = ModelSpec::linear_gaussian(1, 1.0, 0.0);
        let obs = vec![ObsVector(vec![0.0]), ObsVector(vec![0.0])];
        let posts = kalman_oracle(&spec, 1.0, &obs, 2.0, 1.0).unwrap();
        assert!((posts[1].0 - 2.0 / 3.0).abs() < 1e-12);
        assert!((posts[1].1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kalman_uninformative_observation_keeps_prior() {
        let spec = ModelSpec::linear_gaussian(1, 1.0, 0.0);
        let posts = kalman_oracle(&spec, 1e9, &[ObsVector(vec![100.0])], 2.0, 1.0).unwrap();
        assert!((posts[0].0 - 2.0).abs() < 1e-6);
        assert!((posts[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truth_generation_noiseless_matches_truth() {
        let spec = ModelSpec::linear_gaussian(1, 1.0, 0.0);
        let (truth, obs) = generate_truth_and_observations(
            &spec,
            &ObservationOperatorSpec::Identity,
            0.0,
            &StateVector(vec![1.0]),
            5,
            42,
        )
        .unwrap();
        assert_eq!(truth.len(), 5);
        for (x, y) in truth.iter().zip(&obs) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.0, vec![1.0]);
        }
    }

    #[test]
    fn truth_generation_is_deterministic() {
        let spec = ModelSpec::linear_gaussian(2, 0.9, 0.1);
        let op = ObservationOperatorSpec::Subsample { indices: vec![1] };
        let init = StateVector(vec![0.5, -0.5]);
        let a = generate_truth_and_observations(&spec, &op, 0.3, &init, 8, 7).unwrap();
        let b = generate_truth_and_observations(&spec, &op, 0.3, &init, 8, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_ensemble_is_deterministic_per_member() {
        let a = initial_ensemble(3, 0.0, 1.0, 4, 42);
        let b = initial_ensemble(3, 0.0, 1.0, 4, 42);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
