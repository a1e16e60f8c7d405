//! Euler–Maruyama integration of the N-agent system.

use rayon::prelude::*;

use crate::error::{config_err, Error, Result};
use crate::model::{
    interaction_drift, noise_amplitude_with, total_drift, Kernel, ModelParams, NoiseSpec, SystemState,
};
use crate::neighbors::neighbor_lists;
use crate::rng::{Purpose, Stream};
use crate::scalar::Scalar;

/// One Gaussian component of an initial law.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<T: Scalar = f64> {
    pub mean_position: Vec<T>,
    pub mean_opinion: T,
    pub std_position: T,
    pub std_opinion: T,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw<T: Scalar = f64> {
    /// Independent uniform coordinates; one `(low, high)` per spatial axis.
    UniformBox { position: Vec<(T, T)>, opinion: (T, T) },
    GaussianMixture { components: Vec<MixtureComponent<T>> },
}

impl<T: Scalar> InitLaw<T> {
    /// Uniform positions in `[-half, half]^dim`, uniform opinions in `[lo, hi]`.
    pub fn centered_box(dim: usize, half: T, opinion: (T, T)) -> Self {
        InitLaw::UniformBox { position: vec![(-half, half); dim], opinion }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitLaw::UniformBox { position, opinion } => {
                if position.len() != dim {
                    return config_err(format!("{} position bounds for dimension {dim}", position.len()));
                }
                for &(lo, hi) in position.iter().chain(std::iter::once(opinion)) {
                    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                        return config_err(format!("malformed bounds [{lo}, {hi}]"));
                    }
                }
            }
            InitLaw::GaussianMixture { components } => {
                if components.is_empty() {
                    return config_err("gaussian mixture without components");
                }
                for c in components {
                    if c.mean_position.len() != dim {
                        return config_err("mixture mean has wrong dimension");
                    }
                    if !(c.weight > T::zero()) {
                        return config_err("mixture weights must be positive");
                    }
                    if !(c.std_position >= T::zero()) || !(c.std_opinion >= T::zero()) {
                        return config_err("mixture standard deviations must be non-negative");
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T: Scalar = f64> {
    pub n_agents: usize,
    pub t_end: T,
    pub dt: T,
    pub init: InitLaw<T>,
    pub model: ModelParams<T>,
    pub noise: NoiseSpec<T>,
    pub kernel: Kernel<T>,
    pub seed: u64,
    pub snapshot_stride: usize,
}

impl<T: Scalar> SimConfig<T> {
    /// N = 100 agents in `[-0.25, 0.25]^2` with opinions in `[-1, 1]`, α = β = 20,
    /// R = 0.15, T = 2.5, dt = 0.01 and additive noise `sigma`.
    pub fn baseline(sigma: T, seed: u64) -> Self {
        SimConfig {
            n_agents: 100,
            t_end: T::lit(2.5),
            dt: T::lit(0.01),
            init: InitLaw::centered_box(2, T::lit(0.25), (-T::one(), T::one())),
            model: ModelParams::new(T::lit(20.0), T::lit(20.0), T::lit(0.15), 2),
            noise: NoiseSpec::additive(sigma),
            kernel: Kernel::Pairwise,
            seed,
            snapshot_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return config_err("n_agents must be at least 1");
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return config_err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return config_err(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.t_end > T::zero() && self.dt > self.t_end {
            return config_err("dt exceeds t_end");
        }
        if self.snapshot_stride == 0 {
            return config_err("snapshot_stride must be at least 1");
        }
        self.model.validate(&self.kernel)?;
        self.noise.validate()?;
        self.init.validate(self.model.dim)
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().to_usize().unwrap_or(0)
    }
}

/// Snapshots of a run plus the configuration (and therefore seed) that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar = f64> {
    pub snapshots: Vec<SystemState<T>>,
    pub config: SimConfig<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_state(&self) -> &SystemState<T> {
        self.snapshots.last().expect("trajectory has at least the initial snapshot")
    }

    pub fn times(&self) -> Vec<T> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
}

/// Draws the initial state; agent `k` reads only its own init stream.
pub fn init_state<T: Scalar>(cfg: &SimConfig<T>) -> Result<SystemState<T>> {
    cfg.validate()?;
    let d = cfg.model.dim;
    let agents: Vec<(Vec<T>, T)> = (0..cfg.n_agents)
        .into_par_iter()
        .map(|k| {
            let mut rng = Stream::new(cfg.seed, Purpose::Init, 0, k as u64);
            sample_agent(&cfg.init, d, &mut rng)
        })
        .collect();
    let mut positions = Vec::with_capacity(cfg.n_agents * d);
    let mut opinions = Vec::with_capacity(cfg.n_agents);
    for (x, th) in agents {
        positions.extend(x);
        opinions.push(th);
    }
    SystemState::new(d, positions, opinions, T::zero())
}

fn sample_agent<T: Scalar>(law: &InitLaw<T>, d: usize, rng: &mut Stream) -> (Vec<T>, T) {
    let lerp = |(lo, hi): (T, T), u: f64| lo + (hi - lo) * T::lit(u);
    match law {
        InitLaw::UniformBox { position, opinion } => {
            let x = position.iter().map(|&b| lerp(b, rng.uniform())).collect();
            (x, lerp(*opinion, rng.uniform()))
        }
        InitLaw::GaussianMixture { components } => {
            let total: T = components.iter().map(|c| c.weight).sum();
            let u = T::lit(rng.uniform()) * total;
            let mut acc = T::zero();
            let mut chosen = components.last().unwrap();
            for c in components {
                acc = acc + c.weight;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            let mut xi = vec![0.0; d + 1];
            rng.fill_normal(&mut xi);
            let x = (0..d)
                .map(|a| chosen.mean_position[a] + chosen.std_position * T::lit(xi[a]))
                .collect();
            (x, chosen.mean_opinion + chosen.std_opinion * T::lit(xi[d]))
        }
    }
}

/// Standard normal increments `ξ` for agent `agent` at step `step`: spatial axes first, then the opinion.
pub fn increments(seed: u64, step: usize, agent: usize, dim: usize) -> Vec<f64> {
    let mut xi = vec![0.0; dim + 1];
    Stream::new(seed, Purpose::Increment, step as u64, agent as u64).fill_normal(&mut xi);
    xi
}

/// One explicit Euler–Maruyama step of length `cfg.dt` from `s`.
///
/// Drift and amplitudes are evaluated at `s` (Itô). `step_index` selects the
/// increment streams, so a step is reproducible in isolation.
pub fn em_step<T: Scalar>(s: &SystemState<T>, cfg: &SimConfig<T>, step_index: usize) -> Result<SystemState<T>> {
    let d = s.dim();
    let p = &cfg.model;
    let needs_lists = matches!(cfg.kernel, Kernel::Pairwise | Kernel::ThreeBody)
        || matches!(cfg.noise, NoiseSpec::MultiplicativeMin { .. });
    let lists = if needs_lists {
        neighbor_lists(s.positions(), d, p.radius)
    } else {
        Vec::new()
    };
    let drift = match cfg.kernel {
        Kernel::Pairwise | Kernel::ThreeBody => interaction_drift(s, p, &cfg.kernel, &lists),
        _ => total_drift(s, p, &cfg.kernel)?,
    };
    let amp = noise_amplitude_with(s, &cfg.noise, p, &lists);

    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let updated: Vec<(Vec<T>, T)> = (0..s.len())
        .into_par_iter()
        .map(|k| {
            let xi = increments(cfg.seed, step_index, k, d);
            let x = s
                .position(k)
                .iter()
                .enumerate()
                .map(|(a, &xa)| xa + drift.spatial[k * d + a] * dt + amp.spatial[k] * sqrt_dt * T::lit(xi[a]))
                .collect();
            let th = s.opinions()[k] + drift.opinion[k] * dt + amp.opinion[k] * sqrt_dt * T::lit(xi[d]);
            (x, th)
        })
        .collect();

    let mut positions = Vec::with_capacity(s.len() * d);
    let mut opinions = Vec::with_capacity(s.len());
    for (x, th) in updated {
        positions.extend(x);
        opinions.push(th);
    }
    let time = T::from_usize_lossy(step_index + 1) * dt;
    let next = SystemState::from_parts(d, positions, opinions, time);
    if !next.is_finite() {
        return Err(Error::BlowUp { step: step_index });
    }
    Ok(next)
}

/// Runs the configured simulation; snapshots every `snapshot_stride` steps and at the final step.
pub fn simulate<T: Scalar>(cfg: &SimConfig<T>) -> Result<Trajectory<T>> {
    let init = init_state(cfg)?;
    simulate_from(init, cfg)
}

/// Runs from a given initial state (time reset to zero).
pub fn simulate_from<T: Scalar>(mut state: SystemState<T>, cfg: &SimConfig<T>) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if state.dim() != cfg.model.dim {
        return Err(Error::Shape(format!(
            "state dimension {} but model dimension {}",
            state.dim(),
            cfg.model.dim
        )));
    }
    state.time = T::zero();
    let n_steps = cfg.n_steps();
    let mut snapshots = vec![state.clone()];
    for step in 0..n_steps {
        state = em_step(&state, cfg, step)?;
        if (step + 1) % cfg.snapshot_stride == 0 || step + 1 == n_steps {
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory { snapshots, config: cfg.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseTarget;

    fn quiet(n: usize, dim: usize) -> SimConfig<f64> {
        SimConfig {
            n_agents: n,
            t_end: 1.0,
            dt: 0.01,
            init: InitLaw::centered_box(dim, 0.25, (-1.0, 1.0)),
            model: ModelParams::new(20.0, 20.0, 0.15, dim),
            noise: NoiseSpec::additive(0.0),
            kernel: Kernel::Pairwise,
            seed: 3,
            snapshot_stride: 1,
        }
    }

    #[test]
    fn uniform_box_respects_bounds() {
        let cfg = SimConfig::<f64>::baseline(0.01, 11);
        let s = init_state(&cfg).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.positions().iter().all(|x| (-0.25..=0.25).contains(x)));
        assert!(s.opinions().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn degenerate_box_is_point_mass() {
        let mut cfg = quiet(10, 2);
        cfg.init = InitLaw::UniformBox { position: vec![(0.0, 0.0); 2], opinion: (0.0, 0.0) };
        let s = init_state(&cfg).unwrap();
        assert!(s.positions().iter().chain(s.opinions()).all(|v| *v == 0.0));
    }

    #[test]
    fn malformed_bounds_rejected() {
        let mut cfg = quiet(10, 2);
        cfg.init = InitLaw::UniformBox { position: vec![(1.0, 0.0); 2], opinion: (0.0, 0.0) };
        assert!(matches!(init_state(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_control_initial_state() {
        let a = SimConfig::<f64>::baseline(0.01, 1);
        let b = SimConfig::<f64>::baseline(0.01, 2);
        assert_eq!(init_state(&a).unwrap(), init_state(&a).unwrap());
        assert_ne!(init_state(&a).unwrap(), init_state(&b).unwrap());
    }

    #[test]
    fn zero_drift_zero_noise_step_is_identity() {
        let mut cfg = quiet(5, 2);
        cfg.kernel = Kernel::Free;
        let s = init_state(&cfg).unwrap();
        let next = em_step(&s, &cfg, 0).unwrap();
        assert_eq!(next.positions(), s.positions());
        assert_eq!(next.opinions(), s.opinions());
    }

    #[test]
    fn linear_relaxation_matches_exponential_decay() {
        let cfg = SimConfig {
            n_agents: 1,
            t_end: 1.0,
            dt: 1e-4,
            init: InitLaw::UniformBox { position: vec![(1.0, 1.0)], opinion: (1.0, 1.0) },
            model: ModelParams::new(1.0, 0.0, 0.15, 1),
            noise: NoiseSpec::additive(0.0),
            kernel: Kernel::LinearRelaxation { rate: 1.0 },
            seed: 0,
            snapshot_stride: 10_000,
        };
        let traj = simulate(&cfg).unwrap();
        let x = traj.final_state().positions()[0];
        assert!((x - (-1.0f64).exp()).abs() < 1e-3, "{x}");
        assert_eq!(traj.snapshots.len(), 2);
    }

    #[test]
    fn single_agent_is_stationary_without_noise() {
        for kernel in [Kernel::Pairwise, Kernel::ThreeBody] {
            let mut cfg = quiet(1, 2);
            cfg.kernel = kernel;
            let traj = simulate(&cfg).unwrap();
            assert_eq!(traj.final_state().positions(), traj.snapshots[0].positions());
            assert_eq!(traj.final_state().opinions(), traj.snapshots[0].opinions());
        }
    }

    #[test]
    fn two_agents_contract_toward_midpoint() {
        // same-sign opinions within R: separation obeys ds/dt = -2β s / N
        let mut cfg = quiet(2, 1);
        cfg.dt = 1e-3;
        cfg.t_end = 0.1;
        let s0 = SystemState::new(1, vec![-0.05, 0.05], vec![0.5, 0.5], 0.0).unwrap();
        let traj = simulate_from(s0, &cfg).unwrap();
        let seps: Vec<f64> = traj
            .snapshots
            .iter()
            .map(|s| s.positions()[1] - s.positions()[0])
            .collect();
        assert!(seps.windows(2).all(|w| w[1] < w[0]));
        // explicit Euler on the separation ODE: s_{n+1} = (1 - 2β dt / N) s_n
        let discrete = 0.1 * (1.0 - 2.0 * 20.0 * 1e-3 / 2.0f64).powi(100);
        assert!((seps.last().unwrap() - discrete).abs() < 1e-12);
        let exact = 0.1 * (-2.0 * 20.0 / 2.0 * 0.1f64).exp();
        assert!((seps.last().unwrap() - exact).abs() < 5e-4);
        let mid = traj.final_state().positions().iter().sum::<f64>() / 2.0;
        assert!(mid.abs() < 1e-15);
    }

    #[test]
    fn consensus_freezes_under_multiplicative_noise() {
        let mut cfg = quiet(20, 2);
        cfg.init = InitLaw::UniformBox { position: vec![(-0.05, 0.05); 2], opinion: (0.3, 0.3) };
        cfg.noise = NoiseSpec::MultiplicativeMin { sigma_iso: 0.05, apply_to: NoiseTarget::Both };
        let traj = simulate(&cfg).unwrap();
        for s in &traj.snapshots {
            assert!(s.opinions().iter().all(|&t| t == 0.3));
        }
    }

    #[test]
    fn snapshot_times_are_strictly_increasing_and_end_at_t_end() {
        let mut cfg = quiet(10, 2);
        cfg.snapshot_stride = 7;
        let traj = simulate(&cfg).unwrap();
        let t = traj.times();
        assert_eq!(t[0], 0.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_keeps_initial_snapshot_only() {
        let mut cfg = quiet(10, 2);
        cfg.t_end = 0.0;
        let traj = simulate(&cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let mut cfg = quiet(1, 1);
        cfg.kernel = Kernel::LinearRelaxation { rate: -1e200 };
        cfg.init = InitLaw::UniformBox { position: vec![(1e200, 1e200)], opinion: (1.0, 1.0) };
        cfg.dt = 1.0;
        cfg.t_end = 10.0;
        assert!(matches!(simulate(&cfg), Err(Error::BlowUp { .. })));
    }
}
