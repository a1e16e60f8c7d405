//! Agent state, interaction kernels, drift assembly and noise amplitudes.
//!
//! Every agent `k` carries a position `X^k` in a `d`-dimensional social space
//! and a scalar opinion `Θ^k`. Pairwise kernels act only between agents whose
//! positions are within the interaction radius `R` (closed ball), and drifts
//! are averaged with weight `1/N` over all agents.

use rayon::prelude::*;

use crate::error::{config_err, Error, Result};
use crate::neighbors::neighbor_lists;
use crate::scalar::Scalar;

/// Positions (row-major `N × d`) and opinions of all agents at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<T: Scalar = f64> {
    dim: usize,
    positions: Vec<T>,
    opinions: Vec<T>,
    pub time: T,
}

impl<T: Scalar> SystemState<T> {
    pub fn new(dim: usize, positions: Vec<T>, opinions: Vec<T>, time: T) -> Result<Self> {
        if dim == 0 {
            return config_err("spatial dimension must be at least 1");
        }
        if opinions.is_empty() {
            return config_err("a state needs at least one agent");
        }
        if positions.len() != opinions.len() * dim {
            return Err(Error::Shape(format!(
                "{} position entries for {} agents in dimension {}",
                positions.len(),
                opinions.len(),
                dim
            )));
        }
        let s = SystemState { dim, positions, opinions, time };
        if !s.is_finite() {
            return config_err("state contains non-finite entries");
        }
        Ok(s)
    }

    /// Builds a state without validation; used on hot paths after checking finiteness separately.
    pub(crate) fn from_parts(dim: usize, positions: Vec<T>, opinions: Vec<T>, time: T) -> Self {
        debug_assert_eq!(positions.len(), opinions.len() * dim);
        SystemState { dim, positions, opinions, time }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn position(&self, k: usize) -> &[T] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn opinions(&self) -> &[T] {
        &self.opinions
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.positions.iter().all(|v| v.is_finite())
            && self.opinions.iter().all(|v| v.is_finite())
    }

    pub fn mean_opinion(&self) -> T {
        self.opinions.iter().copied().sum::<T>() / T::from_usize_lossy(self.len())
    }

    /// Copy with every position shifted by `shift`.
    pub fn translated(&self, shift: &[T]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let positions = self
            .positions
            .chunks(self.dim)
            .flat_map(|x| x.iter().zip(shift).map(|(&a, &c)| a + c))
            .collect();
        SystemState { positions, ..self.clone() }
    }
}

/// Model parameters shared by the particle system and the mean-field solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T: Scalar = f64> {
    /// Opinion strength.
    pub alpha: T,
    /// Spatial strength.
    pub beta: T,
    /// Interaction radius.
    pub radius: T,
    /// Decay rate of `s(x) = exp(λx)` in the three-body kernel.
    pub lambda: T,
    pub dim: usize,
    /// Prefactor applied to both the spatial and the opinion kernel output.
    pub interaction_scaling: T,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(alpha: T, beta: T, radius: T, dim: usize) -> Self {
        ModelParams {
            alpha,
            beta,
            radius,
            lambda: T::lit(-1.0),
            dim,
            interaction_scaling: T::one(),
        }
    }

    pub fn validate(&self, kernel: &Kernel<T>) -> Result<()> {
        if !(self.radius > T::zero()) {
            return config_err(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.alpha > T::zero()) {
            return config_err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= T::zero()) {
            return config_err(format!("beta must be non-negative, got {}", self.beta));
        }
        if self.dim == 0 {
            return config_err("dimension must be at least 1");
        }
        if !self.interaction_scaling.is_finite() {
            return config_err("interaction scaling must be finite");
        }
        if matches!(kernel, Kernel::ThreeBody) && !(self.lambda < T::zero()) {
            return config_err(format!("three-body kernel needs lambda < 0, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Which drift the agents follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel<T: Scalar = f64> {
    /// Bounded-confidence opinion averaging plus opinion-signed spatial attraction/repulsion.
    Pairwise,
    /// Spatial pair kernel with the three-body peer-pressure opinion kernel.
    ThreeBody,
    /// No interaction; every coordinate relaxes as `dx = -rate·x dt`.
    LinearRelaxation { rate: T },
    /// Zero drift.
    Free,
}

/// Where the multiplicative amplitude is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTarget {
    OpinionOnly,
    Both,
}

/// Pair diffusion kernels for the kernel-averaged noise form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaKernel<T: Scalar = f64> {
    /// `c` for every pair.
    Constant(T),
    /// `c · 1{‖x1 − x2‖ ≤ R}`.
    Indicator(T),
    /// `c · 1{‖x1 − x2‖ ≤ R} · |θ1 − θ2|`.
    OpinionGap(T),
}

impl<T: Scalar> SigmaKernel<T> {
    pub fn eval(&self, x1: &[T], x2: &[T], th1: T, th2: T, radius: T) -> T {
        match *self {
            SigmaKernel::Constant(c) => c,
            SigmaKernel::Indicator(c) => c * indicator(x1, x2, radius),
            SigmaKernel::OpinionGap(c) => c * indicator(x1, x2, radius) * (th1 - th2).abs(),
        }
    }

    fn coefficient(&self) -> T {
        match *self {
            SigmaKernel::Constant(c) | SigmaKernel::Indicator(c) | SigmaKernel::OpinionGap(c) => c,
        }
    }

    /// Upper bound of the averaged amplitude when opinions span an interval of width `opinion_span`.
    pub fn bound(&self, opinion_span: T) -> T {
        match *self {
            SigmaKernel::Constant(c) | SigmaKernel::Indicator(c) => c.abs(),
            SigmaKernel::OpinionGap(c) => c.abs() * opinion_span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec<T: Scalar = f64> {
    Additive { sigma_sp: T, sigma_op: T },
    /// Amplitude is the smallest opinion gap to an in-radius neighbour; isolated agents use `sigma_iso`.
    MultiplicativeMin { sigma_iso: T, apply_to: NoiseTarget },
    KernelAveraged { sp: SigmaKernel<T>, op: SigmaKernel<T> },
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn additive(sigma: T) -> Self {
        NoiseSpec::Additive { sigma_sp: sigma, sigma_op: sigma }
    }

    pub fn validate(&self) -> Result<()> {
        let amps: Vec<T> = match *self {
            NoiseSpec::Additive { sigma_sp, sigma_op } => vec![sigma_sp, sigma_op],
            NoiseSpec::MultiplicativeMin { sigma_iso, .. } => vec![sigma_iso],
            NoiseSpec::KernelAveraged { sp, op } => vec![sp.coefficient(), op.coefficient()],
        };
        if amps.iter().any(|a| !(*a >= T::zero()) || !a.is_finite()) {
            return config_err("noise amplitudes must be finite and non-negative");
        }
        Ok(())
    }
}

/// Drift per unit time for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector<T: Scalar = f64> {
    pub dim: usize,
    /// Row-major `N × d`.
    pub spatial: Vec<T>,
    pub opinion: Vec<T>,
}

impl<T: Scalar> DriftVector<T> {
    pub fn zeros(n: usize, dim: usize) -> Self {
        DriftVector { dim, spatial: vec![T::zero(); n * dim], opinion: vec![T::zero(); n] }
    }

    pub fn is_zero(&self) -> bool {
        self.spatial.iter().chain(&self.opinion).all(|v| *v == T::zero())
    }
}

/// Per-agent diffusion amplitudes (scalar multiples of the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAmplitudes<T: Scalar = f64> {
    pub spatial: Vec<T>,
    pub opinion: Vec<T>,
}

#[inline]
pub(crate) fn distance<T: Scalar>(x1: &[T], x2: &[T]) -> T {
    x1.iter()
        .zip(x2)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt()
}

/// `1_{[0,R]}(‖x1 − x2‖)`, closed at `R`.
#[inline]
pub fn indicator<T: Scalar>(x1: &[T], x2: &[T], radius: T) -> T {
    if distance(x1, x2) <= radius {
        T::one()
    } else {
        T::zero()
    }
}

/// Opinion pull of agent 2 on agent 1: `α · 1{‖x1−x2‖ ≤ R} · (θ2 − θ1)`.
pub fn opinion_drift_pair<T: Scalar>(x1: &[T], x2: &[T], th1: T, th2: T, p: &ModelParams<T>) -> T {
    p.interaction_scaling * p.alpha * indicator(x1, x2, p.radius) * (th2 - th1)
}

/// Scalar factor `β · 1{‖x1−x2‖ ≤ R} · sgn(θ1θ2)` multiplying `x2 − x1`.
#[inline]
fn spatial_coupling<T: Scalar>(x1: &[T], x2: &[T], th1: T, th2: T, p: &ModelParams<T>) -> T {
    p.interaction_scaling * p.beta * indicator(x1, x2, p.radius) * (th1 * th2).sgn()
}

/// Spatial pull of agent 2 on agent 1: attraction for same-sign opinions, repulsion otherwise.
pub fn spatial_drift_pair<T: Scalar>(x1: &[T], x2: &[T], th1: T, th2: T, p: &ModelParams<T>) -> Vec<T> {
    let c = spatial_coupling(x1, x2, th1, th2, p);
    x1.iter().zip(x2).map(|(&a, &b)| c * (b - a)).collect()
}

/// Peer-pressure opinion drift on agent 1 from the group {2, 3}.
///
/// Nonzero only when all three agents are mutually within `R`; agents 2 and 3
/// weigh more when they agree with each other.
pub fn opinion_drift_threebody<T: Scalar>(
    x: [&[T]; 3],
    th: [T; 3],
    p: &ModelParams<T>,
) -> T {
    for i in 0..3 {
        for j in (i + 1)..3 {
            if distance(x[i], x[j]) > p.radius {
                return T::zero();
            }
        }
    }
    let weight = (p.lambda * (th[1] - th[2]).abs()).exp();
    p.interaction_scaling * p.alpha * weight * ((th[1] - th[0]) + (th[2] - th[0]))
}

/// Drift of every agent under `kernel`.
///
/// Pairwise sums run over in-radius neighbours in ascending index order, which
/// gives the same floating point result as a full loop over all `j` (the
/// skipped terms are exact zeros).
pub fn total_drift<T: Scalar>(s: &SystemState<T>, p: &ModelParams<T>, kernel: &Kernel<T>) -> Result<DriftVector<T>> {
    if s.is_empty() {
        return config_err("drift of an empty system");
    }
    match kernel {
        Kernel::Pairwise | Kernel::ThreeBody => {
            let lists = neighbor_lists(s.positions(), s.dim(), p.radius);
            Ok(interaction_drift(s, p, kernel, &lists))
        }
        Kernel::LinearRelaxation { rate } => Ok(DriftVector {
            dim: s.dim(),
            spatial: s.positions().iter().map(|&x| -*rate * x).collect(),
            opinion: s.opinions().iter().map(|&x| -*rate * x).collect(),
        }),
        Kernel::Free => Ok(DriftVector::zeros(s.len(), s.dim())),
    }
}

/// `lists[k]` holds the in-radius neighbours of `k` (excluding `k`), ascending.
pub(crate) fn interaction_drift<T: Scalar>(
    s: &SystemState<T>,
    p: &ModelParams<T>,
    kernel: &Kernel<T>,
    lists: &[Vec<usize>],
) -> DriftVector<T> {
    let n = s.len();
    let d = s.dim();
    let n_t = T::from_usize_lossy(n);
    let th = s.opinions();

    let per_agent: Vec<(Vec<T>, T)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let xk = s.position(k);
            let mut sp = vec![T::zero(); d];
            let mut op = T::zero();
            for &j in &lists[k] {
                let xj = s.position(j);
                let c = spatial_coupling(xk, xj, th[k], th[j], p);
                for a in 0..d {
                    sp[a] = sp[a] + c * (xj[a] - xk[a]);
                }
                if matches!(kernel, Kernel::Pairwise) {
                    op = op + opinion_drift_pair(xk, xj, th[k], th[j], p);
                }
            }
            for v in sp.iter_mut() {
                *v = *v / n_t;
            }
            let op = match kernel {
                Kernel::ThreeBody => threebody_sum(s, p, k, &lists[k]) / n_t / n_t,
                _ => op / n_t,
            };
            (sp, op)
        })
        .collect();

    let mut out = DriftVector::zeros(n, d);
    for (k, (sp, op)) in per_agent.into_iter().enumerate() {
        out.spatial[k * d..(k + 1) * d].copy_from_slice(&sp);
        out.opinion[k] = op;
    }
    out
}

/// `Σ_{j,l}` of the three-body kernel for agent `k`, over ordered pairs including `j = k` or `l = k`.
fn threebody_sum<T: Scalar>(s: &SystemState<T>, p: &ModelParams<T>, k: usize, nbrs: &[usize]) -> T {
    // candidates are k itself plus its neighbours, in ascending order
    let mut group: Vec<usize> = nbrs.to_vec();
    let pos = group.binary_search(&k).unwrap_or_else(|e| e);
    group.insert(pos, k);
    let th = s.opinions();
    let mut acc = T::zero();
    for &j in &group {
        for &l in &group {
            acc = acc
                + opinion_drift_threebody(
                    [s.position(k), s.position(j), s.position(l)],
                    [th[k], th[j], th[l]],
                    p,
                );
        }
    }
    acc
}

/// Diffusion amplitudes of every agent, evaluated at state `s`.
pub fn noise_amplitude<T: Scalar>(s: &SystemState<T>, spec: &NoiseSpec<T>, p: &ModelParams<T>) -> NoiseAmplitudes<T> {
    match spec {
        NoiseSpec::MultiplicativeMin { .. } => {
            let lists = neighbor_lists(s.positions(), s.dim(), p.radius);
            noise_amplitude_with(s, spec, p, &lists)
        }
        _ => noise_amplitude_with(s, spec, p, &[]),
    }
}

pub(crate) fn noise_amplitude_with<T: Scalar>(
    s: &SystemState<T>,
    spec: &NoiseSpec<T>,
    p: &ModelParams<T>,
    lists: &[Vec<usize>],
) -> NoiseAmplitudes<T> {
    let n = s.len();
    match *spec {
        NoiseSpec::Additive { sigma_sp, sigma_op } => NoiseAmplitudes {
            spatial: vec![sigma_sp; n],
            opinion: vec![sigma_op; n],
        },
        NoiseSpec::MultiplicativeMin { sigma_iso, apply_to } => {
            let th = s.opinions();
            let opinion: Vec<T> = (0..n)
                .map(|i| {
                    lists[i]
                        .iter()
                        .map(|&j| (th[i] - th[j]).abs())
                        .fold(None, |m: Option<T>, g| Some(m.map_or(g, |m| m.min(g))))
                        .unwrap_or(sigma_iso)
                })
                .collect();
            let spatial = match apply_to {
                NoiseTarget::Both => opinion.clone(),
                NoiseTarget::OpinionOnly => vec![sigma_iso; n],
            };
            NoiseAmplitudes { spatial, opinion }
        }
        NoiseSpec::KernelAveraged { sp, op } => {
            let th = s.opinions();
            let inv_n = T::one() / T::from_usize_lossy(n);
            let (spatial, opinion): (Vec<T>, Vec<T>) = (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = s.position(i);
                    let mut a = T::zero();
                    let mut b = T::zero();
                    for j in 0..n {
                        let xj = s.position(j);
                        a = a + sp.eval(xi, xj, th[i], th[j], p.radius);
                        b = b + op.eval(xi, xj, th[i], th[j], p.radius);
                    }
                    (a * inv_n, b * inv_n)
                })
                .unzip();
            NoiseAmplitudes { spatial, opinion }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ModelParams<f64> {
        ModelParams::new(20.0, 20.0, 0.15, 2)
    }

    #[test]
    fn opinion_pair_examples() {
        let p = params();
        assert_eq!(opinion_drift_pair(&[0.0, 0.0], &[0.0, 0.0], -1.0, 1.0, &p), 40.0);
        assert_eq!(opinion_drift_pair(&[0.0, 0.0], &[0.1, 0.0], 0.3, 0.3, &p), 0.0);
        assert_eq!(opinion_drift_pair(&[0.0, 0.0], &[0.2, 0.0], -1.0, 1.0, &p), 0.0);
    }

    #[test]
    fn indicator_is_closed_at_radius() {
        let p = ModelParams::new(1.0, 1.0, 0.5, 1);
        assert_eq!(opinion_drift_pair(&[0.0], &[0.5], 0.0, 1.0, &p), 1.0);
        assert_eq!(opinion_drift_pair(&[0.0], &[0.5000001], 0.0, 1.0, &p), 0.0);
    }

    #[test]
    fn spatial_pair_examples() {
        let p = params();
        let a = spatial_drift_pair(&[0.0, 0.0], &[0.1, 0.0], 1.0, 1.0, &p);
        assert_abs_diff_eq!(a[0], 2.0, epsilon = 1e-12);
        assert_eq!(a[1], 0.0);
        let r = spatial_drift_pair(&[0.0, 0.0], &[0.1, 0.0], 1.0, -1.0, &p);
        assert_abs_diff_eq!(r[0], -2.0, epsilon = 1e-12);
        let z = spatial_drift_pair(&[0.0, 0.0], &[0.1, 0.0], 0.0, -1.0, &p);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn threebody_examples() {
        let mut p = ModelParams::new(1.0, 0.0, 0.15, 2);
        p.lambda = -1.0;
        let o = [0.0, 0.0];
        assert_eq!(opinion_drift_threebody([&o, &o, &o], [0.0, 1.0, 1.0], &p), 2.0);
        assert_eq!(opinion_drift_threebody([&o, &o, &o], [0.4, 0.4, 0.4], &p), 0.0);
        let far = [0.3, 0.0];
        assert_eq!(opinion_drift_threebody([&o, &o, &far], [0.0, 1.0, 1.0], &p), 0.0);
        // opinion disagreement between 2 and 3 damps the pull
        let v = opinion_drift_threebody([&o, &o, &o], [0.0, 1.0, 0.0], &p);
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn single_agent_has_zero_drift() {
        let s = SystemState::new(2, vec![0.3, -0.1], vec![0.7], 0.0).unwrap();
        for k in [Kernel::Pairwise, Kernel::ThreeBody] {
            assert!(total_drift(&s, &params(), &k).unwrap().is_zero());
        }
    }

    #[test]
    fn collocated_consensus_has_zero_drift() {
        let s = SystemState::new(2, vec![0.1; 10], vec![0.4; 5], 0.0).unwrap();
        assert!(total_drift(&s, &params(), &Kernel::Pairwise).unwrap().is_zero());
    }

    #[test]
    fn empty_state_is_rejected() {
        assert!(SystemState::<f64>::new(1, vec![], vec![], 0.0).is_err());
        assert!(SystemState::new(2, vec![0.0], vec![1.0], 0.0).is_err());
        assert!(SystemState::new(1, vec![f64::NAN], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn multiplicative_min_examples() {
        let p = ModelParams::new(1.0, 1.0, 0.15, 1);
        let spec = NoiseSpec::MultiplicativeMin { sigma_iso: 0.05, apply_to: NoiseTarget::Both };
        // agent 0 sees gaps 0.2 and 0.5 in radius, agent 3 is isolated
        let s = SystemState::new(1, vec![0.0, 0.05, 0.1, 5.0], vec![0.0, 0.2, 0.5, 1.0], 0.0).unwrap();
        let amp = noise_amplitude(&s, &spec, &p);
        assert_abs_diff_eq!(amp.opinion[0], 0.2, epsilon = 1e-15);
        assert_eq!(amp.opinion[3], 0.05);
        assert_eq!(amp.spatial, amp.opinion);

        let twin = SystemState::new(1, vec![0.0, 0.01], vec![0.3, 0.3], 0.0).unwrap();
        assert_eq!(noise_amplitude(&twin, &spec, &p).opinion, vec![0.0, 0.0]);

        let only = NoiseSpec::MultiplicativeMin { sigma_iso: 0.05, apply_to: NoiseTarget::OpinionOnly };
        assert_eq!(noise_amplitude(&twin, &only, &p).spatial, vec![0.05, 0.05]);
    }

    #[test]
    fn kernel_averaged_amplitudes() {
        let p = ModelParams::new(1.0, 1.0, 0.15, 1);
        let spec = NoiseSpec::KernelAveraged {
            sp: SigmaKernel::Constant(0.3),
            op: SigmaKernel::Indicator(0.2),
        };
        let s = SystemState::new(1, vec![0.0, 0.1, 1.0], vec![0.0, 0.0, 0.0], 0.0).unwrap();
        let amp = noise_amplitude(&s, &spec, &p);
        assert_abs_diff_eq!(amp.spatial[2], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(amp.opinion[0], 0.2 * 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(amp.opinion[2], 0.2 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn three_body_needs_negative_lambda() {
        let mut p = params();
        p.lambda = 0.5;
        assert!(p.validate(&Kernel::ThreeBody).is_err());
        assert!(p.validate(&Kernel::Pairwise).is_ok());
    }

    #[test]
    fn works_in_single_precision() {
        let p = ModelParams::<f32>::new(20.0, 20.0, 0.15, 2);
        assert_eq!(opinion_drift_pair(&[0.0f32, 0.0], &[0.0, 0.0], -1.0, 1.0, &p), 40.0);
    }
}
