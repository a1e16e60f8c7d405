//! Mean-field density solver on a cell-centred `(z, η)` grid.
//!
//! One spatial coordinate `z` and one opinion coordinate `η`. The density
//! evolves by
//!
//! ```text
//! ∂t ρ = −∂z(ρ U[ρ]) − ∂η(ρ V[ρ]) + ½ ∂²z(ρ σsp²) + ½ ∂²η(ρ σop²)
//! ```
//!
//! with `U[ρ]`, `V[ρ]` the pair kernels integrated against `ρ`. Fluxes live on
//! cell faces (upwinded advection, centred diffusion of `ρσ²`), and boundary
//! faces carry no flux, so the discrete mass is conserved up to rounding.

use rayon::prelude::*;

use crate::error::{config_err, Error, Result};
use crate::model::{opinion_drift_pair, spatial_drift_pair, ModelParams, NoiseSpec, SigmaKernel};
use crate::rng::{Purpose, Stream};
use crate::scalar::Scalar;

/// Uniform cell-centred grid over `[z_min, z_max] × [eta_min, eta_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D<T: Scalar = f64> {
    pub z_min: T,
    pub z_max: T,
    pub eta_min: T,
    pub eta_max: T,
    pub h: T,
    pub nz: usize,
    pub neta: usize,
}

impl<T: Scalar> Grid2D<T> {
    pub fn new(z: (T, T), eta: (T, T), h: T) -> Result<Self> {
        if !(h > T::zero()) {
            return config_err(format!("grid spacing must be positive, got {h}"));
        }
        let count = |lo: T, hi: T| -> Result<usize> {
            if !(hi > lo) {
                return config_err(format!("empty grid interval [{lo}, {hi}]"));
            }
            let cells = ((hi - lo) / h).round();
            if ((cells * h) - (hi - lo)).abs() > T::lit(1e-9) * (hi - lo).max(T::one()) {
                return config_err(format!("interval [{lo}, {hi}] is not a multiple of h = {h}"));
            }
            Ok(cells.to_usize().unwrap_or(0))
        };
        Ok(Grid2D {
            z_min: z.0,
            z_max: z.1,
            eta_min: eta.0,
            eta_max: eta.1,
            h,
            nz: count(z.0, z.1)?,
            neta: count(eta.0, eta.1)?,
        })
    }

    /// `[-2, 2]²` with spacing 0.05 (80 × 80 cells).
    pub fn standard() -> Self {
        Self::new((T::lit(-2.0), T::lit(2.0)), (T::lit(-2.0), T::lit(2.0)), T::lit(0.05))
            .expect("valid standard grid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nz * self.neta
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.neta + j
    }

    #[inline]
    pub fn z(&self, i: usize) -> T {
        self.z_min + (T::from_usize_lossy(i) + T::lit(0.5)) * self.h
    }

    #[inline]
    pub fn eta(&self, j: usize) -> T {
        self.eta_min + (T::from_usize_lossy(j) + T::lit(0.5)) * self.h
    }

    pub fn cell_area(&self) -> T {
        self.h * self.h
    }

    /// Largest cell offset `k` with `k·h ≤ R`; lattice distances equal to `R` count as inside.
    pub fn stencil_halfwidth(&self, radius: T) -> usize {
        (radius / self.h + T::lit(1e-9)).floor().to_usize().unwrap_or(0)
    }

    pub fn opinion_span(&self) -> T {
        self.eta_max - self.eta_min
    }
}

/// Density values (row `i` over `z`, column `j` over `η`) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField<T: Scalar = f64> {
    pub values: Vec<T>,
    pub grid: Grid2D<T>,
    pub time: T,
}

impl<T: Scalar> DensityField<T> {
    pub fn new(grid: Grid2D<T>, values: Vec<T>, time: T) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for {} cells", values.len(), grid.len())));
        }
        Ok(DensityField { values, grid, time })
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_area()
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.idx(i, j)]
    }

    /// Cell masses `ρ h²`.
    pub fn cell_masses(&self) -> Vec<T> {
        let a = self.grid.cell_area();
        self.values.iter().map(|&v| v * a).collect()
    }
}

/// Gaussian bump in the `(z, η)` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBump<T: Scalar = f64> {
    pub mean_z: T,
    pub mean_eta: T,
    pub std: T,
    pub weight: T,
}

/// Isotropic Gaussian mixture evaluated at cell centres, renormalised to unit grid mass.
pub fn init_gaussian_mixture<T: Scalar>(grid: &Grid2D<T>, components: &[GaussianBump<T>]) -> Result<DensityField<T>> {
    if components.is_empty() {
        return config_err("mixture needs at least one component");
    }
    for c in components {
        if !(c.std > T::zero()) {
            return config_err(format!("mixture std must be positive, got {}", c.std));
        }
        if !(c.weight > T::zero()) {
            return config_err(format!("mixture weight must be positive, got {}", c.weight));
        }
    }
    let two = T::lit(2.0);
    let mut values = vec![T::zero(); grid.len()];
    for i in 0..grid.nz {
        for j in 0..grid.neta {
            let (z, eta) = (grid.z(i), grid.eta(j));
            values[grid.idx(i, j)] = components
                .iter()
                .map(|c| {
                    let r2 = (z - c.mean_z).powi(2) + (eta - c.mean_eta).powi(2);
                    c.weight * (-r2 / (two * c.std * c.std)).exp() / (two * T::PI() * c.std * c.std)
                })
                .sum();
        }
    }
    let mut field = DensityField { values, grid: *grid, time: T::zero() };
    let m = field.mass();
    if !(m > T::zero()) || !m.is_finite() {
        return config_err("mixture has no mass on the grid");
    }
    for v in &mut field.values {
        *v = *v / m;
    }
    Ok(field)
}

/// `count` equal-weight bumps with centres uniform in `[lo, hi]²`.
pub fn random_bumps<T: Scalar>(count: usize, seed: u64, lo: T, hi: T, std: T) -> Vec<GaussianBump<T>> {
    let mut rng = Stream::new(seed, Purpose::Mixture, 0, 0);
    (0..count)
        .map(|_| {
            let mean_z = lo + (hi - lo) * T::lit(rng.uniform());
            let mean_eta = lo + (hi - lo) * T::lit(rng.uniform());
            GaussianBump { mean_z, mean_eta, std, weight: T::one() }
        })
        .collect()
}

/// Nonlocal drift and diffusion coefficients at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields<T: Scalar = f64> {
    pub u_field: Vec<T>,
    pub v_field: Vec<T>,
    pub sig_sp_field: Vec<T>,
    pub sig_op_field: Vec<T>,
}

impl<T: Scalar> CoefficientFields<T> {
    pub fn zeros(grid: &Grid2D<T>) -> Self {
        let z = vec![T::zero(); grid.len()];
        CoefficientFields { u_field: z.clone(), v_field: z.clone(), sig_sp_field: z.clone(), sig_op_field: z }
    }
}

fn reject_min_noise<T: Scalar>(noise: &NoiseSpec<T>) -> Result<()> {
    if matches!(noise, NoiseSpec::MultiplicativeMin { .. }) {
        return config_err("the density solver supports additive and kernel-averaged noise only");
    }
    Ok(())
}

/// Coefficients `U[ρ]`, `V[ρ]`, `σ[ρ]` by midpoint quadrature over the kernel support.
///
/// The pair kernels factor through per-column moments of `ρ`:
/// `V(z, η) = α Σ_y (M1(y) − η M0(y))` and `U(z, η) = β sgn(η) Σ_y (y − z)(P(y) − Q(y))`,
/// with `M0`, `M1` the column mass and first opinion moment and `P`, `Q` the
/// positive- and negative-opinion column masses, summed over `|y − z| ≤ R`.
pub fn nonlocal_coefficients<T: Scalar>(
    rho: &DensityField<T>,
    p: &ModelParams<T>,
    noise: &NoiseSpec<T>,
) -> Result<CoefficientFields<T>> {
    reject_min_noise(noise)?;
    let g = rho.grid;
    let area = g.cell_area();
    let k_max = g.stencil_halfwidth(p.radius) as isize;

    let mut m0 = vec![T::zero(); g.nz];
    let mut m1 = vec![T::zero(); g.nz];
    let mut signed = vec![T::zero(); g.nz];
    for i in 0..g.nz {
        for j in 0..g.neta {
            let w = rho.at(i, j) * area;
            let th = g.eta(j);
            m0[i] = m0[i] + w;
            m1[i] = m1[i] + th * w;
            signed[i] = signed[i] + th.sgn() * w;
        }
    }

    let scale = p.interaction_scaling;
    let mut win0 = vec![T::zero(); g.nz];
    let mut win1 = vec![T::zero(); g.nz];
    let mut moment = vec![T::zero(); g.nz];
    for i in 0..g.nz {
        for k in -k_max..=k_max {
            let y = i as isize + k;
            if y < 0 || y >= g.nz as isize {
                continue;
            }
            let y = y as usize;
            win0[i] = win0[i] + m0[y];
            win1[i] = win1[i] + m1[y];
            moment[i] = moment[i] + (g.z(y) - g.z(i)) * signed[y];
        }
    }

    let mut c = CoefficientFields::zeros(&g);
    for i in 0..g.nz {
        for j in 0..g.neta {
            let eta = g.eta(j);
            let at = g.idx(i, j);
            c.v_field[at] = scale * p.alpha * (win1[i] - eta * win0[i]);
            c.u_field[at] = scale * p.beta * eta.sgn() * moment[i];
        }
    }
    fill_sigma(rho, p, noise, &mut c);
    Ok(c)
}

/// Same coefficients by direct kernel evaluation over the `(2K+1) × neta` stencil of every cell.
pub fn nonlocal_coefficients_stencil<T: Scalar>(
    rho: &DensityField<T>,
    p: &ModelParams<T>,
    noise: &NoiseSpec<T>,
) -> Result<CoefficientFields<T>> {
    reject_min_noise(noise)?;
    let g = rho.grid;
    let k_max = g.stencil_halfwidth(p.radius);
    let lattice = lattice_params(&g, p);
    let area = g.cell_area();
    let (u, v): (Vec<T>, Vec<T>) = (0..g.len())
        .into_par_iter()
        .map(|at| {
            let (i, j) = (at / g.neta, at % g.neta);
            let (z, eta) = ([g.z(i)], g.eta(j));
            let mut u = T::zero();
            let mut v = T::zero();
            for y in i.saturating_sub(k_max)..(i + k_max + 1).min(g.nz) {
                let zy = [g.z(y)];
                for l in 0..g.neta {
                    let w = rho.at(y, l) * area;
                    let th = g.eta(l);
                    u = u + spatial_drift_pair(&z, &zy, eta, th, &lattice)[0] * w;
                    v = v + opinion_drift_pair(&z, &zy, eta, th, &lattice) * w;
                }
            }
            (u, v)
        })
        .unzip();
    let mut c = CoefficientFields { u_field: u, v_field: v, ..CoefficientFields::zeros(&g) };
    fill_sigma(rho, p, noise, &mut c);
    Ok(c)
}

/// Cell-centre distances are multiples of `h`; snapping the radius to the midpoint
/// between `K h` and `(K+1) h` makes the kernel indicator immune to rounding.
fn lattice_params<T: Scalar>(g: &Grid2D<T>, p: &ModelParams<T>) -> ModelParams<T> {
    let k = T::from_usize_lossy(g.stencil_halfwidth(p.radius));
    ModelParams { radius: (k + T::lit(0.5)) * g.h, ..*p }
}

fn fill_sigma<T: Scalar>(rho: &DensityField<T>, p: &ModelParams<T>, noise: &NoiseSpec<T>, c: &mut CoefficientFields<T>) {
    let n = rho.grid.len();
    match *noise {
        NoiseSpec::Additive { sigma_sp, sigma_op } => {
            c.sig_sp_field = vec![sigma_sp; n];
            c.sig_op_field = vec![sigma_op; n];
        }
        NoiseSpec::KernelAveraged { sp, op } => {
            c.sig_sp_field = sigma_field(rho, p, &sp);
            c.sig_op_field = sigma_field(rho, p, &op);
        }
        NoiseSpec::MultiplicativeMin { .. } => unreachable!("rejected before"),
    }
}

fn sigma_field<T: Scalar>(rho: &DensityField<T>, p: &ModelParams<T>, kernel: &SigmaKernel<T>) -> Vec<T> {
    let g = rho.grid;
    if let SigmaKernel::Constant(c) = *kernel {
        return vec![c * rho.mass(); g.len()];
    }
    let k_max = g.stencil_halfwidth(p.radius);
    let lattice = lattice_params(&g, p);
    let area = g.cell_area();
    (0..g.len())
        .into_par_iter()
        .map(|at| {
            let (i, j) = (at / g.neta, at % g.neta);
            let (z, eta) = ([g.z(i)], g.eta(j));
            let mut acc = T::zero();
            for y in i.saturating_sub(k_max)..(i + k_max + 1).min(g.nz) {
                let zy = [g.z(y)];
                for l in 0..g.neta {
                    acc = acc + kernel.eval(&z, &zy, eta, g.eta(l), lattice.radius) * rho.at(y, l) * area;
                }
            }
            acc
        })
        .collect()
}

/// Time derivative of `ρ` in conservative flux form with no-flux boundaries.
pub fn pde_rhs<T: Scalar>(rho: &DensityField<T>, coeff: &CoefficientFields<T>) -> Vec<T> {
    let g = rho.grid;
    let (nz, ne) = (g.nz, g.neta);
    let h = g.h;
    let half = T::lit(0.5);
    let r = &rho.values;
    let mut out = vec![T::zero(); g.len()];

    let flux = |rl: T, rr: T, vl: T, vr: T, sl: T, sr: T| -> T {
        let vel = half * (vl + vr);
        let adv = vel.max(T::zero()) * rl + vel.min(T::zero()) * rr;
        let diff = -half * (rr * sr * sr - rl * sl * sl) / h;
        (adv + diff) / h
    };

    // faces normal to z
    for i in 0..nz.saturating_sub(1) {
        for j in 0..ne {
            let (a, b) = (g.idx(i, j), g.idx(i + 1, j));
            let f = flux(r[a], r[b], coeff.u_field[a], coeff.u_field[b], coeff.sig_sp_field[a], coeff.sig_sp_field[b]);
            out[a] = out[a] - f;
            out[b] = out[b] + f;
        }
    }
    // faces normal to η
    for i in 0..nz {
        for j in 0..ne.saturating_sub(1) {
            let (a, b) = (g.idx(i, j), g.idx(i, j + 1));
            let f = flux(r[a], r[b], coeff.v_field[a], coeff.v_field[b], coeff.sig_op_field[a], coeff.sig_op_field[b]);
            out[a] = out[a] - f;
            out[b] = out[b] + f;
        }
    }
    out
}

/// Largest admissible explicit time step: `0.4 · min(h / v_max, h² / (4 σ_max²))`.
///
/// `v_max` bounds the coefficient fields for any unit-mass density: `|U| ≤ s β K h`
/// and `|V| ≤ s α (η span)`.
pub fn stability_bound<T: Scalar>(grid: &Grid2D<T>, p: &ModelParams<T>, noise: &NoiseSpec<T>) -> T {
    let s = p.interaction_scaling.abs();
    let reach = T::from_usize_lossy(grid.stencil_halfwidth(p.radius)) * grid.h;
    let v_max = (s * p.beta * reach).max(s * p.alpha * grid.opinion_span());
    let sigma_max = match *noise {
        NoiseSpec::Additive { sigma_sp, sigma_op } => sigma_sp.max(sigma_op),
        NoiseSpec::KernelAveraged { sp, op } => sp.bound(grid.opinion_span()).max(op.bound(grid.opinion_span())),
        NoiseSpec::MultiplicativeMin { sigma_iso, .. } => sigma_iso,
    };
    let adv = if v_max > T::zero() { grid.h / v_max } else { T::infinity() };
    let dif = if sigma_max > T::zero() {
        grid.h * grid.h / (T::lit(4.0) * sigma_max * sigma_max)
    } else {
        T::infinity()
    };
    T::lit(0.4) * adv.min(dif)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeSettings<T: Scalar = f64> {
    pub t_end: T,
    pub dt: T,
    /// Recompute coefficients every this many steps.
    pub coeff_stride: usize,
    /// Emit a snapshot every this many steps (plus the initial and final fields).
    pub snapshot_stride: usize,
}

/// Conservation diagnostics of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PdeReport<T: Scalar = f64> {
    /// Total mass removed by clipping negative values, before renormalisation.
    pub clipped_mass: T,
    /// Largest per-step change of grid mass from the flux update alone.
    pub max_flux_mass_defect: T,
    /// Mass of every snapshot.
    pub mass_history: Vec<T>,
    /// Maximum density of every snapshot.
    pub max_history: Vec<T>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeRun<T: Scalar = f64> {
    pub snapshots: Vec<DensityField<T>>,
    pub report: PdeReport<T>,
}

/// Growth factor of `max ρ` treated as an instability.
const MAX_GROWTH: f64 = 1e3;

/// Forward-Euler integration from `rho0`.
pub fn pde_integrate<T: Scalar>(
    rho0: &DensityField<T>,
    settings: &PdeSettings<T>,
    p: &ModelParams<T>,
    noise: &NoiseSpec<T>,
) -> Result<PdeRun<T>> {
    reject_min_noise(noise)?;
    if !(settings.dt > T::zero()) || !(settings.t_end >= T::zero()) {
        return config_err("pde time step must be positive and horizon non-negative");
    }
    if settings.coeff_stride == 0 || settings.snapshot_stride == 0 {
        return config_err("pde strides must be at least 1");
    }
    let bound = stability_bound(&rho0.grid, p, noise);
    if settings.dt > bound {
        return Err(Error::Unstable { dt: settings.dt.as_f64(), bound: bound.as_f64() });
    }

    let n_steps = (settings.t_end / settings.dt).round().to_usize().unwrap_or(0);
    let area = rho0.grid.cell_area();
    let target_mass = rho0.mass();
    let initial_max = rho0.max();
    let limit = initial_max.abs().max(T::min_positive_value()) * T::lit(MAX_GROWTH);

    let mut rho = rho0.clone();
    rho.time = T::zero();
    let mut report = PdeReport {
        clipped_mass: T::zero(),
        max_flux_mass_defect: T::zero(),
        mass_history: vec![rho.mass()],
        max_history: vec![rho.max()],
        steps: n_steps,
    };
    let mut snapshots = vec![rho.clone()];
    let mut coeff = CoefficientFields::zeros(&rho.grid);

    for step in 0..n_steps {
        if step % settings.coeff_stride == 0 {
            coeff = nonlocal_coefficients(&rho, p, noise)?;
        }
        let before = rho.mass();
        let rhs = pde_rhs(&rho, &coeff);
        for (v, d) in rho.values.iter_mut().zip(&rhs) {
            *v = *v + settings.dt * *d;
        }
        let after = rho.mass();
        report.max_flux_mass_defect = report.max_flux_mass_defect.max((after - before).abs());

        let mut clipped = T::zero();
        for v in rho.values.iter_mut() {
            if *v < T::zero() {
                clipped = clipped - *v * area;
                *v = T::zero();
            }
        }
        if clipped > T::zero() {
            report.clipped_mass = report.clipped_mass + clipped;
            let m = rho.mass();
            for v in rho.values.iter_mut() {
                *v = *v * target_mass / m;
            }
        }

        let max = rho.max();
        if !max.is_finite() || rho.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step });
        }
        if max > limit {
            return Err(Error::DensityGrowth { step, max: max.as_f64(), initial: initial_max.as_f64() });
        }
        rho.time = T::from_usize_lossy(step + 1) * settings.dt;
        if (step + 1) % settings.snapshot_stride == 0 || step + 1 == n_steps {
            report.mass_history.push(rho.mass());
            report.max_history.push(max);
            snapshots.push(rho.clone());
        }
    }
    Ok(PdeRun { snapshots, report })
}
