//! Flat `key = value` experiment configuration.
//!
//! Keys are read from an optional file, then overridden by `OPDYN_<KEY>`
//! environment variables (key upper-cased), then by command-line flags.
//! Unknown keys are rejected. Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use opdyn::pde::random_bumps;
use opdyn::{
    GaussianBump, Grid2D, InitLaw, Kernel, MixtureComponent, ModelParams, NoiseSpec, NoiseTarget, PdeSettings,
    SigmaKernel, SimConfig,
};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "OPDYN_";

/// Every accepted key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("n_agents", "100", "number of agents"),
    ("t_end", "2.5", "final time"),
    ("dt", "0.01", "agent time step"),
    ("dim", "2", "dimension of the social space"),
    ("alpha", "20", "opinion interaction strength"),
    ("beta", "20", "spatial interaction strength"),
    ("radius", "0.15", "interaction radius R"),
    ("lambda", "-1", "decay rate of the three-body weight (must be negative)"),
    ("interaction_scaling", "1", "prefactor on both interaction kernels"),
    ("kernel", "pairwise", "pairwise | three-body"),
    ("noise", "additive", "additive | multiplicative-min | kernel-averaged"),
    ("sigma", "0.05", "additive amplitude for both components"),
    ("sigma_spatial", "", "additive spatial amplitude (defaults to sigma)"),
    ("sigma_opinion", "", "additive opinion amplitude (defaults to sigma)"),
    ("sigma_iso", "0.05", "multiplicative-min amplitude of agents without neighbours"),
    ("noise_target", "both", "multiplicative-min target: opinion | both"),
    ("sigma_kernel_spatial", "constant", "kernel-averaged spatial kernel: constant | indicator | opinion-gap"),
    ("sigma_kernel_opinion", "constant", "kernel-averaged opinion kernel: constant | indicator | opinion-gap"),
    ("init", "box", "initial law: box | mixture"),
    ("box_half", "0.25", "half-width of the initial position box"),
    ("opinion_min", "-1", "lower end of the initial opinion interval"),
    ("opinion_max", "1", "upper end of the initial opinion interval"),
    ("mixture_count", "4", "number of Gaussian components"),
    ("mixture_seed", "7", "seed placing the component means"),
    ("mixture_lo", "-1.2", "lower bound for component means"),
    ("mixture_hi", "1.2", "upper bound for component means"),
    ("mixture_std", "0.25", "component standard deviation"),
    ("seed", "42", "base seed"),
    ("snapshot_stride", "1", "agent steps between snapshots"),
    ("ensemble", "16", "independent seeds per sweep amplitude or agent count"),
    ("sigmas", "0.01,0.05,0.15", "noise-sweep amplitudes"),
    ("n_list", "50,100,200,400", "agent counts for chaos and fluctuation studies"),
    ("n_proj", "100", "sliced-distance projections"),
    ("pde_samples", "10000", "samples drawn from the density"),
    ("grid_min", "-2", "lower grid edge on both axes"),
    ("grid_max", "2", "upper grid edge on both axes"),
    ("grid_h", "0.05", "grid spacing"),
    ("pde_dt", "1e-4", "density time step"),
    ("pde_t_end", "", "density horizon (defaults to t_end)"),
    ("coeff_stride", "1", "density steps between coefficient refreshes"),
    ("pde_snapshot_stride", "500", "density steps between snapshots"),
    ("input", "", "snapshot NDJSON to render"),
    ("formats", "csv,ndjson,svg", "output formats"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    RunAbm,
    RunPde,
    CompareLimits,
    NoiseSweep,
    ChaosStudy,
    FluctuationStudy,
    Render,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::RunAbm => "run-abm",
            Mode::RunPde => "run-pde",
            Mode::CompareLimits => "compare-limits",
            Mode::NoiseSweep => "noise-sweep",
            Mode::ChaosStudy => "chaos-study",
            Mode::FluctuationStudy => "fluctuation-study",
            Mode::Render => "render",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub ndjson: bool,
    pub svg: bool,
}

impl FromStr for Formats {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let mut f = Formats { csv: false, ndjson: false, svg: false };
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "csv" => f.csv = true,
                "ndjson" => f.ndjson = true,
                "svg" => f.svg = true,
                other => return Err(CliError::Config(format!("unknown format '{other}'"))),
            }
        }
        Ok(f)
    }
}

/// Resolved key/value pairs before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let values = KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        RawConfig { values }
    }

    pub fn parse_str(&mut self, text: &str) -> CliResult<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.parse_str(&text)
    }

    /// Applies `OPDYN_<KEY>` overrides from the given environment.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, env: I) -> CliResult<()> {
        for (name, value) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if KEYS.iter().any(|(k, _, _)| *k == key) {
                    self.set(&key, &value)?;
                }
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(CliError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn num<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{v}'")))
    }

    fn num_or<T: FromStr>(&self, key: &str, fallback: &str) -> CliResult<T> {
        if self.get(key).is_empty() {
            self.num(fallback)
        } else {
            self.num(key)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{t}'"))))
            .collect()
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Everything a mode needs, validated before any computation starts.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub sim: SimConfig<f64>,
    pub grid: Grid2D<f64>,
    pub pde: PdeSettings<f64>,
    pub bumps: Vec<GaussianBump<f64>>,
    pub ensemble: usize,
    pub sigmas: Vec<f64>,
    pub n_list: Vec<usize>,
    pub n_proj: usize,
    pub pde_samples: usize,
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub formats: Formats,
    raw: RawConfig,
}

fn sigma_kernel(name: &str, amp: f64) -> CliResult<SigmaKernel<f64>> {
    match name {
        "constant" => Ok(SigmaKernel::Constant(amp)),
        "indicator" => Ok(SigmaKernel::Indicator(amp)),
        "opinion-gap" => Ok(SigmaKernel::OpinionGap(amp)),
        other => Err(CliError::Config(format!("unknown sigma kernel '{other}'"))),
    }
}

/// The density initial condition expressed as an agent law (extra spatial axes centred at 0).
pub fn mixture_law(bumps: &[GaussianBump<f64>], dim: usize) -> InitLaw<f64> {
    let components = bumps
        .iter()
        .map(|b| {
            let mut mean_position = vec![0.0; dim];
            mean_position[0] = b.mean_z;
            MixtureComponent {
                mean_position,
                mean_opinion: b.mean_eta,
                std_position: b.std,
                std_opinion: b.std,
                weight: b.weight,
            }
        })
        .collect();
    InitLaw::GaussianMixture { components }
}

impl ExperimentConfig {
    pub fn from_raw(mode: Mode, raw: RawConfig, output_dir: PathBuf) -> CliResult<Self> {
        let dim: usize = raw.num("dim")?;
        if dim == 0 {
            return Err(CliError::Config("dim must be at least 1".into()));
        }
        let mut model = ModelParams::new(raw.num("alpha")?, raw.num("beta")?, raw.num("radius")?, dim);
        model.lambda = raw.num("lambda")?;
        model.interaction_scaling = raw.num("interaction_scaling")?;

        let kernel = match raw.get("kernel") {
            "pairwise" => Kernel::Pairwise,
            "three-body" => Kernel::ThreeBody,
            other => return Err(CliError::Config(format!("unknown kernel '{other}'"))),
        };
        let noise = match raw.get("noise") {
            "additive" => NoiseSpec::Additive {
                sigma_sp: raw.num_or("sigma_spatial", "sigma")?,
                sigma_op: raw.num_or("sigma_opinion", "sigma")?,
            },
            "multiplicative-min" => NoiseSpec::MultiplicativeMin {
                sigma_iso: raw.num("sigma_iso")?,
                apply_to: match raw.get("noise_target") {
                    "opinion" => NoiseTarget::OpinionOnly,
                    "both" => NoiseTarget::Both,
                    other => return Err(CliError::Config(format!("unknown noise_target '{other}'"))),
                },
            },
            "kernel-averaged" => NoiseSpec::KernelAveraged {
                sp: sigma_kernel(raw.get("sigma_kernel_spatial"), raw.num_or("sigma_spatial", "sigma")?)?,
                op: sigma_kernel(raw.get("sigma_kernel_opinion"), raw.num_or("sigma_opinion", "sigma")?)?,
            },
            other => return Err(CliError::Config(format!("unknown noise '{other}'"))),
        };

        let mixture_std: f64 = raw.num("mixture_std")?;
        if !(mixture_std > 0.0) {
            return Err(CliError::Config("mixture_std must be positive".into()));
        }
        let bumps = random_bumps(
            raw.num("mixture_count")?,
            raw.num("mixture_seed")?,
            raw.num::<f64>("mixture_lo")?,
            raw.num::<f64>("mixture_hi")?,
            mixture_std,
        );
        let init = match raw.get("init") {
            "box" => {
                InitLaw::centered_box(dim, raw.num("box_half")?, (raw.num("opinion_min")?, raw.num("opinion_max")?))
            }
            "mixture" => mixture_law(&bumps, dim),
            other => return Err(CliError::Config(format!("unknown init '{other}'"))),
        };

        let sim = SimConfig {
            n_agents: raw.num("n_agents")?,
            t_end: raw.num("t_end")?,
            dt: raw.num("dt")?,
            init,
            model,
            noise,
            kernel,
            seed: raw.num("seed")?,
            snapshot_stride: raw.num("snapshot_stride")?,
        };
        let grid = Grid2D::new(
            (raw.num("grid_min")?, raw.num("grid_max")?),
            (raw.num("grid_min")?, raw.num("grid_max")?),
            raw.num("grid_h")?,
        )?;
        let pde = PdeSettings {
            t_end: raw.num_or("pde_t_end", "t_end")?,
            dt: raw.num("pde_dt")?,
            coeff_stride: raw.num("coeff_stride")?,
            snapshot_stride: raw.num("pde_snapshot_stride")?,
        };
        let input = match raw.get("input") {
            "" => None,
            p => Some(PathBuf::from(p)),
        };
        let cfg = ExperimentConfig {
            mode,
            sim,
            grid,
            pde,
            bumps,
            ensemble: raw.num("ensemble")?,
            sigmas: raw.list("sigmas")?,
            n_list: raw.list("n_list")?,
            n_proj: raw.num("n_proj")?,
            pde_samples: raw.num("pde_samples")?,
            input,
            output_dir,
            formats: raw.get("formats").parse()?,
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Mode-specific requirements; runs before any simulation work.
    pub fn validate(&self) -> CliResult<()> {
        let needs_sim = !matches!(self.mode, Mode::Render | Mode::RunPde);
        if needs_sim {
            self.sim.validate()?;
        }
        let needs_pde = matches!(self.mode, Mode::RunPde | Mode::CompareLimits | Mode::ChaosStudy);
        if needs_pde {
            self.sim.model.validate(&Kernel::Pairwise)?;
            self.sim.noise.validate()?;
            if matches!(self.sim.noise, NoiseSpec::MultiplicativeMin { .. }) {
                return Err(CliError::Config(format!("{} does not support multiplicative-min noise", self.mode)));
            }
            if self.sim.kernel != Kernel::Pairwise {
                return Err(CliError::Config(format!("{} requires the pairwise kernel", self.mode)));
            }
            if self.bumps.is_empty() {
                return Err(CliError::Config("mixture_count must be at least 1".into()));
            }
            if !(self.pde.dt > 0.0) || !(self.pde.t_end >= 0.0) {
                return Err(CliError::Config("pde_dt must be positive and pde_t_end non-negative".into()));
            }
            if self.pde.coeff_stride == 0 || self.pde.snapshot_stride == 0 {
                return Err(CliError::Config("pde strides must be at least 1".into()));
            }
        }
        let ensemble_mode = matches!(self.mode, Mode::NoiseSweep | Mode::ChaosStudy | Mode::FluctuationStudy);
        if ensemble_mode && self.ensemble == 0 {
            return Err(CliError::Config("ensemble must be at least 1".into()));
        }
        match self.mode {
            Mode::NoiseSweep => {
                if self.sigmas.is_empty() {
                    return Err(CliError::Config("noise-sweep needs a non-empty sigmas list".into()));
                }
                if self.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err(CliError::Config("sigmas must be finite and non-negative".into()));
                }
                if !matches!(self.sim.noise, NoiseSpec::Additive { .. }) {
                    return Err(CliError::Config("noise-sweep varies additive noise; set noise = additive".into()));
                }
            }
            Mode::ChaosStudy | Mode::CompareLimits => {
                if self.sim.model.dim != 1 {
                    return Err(CliError::Config(format!("{} compares against the density on (z, eta) and needs dim = 1", self.mode)));
                }
                if self.mode == Mode::ChaosStudy && (self.n_list.is_empty() || self.n_list.contains(&0)) {
                    return Err(CliError::Config("chaos-study needs a non-empty n_list of positive counts".into()));
                }
                if self.n_proj == 0 || self.pde_samples == 0 {
                    return Err(CliError::Config("n_proj and pde_samples must be positive".into()));
                }
                let counts = if self.mode == Mode::ChaosStudy { self.n_list.clone() } else { vec![self.sim.n_agents] };
                if let Some(n) = counts.iter().find(|&&n| self.pde_samples % n != 0) {
                    return Err(CliError::Config(format!(
                        "pde_samples = {} must be a multiple of every agent count (got {n})",
                        self.pde_samples
                    )));
                }
                if (self.sim.t_end - self.pde.t_end).abs() > 1e-12 {
                    return Err(CliError::Config("agent and density horizons differ".into()));
                }
            }
            Mode::FluctuationStudy => {
                if self.n_list.len() < 3 || self.n_list.contains(&0) {
                    return Err(CliError::Config("fluctuation-study needs at least three positive entries in n_list".into()));
                }
                if self.ensemble < 8 {
                    return Err(CliError::Config("fluctuation-study needs ensemble >= 8".into()));
                }
            }
            Mode::Render => {
                if self.input.is_none() {
                    return Err(CliError::Config("render needs input = <snapshots.ndjson>".into()));
                }
            }
            Mode::RunAbm | Mode::RunPde => {}
        }
        Ok(())
    }

    pub fn raw(&self) -> &RawConfig {
        &self.raw
    }

    /// SHA-256 of the mode and the canonical resolved key set.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mode.name().as_bytes());
        h.update(b"\n");
        h.update(self.raw.canonical().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Defaults, then file, then environment.
pub fn load(mode: Mode, file: Option<&Path>, output_dir: PathBuf) -> CliResult<ExperimentConfig> {
    let mut raw = RawConfig::defaults();
    if let Some(p) = file {
        raw.load_file(p)?;
    }
    raw.apply_env(std::env::vars())?;
    ExperimentConfig::from_raw(mode, raw, output_dir)
}
