//! Experiment configuration: one JSON document per run.

use mfg_core::analysis::SamplerSpec;
use mfg_core::cgo::{CGOParams, CorrectionOptions};
use mfg_core::costs::{DirectionSpec, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::forward::SolverOptions;
use mfg_core::inverse::ReconstructionOptions;
use mfg_core::io::read_field;
use mfg_core::{Error, Grid, GridSpec, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTerm {
    pub a: usize,
    pub b: usize,
    pub amp: f64,
}

/// Catalog of running costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `c (z − 1)`.
    Linear { c: f64 },
    /// `e^{z−1} − 1` truncated at `order`.
    ExpShifted { order: usize },
    /// `base` with `Σ amp sin(aπx̂) sin(bπŷ)` added to `F^(order)` on Ω.
    Perturbed { base: Box<CostSpec>, order: usize, terms: Vec<SineTerm> },
    /// Coefficient fields `F^(1), F^(2), …` on Ω′ read from field files.
    File { coeffs: Vec<PathBuf>, a1: f64 },
}

impl CostSpec {
    pub fn id(&self) -> String {
        match self {
            CostSpec::Linear { c } => format!("linear({c})"),
            CostSpec::ExpShifted { order } => format!("exp_shifted({order})"),
            CostSpec::Perturbed { base, order, terms } => format!("{}+d{order}[{}]", base.id(), terms.len()),
            CostSpec::File { coeffs, .. } => format!("file({})", coeffs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")),
        }
    }

    pub fn build(&self, grid: &Grid, base_dir: &Path) -> Result<RunningCost> {
        let n = grid.outer().len();
        match self {
            CostSpec::Linear { c } => RunningCost::linear(n, *c),
            CostSpec::ExpShifted { order } => RunningCost::exp_shifted(n, *order),
            CostSpec::Perturbed { base, order, terms } => {
                let b = base.build(grid, base_dir)?;
                b.with_added(*order, &grid.extend_zero(&sine_sum(grid, terms)))
            }
            CostSpec::File { coeffs, a1 } => {
                let mut c = Vec::new();
                for p in coeffs {
                    let path = base_dir.join(p);
                    if !path.exists() {
                        return Err(Error::Config(format!("cost file {} does not exist", path.display())));
                    }
                    let (_, f) = read_field(&path)?;
                    if f.nodes() != n || f.levels() != 1 {
                        return Err(Error::Config(format!("cost file {} is not a field on Ω′", path.display())));
                    }
                    c.push(f.into_values());
                }
                RunningCost::new(c, *a1, Some(self.id()))
            }
        }
    }
}

/// `Σ amp sin(aπx̂/L₁) sin(bπŷ/L₂)` on Ω.
pub fn sine_sum(grid: &Grid, terms: &[SineTerm]) -> Vec<f64> {
    let sp = grid.inner();
    let (x0, y0) = (sp.axis(0).lo, sp.axis(1).lo);
    let (lx, ly) = (sp.axis(0).len(), sp.axis(1).len());
    sp.sample(|x| {
        terms
            .iter()
            .map(|t| t.amp * (t.a as f64 * PI * (x[0] - x0) / lx).sin() * (t.b as f64 * PI * (x[1] - y0) / ly).sin())
            .sum()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum M0Spec {
    Uniform,
    /// `1 + direction`.
    Perturbed { direction: DirectionSpec },
    /// Random smooth unit-mass density drawn from the run seed.
    Random { amplitude: f64 },
    File { path: PathBuf },
}

impl M0Spec {
    pub fn build(&self, grid: &Grid, seed: u64, base_dir: &Path) -> Result<Vec<f64>> {
        let sp = grid.outer();
        match self {
            M0Spec::Uniform => Ok(vec![1.0 / sp.volume(); sp.len()]),
            M0Spec::Perturbed { direction } => Ok(direction.build(grid)?.values().iter().map(|d| 1.0 + d).collect()),
            M0Spec::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(mfg_core::costs::random_density(sp, &mut rng, *amplitude))
            }
            M0Spec::File { path } => {
                let p = base_dir.join(path);
                if !p.exists() {
                    return Err(Error::Config(format!("m0 file {} does not exist", p.display())));
                }
                let (_, f) = read_field(&p)?;
                if f.nodes() != sp.len() {
                    return Err(Error::Config(format!("m0 file {} is not a field on Ω′", p.display())));
                }
                Ok(f.into_values())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostsConfig {
    pub f_true: CostSpec,
    /// Defaults to `f_true`.
    pub f_ref: Option<CostSpec>,
    pub g: TerminalCostSpec,
}

impl Default for CostsConfig {
    fn default() -> Self {
        CostsConfig {
            f_true: CostSpec::ExpShifted { order: 2 },
            f_ref: None,
            g: TerminalCostSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbePair {
    pub plus: CGOParams,
    pub minus: CGOParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Lattice frequencies per axis for the reconstruction tests.
    pub per_axis: usize,
    /// Probes built by `probe`.
    pub cgo: Vec<CGOParams>,
    /// Increasing `λ` list for a decay table of the first probe.
    pub decay_lambdas: Vec<f64>,
    /// Couple the (+) probes to `δG` at `t = T`.
    pub terminal_coupling: bool,
    /// Matched pairs for Fourier samples of the order-1 difference.
    pub pairs: Vec<ProbePair>,
    pub correction: CorrectionOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            per_axis: 5,
            cgo: Vec::new(),
            decay_lambdas: Vec::new(),
            terminal_coupling: true,
            pairs: Vec::new(),
            correction: CorrectionOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub orders: Vec<usize>,
    /// Finite-difference step per order (last entry repeats).
    pub eps: Vec<f64>,
    /// Directory with `order<k>/` measurement-derivative directories of the
    /// true system; synthetic from `f_true` when absent.
    pub measurements: Option<PathBuf>,
    pub options: ReconstructionOptions,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            orders: vec![1],
            eps: vec![1e-2, 2e-2],
            measurements: None,
            options: ReconstructionOptions::default(),
        }
    }
}

impl ReconstructConfig {
    pub fn eps_for(&self, k: usize) -> f64 {
        *self.eps.get(k - 1).or(self.eps.last()).unwrap_or(&1e-2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "snake_case", deny_unknown_fields)]
pub enum Suite {
    /// `F = c(z−1)` with `ψ(s) = s` and uniform `m₀`.
    Stationary {
        #[serde(default = "tight")]
        tol: f64,
    },
    Mass {
        #[serde(default = "ten")]
        samples: usize,
        #[serde(default = "five_percent")]
        amplitude: f64,
        #[serde(default = "mass_tol")]
        tol: f64,
    },
    Monotonicity {
        #[serde(default = "hundred")]
        trials: usize,
    },
    CarlemanPlus {
        #[serde(default)]
        sampler: SamplerSpec,
        #[serde(default = "lambdas")]
        lambdas: Vec<f64>,
    },
    CarlemanMinus {
        #[serde(default)]
        sampler: SamplerSpec,
        #[serde(default = "lambdas")]
        lambdas: Vec<f64>,
    },
    AprioriForward {
        #[serde(default = "twenty")]
        samples: usize,
    },
    AprioriAdjoint {
        #[serde(default = "twenty")]
        samples: usize,
    },
    Energy,
}

fn tight() -> f64 {
    1e-8
}
fn ten() -> usize {
    10
}
fn twenty() -> usize {
    20
}
fn hundred() -> usize {
    100
}
fn five_percent() -> f64 {
    0.05
}
fn mass_tol() -> f64 {
    1e-10
}
fn lambdas() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Stationary { .. } => "stationary",
            Suite::Mass { .. } => "mass",
            Suite::Monotonicity { .. } => "monotonicity",
            Suite::CarlemanPlus { .. } => "carleman_plus",
            Suite::CarlemanMinus { .. } => "carleman_minus",
            Suite::AprioriForward { .. } => "apriori_forward",
            Suite::AprioriAdjoint { .. } => "apriori_adjoint",
            Suite::Energy => "energy",
        }
    }

    pub fn defaults() -> Vec<Suite> {
        vec![
            Suite::Stationary { tol: tight() },
            Suite::Mass { samples: ten(), amplitude: five_percent(), tol: mass_tol() },
            Suite::Monotonicity { trials: hundred() },
            Suite::CarlemanPlus { sampler: SamplerSpec::default(), lambdas: lambdas() },
            Suite::CarlemanMinus { sampler: SamplerSpec::default(), lambdas: lambdas() },
            Suite::AprioriForward { samples: twenty() },
            Suite::AprioriAdjoint { samples: twenty() },
            Suite::Energy,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suites: Vec<Suite>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { suites: Suite::defaults() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub costs: CostsConfig,
    pub m0: M0Spec,
    /// Perturbation directions of `m₀` around 1.
    pub directions: Vec<DirectionSpec>,
    pub solver: SolverOptions,
    pub probe: ProbeConfig,
    pub reconstruct: ReconstructConfig,
    pub verify: VerifyConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridSpec::reference(),
            costs: CostsConfig::default(),
            m0: M0Spec::Uniform,
            directions: vec![DirectionSpec::Positive { floor: 0.5 }],
            solver: SolverOptions::default(),
            probe: ProbeConfig::default(),
            reconstruct: ReconstructConfig::default(),
            verify: VerifyConfig::default(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Parsed config plus the directory relative paths resolve against.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, base_dir })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn f_true(&self, grid: &Grid, base: &Path) -> Result<RunningCost> {
        self.costs.f_true.build(grid, base)
    }

    pub fn f_ref(&self, grid: &Grid, base: &Path) -> Result<RunningCost> {
        self.costs.f_ref.as_ref().unwrap_or(&self.costs.f_true).build(grid, base)
    }

    pub fn terminal(&self, grid: &Grid) -> Result<TerminalCost> {
        TerminalCost::new(grid.outer(), self.costs.g.clone())
    }

    /// SHA-256 of the canonical JSON, without the output location.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out");
        }
        mfg_core::grid::hex_digest(v.to_string().as_bytes())
    }
}
