//! Subcommand drivers. Each one writes its files under the output
//! directory and finishes with `manifest.json`.

use crate::config::{ExperimentConfig, Loaded, Suite};
use crate::{CliError, CliResult};
use mfg_core::analysis::{self, band_limited_fields, check_energy_identity, draw_samples, EstimateReport, SamplerSpec};
use mfg_core::cgo::{decay_certificate, probe_residual, solve_correction, TerminalMode};
use mfg_core::costs::{check_monotonicity, random_density, Psi, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::exec::{par_map, Parallelism};
use mfg_core::forward::{measure, measure_fields, solve_mfg, MeasurementData};
use mfg_core::grid::hex_digest;
use mfg_core::inverse::{
    check_probe_pair, fourier_sample, measurement_derivative, reconstruct_order1, reconstruct_order_k, runge_direction, IdentitySample, ProbePlan,
    ReconstructionResult,
};
use mfg_core::io::{self, FieldHeader};
use mfg_core::linearized::{solve_linearized1, solve_linearized2, LateralBc};
use mfg_core::ops::Sign;
use mfg_core::{Error, Field, Grid, GridSpec};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub fn parallelism() -> Parallelism {
    if cfg!(feature = "parallel") {
        Parallelism::Rayon
    } else {
        Parallelism::Sequential
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub grid_hash: String,
    pub seed: u64,
    /// Relative path and SHA-256 of every file the command wrote.
    pub outputs: Vec<(String, String)>,
}

/// Output directory plus the files written into it.
pub struct Out {
    pub root: PathBuf,
    files: Vec<String>,
}

impl Out {
    pub fn new(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(Error::from)?;
        Ok(Out { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, rel: impl Into<String>) {
        self.files.push(rel.into());
    }

    pub fn field(&mut self, rel: &str, header: &FieldHeader, f: &Field) -> CliResult<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(Error::from)?;
        }
        io::write_field(&p, header, f)?;
        self.record(rel);
        self.record(rel.replace(".bin", ".json"));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> CliResult<()> {
        io::write_json(&self.path(rel), v)?;
        self.record(rel);
        Ok(())
    }

    pub fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        io::write_csv(&self.path(rel), header, rows)?;
        self.record(rel);
        Ok(())
    }

    fn measurement(&mut self, rel: &str, grid: &Grid, d: &MeasurementData, cost: &str, m0: &str, solver: serde_json::Value) -> CliResult<()> {
        let man = io::write_measurement(&self.path(rel), grid, d, cost, m0, solver)?;
        for (f, _) in &man.files {
            self.record(format!("{rel}/{f}"));
            self.record(format!("{rel}/{}", f.replace(".bin", ".json")));
        }
        self.record(format!("{rel}/manifest.json"));
        Ok(())
    }

    /// Writes `manifest.json` and returns the SHA-256 of its bytes.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig, grid: &Grid) -> CliResult<String> {
        self.files.sort();
        self.files.dedup();
        let mut outputs = Vec::new();
        for f in &self.files {
            let bytes = fs::read(self.root.join(f)).map_err(Error::from)?;
            outputs.push((f.clone(), hex_digest(&bytes)));
        }
        let m = Manifest {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            grid_hash: grid.hash(),
            seed: cfg.seed,
            outputs,
        };
        let p = self.root.join("manifest.json");
        io::write_json(&p, &m)?;
        Ok(hex_digest(&fs::read(p).map_err(Error::from)?))
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn history_rows(h: &[f64]) -> Vec<Vec<String>> {
    h.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r)]).collect()
}

pub fn forward(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    let grid = cfg.grid()?;
    let f = cfg.f_true(&grid, &l.base_dir)?;
    let g = cfg.terminal(&grid)?;
    let m0 = cfg.m0.build(&grid, cfg.seed, &l.base_dir)?;
    let mut o = Out::new(out)?;
    let sol = match solve_mfg(&grid, &f, &g, &m0, &cfg.solver) {
        Ok(s) => s,
        Err(e) => {
            if let Some(h) = e.history() {
                o.csv("residual_history.csv", &["iteration", "residual"], &history_rows(h))?;
                o.finish("forward", cfg, &grid)?;
            }
            return Err(e.into());
        }
    };
    let h = FieldHeader::on(grid.outer(), &grid, grid.nt());
    o.field("solution/u.bin", &h, &sol.u)?;
    o.field("solution/m.bin", &h, &sol.m)?;
    o.field("solution/m0.bin", &FieldHeader::on(grid.outer(), &grid, 1), &Field::spatial(m0))?;
    o.json("solution/residuals.json", &serde_json::json!({"residuals": sol.residuals, "iterations": sol.iterations}))?;
    o.csv("residual_history.csv", &["iteration", "residual"], &history_rows(&sol.history))?;
    let solver = serde_json::to_value(&cfg.solver).map_err(Error::from)?;
    let m0_id = serde_json::to_string(&cfg.m0).map_err(Error::from)?;
    o.measurement("measurement", &grid, &measure(&sol, &grid), &cfg.costs.f_true.id(), &m0_id, solver)?;
    o.finish("forward", cfg, &grid)
}

pub fn linearize(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    let grid = cfg.grid()?;
    let f = cfg.f_true(&grid, &l.base_dir)?;
    let g = cfg.terminal(&grid)?;
    if cfg.directions.is_empty() || cfg.directions.len() > 2 {
        return Err(Error::Config("linearize takes one or two directions".into()).into());
    }
    let dirs = cfg.directions.iter().map(|d| d.build(&grid).map(|p| p.into_values())).collect::<mfg_core::Result<Vec<_>>>()?;
    let mut o = Out::new(out)?;
    let h = FieldHeader::on(grid.outer(), &grid, grid.nt());
    let solver = serde_json::to_value(&cfg.solver).map_err(Error::from)?;
    let mut firsts = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let lin = solve_linearized1(&grid, &f, &g, d, &LateralBc::NeumannOnOuter)?;
        o.field(&format!("order1_{i}/u.bin"), &h, &lin.u)?;
        o.field(&format!("order1_{i}/m.bin"), &h, &lin.m)?;
        o.measurement(&format!("order1_{i}/measurement"), &grid, &measure_fields(&grid, &lin.u, &lin.m), &cfg.costs.f_true.id(), "linearized", solver.clone())?;
        firsts.push(lin);
    }
    if firsts.len() == 2 {
        let second = solve_linearized2(&grid, &f, &g, &firsts[0], &firsts[1])?;
        o.field("order2/u.bin", &h, &second.u)?;
        o.field("order2/m.bin", &h, &second.m)?;
        o.measurement("order2/measurement", &grid, &measure_fields(&grid, &second.u, &second.m), &cfg.costs.f_true.id(), "linearized", solver)?;
    }
    o.finish("linearize", cfg, &grid)
}

#[derive(Serialize)]
struct ProbeRow {
    params: mfg_core::cgo::CGOParams,
    residual: f64,
    contraction: f64,
    iterations: usize,
    w_norm: f64,
}

pub fn probe(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    let grid = cfg.grid()?;
    let f = cfg.f_ref(&grid, &l.base_dir)?;
    let g = cfg.terminal(&grid)?;
    if cfg.probe.cgo.is_empty() {
        return Err(Error::Config("probe needs at least one parameter set".into()).into());
    }
    for p in &cfg.probe.cgo {
        p.validate(&grid).map_err(|e| Error::Probe(e.to_string()))?;
    }
    let f1 = grid.restrict(f.coeff(1).unwrap_or(&[]));
    let mode = |sign: Sign| if sign == Sign::Plus && cfg.probe.terminal_coupling { TerminalMode::DeltaG(&g) } else { TerminalMode::Zero };
    let mut o = Out::new(out)?;
    let h = FieldHeader::on(grid.inner(), &grid, grid.nt());
    let mut rows = Vec::new();
    for (i, p) in cfg.probe.cgo.iter().enumerate() {
        let probe = solve_correction(p, &grid, &f1, mode(p.sign), &cfg.probe.correction)?;
        let residual = probe_residual(&probe, &grid, &f1, mode(p.sign))?;
        let rel = format!("probe{i}.bin");
        io::write_factored_field(&o.path(&rel), &h, &probe.density())?;
        o.record(rel);
        o.record(format!("probe{i}.json"));
        let rel = format!("probe{i}_u.bin");
        io::write_factored_field(&o.path(&rel), &h, &probe.u)?;
        o.record(rel);
        o.record(format!("probe{i}_u.json"));
        rows.push(ProbeRow {
            params: *p,
            residual,
            contraction: probe.contraction,
            iterations: probe.iterations,
            w_norm: probe.w_norm,
        });
    }
    o.json("probes.json", &rows)?;
    if !cfg.probe.decay_lambdas.is_empty() {
        let p = &cfg.probe.cgo[0];
        let rep = decay_certificate(p, &grid, &f1, mode(p.sign), &cfg.probe.decay_lambdas, &cfg.probe.correction)?;
        o.json("decay.json", &rep)?;
    }
    o.finish("probe", cfg, &grid)
}

#[derive(Serialize)]
struct SummaryRow {
    order: usize,
    relative_l2: Option<f64>,
    l2_norm: f64,
    floor: f64,
    within_floor: bool,
    ridge_weight: f64,
    residual: f64,
    imag_residue: f64,
    condition: f64,
    masked_fraction: f64,
}

fn coefficient(f: &RunningCost, k: usize, n: usize) -> Vec<f64> {
    f.coeff(k).map(|c| c.to_vec()).unwrap_or_else(|| vec![0.0; n])
}

/// Cross section along the middle row of Ω.
fn section(grid: &Grid, r: &[f64], truth: Option<&[f64]>) -> Vec<Vec<String>> {
    let sp = grid.inner();
    let j = sp.ny() / 2;
    (0..sp.nx())
        .map(|i| {
            let k = sp.idx(i, j);
            let mut row = vec![num(sp.coord(k)[0]), num(r[k])];
            row.push(truth.map_or(String::new(), |t| num(t[k])));
            row
        })
        .collect()
}

pub fn reconstruct(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    let rc = &cfg.reconstruct;
    for p in &cfg.probe.pairs {
        check_probe_pair(&p.plus, &p.minus)?;
    }
    if rc.orders.is_empty() {
        return Err(Error::Config("no reconstruction orders".into()).into());
    }
    let mut orders = rc.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    if orders.iter().any(|&k| !(1..=4).contains(&k)) {
        return Err(Error::Config("orders must lie in 1..=4".into()).into());
    }
    let grid = cfg.grid()?;
    let f_true = cfg.f_true(&grid, &l.base_dir)?;
    let f_ref = cfg.f_ref(&grid, &l.base_dir)?;
    let g = cfg.terminal(&grid)?;
    let dir = cfg
        .directions
        .first()
        .ok_or_else(|| Error::Config("reconstruct needs a perturbation direction".into()))?
        .build(&grid)?
        .into_values();
    let plan = ProbePlan::lattice(&grid, cfg.probe.per_axis);
    let mode = parallelism();
    let mut opts = rc.options;
    opts.parallelism = mode;
    let n = grid.outer().len();
    let synthetic = rc.measurements.is_none();
    let mut o = Out::new(out)?;
    let mut summary = Vec::new();
    let mut carried = f_ref.clone();
    for &k in &orders {
        let eps = rc.eps_for(k);
        let measured = match &rc.measurements {
            Some(d) => io::read_measurement(&l.base_dir.join(d).join(format!("order{k}")), &grid)?.1,
            None => measurement_derivative(&grid, &f_true, &g, &dir, k, eps, &cfg.solver, mode)?,
        };
        let reference = measurement_derivative(&grid, &carried, &g, &dir, k, eps, &cfg.solver, mode)?;
        let diff = measured.sub(&reference);
        let mut r: ReconstructionResult = if k == 1 {
            reconstruct_order1(&grid, &carried, &g, &dir, &diff, &plan, &opts)?
        } else {
            reconstruct_order_k(&grid, k, &carried, &g, &dir, &diff, &plan, &opts)?
        };
        let truth: Option<Vec<f64>> = synthetic.then(|| {
            let d: Vec<f64> = coefficient(&f_true, k, n).iter().zip(coefficient(&f_ref, k, n)).map(|(a, b)| a - b).collect();
            grid.restrict(&d)
        });
        if let Some(t) = truth.as_ref().filter(|t| grid.inner().l2_norm(t) > 0.0) {
            r = r.with_truth(&grid, t)?;
        }
        let stem = format!("order{k}");
        io::write_reconstruction(&o.root, &stem, &grid, &r)?;
        for f in [".json", "_recovered.bin", "_recovered.json", "_samples.csv"] {
            o.record(format!("{stem}{f}"));
        }
        o.csv(&format!("{stem}_section.csv"), &["x", "recovered", "truth"], &section(&grid, &r.recovered, truth.as_deref()))?;
        let norm = r.l2_norm(&grid);
        summary.push(SummaryRow {
            order: k,
            relative_l2: r.error.as_ref().map(|e| e.relative_l2),
            l2_norm: norm,
            floor: r.floor,
            within_floor: norm <= 2.0 * r.floor,
            ridge_weight: r.ridge_weight,
            residual: r.residual,
            imag_residue: r.imag_residue,
            condition: r.condition,
            masked_fraction: r.masked_fraction,
        });
        carried = carried.with_added(k, &grid.extend_zero(&r.recovered))?;
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), num);
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.order.to_string(),
                opt(s.relative_l2),
                num(s.l2_norm),
                num(s.floor),
                s.within_floor.to_string(),
                num(s.ridge_weight),
                num(s.residual),
                num(s.imag_residue),
                num(s.condition),
                num(s.masked_fraction),
            ]
        })
        .collect();
    o.csv(
        "summary.csv",
        &["order", "relative_l2", "l2_norm", "floor", "within_floor", "ridge_weight", "residual", "imag_residue", "condition", "masked_fraction"],
        &rows,
    )?;
    o.json("summary.json", &summary)?;
    if !cfg.probe.pairs.is_empty() {
        let samples = fourier_samples(&grid, &f_true, &f_ref, &g, cfg)?;
        io::write_frequency_samples(&o.path("frequency_samples.csv"), &samples)?;
        o.record("frequency_samples.csv");
    }
    o.finish("reconstruct", cfg, &grid)
}

fn fourier_samples(grid: &Grid, f_true: &RunningCost, f_ref: &RunningCost, g: &TerminalCost, cfg: &ExperimentConfig) -> CliResult<Vec<IdentitySample>> {
    let eps = cfg.reconstruct.eps_for(1);
    let mode = parallelism();
    let mut out = Vec::new();
    for p in &cfg.probe.pairs {
        let (re, im) = runge_direction(grid, &p.plus);
        let d = |dir: &[f64]| -> mfg_core::Result<MeasurementData> {
            let a = measurement_derivative(grid, f_true, g, dir, 1, eps, &cfg.solver, mode)?;
            let b = measurement_derivative(grid, f_ref, g, dir, 1, eps, &cfg.solver, mode)?;
            Ok(a.sub(&b))
        };
        out.push(fourier_sample(grid, f_ref, g, &d(&re)?, &d(&im)?, &p.plus, &p.minus, &cfg.probe.correction)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub pass: bool,
    pub detail: serde_json::Value,
}

fn estimate(o: &mut Out, r: &EstimateReport) -> CliResult<SuiteResult> {
    io::write_estimate(&o.path("verify"), r)?;
    o.record(format!("verify/{}.json", r.id));
    o.record(format!("verify/{}_ratios.csv", r.id));
    Ok(SuiteResult {
        suite: r.id.clone(),
        pass: r.pass,
        detail: serde_json::json!({"spread": r.spread, "threshold": r.threshold, "constant": r.constant, "skipped": r.skipped}),
    })
}

fn run_suite(s: &Suite, l: &Loaded, grid: &Grid, o: &mut Out) -> CliResult<SuiteResult> {
    let cfg = &l.config;
    let mode = parallelism();
    let sp = grid.outer();
    let name = s.name().to_string();
    let res = match s {
        Suite::Stationary { tol } => {
            let f = RunningCost::linear(sp.len(), 1.0)?;
            let g = TerminalCost::new(sp, TerminalCostSpec { radius: cfg.costs.g.radius, psi: Psi::Linear })?;
            let m0 = vec![1.0 / sp.volume(); sp.len()];
            let sol = solve_mfg(grid, &f, &g, &m0, &cfg.solver)?;
            let du = sol.u.values().iter().fold(0.0f64, |a, v| a.max((v - g.b()).abs()));
            let dm = sol.m.values().iter().fold(0.0f64, |a, v| a.max((v - m0[0]).abs()));
            SuiteResult {
                suite: name,
                pass: du <= *tol && dm <= *tol,
                detail: serde_json::json!({"u_dev": du, "m_dev": dm, "iterations": sol.iterations, "tol": tol}),
            }
        }
        Suite::Mass { samples, amplitude, tol } => {
            let f = cfg.f_true(grid, &l.base_dir)?;
            let g = cfg.terminal(grid)?;
            let seeds: Vec<u64> = (0..*samples as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
            let defects = par_map(mode, seeds, |seed| -> mfg_core::Result<f64> {
                let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(seed);
                let m0 = random_density(sp, &mut rng, *amplitude);
                let sol = solve_mfg(grid, &f, &g, &m0, &cfg.solver)?;
                Ok((0..grid.nt()).map(|n| (sp.integral(sol.m.level(n)) - 1.0).abs()).fold(0.0, f64::max))
            })
            .into_iter()
            .collect::<mfg_core::Result<Vec<_>>>()?;
            let worst = defects.iter().cloned().fold(0.0, f64::max);
            SuiteResult {
                suite: name,
                pass: worst <= *tol,
                detail: serde_json::json!({"max_mass_defect": worst, "tol": tol, "samples": samples}),
            }
        }
        Suite::Monotonicity { trials } => {
            let r = check_monotonicity(&cfg.f_true(grid, &l.base_dir)?, sp, *trials, cfg.seed);
            SuiteResult {
                suite: name,
                pass: r.pass,
                detail: serde_json::to_value(&r).map_err(Error::from)?,
            }
        }
        Suite::CarlemanPlus { sampler, lambdas } | Suite::CarlemanMinus { sampler, lambdas } => {
            let sign = if matches!(s, Suite::CarlemanPlus { .. }) { Sign::Plus } else { Sign::Minus };
            let spec = SamplerSpec { seed: sampler.seed.wrapping_add(cfg.seed), ..*sampler };
            let r = analysis::check_carleman(grid, &draw_samples(&spec), lambdas, sign, &spec, mode)?;
            estimate(o, &r)?
        }
        Suite::AprioriForward { samples } => {
            let f = cfg.f_true(grid, &l.base_dir)?;
            let r = analysis::check_apriori_forward(grid, &f, &cfg.terminal(grid)?, &band_limited_fields(grid, *samples, 3, cfg.seed), mode)?;
            estimate(o, &r)?
        }
        Suite::AprioriAdjoint { samples } => {
            let f1 = grid.restrict(cfg.f_true(grid, &l.base_dir)?.coeff(1).unwrap_or(&[]));
            let r = analysis::check_apriori_adjoint(grid, &f1, &band_limited_fields(grid, *samples, 3, cfg.seed), mode)?;
            estimate(o, &r)?
        }
        Suite::Energy => {
            // same space grid at dt and dt/2
            let mut reps = Vec::new();
            for nt in [grid.nt(), 2 * grid.nt() - 1] {
                let gr = Grid::new(GridSpec { nt, ..grid.spec().clone() })?;
                let f = cfg.f_true(&gr, &l.base_dir)?;
                let init = band_limited_fields(&gr, 1, 3, cfg.seed).remove(0);
                let lin = solve_linearized1(&gr, &f, &cfg.terminal(&gr)?, &init, &LateralBc::DirichletZeroOnInner)?;
                reps.push(check_energy_identity(&gr, &gr.restrict(f.coeff(1).unwrap_or(&[])), &lin.u, &lin.m)?);
            }
            let ratio = reps[0].defect / reps[1].defect;
            SuiteResult {
                suite: name,
                pass: reps.iter().all(|r| r.sign_ok) && (reps[0].defect == 0.0 || ratio >= 1.8),
                detail: serde_json::json!({"reports": reps, "ratio": ratio}),
            }
        }
    };
    Ok(res)
}

pub fn verify(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    if cfg.verify.suites.is_empty() {
        return Err(Error::Config("empty suite list".into()).into());
    }
    let grid = cfg.grid()?;
    let mut o = Out::new(out)?;
    let mut results = Vec::new();
    for s in &cfg.verify.suites {
        log::info!("suite {}", s.name());
        results.push(run_suite(s, l, &grid, &mut o)?);
    }
    o.json("verify/summary.json", &results)?;
    let first = results.iter().find(|r| !r.pass).map(|r| format!("suite {} failed: {}", r.suite, r.detail));
    let hash = o.finish("verify", cfg, &grid)?;
    match first {
        Some(msg) => Err(CliError::Verification(msg)),
        None => Ok(hash),
    }
}

#[derive(Serialize)]
struct CatalogEntry {
    kind: &'static str,
    form: &'static str,
}

pub fn catalog(l: &Loaded, out: &Path) -> CliResult<String> {
    let cfg = &l.config;
    let grid = cfg.grid()?;
    let mut o = Out::new(out)?;
    let costs = [
        CatalogEntry { kind: "linear", form: "c (z - 1)" },
        CatalogEntry { kind: "exp_shifted", form: "e^(z-1) - 1 truncated at `order`" },
        CatalogEntry { kind: "perturbed", form: "base + sum amp sin(a pi x) sin(b pi y) on the inner box, at `order`" },
        CatalogEntry { kind: "file", form: "coefficient fields F^(1), F^(2), ... on the outer grid" },
    ];
    let psi = [
        CatalogEntry { kind: "linear", form: "s" },
        CatalogEntry { kind: "cubic", form: "s + a (s - 1)^3" },
        CatalogEntry { kind: "exp", form: "1 + (e^(a(s-1)) - 1) / a" },
    ];
    let f = cfg.f_true(&grid, &l.base_dir)?;
    let mono = check_monotonicity(&f, grid.outer(), 50, cfg.seed);
    let g = cfg.terminal(&grid)?;
    let summary = serde_json::json!({
        "running_costs": costs,
        "terminal_psi": psi,
        "directions": ["cosine", "bump", "positive"],
        "selected": {
            "f_true": cfg.costs.f_true.id(),
            "order": f.order(),
            "a1": f.a1(),
            "min_f1": f.coeff(1).map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min)),
            "monotonicity": mono,
            "terminal_b": g.b(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    o.json("catalog.json", &summary)?;
    o.finish("catalog", cfg, &grid)
}
