//! Command-line driver: subcommands over one validated run configuration,
//! reports with provenance, snapshots and CSV tables in an output directory.

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::correctors::{solve_active_corrector, solve_passive_corrector};
use crate::dilute::{dilute_bpas1, dilute_report, einstein_compare, pusher_puller_shear, DiluteReport, EinsteinComparison};
use crate::effective::{
    assemble_bpas, compute_effective, linearize_bact, realization_ensemble, solve_passive_realization, EffectiveTensors, Linearization,
};
use crate::ensemble::{estimate_intensities, IntensityReport, LagSet, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::forcing::{evaluate_force, ForceKind, Orientation};
use crate::solvers::{
    macro_coefficients, macro_solution, micro_ensemble, min_eigenvalue, solve_micro, FixedPointRecord, MacroCoefficients, Trend,
    TwoScaleTable,
};
use crate::stokes::{residual_csv, Grid};
use crate::tensor::{strain_dim, Mat, StrainRate};

#[derive(Parser, Debug)]
#[command(name = "active-rheology", version, about = "Effective viscosity of active rigid-particle suspensions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration (defaults to the shipped configuration).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output` in the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent realizations and sweep rows.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Master seed (overrides `ensemble.seed`; two-scale seeds follow it).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Sample hardcore ensembles and audit the hardcore invariant.
    Gen,
    /// Passive and active corrector snapshots with residual logs.
    Corrector,
    /// Effective tensors B_pas, b̄, B_act(E), c̄, F̄ with error bars.
    Effective,
    /// Dilute closed forms and the viscosity-reduction check.
    Dilute,
    /// Nonlinear micro problem at scale ε.
    Micro,
    /// Homogenized macro problem.
    Macro,
    /// Micro/macro comparison over the ε ladder.
    Twoscale,
    /// Invariant suite; exit code 0 iff every check passes.
    Verify,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Corrector => "corrector",
            Command::Effective => "effective",
            Command::Dilute => "dilute",
            Command::Micro => "micro",
            Command::Macro => "macro",
            Command::Twoscale => "twoscale",
            Command::Verify => "verify",
            Command::Config => "config",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub package: String,
    pub version: String,
}

impl Provenance {
    pub fn new(cmd: Command, cfg: &RunConfig) -> Self {
        Provenance {
            subcommand: cmd.name().into(),
            config_hash: cfg.hash(),
            seed: cfg.ensemble.seed,
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    report: &'a T,
}

/// Writes `<name>.json` with the provenance block in front of the report.
pub fn write_report<T: Serialize>(out: &Path, name: &str, prov: &Provenance, report: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let text = serde_json::to_string_pretty(&Envelope { provenance: prov, report }).map_err(|e| Error::Inconsistent(e.to_string()))?;
    std::fs::write(out.join(format!("{name}.json")), text + "\n")?;
    Ok(())
}

/// Resolves the configuration from the command line.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::shipped(),
    };
    if let Some(s) = cli.seed {
        cfg.ensemble.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleSummary {
    pub file: String,
    pub seed: u64,
    pub particles: usize,
    pub volume_fraction: f64,
    pub min_surface_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GenReport {
    pub ensembles: Vec<EnsembleSummary>,
    pub intensities: IntensityReport,
}

fn realizations(cfg: &RunConfig) -> Result<Vec<ParticleEnsemble>> {
    let s = cfg.effective_settings(false);
    (0..s.realizations).into_par_iter().map(|r| realization_ensemble(&s, r)).collect()
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<GenReport> {
    std::fs::create_dir_all(out)?;
    let ens = realizations(cfg)?;
    let mut summaries = Vec::new();
    for (r, e) in ens.iter().enumerate() {
        e.audit_hardcore()?;
        let file = format!("ensemble_{r:03}.txt");
        e.write(&out.join(&file))?;
        summaries.push(EnsembleSummary {
            file,
            seed: e.seed,
            particles: e.len(),
            volume_fraction: e.volume_fraction(),
            min_surface_gap: e.min_surface_distance().map(|m| m.0),
        });
    }
    let d = cfg.ensemble.dim;
    let window = 2.0;
    let lags = LagSet::regular(d, window, 4.0, 8, 0.5 * cfg.ensemble.side, 16, cfg.ensemble.seed);
    Ok(GenReport { ensembles: summaries, intensities: estimate_intensities(&ens, window, &lags)? })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectorReport {
    pub particles: usize,
    pub passive_iterations: usize,
    pub passive_residual: f64,
    pub active_iterations: usize,
    pub active_residual: f64,
    /// (∫Λ:D(φ), ∫f·φ) of the active corrector.
    pub energy_identity: Option<(f64, f64)>,
}

pub fn cmd_corrector(cfg: &RunConfig, out: &Path) -> Result<CorrectorReport> {
    let s = cfg.effective_settings(false);
    let ens = realization_ensemble(&s, 0)?;
    let grid = Grid::new(s.dim, s.n, s.side)?;
    let e = &cfg.physics.strain;
    let passive = solve_passive_corrector(&ens, e, grid, &s.opts)?;
    passive.write(out, "psi")?;
    std::fs::write(out.join("psi_residuals.csv"), residual_csv(&passive.flow.log))?;
    let active = solve_active_corrector(&ens, &cfg.force, e, grid, &s.opts)?;
    active.write(out, "phi")?;
    std::fs::write(out.join("phi_residuals.csv"), residual_csv(&active.flow.log))?;
    ens.write(&out.join("ensemble.txt"))?;
    Ok(CorrectorReport {
        particles: ens.len(),
        passive_iterations: passive.flow.iterations,
        passive_residual: passive.flow.residuals.fixed_point,
        active_iterations: active.flow.iterations,
        active_residual: active.flow.residuals.fixed_point,
        energy_identity: active.energy_identity(),
    })
}

pub fn cmd_effective(cfg: &RunConfig) -> Result<EffectiveTensors> {
    compute_effective(&cfg.effective_settings(true))
}

#[derive(Clone, Debug, Serialize)]
pub struct PointDipoleValue {
    pub dim: usize,
    pub gamma: f64,
    pub offset: f64,
    pub fmag: f64,
    pub shear: f64,
    pub shear_scalar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiluteOutput {
    pub report: DiluteReport,
    pub point_dipole: Option<PointDipoleValue>,
    /// Fitted B_pas slope per unit volume fraction against the dilute value.
    pub einstein: Option<EinsteinComparison>,
}

pub fn cmd_dilute(cfg: &RunConfig) -> Result<DiluteOutput> {
    let report = dilute_report(&cfg.dilute_settings())?;
    let d = cfg.ensemble.dim;
    let point_dipole = match &cfg.dilute.point_dipole {
        Some(p) => Some(PointDipoleValue {
            dim: d,
            gamma: cfg.force.gamma,
            offset: p.offset,
            fmag: p.fmag,
            shear: p.shear,
            shear_scalar: pusher_puller_shear(cfg.force.gamma, p.offset, p.fmag, p.shear, d)?,
        }),
        None => None,
    };
    let einstein = match &cfg.dilute.cell_data {
        Some(c) => {
            let m = strain_dim(d);
            let id: Vec<f64> = (0..m * m).map(|k| if k % (m + 1) == 0 { 1.0 } else { 0.0 }).collect();
            // dilute slope per unit volume fraction = per unit λ1 / |B|
            let vb = crate::util::unit_ball_volume(d);
            let slope: Vec<f64> = dilute_bpas1(d).iter().flatten().map(|v| v / vb).collect();
            Some(einstein_compare(&c.volume_fractions, &c.bpas, &id, &slope, c.fit)?)
        }
        None => None,
    };
    Ok(DiluteOutput { report, point_dipole, einstein })
}

fn fixed_point_csv(log: &[FixedPointRecord]) -> String {
    let mut s = String::from("iter,diff,norm,ratio,resolved\n");
    for r in log {
        s.push_str(&format!("{},{:e},{:e},{},{}\n", r.iter, r.diff, r.norm, r.ratio.map_or(f64::NAN, |v| v), r.resolved));
    }
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct MicroReport {
    pub eps: f64,
    pub kappa: f64,
    pub particles: usize,
    pub iterations: usize,
    pub mean_ratio: Option<f64>,
    pub energy: f64,
    pub forcing_sq: f64,
    pub energy_constant: f64,
    pub smallness: f64,
    pub guaranteed: bool,
}

pub fn cmd_micro(cfg: &RunConfig, out: &Path) -> Result<MicroReport> {
    std::fs::create_dir_all(out)?;
    let sc = cfg.solver_config()?;
    let ts = cfg.two_scale_settings()?;
    let ens = micro_ensemble(&ts, sc.eps, sc.seed)?;
    let sol = solve_micro(&ens, Some(&cfg.force), &sc)?;
    sol.velocity.write_snapshot(&out.join("micro.vel"))?;
    std::fs::write(out.join("micro_fixed_point.csv"), fixed_point_csv(&sol.log))?;
    ens.write(&out.join("micro_ensemble.txt"))?;
    Ok(MicroReport {
        eps: sc.eps,
        kappa: sc.kappa,
        particles: ens.len(),
        iterations: sol.iterations,
        mean_ratio: sol.mean_ratio(),
        energy: sol.energy,
        forcing_sq: sol.forcing_sq,
        energy_constant: sol.energy_constant,
        smallness: sol.smallness,
        guaranteed: sol.guaranteed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MacroReport {
    pub kappa: f64,
    pub delta: f64,
    pub coefficients: MacroCoefficients,
    pub iterations: usize,
    pub lambda_min: f64,
    pub contraction_bound: f64,
    pub mean_ratio: Option<f64>,
}

pub fn cmd_macro(cfg: &RunConfig, out: &Path) -> Result<MacroReport> {
    std::fs::create_dir_all(out)?;
    let mut ts = cfg.two_scale_settings()?;
    ts.kappas = vec![cfg.physics.kappa];
    let coeffs = macro_coefficients(&ts)?;
    let sol = macro_solution(&ts, &coeffs, cfg.physics.kappa, cfg.physics.delta)?;
    sol.velocity.write_snapshot(&out.join("macro.vel"))?;
    sol.pressure.write_snapshot(&out.join("macro.pre"))?;
    std::fs::write(out.join("macro_fixed_point.csv"), fixed_point_csv(&sol.log))?;
    Ok(MacroReport {
        kappa: cfg.physics.kappa,
        delta: cfg.physics.delta,
        coefficients: coeffs,
        iterations: sol.iterations,
        lambda_min: sol.lambda_min,
        contraction_bound: sol.contraction_bound,
        mean_ratio: sol.mean_ratio(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoScaleReport {
    pub trends: Vec<Trend>,
    pub coefficients: MacroCoefficients,
}

pub fn cmd_twoscale(cfg: &RunConfig, out: &Path) -> Result<TwoScaleTable> {
    std::fs::create_dir_all(out)?;
    let table = crate::solvers::two_scale_experiment(&cfg.two_scale_settings()?)?;
    std::fs::write(out.join("twoscale.csv"), table.csv())?;
    Ok(table)
}

/// One invariant of the verification suite.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), value, threshold, passed: value <= threshold, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub linearization: Linearization,
    pub passed: bool,
}

/// Largest |trace| and skew norm of a matrix rebuilt from basis coordinates.
fn trace_free_defect(d: usize, coords: &[f64]) -> f64 {
    let m = crate::tensor::strain_basis(d).iter().zip(coords).fold(Mat::zeros(d), |a, (b, c)| a.add(&b.mat().scale(*c)));
    m.trace().abs().max(m.skew().norm())
}

/// The invariant suite on the configured ensembles and force model.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let d = cfg.ensemble.dim;
    let e = cfg.physics.strain;
    let s = cfg.effective_settings(false);
    let grid = Grid::new(d, s.n, s.side)?;
    let ens = realizations(cfg)?;
    let mut checks = Vec::new();

    let mut hard: f64 = 0.0;
    for x in &ens {
        if x.audit_hardcore().is_err() {
            hard = f64::INFINITY;
        }
    }
    checks.push(Check::at_most("hardcore", hard, 0.0, format!("{} ensembles audited", ens.len())));

    let mut neutral: f64 = 0.0;
    for x in &ens {
        neutral = neutral.max(evaluate_force(&cfg.force, x, &e, &grid, s.opts.indicator_width)?.neutrality);
    }
    checks.push(Check::at_most("neutrality", neutral, 1e-12, "max per-particle net force/torque"));

    let prs = ens.par_iter().map(|x| solve_passive_realization(x, grid, &s.opts)).collect::<Result<Vec<_>>>()?;
    let witness = ens.iter().position(|x| !x.is_empty()).unwrap_or(0);
    let psi = solve_passive_corrector(&ens[witness], &e, grid, &s.opts)?;
    checks.push(Check::at_most("div-free", psi.flow.residuals.div, s.opts.tol, "||div u|| / ||grad u|| of the passive corrector"));

    let tensors = compute_effective(&cfg.effective_settings(false))?;
    checks.push(Check::at_most("bpas-symmetry", tensors.bpas_symmetry_sigma, 3.0, "max |B_ij - B_ji| / (SE_ij + SE_ji)"));
    let est = assemble_bpas(&prs)?;
    let m = strain_dim(d);
    let sym: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| 0.5 * (est.mean[i * m + j] + est.mean[j * m + i])).collect()).collect();
    let se = est.se.iter().fold(0.0f64, |a, v| a.max(*v));
    let lmin = min_eigenvalue(&sym);
    checks.push(Check { name: "bpas-positivity".into(), value: lmin, threshold: 3.0 * se, passed: lmin > 3.0 * se, detail: "smallest eigenvalue vs 3 SE".into() });

    let q = &tensors.queries[0];
    let tb = trace_free_defect(d, &q.bact.mean);
    let tf = trace_free_defect(d, &q.fbar.mean);
    checks.push(Check::at_most("bact-trace-free", tb, 1e-10, "|tr| and skew of B_act(E)"));
    checks.push(Check::at_most("fbar-trace-free", tf, 1e-10, "|tr| and skew of F(E)"));

    let phi = solve_active_corrector(&ens[witness], &cfg.force, &e, grid, &s.opts)?;
    let (diss, work) = phi.energy_identity().expect("active corrector carries its forcing");
    let rel = if work != 0.0 { (diss - work).abs() / work.abs() } else { (diss - work).abs() };
    checks.push(Check::at_most("energy-identity", rel, 1e-6, format!("dissipation {diss:e} vs work {work:e}")));

    // smooth model: fixed orientation, saturating amplitude
    let smooth = cfg.force.clone().with_kind(ForceKind::Saturating).with_orientation(Orientation::Fixed([0.6, 0.8, 0.0]));
    let dir = StrainRate::from_coords(d, &(0..m).map(|k| 0.5 / (k + 1) as f64).collect::<Vec<_>>());
    let lin = linearize_bact(&prs, &ens, &smooth, &e, &dir, 0.2, s.opts.indicator_width)?;
    let order_err = if lin.inconclusive { f64::INFINITY } else { (lin.order - 2.0).abs() };
    checks.push(Check::at_most("linearization-order", order_err, 0.25, format!("observed order {:.3}", lin.order)));

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, linearization: lin, passed })
}

/// Runs one subcommand; returns whether every check passed.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    let out = PathBuf::from(&cfg.output);
    let prov = Provenance::new(cli.command, &cfg);
    let work = || -> Result<bool> {
        if cli.command == Command::Config {
            println!("{}", cfg.to_json());
            return Ok(true);
        }
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("resolved_config.json"), cfg.to_json() + "\n")?;
        let name = cli.command.name();
        match cli.command {
            Command::Gen => write_report(&out, name, &prov, &cmd_gen(&cfg, &out)?)?,
            Command::Corrector => write_report(&out, name, &prov, &cmd_corrector(&cfg, &out)?)?,
            Command::Effective => write_report(&out, name, &prov, &cmd_effective(&cfg)?)?,
            Command::Dilute => {
                let r = cmd_dilute(&cfg)?;
                println!("E:2B_act^(1)(E) = {:.12}", r.report.shear_scalar);
                if let Some(c) = r.report.closed_form {
                    println!("closed form at the model offset = {c:.12}");
                }
                if let Some(p) = &r.point_dipole {
                    println!("point dipole shear scalar = {:.12}", p.shear_scalar);
                }
                if let Some(e) = &r.einstein {
                    println!("einstein slope deviation = {:.4}", e.relative_deviation);
                }
                println!("reduction margin = {:e} (reduced: {})", r.report.reduction.margin, r.report.reduction.reduced);
                write_report(&out, name, &prov, &r)?
            }
            Command::Micro => write_report(&out, name, &prov, &cmd_micro(&cfg, &out)?)?,
            Command::Macro => write_report(&out, name, &prov, &cmd_macro(&cfg, &out)?)?,
            Command::Twoscale => {
                let t = cmd_twoscale(&cfg, &out)?;
                print!("{}", t.csv());
                write_report(&out, name, &prov, &TwoScaleReport { trends: t.trends, coefficients: t.coefficients })?
            }
            Command::Verify => {
                let r = cmd_verify(&cfg)?;
                for c in &r.checks {
                    println!("{} {:<20} {:.3e} (threshold {:.1e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold, c.detail);
                }
                write_report(&out, name, &prov, &r)?;
                return Ok(r.passed);
            }
            Command::Config => unreachable!(),
        }
        Ok(true)
    };
    match cli.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Inconsistent(e.to_string()))?
            .install(work),
        None => work(),
    }
}
