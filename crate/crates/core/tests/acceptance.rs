//! Acceptance criteria: one pass/fail line per criterion, nonzero exit on any failure.

use std::time::Instant;

use rayon::prelude::*;

use active_rheology::cli::cmd_verify;
use active_rheology::config::RunConfig;
use active_rheology::correctors::{annulus_error, solve_single_particle};
use active_rheology::dilute::{dilute_bact1, einstein_compare, pusher_puller_shear, viscosity_reduction_check, DiluteQuadrature, SlopeFit, Smallness};
use active_rheology::effective::{bact_sample, bpas_sample, extrapolate_in_l, realization_ensemble, solve_passive_realization, EffectiveSettings};
use active_rheology::ensemble::sample_hardcore;
use active_rheology::forcing::{ForceKind, SwimForceModel};
use active_rheology::solvers::{solve_micro, two_scale_experiment, SolverConfig};
use active_rheology::stokes::{Grid, SolverOptions};
use active_rheology::tensor::StrainRate;
use active_rheology::util::{linear_fit, mean_se, unit_ball_volume};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Cell-problem solver settings for the Monte Carlo sweeps: off-grid particles plateau near 1e-7.
fn cell_opts() -> SolverOptions {
    SolverOptions { tol: 5e-7, stagnation_window: 200, ..SolverOptions::default() }
}

fn shear() -> StrainRate {
    StrainRate::shear(2, 0, 1, 1.0)
}

fn ddot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// E:B E for a row-major m×m matrix in basis coordinates.
fn quad(b: &[f64], e: &[f64]) -> f64 {
    let m = e.len();
    (0..m).map(|i| (0..m).map(|j| e[i] * b[i * m + j] * e[j]).sum::<f64>()).sum()
}

fn settings(side: f64, n: usize, vf: f64, realizations: usize, seed: u64) -> EffectiveSettings {
    EffectiveSettings {
        dim: 2,
        side,
        n,
        volume_fraction: vf,
        hardcore: 0.5,
        realizations,
        seed,
        opts: cell_opts(),
        model: None,
        queries: vec![],
        active_solves: false,
    }
}

fn single_sphere() -> Outcome {
    let e = shear();
    let t = Instant::now();
    let opts = SolverOptions { tol: 1e-8, ..SolverOptions::default() };
    let sol = match solve_single_particle(&e, 32.0, Grid::new(2, 256, 32.0).unwrap(), &opts) {
        Ok(s) => s,
        Err(err) => return outcome(false, format!("solve failed: {err}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let err = annulus_error(&sol.flow, &e, &[16.0, 16.0, 0.0], 1.5, 3.0);
    outcome(err <= 0.05 && secs <= 120.0, format!("d=2 L=32 N=256: relative L2 error {err:.4} (<= 0.05), solve {secs:.1} s (<= 120 s)"))
}

fn einstein_slope() -> Outcome {
    let t = Instant::now();
    let d = 2;
    // closed form (d+2)|B|λ1/2 per unit volume fraction λ = |B|λ1
    let oracle = (d as f64 + 2.0) / 2.0;
    let mut vfs = Vec::new();
    let mut values = Vec::new();
    for (k, &lambda) in [0.01, 0.02, 0.05].iter().enumerate() {
        let s = settings(24.0, 192, lambda, 20, 31 + k as u64);
        let grid = Grid::new(2, s.n, s.side).unwrap();
        let rows: Result<Vec<(f64, Vec<f64>)>, String> = (0..s.realizations)
            .into_par_iter()
            .map(|r| {
                let ens = realization_ensemble(&s, r).map_err(|e| e.to_string())?;
                let pr = solve_passive_realization(&ens, grid, &s.opts).map_err(|e| e.to_string())?;
                Ok((ens.volume_fraction(), bpas_sample(&pr)))
            })
            .collect();
        match rows {
            Ok(rows) => {
                for (v, b) in rows {
                    vfs.push(v);
                    values.push(b);
                }
            }
            Err(e) => return outcome(false, format!("λ={lambda}: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let id = [1.0, 0.0, 0.0, 1.0];
    let dilute = [oracle, 0.0, 0.0, oracle];
    let cmp = einstein_compare(&vfs, &values, &id, &dilute, SlopeFit::Quadratic).unwrap();
    // the scalar slope: mean of the diagonal entries
    let slope = 0.5 * (cmp.slope[0] + cmp.slope[3]);
    let dev = (slope - oracle).abs() / oracle;
    outcome(
        dev <= 0.15 && secs <= 3600.0,
        format!(
            "λ ∈ {{0.01, 0.02, 0.05}} x 20 realizations, per-realization quadratic fit: slope {slope:.3} vs {oracle} (deviation {:.1}% <= 15%), {secs:.0} s",
            100.0 * dev
        ),
    )
}

fn pusher_puller_closed_form() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    // value: γ(s/2) r fmag (1 − 5/2·r^{-3} + 3/2·r^{-5}) at r = 2: (64 − 20 + 3)/64
    let v = pusher_puller_shear(1.0, 2.0, 1.0, 1.0, 3).unwrap();
    let oracle = 47.0 / 64.0;
    ok &= (v - oracle).abs() <= 1e-12;
    notes.push(format!("value {v:.12} vs 0.734375"));
    // r → 1⁺: linear vanishing, |v(1+h)| = O(h)
    let mut worst: f64 = 0.0;
    for d in [2, 3] {
        for h in [1e-6, 1e-9, 1e-12] {
            let v = pusher_puller_shear(1.0, 1.0 + h, 1.0, 1.0, d).unwrap();
            worst = worst.max(v.abs() / h);
        }
        ok &= pusher_puller_shear(1.0, 1.0, 1.0, 1.0, d).is_err();
    }
    ok &= worst < 10.0;
    notes.push(format!("max |v(1+h)|/h = {worst:.3}"));
    let mut sign_ok = true;
    for d in [2, 3] {
        for k in 1..=400 {
            let r = 1.0 + 1e-3 * 1.03f64.powi(k);
            for g in [-1.0, 1.0] {
                let v = pusher_puller_shear(g, r, 1.0, 1.0, d).unwrap();
                sign_ok &= v * g > 0.0;
            }
        }
    }
    ok &= sign_ok;
    notes.push(format!("sign γ on r ∈ (1, {:.0}]: {sign_ok}", 1.0 + 1e-3 * 1.03f64.powi(400)));
    outcome(ok, notes.join("; "))
}

struct ActiveRuns {
    sides: Vec<f64>,
    /// Per side: per-realization (intensity, E:B_act pusher, E:B_act puller, E:B_pas E, E:B_act strong pusher).
    rows: Vec<Vec<(f64, f64, f64, f64, f64)>>,
    dilute: f64,
    kappa: f64,
    strong: SwimForceModel,
    secs: f64,
}

const STRONG_FBAR: f64 = 400.0;

fn active_runs() -> Result<ActiveRuns, String> {
    let t = Instant::now();
    let e = shear();
    let ec = e.coords();
    let push = SwimForceModel::dipole(1.0, 1.5, -1.0, 0.3).map_err(|e| e.to_string())?;
    let pull = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.3).map_err(|e| e.to_string())?;
    let strong = SwimForceModel { fbar: STRONG_FBAR, ..push.clone() };
    let dilute = e.mat().ddot(&dilute_bact1(&push, &e, &DiluteQuadrature::default()).map_err(|e| e.to_string())?);
    let kappa = 0.5 * Smallness::default().kappa_max(0.5, 2);
    let sides = vec![16.0, 24.0, 32.0];
    let mut rows = Vec::new();
    for (k, &side) in sides.iter().enumerate() {
        let n = (8.0 * side) as usize;
        let s = settings(side, n, 0.02, 8, 77 + k as u64);
        let grid = Grid::new(2, n, side).unwrap();
        let out: Result<Vec<_>, String> = (0..s.realizations)
            .into_par_iter()
            .map(|r| {
                let ens = realization_ensemble(&s, r).map_err(|e| e.to_string())?;
                let pr = solve_passive_realization(&ens, grid, &s.opts).map_err(|e| e.to_string())?;
                let w = s.opts.indicator_width;
                let (bp, _) = bact_sample(&pr, &ens, &push, &e, w).map_err(|e| e.to_string())?;
                let (bq, _) = bact_sample(&pr, &ens, &pull, &e, w).map_err(|e| e.to_string())?;
                let (bs, _) = bact_sample(&pr, &ens, &strong, &e, w).map_err(|e| e.to_string())?;
                Ok((ens.intensity(), ddot(&bp, &ec), ddot(&bq, &ec), quad(&bpas_sample(&pr), &ec), ddot(&bs, &ec)))
            })
            .collect();
        rows.push(out?);
    }
    Ok(ActiveRuns { sides, rows, dilute, kappa, strong, secs: t.elapsed().as_secs_f64() })
}

fn active_sign(runs: &Result<ActiveRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut ok = true;
    let mut notes = Vec::new();
    // sign test on the largest cell
    let last = runs.rows.last().unwrap();
    let (mp, sp) = mean_se(&last.iter().map(|r| r.1).collect::<Vec<_>>());
    let (mq, sq) = mean_se(&last.iter().map(|r| r.2).collect::<Vec<_>>());
    ok &= mp < -3.0 * sp && mq > 3.0 * sq;
    notes.push(format!("L=32: pusher E:B_act {mp:.3e} ± {sp:.1e}, puller {mq:.3e} ± {sq:.1e}"));
    // per unit λ1: pooled ratio Σ E:B_act / Σ λ1 per cell size, then a + b L^{-d}
    let per: Vec<f64> = runs
        .rows
        .iter()
        .map(|rows| rows.iter().map(|r| r.1).sum::<f64>() / rows.iter().map(|r| r.0).sum::<f64>())
        .collect();
    let (limit, _) = extrapolate_in_l(&runs.sides, &per, 2).unwrap();
    let dev = (limit - runs.dilute).abs() / runs.dilute.abs();
    ok &= dev <= 0.10;
    notes.push(format!(
        "per unit λ1 at L=16,24,32: {:.4}, {:.4}, {:.4} -> extrapolated {limit:.4} vs dilute {:.4} ({:.1}% <= 10%)",
        per[0],
        per[1],
        per[2],
        runs.dilute,
        100.0 * dev
    ));
    notes.push(format!("{:.0} s", runs.secs));
    outcome(ok, notes.join("; "))
}

fn viscosity_reduction(runs: &Result<ActiveRuns, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let e = shear();
    let e2 = e.mat().ddot(e.mat());
    let kappa = runs.kappa;
    let small = Smallness::default();
    let b1 = dilute_bact1(&runs.strong, &e, &DiluteQuadrature::default()).unwrap();
    let lambda1 = 0.02 / unit_ball_volume(2);
    let check = viscosity_reduction_check(kappa, lambda1, &b1, &e, 0.5, &small);
    // assembled: per-realization |E|² − E:B_pas E − κ E:B_act(E) on the largest cell
    let last = runs.rows.last().unwrap();
    let margins: Vec<f64> = last.iter().map(|r| e2 - r.3 - kappa * r.4).collect();
    let (m, se) = mean_se(&margins);
    let ok = check.reduced && check.feasible && m > 3.0 * se;
    outcome(
        ok,
        format!(
            "pusher |f|={STRONG_FBAR}, κ = 0.5 κ_max = {kappa:.4}: dilute margin {:.3e} (reduced {}); assembled margin {m:.3e} ± {se:.1e} (> 3 SE: {})",
            check.margin,
            check.reduced,
            m > 3.0 * se
        ),
    )
}

fn contraction() -> Outcome {
    let t = Instant::now();
    let kappas = [1.0, 2.0, 4.0, 8.0];
    let model = SwimForceModel { kind: ForceKind::Linear, ..SwimForceModel::dipole(1.0, 1.5, -1.0, 0.3).unwrap() };
    let mut ok = true;
    let mut notes = Vec::new();
    let mut consts: Vec<Vec<f64>> = Vec::new();
    for seed in [1u64, 2] {
        let ens = match sample_hardcore(2, 16.0, 0.1 / unit_ball_volume(2), 0.5, seed) {
            Ok(e) => e,
            Err(e) => return outcome(false, e.to_string()),
        };
        let mut ratios = Vec::new();
        let mut cs = Vec::new();
        for &kappa in &kappas {
            let cfg = SolverConfig { n: 128, eps: 0.25, side: 4.0, delta: 1.0, kappa, seed, ..SolverConfig::default() };
            match solve_micro(&ens, Some(&model), &cfg) {
                Ok(sol) => {
                    ratios.push(sol.mean_ratio().unwrap_or(f64::NAN));
                    cs.push(sol.energy_constant);
                }
                Err(e) => return outcome(false, format!("seed {seed} κ={kappa}: {e}")),
            }
        }
        let (_, slope, r2) = linear_fit(&kappas, &ratios);
        ok &= r2 >= 0.95 && slope > 0.0 && ratios.iter().all(|r| r.is_finite());
        notes.push(format!("seed {seed}: ratios {:?} R² {r2:.4}", ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()));
        consts.push(cs);
    }
    // energy bound ∫|∇u|² ≤ C(1+κ²)(κ²ℓ^{-d} + ∫|h|²): C seed-stable within 10% at every κ
    let spread = (0..kappas.len())
        .map(|k| {
            let (a, b) = (consts[0][k], consts[1][k]);
            (a - b).abs() / a.max(b)
        })
        .fold(0.0f64, f64::max);
    let cmax = consts.iter().flatten().fold(0.0f64, |a, v| a.max(*v));
    ok &= spread <= 0.10;
    notes.push(format!("energy constant max {cmax:.4}, seed spread {:.1}% <= 10%, {:.0} s", 100.0 * spread, t.elapsed().as_secs_f64()));
    outcome(ok, notes.join("; "))
}

fn invariant_suite() -> Outcome {
    let t = Instant::now();
    match cmd_verify(&RunConfig::shipped()) {
        Ok(r) => {
            let secs = t.elapsed().as_secs_f64();
            let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            outcome(
                r.passed && secs <= 600.0,
                format!("{} checks on the shipped config, failed: {:?}, {secs:.0} s (<= 600 s)", r.checks.len(), failed),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn two_scale() -> Outcome {
    let t = Instant::now();
    let s = RunConfig::shipped().two_scale_settings().unwrap();
    match two_scale_experiment(&s) {
        Ok(table) => {
            let secs = t.elapsed().as_secs_f64();
            let has_active = table.trends.iter().any(|t| t.kappa > 0.0) && s.model.gamma < 0.0;
            let ok = table.trends.iter().all(|t| t.decreasing) && has_active && secs <= 600.0;
            let trends: Vec<String> = table
                .trends
                .iter()
                .map(|t| format!("κ={}: {}", t.kappa, t.mean_l2_gap.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(" > ")))
                .collect();
            outcome(ok, format!("ε = 1/4, 1/8, 1/16, δ = {}: {}; {secs:.0} s total (<= 600 s)", s.base.delta, trends.join("; ")))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    let mut all = true;
    let mut report = |k: usize, name: &str, o: Outcome| {
        all &= o.passed;
        println!("{} criterion {k} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "single-sphere oracle", single_sphere());
    report(2, "Einstein passive slope", einstein_slope());
    report(3, "pusher/puller closed form", pusher_puller_closed_form());
    let runs = active_runs();
    report(4, "active sign from cell problems", active_sign(&runs));
    report(5, "viscosity reduction", viscosity_reduction(&runs));
    report(6, "fixed-point contraction", contraction());
    report(7, "invariant suite", invariant_suite());
    report(8, "two-scale trend", two_scale());
    if !all {
        std::process::exit(1);
    }
}
