//! Run configuration: one strict JSON document (unknown keys rejected),
//! validated field by field, hashed for provenance and mapped onto the
//! settings of each pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::dilute::{DiluteQuadrature, DiluteSettings, SlopeFit, Smallness};
use crate::effective::EffectiveSettings;
use crate::error::{invalid, Error, Result};
use crate::forcing::{ForceKind, Orientation, SwimForceModel};
use crate::solvers::{CellSettings, MacroForcing, SolverConfig, TwoScaleSettings};
use crate::stokes::SolverOptions;
use crate::tensor::StrainRate;
use crate::util::unit_ball_volume;

/// The configuration shipped with the binary.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

/// Prefixes a parameter error with the config block it came from.
fn scoped(block: &'static str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter { field: block, reason: format!("`{field}` {reason}") },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleBlock {
    pub dim: usize,
    /// Cell side L of the cell problems.
    pub side: f64,
    /// Intensity λ1 (particles per unit volume).
    pub lambda1: f64,
    /// Hardcore length ℓ: surface gaps are at least 2ℓ.
    pub hardcore: f64,
    pub seed: u64,
    pub realizations: usize,
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        EnsembleBlock { dim: 2, side: 16.0, lambda1: 0.016, hardcore: 0.5, seed: 1, realizations: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointBlock {
    /// Relative H¹-seminorm update at which the micro fixed point stops.
    pub tol: f64,
    pub max_iters: usize,
    pub relaxation: f64,
    /// Constrained solves inside the fixed point.
    pub inner: SolverOptions,
}

impl Default for FixedPointBlock {
    fn default() -> Self {
        let s = SolverConfig::default();
        FixedPointBlock { tol: s.tol, max_iters: s.max_iters, relaxation: s.relaxation, inner: s.inner }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    /// Grid points per side of the cell problems.
    pub n: usize,
    /// Grid points per side of the micro and macro flows.
    pub flow_n: usize,
    /// Constrained (Uzawa-type) solver of the cell problems.
    pub solver: SolverOptions,
    pub fixed_point: FixedPointBlock,
    pub quadrature: DiluteQuadrature,
    /// Cell problems behind the macroscopic coefficients.
    pub cell: CellSettings,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        NumericsBlock {
            n: 128,
            flow_n: 256,
            solver: SolverOptions { tol: 1e-7, stagnation_window: 200, ..SolverOptions::default() },
            fixed_point: FixedPointBlock::default(),
            quadrature: DiluteQuadrature::default(),
            cell: CellSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsBlock {
    /// Query strain E for the effective and dilute reports.
    pub strain: StrainRate,
    pub kappa: f64,
    pub delta: f64,
    pub eps: f64,
    /// ε ladder and κ list of the two-scale comparison.
    pub eps_list: Vec<f64>,
    pub kappas: Vec<f64>,
    /// Number of seeds per two-scale row (consecutive from the ensemble seed).
    pub seeds: usize,
    /// Side of the macroscopic torus.
    pub macro_side: f64,
    pub forcing: MacroForcing,
    pub smallness: Smallness,
    /// Run even when εℓ > δ or the macro contraction bound fails.
    pub allow_override: bool,
}

impl Default for PhysicsBlock {
    fn default() -> Self {
        let t = TwoScaleSettings::default();
        PhysicsBlock {
            strain: StrainRate::shear(2, 0, 1, 1.0),
            kappa: 0.1,
            delta: t.base.delta,
            eps: 0.0625,
            eps_list: t.eps,
            kappas: t.kappas,
            seeds: 2,
            macro_side: t.base.side,
            forcing: t.base.forcing,
            smallness: Smallness::default(),
            allow_override: false,
        }
    }
}

/// Point dipole evaluated in closed form (γ from the force block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDipole {
    /// Distance r > 1 of the point force from the center, in radii.
    pub offset: f64,
    pub fmag: f64,
    /// Shear rate s of E = s/2 (e1⊗e2 + e2⊗e1).
    pub shear: f64,
}

fn linear_fit() -> SlopeFit {
    SlopeFit::Linear
}

/// Cell-problem B_pas at several volume fractions, compared with the dilute slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellData {
    pub volume_fractions: Vec<f64>,
    /// Row-major m×m B_pas per volume fraction.
    pub bpas: Vec<Vec<f64>>,
    #[serde(default = "linear_fit")]
    pub fit: SlopeFit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiluteBlock {
    pub point_dipole: Option<PointDipole>,
    pub cell_data: Option<CellData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ensemble: EnsembleBlock,
    pub force: SwimForceModel,
    pub numerics: NumericsBlock,
    pub physics: PhysicsBlock,
    pub dilute: DiluteBlock,
    /// Output directory (overridden by `--out`).
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ensemble: EnsembleBlock::default(),
            force: SwimForceModel {
                kind: ForceKind::Saturating,
                fbar: 1.0,
                offset: 1.5,
                gamma: -1.0,
                width: 0.3,
                orientation: Orientation::FrenkelShear,
            },
            numerics: NumericsBlock::default(),
            physics: PhysicsBlock::default(),
            dilute: DiluteBlock::default(),
            output: "out".into(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; unknown keys and bad values name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), reason: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("shipped config is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, output directory excluded.
    pub fn hash(&self) -> String {
        let c = RunConfig { output: String::new(), ..self.clone() };
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.ensemble;
        let d = e.dim;
        if !(d == 2 || d == 3) {
            return Err(invalid("ensemble.dim", format!("must be 2 or 3, got {d}")));
        }
        if !(e.side > 0.0) {
            return Err(invalid("ensemble.side", "must be positive"));
        }
        if !(e.lambda1 >= 0.0 && e.lambda1 * unit_ball_volume(d) < 1.0) {
            return Err(invalid("ensemble.lambda1", "must be nonnegative with volume fraction below 1"));
        }
        if !(e.hardcore > 0.0) {
            return Err(invalid("ensemble.hardcore", "must be positive"));
        }
        if e.realizations == 0 {
            return Err(invalid("ensemble.realizations", "need at least one"));
        }
        self.force.validate().map_err(|e| scoped("force", e))?;
        let n = &self.numerics;
        if n.n < 8 || n.flow_n < 8 {
            return Err(invalid("numerics.n", "grids need at least 8 points per side"));
        }
        n.solver.validate().map_err(|e| scoped("numerics.solver", e))?;
        n.fixed_point.inner.validate().map_err(|e| scoped("numerics.fixed_point.inner", e))?;
        let p = &self.physics;
        if p.strain.dim() != d {
            return Err(invalid("physics.strain", format!("is {}x{}, the ensemble is {d}-dimensional", p.strain.dim(), p.strain.dim())));
        }
        if p.seeds == 0 {
            return Err(invalid("physics.seeds", "need at least one"));
        }
        self.solver_config()?.validate().map_err(|e| scoped("physics", e))?;
        self.two_scale_settings()?.validate().map_err(|e| scoped("physics", e))
    }

    pub fn volume_fraction(&self) -> f64 {
        self.ensemble.lambda1 * unit_ball_volume(self.ensemble.dim)
    }

    pub fn effective_settings(&self, active_solves: bool) -> EffectiveSettings {
        EffectiveSettings {
            dim: self.ensemble.dim,
            side: self.ensemble.side,
            n: self.numerics.n,
            volume_fraction: self.volume_fraction(),
            hardcore: self.ensemble.hardcore,
            realizations: self.ensemble.realizations,
            seed: self.ensemble.seed,
            opts: self.numerics.solver.clone(),
            model: Some(self.force.clone()),
            queries: vec![self.physics.strain],
            active_solves,
        }
    }

    pub fn dilute_settings(&self) -> DiluteSettings {
        DiluteSettings {
            model: self.force.clone(),
            strain: self.physics.strain,
            lambda1: self.ensemble.lambda1,
            kappa: self.physics.kappa,
            ell: self.ensemble.hardcore,
            smallness: self.physics.smallness,
            quadrature: self.numerics.quadrature,
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let p = &self.physics;
        let f = &self.numerics.fixed_point;
        Ok(SolverConfig {
            dim: self.ensemble.dim,
            kappa: p.kappa,
            delta: p.delta,
            eps: p.eps,
            n: self.numerics.flow_n,
            side: p.macro_side,
            tol: f.tol,
            inner: f.inner.clone(),
            max_iters: f.max_iters,
            seed: self.ensemble.seed,
            forcing: p.forcing.clone(),
            smallness: p.smallness,
            relaxation: f.relaxation,
            allow_override: p.allow_override,
        })
    }

    pub fn two_scale_settings(&self) -> Result<TwoScaleSettings> {
        let s = self.ensemble.seed;
        Ok(TwoScaleSettings {
            base: self.solver_config()?,
            eps: self.physics.eps_list.clone(),
            kappas: self.physics.kappas.clone(),
            seeds: (0..self.physics.seeds as u64).map(|k| s + k).collect(),
            volume_fraction: self.volume_fraction(),
            hardcore: self.ensemble.hardcore,
            model: self.force.clone(),
            cell: self.numerics.cell.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_round_trips() {
        let c = RunConfig::shipped();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.hash(), RunConfig::from_json(&c.to_json()).unwrap().hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn shipped_config_is_the_default() {
        assert_eq!(RunConfig::shipped(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::from_json(r#"{"physics": {"kapa": 1.0}}"#).unwrap_err().to_string();
        assert!(err.contains("kapa"), "{err}");
        let err = RunConfig::from_json(r#"{"numerics": {"solver": {"tolerance": 1e-8}}}"#).unwrap_err().to_string();
        assert!(err.contains("tolerance"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_json(r#"{"ensemble": {"dim": 4}}"#).unwrap_err().to_string();
        assert!(err.contains("ensemble.dim"), "{err}");
        let err = RunConfig::from_json(r#"{"ensemble": {"dim": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("physics.strain"), "{err}");
        let err = RunConfig::from_json(r#"{"physics": {"strain": [[1.0, 0.0], [0.0, 0.0]]}}"#).unwrap_err().to_string();
        assert!(err.contains("trace"), "{err}");
        let err = RunConfig::from_json(r#"{"force": {"kind": "dipole", "fbar": 1.0, "offset": 1.5, "gamma": 0.5}}"#).unwrap_err().to_string();
        assert!(err.contains("`force`") && err.contains("gamma"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.physics.kappa = 0.2;
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig { output: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn derived_settings_share_the_blocks() {
        let c = RunConfig::default();
        let t = c.two_scale_settings().unwrap();
        assert_eq!(t.seeds, vec![1, 2]);
        assert!((t.volume_fraction - 0.016 * std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(t.base.n, 256);
        let e = c.effective_settings(true);
        assert_eq!((e.n, e.realizations), (128, 4));
    }
}
