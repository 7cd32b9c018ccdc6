//! Run configuration, read from TOML files with a `.cfg` extension.
//!
//! Relative fixture paths are resolved against the directory of the config
//! file. See `experiments/README.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bsde::SolverConfig;
use crate::error::{Error, Result};
use crate::instruments::{atm_strike, IntrinsicVariant, Side, Swaption};
use crate::lmm::{
    correlation_matrix, GridSpacing, HumpParams, LmmModel, LocalVol, Measure, Scheme, TimeGrid,
    VolSpec,
};
use crate::neural::AdamConfig;
use crate::tenor_curve::{initial_libors, DayCount, InitialLibors, TenorStructure, ZeroCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub curve: CurveConfig,
    pub tenor: TenorConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, rename = "instrument", skip_serializing_if = "Vec::is_empty")]
    pub instruments: Vec<InstrumentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Present in the manifest written next to a run's results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<super::run::Manifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveConfig {
    /// Flat continuously compounded zero rate.
    Flat { rate: f64 },
    /// Initial Libors from an `index,libor_rate` CSV.
    Libors { file: PathBuf },
    /// Continuously compounded zero rates `[[t, r], ...]`.
    Piecewise { knots: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<Vec<f64>>,
    #[serde(default)]
    pub day_count: DayCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub beta: f64,
    pub hump: HumpParams,
    pub local_vol: LocalVol,
    pub measure: Measure,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            hump: HumpParams::new(0.291, 1.483, 0.116, 0.00001),
            local_vol: LocalVol::Lognormal,
            measure: Measure::Spot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub spacing: GridSpacing,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            spacing: GridSpacing::Monthly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Forward,
    Backward,
    Mc,
    Lsmc,
    Black,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Forward => "forward",
            Method::Backward => "backward",
            Method::Mc => "mc",
            Method::Lsmc => "lsmc",
            Method::Black => "black",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub n_paths: usize,
    pub n_iterations: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    pub scheme: Scheme,
    pub intrinsic: IntrinsicVariant,
    pub pilot_paths: usize,
    pub heldout_paths: usize,
    /// Paths of the plain MC, bump-and-revalue and LSMC benchmarks.
    pub mc_paths: usize,
    pub mc_seed: u64,
    pub bump: f64,
    pub lsmc_degree: usize,
    /// Also compute bump-and-revalue Deltas for `mc`.
    pub mc_deltas: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            methods: vec![Method::Forward],
            seeds: vec![s.seed],
            n_paths: s.n_paths,
            n_iterations: s.n_iterations,
            lr: s.adam.lr,
            lr_final: None,
            scheme: s.scheme,
            intrinsic: s.intrinsic,
            pilot_paths: s.pilot_paths,
            heldout_paths: s.heldout_paths,
            mc_paths: 50_000,
            mc_seed: 20_170_103,
            bump: crate::mc_bench::DEFAULT_BUMP,
            lsmc_degree: 2,
            mc_deltas: false,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            n_paths: self.n_paths,
            n_iterations: self.n_iterations,
            adam: AdamConfig {
                lr: self.lr,
                lr_final: self.lr_final,
                decay_steps: self.n_iterations,
                ..AdamConfig::default()
            },
            seed,
            scheme: self.scheme,
            intrinsic: self.intrinsic,
            pilot_paths: self.pilot_paths,
            heldout_paths: self.heldout_paths,
            resample: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrikeConfig {
    Value(f64),
    Named(NamedStrike),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedStrike {
    Atm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    #[default]
    Swaption,
    /// Caplet on `L_rate`, paying at `T_{rate+1}`.
    Caplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentConfig {
    pub id: String,
    #[serde(default)]
    pub kind: InstrumentKind,
    #[serde(default = "receiver")]
    pub side: Side,
    pub strike: StrikeConfig,
    /// Exercise dates as tenor indices (swaptions).
    #[serde(default)]
    pub exercise: Vec<usize>,
    /// Tenor index where the underlying swap ends (swaptions).
    #[serde(default)]
    pub end: usize,
    /// Rate index (caplets).
    #[serde(default)]
    pub rate: usize,
    #[serde(default = "unit")]
    pub notional: f64,
    /// Overrides `[solver] methods` for this instrument.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
}

fn receiver() -> Side {
    Side::Receiver
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Exercise counts to price; empty means every count `1..=p`.
    pub counts: Vec<usize>,
    /// Iterations per sweep entry; entry `j` (0-based) of `counts` uses
    /// `n_iterations + j * extra_iterations_per_count`.
    pub extra_iterations_per_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub horizon_index: usize,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write wall-clock runtimes into `benchmark.csv`; off by default so that
    /// reruns produce identical files.
    pub record_runtime: bool,
    /// Per-iteration loss/price/Delta series.
    pub convergence: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            record_runtime: false,
            convergence: true,
        }
    }
}

/// Everything a run needs, with fixtures loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub model: LmmModel,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FixtureMissing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::from_str(&text)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.rebase(&parent.canonicalize()?);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Makes relative fixture and output paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CurveConfig::Libors { file } = &mut self.curve {
            fix(file);
        }
        if let Some(file) = &mut self.tenor.file {
            fix(file);
        }
        fix(&mut self.output.dir);
    }

    pub fn tenor(&self) -> Result<TenorStructure> {
        match (&self.tenor.file, &self.tenor.dates) {
            (Some(file), None) => TenorStructure::from_csv(file, self.tenor.day_count),
            (None, Some(dates)) => TenorStructure::new(dates.clone(), self.tenor.day_count),
            _ => Err(Error::ConfigParse(
                "[tenor] needs exactly one of `file` or `dates`".into(),
            )),
        }
    }

    pub fn initial_libors(&self, tenor: &TenorStructure) -> Result<InitialLibors> {
        let libors = match &self.curve {
            CurveConfig::Flat { rate } => initial_libors(&ZeroCurve::FlatContinuous(*rate), tenor)?,
            CurveConfig::Libors { file } => InitialLibors::from_csv(file)?,
            CurveConfig::Piecewise { knots } => initial_libors(
                &ZeroCurve::piecewise(knots.iter().map(|k| (k[0], k[1])).collect())?,
                tenor,
            )?,
        };
        if libors.len() != tenor.n_periods() {
            return Err(Error::ConfigParse(format!(
                "curve gives {} Libors for a tenor with {} periods",
                libors.len(),
                tenor.n_periods()
            )));
        }
        Ok(libors)
    }

    /// Loads fixtures, builds the model and validates the instruments.
    pub fn resolve(self) -> Result<Resolved> {
        if self.solver.seeds.is_empty() {
            return Err(Error::ConfigParse("[solver] seeds must not be empty".into()));
        }
        let tenor = self.tenor()?;
        let initial = self.initial_libors(&tenor)?;
        let n = tenor.n_periods();
        let m = &self.model;
        let model = LmmModel::new(
            tenor,
            initial,
            VolSpec::new(m.hump, m.local_vol)?,
            correlation_matrix(m.beta, n.saturating_sub(1))?,
            m.measure,
        )?;
        let mut ids = std::collections::HashSet::new();
        for inst in &self.instruments {
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::ConfigParse(format!("duplicate instrument id `{}`", inst.id)));
            }
            match inst.kind {
                InstrumentKind::Swaption => {
                    inst.swaption(&model)?;
                }
                InstrumentKind::Caplet => {
                    if inst.rate == 0 || inst.rate >= n {
                        return Err(Error::InvalidInstrument(format!(
                            "caplet `{}` needs a stochastic rate index in 1..{n}",
                            inst.id
                        )));
                    }
                }
            }
        }
        Ok(Resolved {
            config: self,
            model,
        })
    }
}

impl InstrumentConfig {
    pub fn methods<'a>(&'a self, solver: &'a SolverSection) -> &'a [Method] {
        self.methods.as_deref().unwrap_or(&solver.methods)
    }

    pub fn swaption(&self, model: &LmmModel) -> Result<Swaption> {
        let first = *self.exercise.first().ok_or_else(|| {
            Error::InvalidInstrument(format!("`{}` has no exercise dates", self.id))
        })?;
        let strike = match self.strike {
            StrikeConfig::Value(k) => k,
            StrikeConfig::Named(NamedStrike::Atm) => {
                atm_strike(&model.tenor, &model.initial, first, self.end)?
            }
        };
        Swaption::new(self.side, strike, self.exercise.clone(), self.end, self.notional, &model.tenor)
    }

    pub fn caplet_strike(&self, model: &LmmModel) -> f64 {
        match self.strike {
            StrikeConfig::Value(k) => k,
            StrikeConfig::Named(NamedStrike::Atm) => model.initial.values()[self.rate],
        }
    }
}

/// Simulation grid ending at tenor date `k`.
pub fn grid_to(model: &LmmModel, k: usize, spacing: GridSpacing) -> Result<TimeGrid> {
    TimeGrid::new(&model.tenor, k, spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[curve]
kind = "flat"
rate = 0.04

[tenor]
dates = [0.0, 0.5, 1.0, 1.5]

[[instrument]]
id = "a"
strike = "atm"
exercise = [1]
end = 3
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.solver.methods, vec![Method::Forward]);
        assert_eq!(cfg.solver.n_paths, 4096);
        assert_eq!(cfg.instruments[0].side, Side::Receiver);
        let r = cfg.resolve().unwrap();
        let s = r.config.instruments[0].swaption(&r.model).unwrap();
        let l = r.model.initial.values();
        assert!((s.strike - l[1]).abs() < 1e-6);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_str(MINIMAL).unwrap();
        let again = RunConfig::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_instruments() {
        let bad = MINIMAL.replace("rate = 0.04", "rate = 0.04\nratee = 1");
        assert!(matches!(RunConfig::from_str(&bad), Err(Error::ConfigParse(_))));
        let bad = MINIMAL.replace("end = 3", "end = 7");
        assert!(RunConfig::from_str(&bad).unwrap().resolve().is_err());
        let dup = format!("{MINIMAL}\n[[instrument]]\nid = \"a\"\nstrike = 0.03\nexercise = [1]\nend = 2\n");
        assert!(matches!(
            RunConfig::from_str(&dup).unwrap().resolve(),
            Err(Error::ConfigParse(_))
        ));
    }

    #[test]
    fn missing_fixture_is_reported() {
        let text = MINIMAL.replace("dates = [0.0, 0.5, 1.0, 1.5]", "file = \"nope.csv\"");
        let mut cfg = RunConfig::from_str(&text).unwrap();
        cfg.rebase(Path::new("/nonexistent"));
        assert!(matches!(cfg.resolve(), Err(Error::FixtureMissing(_))));
    }
}
