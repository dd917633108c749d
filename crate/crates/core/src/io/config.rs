//! TOML run configuration.
//!
//! ```toml
//! [lattice]
//! lx = 20
//! ly = 10
//! lz = 10
//! bc_x = "open"
//!
//! [model]
//! j = 3.0
//! lambda = 1.0
//! kappa1 = 1.5
//! kappa2 = 0.2
//! kx = 0.8
//! ky = 4.0
//! kz = 4.0
//!
//! [engine]
//! dt = 0.001
//! t_end = 100.0
//! seed = 7
//! ```
//!
//! Omitted `[engine]`, `[analysis]` and `[output]` keys take the defaults below. The
//! resolved configuration, seed included, is what lands in run metadata.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::Engine;
use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeGeom, ModelParams};
use crate::meanfield::Thresholds;
use crate::stability::StencilVariant;
use crate::twa::{DEFAULT_TRAJECTORIES, DEFAULT_TWA_DT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub model: ModelSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub lx: usize,
    #[serde(default = "one")]
    pub ly: usize,
    #[serde(default = "one")]
    pub lz: usize,
    #[serde(default = "open")]
    pub bc_x: Boundary,
    #[serde(default = "periodic")]
    pub bc_y: Boundary,
    #[serde(default = "periodic")]
    pub bc_z: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub j: f64,
    pub lambda: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
}

/// Where the initial amplitude is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialRegion {
    #[default]
    Uniform,
    /// Only the x = 0 layer; every other site starts at zero.
    LeftEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub kind: Engine,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between recorded samples.
    pub record_every: usize,
    pub trajectories: usize,
    /// Filled in at parse time when absent.
    pub seed: Option<u64>,
    /// `[Re, Im]` of the initial amplitude (mean-field) or Wigner centre (TWA).
    pub initial: [f64; 2],
    pub initial_region: InitialRegion,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            kind: Engine::MeanField,
            dt: DEFAULT_TWA_DT,
            t_end: 100.0,
            record_every: 100,
            trajectories: DEFAULT_TRAJECTORIES,
            seed: None,
            initial: [0.6, -0.6],
            initial_region: InitialRegion::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Classifier thresholds; when absent they follow the engine (see [`RunConfig::thresholds`]).
    pub thresholds: Option<Thresholds>,
    /// First time origin of the autocorrelation average.
    pub t_start: f64,
    pub tau_max: f64,
    /// `[start, stop, step]` sweep ranges.
    pub k1_range: Option<[f64; 3]>,
    pub kx_range: Option<[f64; 3]>,
    /// Trajectories classified individually in a TWA sweep point.
    pub votes: usize,
    pub stencil: StencilVariant,
    /// Substeps per period of a stored Goldstone background.
    pub substeps: usize,
    /// Transient integrated before a Goldstone background is extracted.
    pub transient: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            thresholds: None,
            t_start: 20.0,
            tau_max: 40.0,
            k1_range: None,
            kx_range: None,
            votes: 9,
            stencil: StencilVariant::BondSummed,
            substeps: 200,
            transient: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write `<output>.meta.toml` next to every artifact.
    pub metadata: bool,
    /// SVG heatmap written by `sweep`.
    pub heatmap: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            metadata: true,
            heatmap: None,
        }
    }
}

fn one() -> usize {
    1
}

fn open() -> Boundary {
    Boundary::Open
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

/// Parses and validates a configuration; a missing seed is drawn from system entropy.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    if cfg.engine.seed.is_none() {
        cfg.engine.seed = Some(rand::random());
    }
    Ok(cfg)
}

pub fn read_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn keyed(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParam { key, reason } => Error::Config(format!("{section}.{key}: {reason}")),
        other => other,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.geom()?;
        self.params()?;
        let e = &self.engine;
        let bad = |key: &str, reason: &str| Err(Error::Config(format!("{key}: {reason}")));
        if !(e.dt > 0.0 && e.dt.is_finite()) {
            return bad("engine.dt", "must be positive");
        }
        if !(e.t_end >= 0.0 && e.t_end.is_finite()) {
            return bad("engine.t_end", "must be finite and non-negative");
        }
        if e.record_every == 0 {
            return bad("engine.record_every", "must be at least 1");
        }
        if e.trajectories == 0 {
            return bad("engine.trajectories", "must be at least 1");
        }
        if !e.initial.iter().all(|v| v.is_finite()) {
            return bad("engine.initial", "must be finite");
        }
        let a = &self.analysis;
        if !(a.t_start >= 0.0 && a.tau_max > 0.0) {
            return bad("analysis.tau_max", "need t_start >= 0 and tau_max > 0");
        }
        for (key, range) in [("analysis.k1_range", a.k1_range), ("analysis.kx_range", a.kx_range)] {
            if let Some([start, stop, step]) = range {
                if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
                    return bad(key, "expected [start, stop, step] with step > 0 and stop >= start");
                }
            }
        }
        if a.votes == 0 {
            return bad("analysis.votes", "must be at least 1");
        }
        if a.substeps < 5 {
            return bad("analysis.substeps", "must be at least 5");
        }
        Ok(())
    }

    pub fn geom(&self) -> Result<LatticeGeom> {
        let l = &self.lattice;
        LatticeGeom::new([l.lx, l.ly, l.lz], [l.bc_x, l.bc_y, l.bc_z]).map_err(|e| keyed("lattice", e))
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let p = ModelParams {
            j_hop: m.j,
            lambda_pair: m.lambda,
            gain_k1: m.kappa1,
            loss_k2: m.kappa2,
            k_diff: [m.kx, m.ky, m.kz],
        };
        p.validate().map_err(|e| keyed("model", e))?;
        Ok(p)
    }

    /// Seed after parsing; zero only for configurations built by hand without one.
    pub fn seed(&self) -> u64 {
        self.engine.seed.unwrap_or(0)
    }

    pub fn initial_value(&self) -> Complex64 {
        Complex64::new(self.engine.initial[0], self.engine.initial[1])
    }

    /// Initial amplitude at every site.
    /// Explicit thresholds, else the deterministic or the stochastic defaults by engine.
    pub fn thresholds(&self) -> Thresholds {
        self.analysis.thresholds.unwrap_or(match self.engine.kind {
            Engine::MeanField => Thresholds::default(),
            Engine::Twa => Thresholds::stochastic(),
        })
    }

    pub fn initial_profile(&self, geom: &LatticeGeom) -> Vec<Complex64> {
        let a0 = self.initial_value();
        match self.engine.initial_region {
            InitialRegion::Uniform => vec![a0; geom.len()],
            InitialRegion::LeftEdge => (0..geom.len())
                .map(|i| if geom.coords(i)[0] == 0 { a0 } else { Complex64::new(0.0, 0.0) })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
