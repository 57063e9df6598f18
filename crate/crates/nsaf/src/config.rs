//! Run configuration: flat key = value text with a fixed key set. Parsing
//! rejects unknown keys and the serialization round-trips exactly, so the
//! config hash identifies a run.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::Grid;
use crate::metrics::Q;
use crate::solver::{geometric_snapshots, InitialKind, SolverConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected 'key = value'")]
    Syntax(usize),
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub slope_margin: f64,
    pub slope_margin_high: f64,
    pub stderr_max: f64,
    pub identity_spectral: f64,
    pub identity_bilinear: f64,
    pub identity_quadrature: f64,
    pub identity_scaling: f64,
    pub identity_scaling_j: f64,
    pub tail_fraction_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            slope_margin: 0.15,
            slope_margin_high: 0.2,
            stderr_max: 0.05,
            identity_spectral: 1e-12,
            identity_bilinear: 1e-10,
            identity_quadrature: 1e-8,
            identity_scaling: 1e-6,
            identity_scaling_j: 1e-3,
            tail_fraction_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid_n: usize,
    pub grid_points: usize,
    pub grid_length: f64,
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_start: f64,
    pub snapshot_count: usize,
    pub amplitude: f64,
    pub kind: InitialKind,
    pub seed: u64,
    pub advection: bool,
    pub dealias: f64,
    pub tail_flag: f64,
    pub tail_abort: f64,
    pub orders: Vec<u32>,
    pub q_list: Vec<Q>,
    pub mu_list: Vec<u32>,
    pub statements: String,
    pub j_panels: usize,
    pub tol: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_n: 2,
            grid_points: 256,
            grid_length: 80.0,
            dt: 0.01,
            t_end: 100.0,
            snapshot_start: 0.25,
            snapshot_count: 64,
            amplitude: 1.0,
            kind: InitialKind::GaussianCurl,
            seed: 7,
            advection: true,
            dealias: 2.0 / 3.0,
            tail_flag: 1e-8,
            tail_abort: 0.05,
            orders: vec![1, 2],
            q_list: vec![Q::One, Q::Two, Q::Inf],
            mu_list: vec![0, 1, 2],
            statements: default_statements(),
            j_panels: 16,
            tol: Tolerances::default(),
        }
    }
}

pub fn default_statements() -> String {
    "prop-2.1 q=1 mu=0; prop-2.1 q=1 mu=1; prop-2.2 m=1 q=inf; c-fm q=inf; \
     thm-main m=1 q=inf; thm-st m=1 q=inf mu=1; thm-st m=1 q=inf mu=2; \
     usa0 m=1; usa0 m=2"
        .to_string()
}

fn kind_label(kind: InitialKind) -> &'static str {
    match kind {
        InitialKind::GaussianCurl => "gaussian_curl",
        InitialKind::DipolePair => "dipole_pair",
        InitialKind::SeededRandomLocalized => "seeded_random_localized",
    }
}

fn q_label(q: Q) -> &'static str {
    q.label()
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Ok(Grid::new(self.grid_n, self.grid_points, self.grid_length)?)
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let grid = self.grid()?;
        let snapshot_times = if self.t_end > self.snapshot_start {
            geometric_snapshots(self.snapshot_start, self.t_end, self.snapshot_count)
        } else {
            Vec::new()
        };
        Ok(SolverConfig {
            grid,
            dt: self.dt,
            t_end: self.t_end,
            snapshot_times,
            dealias: self.dealias,
            amplitude: self.amplitude,
            kind: self.kind,
            seed: self.seed,
            advection: self.advection,
            tail_flag: self.tail_flag,
            tail_abort: self.tail_abort,
        })
    }

    /// Canonical serialization; the parse of this text reproduces self.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let t = &self.tol;
        let _ = write!(
            s,
            "grid.n = {}\ngrid.points = {}\ngrid.length = {}\n\
             solver.dt = {}\nsolver.t_end = {}\nsolver.snapshot_start = {}\n\
             solver.snapshot_count = {}\nsolver.amplitude = {}\nsolver.kind = {}\n\
             solver.seed = {}\nsolver.advection = {}\nsolver.dealias = {}\n\
             solver.tail_flag = {}\nsolver.tail_abort = {}\n\
             analysis.orders = {}\nanalysis.q = {}\nanalysis.mu = {}\n\
             analysis.statements = {}\nanalysis.j_panels = {}\n\
             tolerances.slope_margin = {}\ntolerances.slope_margin_high = {}\n\
             tolerances.stderr_max = {}\ntolerances.identity_spectral = {}\n\
             tolerances.identity_bilinear = {}\ntolerances.identity_quadrature = {}\n\
             tolerances.identity_scaling = {}\ntolerances.identity_scaling_j = {}\n\
             tolerances.tail_fraction_max = {}\n",
            self.grid_n,
            self.grid_points,
            self.grid_length,
            self.dt,
            self.t_end,
            self.snapshot_start,
            self.snapshot_count,
            self.amplitude,
            kind_label(self.kind),
            self.seed,
            self.advection,
            self.dealias,
            self.tail_flag,
            self.tail_abort,
            self.orders
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.q_list
                .iter()
                .map(|q| q_label(*q).to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.mu_list
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.statements,
            self.j_panels,
            t.slope_margin,
            t.slope_margin_high,
            t.stderr_max,
            t.identity_spectral,
            t.identity_bilinear,
            t.identity_quadrature,
            t.identity_scaling,
            t.identity_scaling_j,
            t.tail_fraction_max,
        );
        s
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax(lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: &str| ConfigError::BadValue {
                key: key.to_string(),
                msg: msg.to_string(),
            };
            macro_rules! num {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
                };
            }
            match key {
                "grid.n" => cfg.grid_n = num!(usize),
                "grid.points" => cfg.grid_points = num!(usize),
                "grid.length" => cfg.grid_length = num!(f64),
                "solver.dt" => cfg.dt = num!(f64),
                "solver.t_end" => cfg.t_end = num!(f64),
                "solver.snapshot_start" => cfg.snapshot_start = num!(f64),
                "solver.snapshot_count" => cfg.snapshot_count = num!(usize),
                "solver.amplitude" => cfg.amplitude = num!(f64),
                "solver.kind" => {
                    cfg.kind = match value {
                        "gaussian_curl" => InitialKind::GaussianCurl,
                        "dipole_pair" => InitialKind::DipolePair,
                        "seeded_random_localized" => InitialKind::SeededRandomLocalized,
                        other => return Err(bad(&format!("unknown kind '{other}'"))),
                    }
                }
                "solver.seed" => cfg.seed = num!(u64),
                "solver.advection" => {
                    cfg.advection = match value {
                        "true" | "on" => true,
                        "false" | "off" => false,
                        other => return Err(bad(&format!("expected on/off, got '{other}'"))),
                    }
                }
                "solver.dealias" => cfg.dealias = num!(f64),
                "solver.tail_flag" => cfg.tail_flag = num!(f64),
                "solver.tail_abort" => cfg.tail_abort = num!(f64),
                "analysis.orders" => {
                    cfg.orders = value
                        .split(',')
                        .map(|v| v.trim().parse::<u32>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| bad(&e.to_string()))?;
                }
                "analysis.q" => {
                    cfg.q_list = value
                        .split(',')
                        .map(|v| match v.trim() {
                            "1" => Ok(Q::One),
                            "2" => Ok(Q::Two),
                            "inf" => Ok(Q::Inf),
                            other => Err(bad(&format!("bad q '{other}'"))),
                        })
                        .collect::<Result<_, _>>()?;
                }
                "analysis.mu" => {
                    cfg.mu_list = value
                        .split(',')
                        .map(|v| v.trim().parse::<u32>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| bad(&e.to_string()))?;
                }
                "analysis.statements" => cfg.statements = value.to_string(),
                "analysis.j_panels" => cfg.j_panels = num!(usize),
                "tolerances.slope_margin" => cfg.tol.slope_margin = num!(f64),
                "tolerances.slope_margin_high" => cfg.tol.slope_margin_high = num!(f64),
                "tolerances.stderr_max" => cfg.tol.stderr_max = num!(f64),
                "tolerances.identity_spectral" => cfg.tol.identity_spectral = num!(f64),
                "tolerances.identity_bilinear" => cfg.tol.identity_bilinear = num!(f64),
                "tolerances.identity_quadrature" => cfg.tol.identity_quadrature = num!(f64),
                "tolerances.identity_scaling" => cfg.tol.identity_scaling = num!(f64),
                "tolerances.identity_scaling_j" => cfg.tol.identity_scaling_j = num!(f64),
                "tolerances.tail_fraction_max" => cfg.tol.tail_fraction_max = num!(f64),
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identical() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.serialize());
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            RunConfig::parse("grid.oops = 3"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn non_default_values_survive() {
        let mut cfg = RunConfig::default();
        cfg.grid_points = 128;
        cfg.kind = InitialKind::DipolePair;
        cfg.advection = false;
        cfg.dt = 0.025;
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn comments_and_blanks_allowed() {
        let text = "# comment\n\ngrid.points = 64\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.grid_points, 64);
    }
}
