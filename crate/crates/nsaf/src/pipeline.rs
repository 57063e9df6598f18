//! Run-directory orchestration: simulate -> moments -> profiles -> residuals
//! -> reports, with a manifest that makes completed stages idempotent and a
//! lockfile that serializes access to one run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisEngine, AnalysisError, Statement};
use crate::config::{ConfigError, RunConfig};
use crate::field::{FieldError, PhysicalField};
use crate::identities::{run_battery, IdentityContext, IdentityResult, IdentityTolerances};
use crate::metrics::{weighted_norm, DecayReport, NormSpec, Q};
use crate::moments::{
    build_base_table, build_i_tensor, extend_moment_table, FluxSeries, ITensorSet, MomentError,
    MomentTable, MAX_FLUX_BETA,
};
use crate::profiles::{omega_sum, velocity_sum, JQuadConfig, ProfileContext, ProfileError, TermKind};
use crate::report;
use crate::solver::{run as run_solver, DiagRow, SolverError, Snapshot, Trajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("run directory is locked by another pipeline: {0}")]
    Locked(PathBuf),
    #[error("stage 'simulate' has not completed in {0}")]
    NotSimulated(PathBuf),
    #[error("run directory was produced by a different config (hash mismatch)")]
    ConfigMismatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// CLI exit code contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Solver(SolverError::BlowUp { .. }) => 3,
            PipelineError::Solver(SolverError::BoxTooSmall { .. }) => 4,
            PipelineError::Moment(MomentError::TailDivergent { .. }) => 5,
            PipelineError::Analysis(AnalysisError::Moment(MomentError::TailDivergent {
                ..
            })) => 5,
            PipelineError::Profile(ProfileError::QuadratureNonConvergence { .. }) => 6,
            PipelineError::Analysis(AnalysisError::Profile(
                ProfileError::QuadratureNonConvergence { .. },
            )) => 6,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageRecord {
    pub done: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
    pub verdicts: BTreeMap<String, bool>,
    pub flags: Vec<String>,
}

impl Manifest {
    fn new(config_hash: &str) -> Self {
        Self {
            run_id: config_hash[..16].to_string(),
            config_hash: config_hash.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    fn load(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store(&self, dir: &Path) -> std::io::Result<()> {
        report::write_json(&dir.join("manifest.json"), self)
    }

    fn stage_done(&self, name: &str) -> bool {
        self.stages.get(name).map(|s| s.done).unwrap_or(false)
    }
}

/// Exclusive lock on a run directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".nsaf.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        std::fs::remove_file(&self.path).ok();
    }
}

fn fields_dir(dir: &Path) -> PathBuf {
    dir.join("fields")
}

/// Integrate the configured problem and persist snapshots + diagnostics.
pub fn cmd_simulate(config: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    let _lock = DirLock::acquire(dir)?;
    let hash = config.hash();
    if let Some(manifest) = Manifest::load(dir) {
        if manifest.config_hash == hash && manifest.stage_done("simulate") {
            return Ok(()); // idempotent re-invocation
        }
        if manifest.config_hash != hash && manifest.stage_done("simulate") {
            return Err(PipelineError::ConfigMismatch);
        }
    }
    let started = Instant::now();
    let solver_config = config.solver_config()?;
    let traj = run_solver(&solver_config)?;

    std::fs::create_dir_all(fields_dir(dir))?;
    for (i, snap) in traj.snapshots.iter().enumerate() {
        snap.omega
            .write_nsaf(&fields_dir(dir).join(format!("snap_{i:04}_omega.nsaf")))?;
        snap.u1
            .write_nsaf(&fields_dir(dir).join(format!("snap_{i:04}_u1.nsaf")))?;
        snap.u2
            .write_nsaf(&fields_dir(dir).join(format!("snap_{i:04}_u2.nsaf")))?;
    }
    report::write_atomic(
        &dir.join("diagnostics.csv"),
        report::diagnostics_csv(&traj.diagnostics).as_bytes(),
    )?;
    report::write_atomic(&dir.join("config.txt"), config.serialize().as_bytes())?;

    let mut manifest = Manifest::load(dir).unwrap_or_else(|| Manifest::new(&hash));
    manifest.config_hash = hash.clone();
    manifest.run_id = hash[..16].to_string();
    for row in &traj.diagnostics {
        if row.tail_flagged {
            manifest
                .flags
                .push(format!("tail mass {:.3e} at t = {}", row.tail_mass, row.t));
        }
    }
    if traj.cfl_halvings > 0 {
        manifest
            .flags
            .push(format!("dt halved {} times by the CFL guard", traj.cfl_halvings));
    }
    manifest.stages.insert(
        "simulate".into(),
        StageRecord {
            done: true,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    );
    manifest.store(dir)?;
    Ok(())
}

/// Reload the trajectory persisted by cmd_simulate.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory, PipelineError> {
    let fdir = fields_dir(dir);
    if !fdir.is_dir() {
        return Err(PipelineError::NotSimulated(dir.to_path_buf()));
    }
    let mut snapshots = Vec::new();
    for i in 0.. {
        let omega_path = fdir.join(format!("snap_{i:04}_omega.nsaf"));
        if !omega_path.exists() {
            break;
        }
        let omega = PhysicalField::read_nsaf(&omega_path)?;
        let u1 = PhysicalField::read_nsaf(&fdir.join(format!("snap_{i:04}_u1.nsaf")))?;
        let u2 = PhysicalField::read_nsaf(&fdir.join(format!("snap_{i:04}_u2.nsaf")))?;
        snapshots.push(Snapshot {
            t: omega.time_tag(),
            omega,
            u1,
            u2,
        });
    }
    if snapshots.is_empty() {
        return Err(PipelineError::NotSimulated(dir.to_path_buf()));
    }
    // rebuild the diagnostics rows analysis needs (floors, envelopes)
    let mut diagnostics = Vec::new();
    let mut assmp = [0.0f64; 2];
    for s in &snapshots {
        let mag = PhysicalField::magnitude(&s.u1, &s.u2)?;
        let l1_u = weighted_norm(&mag, NormSpec::plain(Q::One));
        let l2_u = weighted_norm(&mag, NormSpec::plain(Q::Two));
        let linf_u = weighted_norm(&mag, NormSpec::plain(Q::Inf));
        let l1_w = weighted_norm(&s.omega, NormSpec::plain(Q::One));
        let linf_w = weighted_norm(&s.omega, NormSpec::plain(Q::Inf));
        let tail_mass = s.omega.boundary_mass_fraction(4);
        assmp[0] = assmp[0].max((1.0 + s.t) * l2_u);
        assmp[1] = assmp[1].max((1.0 + s.t).powf(1.5) * linf_u);
        diagnostics.push(DiagRow {
            t: s.t,
            l1_u,
            l2_u,
            linf_u,
            l1_w,
            linf_w,
            tail_mass,
            tail_flagged: false,
        });
    }
    Ok(Trajectory {
        snapshots,
        diagnostics,
        assmp_constants: assmp,
        cfl_halvings: 0,
    })
}

/// Everything the analysis and identity stages consume.
pub struct AnalysisInputs {
    pub traj: Trajectory,
    pub flux: FluxSeries,
    pub table: MomentTable,
    pub itensors: ITensorSet,
}

pub fn build_analysis_inputs(dir: &Path, source: &str) -> Result<AnalysisInputs, PipelineError> {
    let traj = load_trajectory(dir)?;
    let flux = FluxSeries::from_trajectory(&traj, MAX_FLUX_BETA)?;
    let mut table = build_base_table(&traj, &flux, source)?;
    let grid = traj.snapshots[0].omega.grid();

    // low-order profiles at t = 1 feed the renormalization tensors
    let itensors = {
        let empty = ITensorSet::default();
        let ctx = ProfileContext {
            grid,
            table: &table,
            itensors: &empty,
            flux: Some(&flux),
        };
        let mut omegas = Vec::new();
        for ord in 2..=3u32 {
            omegas.push(omega_sum(&ctx, ord)?.sum.eval(grid, 1.0)?);
        }
        let mut ws = Vec::new();
        for i in 1..=2u32 {
            let mut pair = Vec::new();
            for j in 1..=2usize {
                let u = velocity_sum(&ctx, TermKind::U, i, j)?.sum.eval(grid, 1.0)?;
                let ut = velocity_sum(&ctx, TermKind::UT, i, j)?.sum.eval(grid, 1.0)?;
                pair.push(u.axpby(1.0, &ut, 1.0)?);
            }
            ws.push([pair.remove(0), pair.remove(0)]);
        }
        let mut set = ITensorSet::default();
        for p in 3..=4u32 {
            set.tensors
                .insert(p, build_i_tensor(p, grid, &omegas, &ws, 10)?);
        }
        set
    };
    extend_moment_table(&mut table, &flux, &itensors)?;
    Ok(AnalysisInputs {
        traj,
        flux,
        table,
        itensors,
    })
}

#[derive(Debug, Serialize)]
struct ProfileManifestEntry {
    kind: String,
    order: u32,
    component: String,
    t: f64,
    provenance: Vec<(String, f64)>,
}

/// Analyze a simulated run: moments, profiles, residual decay reports,
/// identity battery, and plots.
pub fn cmd_analyze(
    config: &RunConfig,
    dir: &Path,
    statements: &[Statement],
) -> Result<Vec<DecayReport>, PipelineError> {
    let _lock = DirLock::acquire(dir)?;
    let started = Instant::now();
    let inputs = build_analysis_inputs(dir, &config.hash()[..16])?;
    let tol = config.tol.clone();
    let j_quad = JQuadConfig {
        panels: config.j_panels,
        ..JQuadConfig::default()
    };
    let engine = AnalysisEngine::new(
        &inputs.traj,
        &inputs.flux,
        &inputs.table,
        &inputs.itensors,
        tol.clone(),
        j_quad,
    );

    let mut reports = Vec::new();
    for stmt in statements {
        reports.push(engine.decay_report(stmt)?);
    }

    // identity battery
    let identities = run_identity_battery(config, &inputs);

    // moment tail gate: extend-the-run advice is a flag, not a failure
    let mut flags = Vec::new();
    for (key, entry) in &inputs.table.entries {
        if entry.tail_fraction > tol.tail_fraction_max {
            flags.push(format!(
                "moment {key:?}: tail fraction {:.3} exceeds {:.3}; extend the run",
                entry.tail_fraction, tol.tail_fraction_max
            ));
        }
    }

    report::write_atomic(
        &dir.join("moments.csv"),
        report::moments_csv(&inputs.table).as_bytes(),
    )?;
    report::write_json(&dir.join("decay_reports.json"), &reports)?;
    report::write_json(&dir.join("identities.json"), &identities)?;

    // profile manifest from the engine cache
    let mut entries = Vec::new();
    for ((kind, order, t_bits), profiles) in engine.cache_snapshot() {
        for p in profiles.iter() {
            entries.push(ProfileManifestEntry {
                kind: format!("{kind:?}"),
                order,
                component: format!("{:?}", p.component),
                t: f64::from_bits(t_bits),
                provenance: p.provenance.clone(),
            });
        }
    }
    report::write_json(&dir.join("profiles_manifest.json"), &entries)?;

    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for r in &reports {
        let name: String = r
            .statement
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        report::write_atomic(
            &plots.join(format!("{name}.svg")),
            report::decay_plot_svg(r).as_bytes(),
        )?;
    }

    let mut manifest =
        Manifest::load(dir).unwrap_or_else(|| Manifest::new(&config.hash()));
    for r in &reports {
        manifest.verdicts.insert(r.statement.clone(), r.verdict);
    }
    for i in &identities {
        manifest.verdicts.insert(format!("identity {}", i.id), i.pass);
    }
    manifest.flags.extend(flags);
    manifest.stages.insert(
        "analyze".into(),
        StageRecord {
            done: true,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    );
    manifest.store(dir)?;
    Ok(reports)
}

pub fn run_identity_battery(config: &RunConfig, inputs: &AnalysisInputs) -> Vec<IdentityResult> {
    let ctx = IdentityContext {
        traj: &inputs.traj,
        flux: &inputs.flux,
        table: &inputs.table,
        itensors: &inputs.itensors,
        seed: config.seed,
        tol: IdentityTolerances {
            spectral: config.tol.identity_spectral,
            bilinear: config.tol.identity_bilinear,
            quadrature: config.tol.identity_quadrature,
            scaling: config.tol.identity_scaling,
            scaling_j: config.tol.identity_scaling_j,
        },
    };
    run_battery(&ctx)
}

/// Identity battery alone (analyze without statements still writes it).
pub fn cmd_identities(config: &RunConfig, dir: &Path) -> Result<Vec<IdentityResult>, PipelineError> {
    let _lock = DirLock::acquire(dir)?;
    let inputs = build_analysis_inputs(dir, &config.hash()[..16])?;
    let identities = run_identity_battery(config, &inputs);
    report::write_json(&dir.join("identities.json"), &identities)?;
    let mut manifest = Manifest::load(dir).unwrap_or_else(|| Manifest::new(&config.hash()));
    for i in &identities {
        manifest.verdicts.insert(format!("identity {}", i.id), i.pass);
    }
    manifest.store(dir)?;
    Ok(identities)
}

/// Re-emit stored reports in the requested format.
pub fn cmd_report(dir: &Path, format: &str) -> Result<String, PipelineError> {
    let text = std::fs::read_to_string(dir.join("decay_reports.json"))?;
    let reports: Vec<DecayReport> =
        serde_json::from_str(&text).map_err(|e| std::io::Error::other(e.to_string()))?;
    match format {
        "json" => Ok(text),
        "csv" => {
            let csv = report::decay_reports_csv(&reports);
            report::write_atomic(&dir.join("decay_reports.csv"), csv.as_bytes())?;
            Ok(csv)
        }
        "svg" => {
            let plots = dir.join("plots");
            std::fs::create_dir_all(&plots)?;
            let mut names = Vec::new();
            for r in &reports {
                let name: String = r
                    .statement
                    .chars()
                    .map(|c| if c.is_alphanumeric() { c } else { '_' })
                    .collect();
                let path = plots.join(format!("{name}.svg"));
                report::write_atomic(&path, report::decay_plot_svg(r).as_bytes())?;
                names.push(path.display().to_string());
            }
            Ok(names.join("\n"))
        }
        other => Err(PipelineError::Config(ConfigError::BadValue {
            key: "format".into(),
            msg: format!("unknown format '{other}'"),
        })),
    }
}
