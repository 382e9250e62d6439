//! Batch front-end for the topocavity pipeline.
//!
//! Stages talk to each other only through files in the output directory:
//! `optimize` writes grid snapshots and the optimisation trace, and
//! `spectrum`, `dynamics` and `disorder` read a snapshot back.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use topocavity::chain::{
    build_couplings, build_geometry, design_system, find_dissipation_zero, tiled_permittivities, ChainGeometry,
    CouplingFile, CouplingMatrices, Replication,
};
use topocavity::em::{assemble_scattering, ResolutionProfile, SolverOptions, Vec3};
use topocavity::optimizer::{run_optimization_with, BornAudit, DesignGrid, OptimizerConfig, TargetSpec};
use topocavity::quantum::{diagonalize, dissipator_in_eigenbasis, evolve_single_excitation, InitialState, Propagator};
use topocavity::topo::{disorder_fidelity, edge_metrics, DisorderSpec};
use topocavity::units::{wavenumber, LAMBDA0_NM};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: i32, error: anyhow::Error) -> Self {
        Failure { code, error }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<topocavity::Error> for Failure {
    fn from(error: topocavity::Error) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(error: std::io::Error) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_cells: usize,
    /// Qubit spacing; omitted means the first free-space dissipation zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing_nm: Option<f64>,
    /// Dipole moment in e·nm.
    pub dipole_e_nm: f64,
    pub wavelength_nm: f64,
    pub eps_max: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { n_cells: 12, spacing_nm: None, dipole_e_nm: 1.0, wavelength_nm: LAMBDA0_NM, eps_max: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConfig {
    /// One-based eigenstate index.
    Eigenstate(usize),
    /// One-based site index.
    Site(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    Exponential,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Defaults to eigenstate `N`, the lower midgap state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    /// End time in units of `1/γ`.
    pub t_max: f64,
    pub steps: usize,
    pub propagator: PropagatorKind,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { initial: None, t_max: 20.0, steps: 400, propagator: PropagatorKind::Exponential }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisorderConfig {
    pub sigmas: Vec<f64>,
    /// Range cutoffs in unit cells; empty means every cutoff `1..=N`.
    pub n_cuts: Vec<usize>,
    pub realizations: usize,
    /// One-based eigenstates; empty means the edge state `N` and bulk state `N + 3`.
    pub states: Vec<usize>,
}

impl Default for DisorderConfig {
    fn default() -> Self {
        DisorderConfig {
            sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
            n_cuts: Vec::new(),
            realizations: 20_000,
            states: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub profile: ResolutionProfile,
    pub geometry: GeometryConfig,
    pub target: TargetSpec,
    pub replication: Replication,
    pub audit: BornAudit,
    pub solver: SolverOptions,
    pub dynamics: DynamicsConfig,
    pub disorder: DisorderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            seed: 0,
            profile: ResolutionProfile::Default,
            geometry: GeometryConfig::default(),
            target: TargetSpec::default(),
            replication: Replication::default(),
            audit: BornAudit::default(),
            solver: SolverOptions::default(),
            dynamics: DynamicsConfig::default(),
            disorder: DisorderConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a config file; a missing file fails with exit code 2.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            let code = if e.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
            Failure::new(code, anyhow!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(Failure::from)
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> anyhow::Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn k0(&self) -> f64 {
        wavenumber(self.geometry.wavelength_nm)
    }

    pub fn chain(&self) -> anyhow::Result<ChainGeometry> {
        let g = &self.geometry;
        let d = match g.spacing_nm {
            Some(d) => d,
            None => find_dissipation_zero(self.k0())?.distance,
        };
        Ok(build_geometry(g.n_cells, d, g.dipole_e_nm)?)
    }

    pub fn vacuum_grid(&self, geometry: &ChainGeometry) -> anyhow::Result<DesignGrid> {
        Ok(DesignGrid::for_pitch(
            geometry.radius,
            geometry.cell_height,
            self.profile.pitch_nm(),
            self.geometry.eps_max,
        )?)
    }
}

/// Loaded config plus everything derived from it.
pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub geometry: ChainGeometry,
}

impl Context {
    pub fn new(config: RunConfig) -> CliResult<Self> {
        let hash = config.hash()?;
        let geometry = config.chain()?;
        Ok(Context { config, hash, geometry })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    fn header(&self) -> Vec<String> {
        vec![format!("topocavity {VERSION}"), format!("config_sha256 {}", self.hash)]
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(self.out_dir())
            .with_context(|| format!("cannot create output directory {}", self.out_dir().display()))?;
        let path = self.out_dir().join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// JSON documents carry the header as a `meta` object.
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let doc = serde_json::json!({
            "meta": { "version": VERSION, "config_sha256": self.hash },
            "data": value,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?;
        self.write(name, &text)
    }

    /// Loads a snapshot and checks it against the configured chain (exit code 3).
    pub fn load_snapshot(&self, path: &Path) -> CliResult<DesignGrid> {
        let text = fs::read_to_string(path).map_err(|e| {
            let code = if e.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
            Failure::new(code, anyhow!("cannot read snapshot {}: {e}", path.display()))
        })?;
        let grid = DesignGrid::from_text(&text).with_context(|| format!("invalid snapshot {}", path.display()))?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if !close(grid.radius(), self.geometry.radius) || !close(grid.height(), self.geometry.cell_height) {
            return Err(Failure::new(
                3,
                anyhow!(
                    "snapshot {} spans R = {} nm, h = {} nm but the configured chain needs R = {} nm, h = {} nm",
                    path.display(),
                    grid.radius(),
                    grid.height(),
                    self.geometry.radius,
                    self.geometry.cell_height
                ),
            ));
        }
        Ok(grid)
    }

    pub fn couplings(&self, grid: &DesignGrid) -> CliResult<CouplingMatrices> {
        let c = &self.config;
        let system = design_system(grid, &self.geometry, c.replication, c.k0(), c.solver)?;
        let cells = c.replication.total_cells(&self.geometry);
        let solution = system.assemble(&tiled_permittivities(grid, cells))?;
        Ok(build_couplings(&self.geometry, &solution)?)
    }

    fn snapshot_name(k: usize) -> String {
        format!("snapshot_k{k}.grid")
    }

    fn snapshot_text(&self, grid: &DesignGrid) -> String {
        let mut comments = self.header();
        comments.push(format!("n_cells {}", self.geometry.n_cells));
        comments.push(format!("spacing_nm {}", self.geometry.spacing));
        grid.to_text(&comments)
    }
}

/// Files written by [`cmd_optimize`].
#[derive(Debug, Clone)]
pub struct OptimizeArtifacts {
    pub trace: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub final_grid: PathBuf,
}

pub fn cmd_optimize(ctx: &Context) -> CliResult<OptimizeArtifacts> {
    let c = &ctx.config;
    let initial = c.vacuum_grid(&ctx.geometry)?;
    let config = OptimizerConfig {
        k0: c.k0(),
        geometry: ctx.geometry.clone(),
        initial,
        target: c.target,
        replication: c.replication,
        solver: c.solver,
        audit: c.audit,
    };
    let outcome = run_optimization_with(&config, |_, _| {});
    match outcome {
        Ok(out) => {
            let trace = ctx.write("trace.csv", &out.trace.to_csv(&ctx.header()))?;
            let mut snapshots = Vec::new();
            for s in &out.snapshots {
                snapshots.push(ctx.write(&Context::snapshot_name(s.k), &ctx.snapshot_text(&s.grid))?);
            }
            let final_grid = ctx.write("snapshot_final.grid", &ctx.snapshot_text(&out.grid))?;
            Ok(OptimizeArtifacts { trace, snapshots, final_grid })
        }
        Err(failure) => {
            ctx.write("trace.csv", &failure.trace.to_csv(&ctx.header()))?;
            let checkpoint = ctx.write("checkpoint.grid", &ctx.snapshot_text(&failure.checkpoint))?;
            Err(Failure::new(
                1,
                anyhow!("{failure}; last valid grid saved to {}", checkpoint.display()),
            ))
        }
    }
}

#[derive(Serialize)]
struct SpectrumDoc<'a> {
    spectrum: &'a topocavity::quantum::Spectrum,
    bandgap: Option<f64>,
    edge_bulk_mixing: f64,
    edge_metrics: Vec<topocavity::topo::StateMetrics>,
}

/// Spectrum, eigenbasis dissipator and the couplings of a snapshot.
pub fn cmd_spectrum(ctx: &Context, snapshot: &Path) -> CliResult<Vec<PathBuf>> {
    let grid = ctx.load_snapshot(snapshot)?;
    let couplings = ctx.couplings(&grid)?;
    let spectrum = diagonalize(&couplings);
    let dissipator = dissipator_in_eigenbasis(&couplings, &spectrum)?;
    let metrics = edge_metrics(&spectrum);

    let mut csv = String::new();
    for line in ctx.header() {
        csv.push_str(&format!("# {line}\n"));
    }
    csv.push_str("alpha,omega,population_first_site,population_last_site,polarization,ipr\n");
    for (a, (w, m)) in spectrum.eigenvalues.iter().zip(&metrics).enumerate() {
        csv.push_str(&format!("{},{w},{},{},{},{}\n", a + 1, m.first_site, m.last_site, m.polarization, m.ipr));
    }

    let mut diss = String::new();
    for line in ctx.header() {
        diss.push_str(&format!("# {line}\n"));
    }
    diss.push_str(&format!("# edge_bulk_mixing {}\n", dissipator.edge_bulk_mixing));
    let m = &dissipator.matrix;
    for a in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|b| m[(a, b)].to_string()).collect();
        diss.push_str(&row.join(","));
        diss.push('\n');
    }

    let doc = SpectrumDoc {
        spectrum: &spectrum,
        bandgap: spectrum.bandgap(),
        edge_bulk_mixing: dissipator.edge_bulk_mixing,
        edge_metrics: metrics,
    };
    Ok(vec![
        ctx.write("spectrum.csv", &csv)?,
        ctx.write("dissipator.csv", &diss)?,
        ctx.write_json("spectrum.json", &doc)?,
        ctx.write_json("couplings.json", &CouplingFile::new(&ctx.geometry, &couplings))?,
    ])
}

pub fn cmd_dynamics(ctx: &Context, snapshot: &Path) -> CliResult<PathBuf> {
    let grid = ctx.load_snapshot(snapshot)?;
    let couplings = ctx.couplings(&grid)?;
    let d = &ctx.config.dynamics;
    let n = ctx.geometry.n_cells;
    let initial = match d.initial.unwrap_or(InitialConfig::Eigenstate(n)) {
        InitialConfig::Eigenstate(a) if a >= 1 => InitialState::Eigenstate(a - 1),
        InitialConfig::Site(m) if m >= 1 => InitialState::Site(m - 1),
        other => return Err(anyhow!("initial state indices are one-based, got {other:?}").into()),
    };
    if d.steps == 0 || d.t_max.is_nan() || d.t_max <= 0.0 {
        return Err(anyhow!("dynamics needs steps > 0 and t_max > 0").into());
    }
    let times: Vec<f64> = (0..=d.steps).map(|i| d.t_max * i as f64 / d.steps as f64).collect();
    let propagator = match d.propagator {
        PropagatorKind::Exponential => Propagator::Exponential,
        PropagatorKind::Adaptive => Propagator::adaptive(),
    };
    let trace = evolve_single_excitation(&couplings, &initial, &times, propagator)?;
    ctx.write("dynamics.csv", &trace.to_csv(&ctx.header()))
}

#[derive(Serialize)]
struct InsetPoint {
    n_cut: usize,
    state: usize,
    population_first_site: f64,
    population_last_site: f64,
}

pub fn cmd_disorder(ctx: &Context, snapshot: &Path) -> CliResult<Vec<PathBuf>> {
    let grid = ctx.load_snapshot(snapshot)?;
    let couplings = ctx.couplings(&grid)?;
    let d = &ctx.config.disorder;
    let n = ctx.geometry.n_cells;
    let states: Vec<usize> = if d.states.is_empty() { vec![n, n + 3] } else { d.states.clone() };
    if states.iter().any(|&a| a == 0 || a > 2 * n) {
        return Err(anyhow!("disorder states must lie in 1..={}", 2 * n).into());
    }
    let spec = DisorderSpec {
        sigmas: d.sigmas.clone(),
        n_cuts: if d.n_cuts.is_empty() { (1..=n).collect() } else { d.n_cuts.clone() },
        realizations: d.realizations,
        seed: ctx.config.seed,
        states: states.iter().map(|a| a - 1).collect(),
    };
    let report = disorder_fidelity(&couplings.coherent, n, &spec)?;
    let mut inset = Vec::new();
    for &n_cut in &spec.n_cuts {
        for &state in &spec.states {
            if let Some(r) = report.rows.iter().find(|r| r.n_cut == n_cut && r.state == state) {
                inset.push(InsetPoint {
                    n_cut,
                    state: state + 1,
                    population_first_site: r.first_site,
                    population_last_site: r.last_site,
                });
            }
        }
    }
    let summary = serde_json::json!({ "seed": report.seed, "inset": inset, "rows": report.rows });
    Ok(vec![ctx.write("disorder.csv", &report.to_csv(&ctx.header()))?, ctx.write_json("disorder_summary.json", &summary)?])
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenProbe {
    pub r1: Vec3,
    pub r2: Vec3,
    /// Row-major `[re, im]` entries; only `zz` is filled for on-axis probes.
    pub tensor: Vec<[f64; 2]>,
    pub method: &'static str,
}

/// Total Green's function between two points in the structure of `snapshot`
/// (vacuum when `None`).
pub fn cmd_probe_green(ctx: &Context, snapshot: Option<&Path>, r1: Vec3, r2: Vec3) -> CliResult<GreenProbe> {
    let c = &ctx.config;
    let grid = match snapshot {
        Some(p) => ctx.load_snapshot(p)?,
        None => c.vacuum_grid(&ctx.geometry)?,
    };
    let on_axis = r1[0] == 0.0 && r1[1] == 0.0 && r2[0] == 0.0 && r2[1] == 0.0;
    if on_axis {
        let system = design_system(&grid, &ctx.geometry, c.replication, c.k0(), c.solver)?;
        let cells = c.replication.total_cells(&ctx.geometry);
        let solution = system.assemble(&tiled_permittivities(&grid, cells))?;
        let g = solution.green_zz_matrix(&[r1[2], r2[2]])?;
        let mut tensor = vec![[0.0; 2]; 9];
        tensor[8] = [g[0][1].re, g[0][1].im];
        return Ok(GreenProbe { r1, r2, tensor, method: "axisymmetric" });
    }
    let cloud = topocavity::chain::replicate_design(&grid, &ctx.geometry, c.replication)?;
    let voxels = cloud.to_voxels()?;
    let solution = assemble_scattering(&voxels, c.k0(), &c.solver)?;
    let g = solution.total_green(&r1, &r2)?;
    let tensor = g.0.iter().flat_map(|row| row.iter().map(|z| [z.re, z.im])).collect();
    Ok(GreenProbe { r1, r2, tensor, method: "dda" })
}

/// The config hash and geometry summary printed by `topocavity info`.
pub fn describe(ctx: &Context) -> String {
    format!(
        "topocavity {VERSION}\nconfig_sha256 {}\nsites {} spacing {} nm cell {} nm radius {} nm",
        ctx.hash,
        ctx.geometry.n_sites(),
        ctx.geometry.spacing,
        ctx.geometry.cell_height,
        ctx.geometry.radius
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut c = RunConfig::default();
        c.geometry.spacing_nm = Some(360.0);
        c.dynamics.initial = Some(InitialConfig::Site(3));
        c.profile = ResolutionProfile::Custom(30.0);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml().unwrap()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("colour = 3").is_err());
        assert!(RunConfig::from_toml("[target]\nk_swich = 3").is_err());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = RunConfig::from_toml("profile = \"coarse\"\n[geometry]\nn_cells = 4\n").unwrap();
        assert_eq!(c.geometry.n_cells, 4);
        assert_eq!(c.target, TargetSpec::default());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.hash().unwrap(), RunConfig::default().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn missing_config_exit_code() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }
}
