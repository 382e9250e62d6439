//! Two-stage greedy topology optimisation of the unit-cell permittivity.
//!
//! Every iteration screens each design ring with the first-order Born estimate
//! (applied to all replicated copies at once), accepts the increments predicted
//! to lower the active target, re-solves exactly and, if the exact target rose,
//! rolls back the least promising half of the accepted cells until it no longer
//! does. Stage 1 minimises `f1`, stage 2 minimises `f2`.

mod grid;

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use grid::DesignGrid;

use crate::chain::{design_system, tiled_permittivities, ChainGeometry, CouplingMatrices, Replication};
use crate::em::{AxialSolution, AxialSystem, SolverOptions, SourceFields};
use crate::units::{coherent_coupling, dissipative_coupling};
use crate::{Error, Result};

/// Central-cell couplings entering the targets, in units of `γ0`.
///
/// `ab` is the intra-cell pair, `ba` the inter-cell pair (B of the central cell
/// to A of the next one); `aa`/`bb` couple equal sublattices of adjacent cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralCouplings {
    pub j_ab: f64,
    pub j_ba: f64,
    pub j_aa: f64,
    pub j_bb: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_ab: f64,
    pub gamma_ba: f64,
}

/// Source slots `[A, B, A', B']` and the probe pairs read by the targets.
const PAIRS: [(usize, usize); 6] = [(0, 1), (1, 2), (0, 2), (1, 3), (0, 0), (1, 1)];

impl CentralCouplings {
    pub fn from_matrices(c: &CouplingMatrices) -> Result<Self> {
        let (a, b) = c.central_pair;
        if b + 2 >= c.n_sites() {
            return Err(Error::Invalid(
                "targets need a unit cell to the right of the central pair".into(),
            ));
        }
        let j = &c.coherent;
        let g = &c.dissipative;
        Ok(CentralCouplings {
            j_ab: j[(a, b)],
            j_ba: j[(b, a + 2)],
            j_aa: j[(a, a + 2)],
            j_bb: j[(b, b + 2)],
            gamma_a: g[(a, a)],
            gamma_b: g[(b, b)],
            gamma_ab: g[(a, b)],
            gamma_ba: g[(b, a + 2)],
        })
    }

    /// From `G_zz` values ordered as [`PAIRS`].
    fn from_green(g: &[Complex64; 6], k0: f64) -> Self {
        CentralCouplings {
            j_ab: coherent_coupling(g[0].re, k0),
            j_ba: coherent_coupling(g[1].re, k0),
            j_aa: coherent_coupling(g[2].re, k0),
            j_bb: coherent_coupling(g[3].re, k0),
            gamma_a: dissipative_coupling(g[4].im, k0),
            gamma_b: dissipative_coupling(g[5].im, k0),
            gamma_ab: dissipative_coupling(g[0].im, k0),
            gamma_ba: dissipative_coupling(g[1].im, k0),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.j_ab.abs() / self.j_ba.abs()
    }
}

/// `f1 = |J_AB|/|J_BA| · |J_AA| · |J_BB|`.
pub fn target_f1(c: &CentralCouplings) -> Result<f64> {
    if c.j_ba == 0.0 {
        return Err(Error::SingularTarget("|J_BA| = 0 in f1".into()));
    }
    Ok(c.j_ab.abs() / c.j_ba.abs() * c.j_aa.abs() * c.j_bb.abs())
}

/// `f2 = γ_A · γ_B · |γ_AB| · |γ_BA|`.
pub fn target_f2(c: &CentralCouplings) -> f64 {
    c.gamma_a * c.gamma_b * c.gamma_ab.abs() * c.gamma_ba.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `f1`, the coherent (SSH hopping) target.
    Coherent,
    /// `f2`, the dissipative target.
    Dissipative,
    /// Experimental single-stage target `f1 · f2`.
    Combined,
}

impl Target {
    pub fn evaluate(&self, c: &CentralCouplings) -> Result<f64> {
        match self {
            Target::Coherent => target_f1(c),
            Target::Dissipative => Ok(target_f2(c)),
            Target::Combined => Ok(target_f1(c)? * target_f2(c)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Target::Coherent => "f1",
            Target::Dissipative => "f2",
            Target::Combined => "f1f2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Accept every improving cell of a sweep at once, then roll back on failure.
    Batch,
    /// Accept cells one at a time with an exact re-solve after each (slow).
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub k_switch: usize,
    pub k_end: usize,
    pub delta_eps: f64,
    /// Use the combined target for every iteration instead of two stages.
    pub unified: bool,
    /// Also propose `−δε` (permittivity removal).
    pub allow_removal: bool,
    pub mode: SweepMode,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            k_switch: 600,
            k_end: 950,
            delta_eps: 0.05,
            unified: false,
            allow_removal: true,
            mode: SweepMode::Batch,
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_eps > 0.0) {
            return Err(Error::Invalid("delta_eps must be positive".into()));
        }
        if self.k_end > 0 && !self.unified && !(self.k_switch > 0 && self.k_switch < self.k_end) {
            return Err(Error::Invalid(format!(
                "need 0 < k_switch < k_end, got k_switch = {}, k_end = {}",
                self.k_switch, self.k_end
            )));
        }
        Ok(())
    }

    /// Target active at iteration `k` (1-based).
    pub fn target_at(&self, k: usize) -> Target {
        if self.unified {
            Target::Combined
        } else if k <= self.k_switch {
            Target::Coherent
        } else {
            Target::Dissipative
        }
    }

    pub fn stage_at(&self, k: usize) -> u8 {
        if self.unified || k <= self.k_switch {
            1
        } else {
            2
        }
    }
}

/// Periodic spot check of the Born screening against exact re-solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BornAudit {
    /// Audit every `every` iterations; 0 disables.
    pub every: usize,
    /// Accepted cells checked per audit.
    pub cells: usize,
    /// Sign-agreement fraction below which a warning is logged.
    pub alarm: f64,
}

impl Default for BornAudit {
    fn default() -> Self {
        BornAudit { every: 0, cells: 4, alarm: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub k0: f64,
    pub geometry: ChainGeometry,
    pub initial: DesignGrid,
    pub target: TargetSpec,
    pub replication: Replication,
    pub solver: SolverOptions,
    pub audit: BornAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub stage: u8,
    pub target: Target,
    pub f_value: f64,
    pub couplings: CentralCouplings,
    pub accepted_cells: usize,
    pub rollbacks: usize,
    /// Fraction of audited cells whose exact effect matched the predicted sign.
    pub born_sign_agreement: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_COLUMNS: [&str; 17] = [
    "k",
    "f_value",
    "abs_j_ab",
    "abs_j_ba",
    "abs_j_aa",
    "abs_j_bb",
    "gamma_a",
    "gamma_b",
    "abs_gamma_ab",
    "abs_gamma_ba",
    "ratio_j_ab_j_ba",
    "accepted_cells",
    "stage",
    "target",
    "collective_rate",
    "rollbacks",
    "born_sign_agreement",
];

impl OptimizationTrace {
    /// CSV with one row per iteration; couplings in units of `γ0`.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut s = String::new();
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        let _ = writeln!(s, "{}", TRACE_COLUMNS.join(","));
        for r in &self.records {
            let c = &r.couplings;
            let audit = r.born_sign_agreement.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.f_value,
                c.j_ab.abs(),
                c.j_ba.abs(),
                c.j_aa.abs(),
                c.j_bb.abs(),
                c.gamma_a,
                c.gamma_b,
                c.gamma_ab.abs(),
                c.gamma_ba.abs(),
                c.ratio(),
                r.accepted_cells,
                r.stage,
                r.target.label(),
                (c.gamma_a * c.gamma_b).sqrt(),
                r.rollbacks,
                audit
            );
        }
        s
    }

    /// Records of one stage.
    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

/// Mutable optimisation state: the grid, its exact solution and the fields of
/// the four target sites.
pub struct Optimizer {
    system: Arc<AxialSystem>,
    geometry: ChainGeometry,
    cells: usize,
    grid: DesignGrid,
    spec: TargetSpec,
    audit: BornAudit,
    sources: [f64; 4],
    solution: AxialSolution,
    fields: SourceFields,
    green: [Complex64; 6],
}

struct Proposal {
    cell: usize,
    new_eps: f64,
    estimate: f64,
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig) -> Result<Self> {
        config.target.validate()?;
        let geometry = config.geometry.clone();
        if geometry.n_cells < 2 {
            return Err(Error::Invalid("optimisation needs at least two unit cells".into()));
        }
        let system = design_system(
            &config.initial,
            &geometry,
            config.replication,
            config.k0,
            config.solver,
        )?;
        let cells = config.replication.total_cells(&geometry);
        let (a, _) = geometry.central_pair();
        let z = geometry.site_positions();
        let sources = [z[a], z[a + 1], z[a + 2], z[a + 3]];
        let solution = system.assemble(&tiled_permittivities(&config.initial, cells))?;
        let (fields, green) = probe(&solution, &sources)?;
        Ok(Optimizer {
            system,
            geometry,
            cells,
            grid: config.initial.clone(),
            spec: config.target,
            audit: config.audit,
            sources,
            solution,
            fields,
            green,
        })
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn solution(&self) -> &AxialSolution {
        &self.solution
    }

    pub fn geometry(&self) -> &ChainGeometry {
        &self.geometry
    }

    pub fn couplings(&self) -> CentralCouplings {
        CentralCouplings::from_green(&self.green, self.system.k0())
    }

    fn rings_of(&self, cell: usize) -> Vec<usize> {
        let per = self.grid.cell_count();
        (0..self.cells).map(|c| c * per + cell).collect()
    }

    fn assemble(&self, grid: &DesignGrid) -> Result<AxialSolution> {
        self.system.assemble(&tiled_permittivities(grid, self.cells))
    }

    fn screen(&self, target: Target, f0: f64) -> Vec<Proposal> {
        let k0 = self.system.k0();
        let step = self.spec.delta_eps;
        let eps_max = self.grid.eps_max();
        let cells: Vec<usize> = self.grid.design_cells().collect();
        let mut proposals: Vec<Proposal> = cells
            .par_iter()
            .filter_map(|&cell| {
                let eps = self.grid.values()[cell];
                let rings = self.rings_of(cell);
                let mut best: Option<Proposal> = None;
                let steps: &[f64] = if self.spec.allow_removal { &[1.0, -1.0] } else { &[1.0] };
                for &sign in steps {
                    let new_eps = (eps + sign * step).clamp(1.0, eps_max);
                    if new_eps == eps {
                        continue;
                    }
                    let delta = self.solution.born_delta_zz(&self.fields, &rings, new_eps - eps, &PAIRS);
                    let mut g = self.green;
                    for (gi, di) in g.iter_mut().zip(&delta) {
                        *gi += di;
                    }
                    let Ok(f) = target.evaluate(&CentralCouplings::from_green(&g, k0)) else {
                        continue;
                    };
                    let estimate = f - f0;
                    if estimate < 0.0 && best.as_ref().is_none_or(|b| estimate < b.estimate) {
                        best = Some(Proposal { cell, new_eps, estimate });
                    }
                }
                best
            })
            .collect();
        proposals.sort_by(|a, b| a.estimate.total_cmp(&b.estimate).then(a.cell.cmp(&b.cell)));
        proposals
    }

    fn with_changes(&self, proposals: &[Proposal]) -> Result<DesignGrid> {
        let mut g = self.grid.clone();
        for p in proposals {
            g.set(p.cell, p.new_eps)?;
        }
        Ok(g)
    }

    fn exact(&self, solution: &AxialSolution, target: Target) -> Result<(SourceFields, [Complex64; 6], f64)> {
        let (fields, green) = probe(solution, &self.sources)?;
        let f = target.evaluate(&CentralCouplings::from_green(&green, self.system.k0()))?;
        Ok((fields, green, f))
    }

    fn audit_signs(&self, proposals: &[Proposal], target: Target, f0: f64) -> Result<f64> {
        let n = self.audit.cells.min(proposals.len()).max(1);
        let mut agree = 0;
        for i in 0..n {
            let p = &proposals[i * proposals.len() / n];
            let sol = self.assemble(&self.with_changes(std::slice::from_ref(p))?)?;
            let (_, _, f) = self.exact(&sol, target)?;
            if (f - f0 < 0.0) == (p.estimate < 0.0) {
                agree += 1;
            }
        }
        Ok(agree as f64 / n as f64)
    }

    /// One optimisation iteration `k` against the target active at `k`.
    pub fn optimize_step(&mut self, k: usize) -> Result<TraceRecord> {
        let target = self.spec.target_at(k);
        let f0 = target.evaluate(&self.couplings())?;
        let proposals = self.screen(target, f0);

        let audit = if self.audit.every > 0 && k.is_multiple_of(self.audit.every) && !proposals.is_empty() {
            let a = self.audit_signs(&proposals, target, f0)?;
            if a < self.audit.alarm {
                log::warn!("iteration {k}: Born sign agreement {a:.2} below {:.2}", self.audit.alarm);
            }
            Some(a)
        } else {
            None
        };

        let (accepted, rollbacks) = match self.spec.mode {
            SweepMode::Batch => self.accept_batch(&proposals, target, f0)?,
            SweepMode::Sequential => self.accept_sequential(&proposals, target)?,
        };
        self.grid.set_iteration(k);
        let couplings = self.couplings();
        Ok(TraceRecord {
            k,
            stage: self.spec.stage_at(k),
            target,
            f_value: target.evaluate(&couplings)?,
            couplings,
            accepted_cells: accepted,
            rollbacks,
            born_sign_agreement: audit,
        })
    }

    fn accept_batch(&mut self, proposals: &[Proposal], target: Target, f0: f64) -> Result<(usize, usize)> {
        let mut n = proposals.len();
        let mut rollbacks = 0;
        while n > 0 {
            let grid = self.with_changes(&proposals[..n])?;
            let solution = self.assemble(&grid)?;
            let (fields, green, f) = self.exact(&solution, target)?;
            if f <= f0 {
                self.grid = grid;
                self.solution = solution;
                self.fields = fields;
                self.green = green;
                return Ok((n, rollbacks));
            }
            rollbacks += 1;
            n /= 2;
        }
        Ok((0, rollbacks))
    }

    fn accept_sequential(&mut self, proposals: &[Proposal], target: Target) -> Result<(usize, usize)> {
        let mut accepted = 0;
        let mut rejected = 0;
        let order: Vec<(usize, f64)> = {
            let mut v: Vec<_> = proposals.iter().map(|p| (p.cell, p.new_eps - self.grid.values()[p.cell])).collect();
            v.sort_by_key(|p| p.0);
            v
        };
        for (cell, delta) in order {
            let f0 = target.evaluate(&self.couplings())?;
            let eps = (self.grid.values()[cell] + delta).clamp(1.0, self.grid.eps_max());
            let p = Proposal { cell, new_eps: eps, estimate: 0.0 };
            let grid = self.with_changes(std::slice::from_ref(&p))?;
            let solution = self.assemble(&grid)?;
            let (fields, green, f) = self.exact(&solution, target)?;
            if f < f0 {
                self.grid = grid;
                self.solution = solution;
                self.fields = fields;
                self.green = green;
                accepted += 1;
            } else {
                rejected += 1;
            }
        }
        Ok((accepted, rejected))
    }
}

fn probe(solution: &AxialSolution, sources: &[f64; 4]) -> Result<(SourceFields, [Complex64; 6])> {
    let fields = solution.source_fields(sources)?;
    let mut g = [Complex64::new(0.0, 0.0); 6];
    for (gi, &(s, t)) in g.iter_mut().zip(&PAIRS) {
        *gi = solution.green_zz(&fields, s, t);
    }
    Ok((fields, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub grid: DesignGrid,
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub grid: DesignGrid,
    pub trace: OptimizationTrace,
    /// Grids at `k_switch` and `k_end` (a single vacuum grid when `k_end = 0`).
    pub snapshots: Vec<Snapshot>,
}

/// Failure of a run; carries the last valid grid and the trace so far.
#[derive(Debug)]
pub struct OptimizationFailure {
    pub error: Error,
    pub checkpoint: DesignGrid,
    pub trace: OptimizationTrace,
}

impl std::fmt::Display for OptimizationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "optimisation failed after iteration {}: {}", self.checkpoint.iteration(), self.error)
    }
}

impl std::error::Error for OptimizationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs both stages. `on_record` sees every trace record as it is produced.
pub fn run_optimization_with<F>(
    config: &OptimizerConfig,
    mut on_record: F,
) -> std::result::Result<OptimizationOutcome, Box<OptimizationFailure>>
where
    F: FnMut(&TraceRecord, &DesignGrid),
{
    let spec = config.target;
    let fail = |error: Error, checkpoint: &DesignGrid, trace: &OptimizationTrace| {
        Box::new(OptimizationFailure { error, checkpoint: checkpoint.clone(), trace: trace.clone() })
    };
    let mut trace = OptimizationTrace::default();
    if let Err(e) = spec.validate() {
        return Err(fail(e, &config.initial, &trace));
    }
    if spec.k_end == 0 {
        return Ok(OptimizationOutcome {
            grid: config.initial.clone(),
            trace,
            snapshots: vec![Snapshot { k: 0, grid: config.initial.clone() }],
        });
    }
    let mut opt = Optimizer::new(config).map_err(|e| fail(e, &config.initial, &trace))?;
    let mut snapshots = Vec::new();
    for k in 1..=spec.k_end {
        match opt.optimize_step(k) {
            Ok(record) => {
                log::info!(
                    "k = {k:4} {} = {:.6e} accepted {} rollbacks {}",
                    record.target.label(),
                    record.f_value,
                    record.accepted_cells,
                    record.rollbacks
                );
                on_record(&record, opt.grid());
                trace.records.push(record);
            }
            Err(e) => return Err(fail(e, opt.grid(), &trace)),
        }
        if (!spec.unified && k == spec.k_switch) || k == spec.k_end {
            snapshots.push(Snapshot { k, grid: opt.grid().clone() });
        }
    }
    Ok(OptimizationOutcome { grid: opt.grid().clone(), trace, snapshots })
}

pub fn run_optimization(
    config: &OptimizerConfig,
) -> std::result::Result<OptimizationOutcome, Box<OptimizationFailure>> {
    run_optimization_with(config, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc(j: [f64; 4], g: [f64; 4]) -> CentralCouplings {
        CentralCouplings {
            j_ab: j[0],
            j_ba: j[1],
            j_aa: j[2],
            j_bb: j[3],
            gamma_a: g[0],
            gamma_b: g[1],
            gamma_ab: g[2],
            gamma_ba: g[3],
        }
    }

    #[test]
    fn f1_vanishes_without_same_sublattice_coupling() {
        assert_eq!(target_f1(&cc([0.3, -0.3, 0.0, 0.0], [1.0; 4])).unwrap(), 0.0);
    }

    #[test]
    fn f1_singular_without_inter_cell_hopping() {
        let err = target_f1(&cc([0.3, 0.0, 0.1, 0.1], [1.0; 4])).unwrap_err();
        assert!(matches!(err, Error::SingularTarget(_)));
    }

    #[test]
    fn f2_arithmetic() {
        assert_eq!(target_f2(&cc([0.0; 4], [1.0, 1.0, 0.5, -0.5])), 0.25);
    }

    #[test]
    fn homogeneity_degrees() {
        let base = cc([0.2, -0.5, 0.07, -0.03], [1.2, 0.9, 0.3, -0.4]);
        let c = 1.7;
        let scaled = cc(
            [0.2 * c, -0.5 * c, 0.07 * c, -0.03 * c],
            [1.2 * c, 0.9 * c, 0.3 * c, -0.4 * c],
        );
        let f1 = target_f1(&base).unwrap();
        assert!((target_f1(&scaled).unwrap() - c * c * f1).abs() < 1e-14);
        let f2 = target_f2(&base);
        assert!((target_f2(&scaled) - c.powi(4) * f2).abs() < 1e-14);
    }

    #[test]
    fn stage_schedule() {
        let spec = TargetSpec { k_switch: 3, k_end: 5, ..Default::default() };
        assert_eq!(spec.target_at(3), Target::Coherent);
        assert_eq!(spec.target_at(4), Target::Dissipative);
        assert_eq!(spec.stage_at(4), 2);
        let unified = TargetSpec { unified: true, ..spec };
        assert_eq!(unified.target_at(1), Target::Combined);
    }

    #[test]
    fn spec_validation() {
        assert!(TargetSpec::default().validate().is_ok());
        assert!(TargetSpec { k_switch: 10, k_end: 10, ..Default::default() }.validate().is_err());
        assert!(TargetSpec { k_end: 0, ..Default::default() }.validate().is_ok());
        assert!(TargetSpec { delta_eps: 0.0, ..Default::default() }.validate().is_err());
    }
}
