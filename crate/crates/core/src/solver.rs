//! Iterative plane cutting with growing local incentive regions.
//!
//! The inner loop solves the LP on the current pool, separates incentive
//! rows inside the local region of level `L` together with all Border
//! prefixes, and adds what it finds until nothing is violated. The outer loop
//! then scans every incentive pair, remembers the violated ones, grows `L`
//! and repeats until the full scan is clean.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::lp::{HighsBackend, LpBackend, LpError, LpSolution};
use crate::lpmodel::{
    base_program, border_row, icc_row, AuctionSetting, ConstraintRef, CutKey, LinearProgram,
    ModelError, VariableLayout,
};
use crate::separation::{
    find_border_violations, find_icc_violations, RegionSpec, Violation, DEFAULT_VIOLATION_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub violation_tol: f64,
    pub lp_tol: f64,
    /// Pool rows with more slack than this may be dropped.
    pub inactive_slack: f64,
    pub max_outer: usize,
    /// Limit on LP solves inside one inner loop.
    pub max_inner: usize,
    /// Total allocation at or below which a type counts as excluded.
    pub exclusion_tau: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            violation_tol: DEFAULT_VIOLATION_TOL,
            lp_tol: 1e-9,
            inactive_slack: 1e-6,
            max_outer: 50,
            max_inner: 1000,
            exclusion_tau: 1e-6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("exclusion threshold {tau} must exceed the LP tolerance {lp_tol}")]
    TauBelowLpTol { tau: f64, lp_tol: f64 },
    #[error("iteration limits must be >= 1")]
    ZeroIterations,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("violation tolerance", self.violation_tol),
            ("LP tolerance", self.lp_tol),
            ("inactive-slack threshold", self.inactive_slack),
            ("exclusion threshold", self.exclusion_tau),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if self.exclusion_tau <= self.lp_tol {
            return Err(ConfigError::TauBelowLpTol {
                tau: self.exclusion_tau,
                lp_tol: self.lp_tol,
            });
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(ConfigError::ZeroIterations);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub lp_solves: usize,
    pub cuts_added: usize,
    pub cuts_removed: usize,
    pub final_pool_size: usize,
    pub final_region_level: usize,
    /// Incumbent bound after each accepted inner update.
    pub incumbent_history: Vec<f64>,
    pub wall_time: Duration,
}

/// Interim mechanism on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSolution {
    pub setting: AuctionSetting,
    /// `q[v * J + j] = Q_j(v)`.
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    /// `M(v) = sum_j v_j Q_j(v) - U(v)`.
    pub m: Vec<f64>,
    /// Per-buyer expected profit.
    pub objective: f64,
    /// `N * objective`.
    pub total_revenue: f64,
    /// Both full scans came back clean at the violation tolerance.
    pub certified: bool,
    pub diagnostics: Diagnostics,
}

impl MechanismSolution {
    fn from_values(setting: &AuctionSetting, values: &[f64], objective: f64) -> Self {
        let layout = VariableLayout::for_setting(setting);
        let (q, u) = layout.split(values);
        let grid = setting.grid();
        let jn = setting.qualities();
        let m = (0..grid.len())
            .map(|v| {
                let paid: f64 = (0..jn).map(|j| grid.coord(v, j) * q[v * jn + j]).sum();
                paid - u[v]
            })
            .collect();
        Self {
            setting: setting.clone(),
            q: q.to_vec(),
            u: u.to_vec(),
            m,
            objective,
            total_revenue: setting.buyers() as f64 * objective,
            certified: false,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn qualities(&self) -> usize {
        self.setting.qualities()
    }

    #[inline]
    pub fn q_at(&self, point: usize, grade: usize) -> f64 {
        self.q[point * self.qualities() + grade]
    }

    pub fn total_allocation(&self, point: usize) -> f64 {
        (0..self.qualities()).map(|j| self.q_at(point, j)).sum()
    }

    /// Column vector in [`VariableLayout`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut values = self.q.clone();
        values.extend_from_slice(&self.u);
        values
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("grid must have at least two points")]
    GridTooSmall,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("LP backend: {0}")]
    Lp(#[from] LpError),
    #[error("iteration limit reached ({reason}); incumbent is not certified")]
    IterationLimit {
        reason: String,
        incumbent: Box<MechanismSolution>,
    },
}

/// One row of the cut pool.
#[derive(Debug, Clone)]
pub struct PoolCut {
    pub cut: ConstraintRef,
    /// Inner iteration whose LP first contained this row.
    pub added_at: usize,
}

/// Non-base rows of the current LP with the bookkeeping of the algorithm.
#[derive(Debug, Default)]
pub struct CutPool {
    cuts: Vec<PoolCut>,
    keys: HashSet<CutKey>,
}

impl CutPool {
    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn cuts(&self) -> &[PoolCut] {
        &self.cuts
    }

    pub fn contains(&self, cut: &ConstraintRef) -> bool {
        self.keys.contains(&cut.key())
    }

    /// Appends `cut` unless an identical row is present. Base rows are never
    /// pooled.
    pub fn insert(&mut self, cut: ConstraintRef, iteration: usize) -> bool {
        if cut.is_base() || !self.keys.insert(cut.key()) {
            return false;
        }
        self.cuts.push(PoolCut {
            cut,
            added_at: iteration,
        });
        true
    }

    /// Drops the rows at the given (ascending) positions.
    pub fn remove_positions(&mut self, positions: &[usize]) {
        let mut drop = positions.iter().copied().peekable();
        let mut index = 0;
        let keys = &mut self.keys;
        self.cuts.retain(|c| {
            let hit = drop.peek() == Some(&index);
            if hit {
                drop.next();
                keys.remove(&c.cut.key());
            }
            index += 1;
            !hit
        });
    }
}

/// Positions of pool rows whose slack exceeds `threshold`, excluding rows that
/// entered the LP in `iteration`. `slacks` is aligned with the pool.
pub fn select_inactive(pool: &CutPool, slacks: &[f64], threshold: f64, iteration: usize) -> Vec<usize> {
    pool.cuts()
        .iter()
        .zip(slacks)
        .enumerate()
        .filter(|(_, (c, &slack))| {
            !c.cut.is_base() && c.added_at != iteration && slack > threshold
        })
        .map(|(i, _)| i)
        .collect()
}

/// `mask[v]` is true when type `v` receives total allocation at most `tau`.
pub fn exclusion_region(solution: &MechanismSolution, tau: f64) -> Vec<bool> {
    (0..solution.setting.grid().len())
        .map(|v| solution.total_allocation(v) <= tau)
        .collect()
}

struct Assembler<'a> {
    setting: &'a AuctionSetting,
    layout: VariableLayout,
    base: LinearProgram,
}

impl<'a> Assembler<'a> {
    fn new(setting: &'a AuctionSetting) -> Self {
        Self {
            setting,
            layout: VariableLayout::for_setting(setting),
            base: base_program(setting),
        }
    }

    fn row_for(&self, cut: &ConstraintRef) -> Result<crate::lpmodel::Row, ModelError> {
        match cut {
            ConstraintRef::Icc { from, to } => icc_row(&self.layout, *from, *to, self.setting.grid()),
            ConstraintRef::Border { level, members } => {
                let mut row = border_row(&self.layout, members, *level, self.setting)?;
                // keep the caller's Arc so identical member sets share storage
                row.tag = cut.clone();
                Ok(row)
            }
            ConstraintRef::LowerCorner | ConstraintRef::NonNeg { .. } => {
                unreachable!("base rows are never pooled")
            }
        }
    }

    fn program(&self, pool: &CutPool) -> Result<LinearProgram, ModelError> {
        let mut lp = self.base.clone();
        for c in pool.cuts() {
            lp.add_row(self.row_for(&c.cut)?)?;
        }
        Ok(lp)
    }

    fn base_rows(&self) -> usize {
        self.base.rows().len()
    }
}

/// Solves with the default HiGHS backend.
pub fn solve_optimal_auction(
    setting: &AuctionSetting,
    config: &SolverConfig,
) -> Result<MechanismSolution, SolveError> {
    let mut backend = HighsBackend::new(config.lp_tol);
    solve_with_backend(setting, config, &mut backend)
}

/// Runs the plane-cutting algorithm on any [`LpBackend`].
pub fn solve_with_backend(
    setting: &AuctionSetting,
    config: &SolverConfig,
    backend: &mut dyn LpBackend,
) -> Result<MechanismSolution, SolveError> {
    config.validate()?;
    if setting.grid().len() < 2 {
        return Err(SolveError::GridTooSmall);
    }
    let started = Instant::now();
    let assembler = Assembler::new(setting);
    let layout = assembler.layout;
    let grid = setting.grid();
    let tol = config.violation_tol;

    let mut diag = Diagnostics::default();
    let mut pool = CutPool::default();
    let mut remembered: Vec<ConstraintRef> = Vec::new();
    let mut incumbent = f64::INFINITY;
    let mut level = 1;
    let mut iteration = 0;
    let mut last: Option<LpSolution>;

    loop {
        diag.outer_iterations += 1;
        let mut inner = 0;
        loop {
            iteration += 1;
            inner += 1;
            diag.inner_iterations += 1;
            let lp = assembler.program(&pool)?;
            let solution = backend.solve(&lp)?;
            diag.lp_solves += 1;

            let mut found = find_icc_violations(grid, &layout, &solution.values, RegionSpec::local(level), tol);
            found.extend(find_border_violations(setting, &layout, &solution.values, tol));
            if found.is_empty() {
                last = Some(solution);
                break;
            }
            if inner >= config.max_inner {
                return Err(limit(setting, &solution, diag, (pool.len(), level), started, format!(
                    "{} inner iterations at region level {level}",
                    config.max_inner
                )));
            }

            let slacks = &solution.slacks[assembler.base_rows()..];
            let next = iteration + 1;
            // a decrease inside LP noise is no decrease; treating it as one
            // lets the pool cycle on degenerate optima
            if incumbent.is_infinite() || solution.objective < incumbent - config.lp_tol * incumbent.abs().max(1.0) {
                let inactive = select_inactive(&pool, slacks, config.inactive_slack, iteration);
                diag.cuts_removed += inactive.len();
                pool.remove_positions(&inactive);
                incumbent = solution.objective;
                diag.incumbent_history.push(incumbent);
            }
            let mut added = 0;
            for Violation { cut, .. } in found {
                added += usize::from(pool.insert(cut, next));
            }
            for cut in &remembered {
                added += usize::from(pool.insert(cut.clone(), next));
            }
            diag.cuts_added += added;
            if added == 0 {
                // every violated row is already in the LP: the backend's
                // tolerance cannot resolve the requested violation tolerance
                return Err(limit(setting, &solution, diag, (pool.len(), level), started, format!(
                    "no new cuts at region level {level}; violation tolerance {tol} below backend precision"
                )));
            }
        }

        let solution = last.take().expect("inner loop exits with a solution");
        let full = find_icc_violations(grid, &layout, &solution.values, RegionSpec::full(), tol);
        if full.is_empty() {
            diag.final_region_level = level;
            diag.final_pool_size = pool.len();
            diag.wall_time = started.elapsed();
            let mut result = MechanismSolution::from_values(setting, &solution.values, solution.objective);
            result.certified = certify(setting, &result.values(), tol);
            result.diagnostics = diag;
            return Ok(result);
        }
        if diag.outer_iterations >= config.max_outer {
            return Err(limit(setting, &solution, diag, (pool.len(), level), started, format!(
                "{} outer iterations",
                config.max_outer
            )));
        }
        let next = iteration + 1;
        for Violation { cut, .. } in full {
            diag.cuts_added += usize::from(pool.insert(cut.clone(), next));
            remembered.push(cut);
        }
        level += 1;
    }
}

fn limit(
    setting: &AuctionSetting,
    solution: &LpSolution,
    mut diag: Diagnostics,
    (pool_size, level): (usize, usize),
    started: Instant,
    reason: String,
) -> SolveError {
    diag.final_pool_size = pool_size;
    diag.final_region_level = level;
    diag.wall_time = started.elapsed();
    let mut incumbent = MechanismSolution::from_values(setting, &solution.values, solution.objective);
    incumbent.diagnostics = diag;
    SolveError::IterationLimit {
        reason,
        incumbent: Box::new(incumbent),
    }
}

/// Full incentive scan plus Border scan; true when both are clean.
pub fn certify(setting: &AuctionSetting, values: &[f64], tol: f64) -> bool {
    let layout = VariableLayout::for_setting(setting);
    find_icc_violations(setting.grid(), &layout, values, RegionSpec::full(), tol).is_empty()
        && find_border_violations(setting, &layout, values, tol).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typespace::{DiscreteDensity, DistributionSpec, TypeBox, TypeGrid};

    fn uniform(buyers: usize, dims: usize, lo: f64, hi: f64, t: usize) -> AuctionSetting {
        let grid = TypeGrid::new(TypeBox::cube(dims, lo, hi).unwrap(), t).unwrap();
        let density = DiscreteDensity::discretize(&DistributionSpec::Uniform, &grid).unwrap();
        AuctionSetting::new(buyers, vec![0.0; dims], density).unwrap()
    }

    fn icc(from: usize, to: usize) -> ConstraintRef {
        ConstraintRef::Icc { from, to }
    }

    #[test]
    fn inactive_selection() {
        let mut pool = CutPool::default();
        pool.insert(icc(0, 1), 1);
        assert!(select_inactive(&pool, &[0.0], 1e-6, 2).is_empty());
        assert_eq!(select_inactive(&pool, &[0.3], 1e-6, 2), vec![0]);
        pool.insert(icc(1, 0), 2);
        assert_eq!(select_inactive(&pool, &[0.3, 0.3], 1e-6, 2), vec![0]);
    }

    #[test]
    fn pool_dedups_and_removes() {
        let mut pool = CutPool::default();
        assert!(pool.insert(icc(0, 1), 1));
        assert!(!pool.insert(icc(0, 1), 2));
        assert!(!pool.insert(ConstraintRef::LowerCorner, 1));
        assert!(pool.insert(icc(2, 1), 1));
        assert!(pool.insert(icc(3, 1), 1));
        pool.remove_positions(&[0, 2]);
        assert_eq!(pool.len(), 1);
        assert!(pool.contains(&icc(2, 1)));
        assert!(pool.insert(icc(0, 1), 3));
    }

    #[test]
    fn border_identity_ignores_level() {
        let members: std::sync::Arc<[usize]> = vec![1, 2].into();
        let mut pool = CutPool::default();
        assert!(pool.insert(ConstraintRef::Border { level: 2, members: members.clone() }, 1));
        assert!(!pool.insert(ConstraintRef::Border { level: 5, members: vec![1, 2].into() }, 1));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            exclusion_tau: 1e-10,
            ..SolverConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::TauBelowLpTol { .. })));
        let bad = SolverConfig {
            violation_tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exclusion_of_zero_allocation() {
        let setting = uniform(1, 2, 0.0, 1.0, 2);
        let layout = VariableLayout::for_setting(&setting);
        let sol = MechanismSolution::from_values(&setting, &vec![0.0; layout.num_vars()], 0.0);
        assert!(exclusion_region(&sol, 1e-6).iter().all(|&x| x));
    }

    #[test]
    fn one_dimensional_posted_price() {
        let setting = uniform(1, 1, 0.0, 1.0, 20);
        let sol = solve_optimal_auction(&setting, &SolverConfig::default()).unwrap();
        assert!(sol.certified);
        // discrete uniform on 21 points: best posted price 0.5 sells w.p. 11/21
        assert!((sol.total_revenue - 0.5 * 11.0 / 21.0).abs() < 1e-7, "{}", sol.total_revenue);
        assert!(sol.u.iter().all(|&u| u >= -1e-9));
    }

    #[test]
    fn solution_identities() {
        let setting = uniform(2, 2, 0.0, 1.0, 4);
        let sol = solve_optimal_auction(&setting, &SolverConfig::default()).unwrap();
        assert!(sol.certified);
        let grid = setting.grid();
        let mut profit = 0.0;
        for v in 0..grid.len() {
            let value: f64 = (0..2).map(|j| grid.coord(v, j) * sol.q_at(v, j)).sum();
            assert!((sol.m[v] + sol.u[v] - value).abs() < 1e-9);
            profit += setting.density().at(v) * sol.m[v];
            assert!(sol.u[v] >= -1e-9);
            assert!((0..2).all(|j| sol.q_at(v, j) >= -1e-9));
        }
        assert!((profit - sol.objective).abs() < 1e-9);
        assert!(sol.u[grid.lower_corner()].abs() < 1e-9);
        let hist = &sol.diagnostics.incumbent_history;
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn two_point_grid_solves() {
        let grid = TypeGrid::new(TypeBox::cube(1, 0.0, 1.0).unwrap(), 1).unwrap();
        let density = DiscreteDensity::from_weights(grid, vec![1.0, 1.0]).unwrap();
        let setting = AuctionSetting::new(1, vec![0.0], density).unwrap();
        // two points is the minimum; it must solve
        assert!(solve_optimal_auction(&setting, &SolverConfig::default()).is_ok());
    }
}
