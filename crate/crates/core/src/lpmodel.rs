//! Finite LP approximation of the symmetric optimal-auction problem.
//!
//! Decision variables are the interim allocation probabilities `Q_j(v)` and
//! the interim utilities `U(v)` on every grid point. The objective is the
//! per-buyer expected profit; incentive compatibility and Border feasibility
//! enter as rows produced on demand by the separation oracles.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::typespace::{DiscreteDensity, TypeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("number of buyers must be >= 1")]
    NoBuyers,
    #[error("{costs} costs given for {dims} qualities")]
    CostLength { costs: usize, dims: usize },
    #[error("costs must be finite and nonnegative")]
    BadCost,
    #[error("incentive row needs two distinct points, got {0} twice")]
    SelfComparison(usize),
    #[error("border row needs a nonempty member set")]
    EmptyBorderSet,
    #[error("grid index {index} out of range for {len} points")]
    PointOutOfRange { index: usize, len: usize },
    #[error("row references variable {var} but the program has {count}")]
    VariableOutOfRange { var: usize, count: usize },
    #[error("row references variable {0} twice")]
    DuplicateVariable(usize),
}

/// One experiment instance: `N` symmetric buyers, `J` grades, constant
/// per-grade costs and a discrete type density.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionSetting {
    buyers: usize,
    costs: Vec<f64>,
    density: DiscreteDensity,
}

impl AuctionSetting {
    pub fn new(buyers: usize, costs: Vec<f64>, density: DiscreteDensity) -> Result<Self, ModelError> {
        if buyers == 0 {
            return Err(ModelError::NoBuyers);
        }
        let dims = density.grid().dims();
        if costs.len() != dims {
            return Err(ModelError::CostLength {
                costs: costs.len(),
                dims,
            });
        }
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(ModelError::BadCost);
        }
        Ok(Self {
            buyers,
            costs,
            density,
        })
    }

    pub fn buyers(&self) -> usize {
        self.buyers
    }

    /// Number of quality grades `J`.
    pub fn qualities(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn density(&self) -> &DiscreteDensity {
        &self.density
    }

    pub fn grid(&self) -> &TypeGrid {
        self.density.grid()
    }

    /// Same types and costs with a different number of buyers.
    pub fn with_buyers(&self, buyers: usize) -> Result<Self, ModelError> {
        Self::new(buyers, self.costs.clone(), self.density.clone())
    }
}

/// Maps `(point, grade)` and `point` to LP column ids.
///
/// All `Q` columns come first, point-major; the `U` columns follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    points: usize,
    qualities: usize,
}

impl VariableLayout {
    pub fn new(points: usize, qualities: usize) -> Self {
        Self { points, qualities }
    }

    pub fn for_setting(setting: &AuctionSetting) -> Self {
        Self::new(setting.grid().len(), setting.qualities())
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn qualities(&self) -> usize {
        self.qualities
    }

    #[inline]
    pub fn q(&self, point: usize, grade: usize) -> usize {
        point * self.qualities + grade
    }

    #[inline]
    pub fn u(&self, point: usize) -> usize {
        self.points * self.qualities + point
    }

    pub fn num_vars(&self) -> usize {
        self.points * (self.qualities + 1)
    }

    /// Splits a column vector into the `Q` block (point-major) and the `U` block.
    pub fn split<'a>(&self, values: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        values.split_at(self.points * self.qualities)
    }
}

/// Identity of a row in the constraint pool.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintRef {
    /// Type `from` must not gain by reporting `to`.
    Icc { from: usize, to: usize },
    /// Border inequality on a set of grid points. `level` is the rank of the
    /// set in the sort order that produced it; `members` is sorted ascending.
    Border { level: usize, members: Arc<[usize]> },
    /// Utility of the lowest type pinned to zero.
    LowerCorner,
    NonNeg { point: usize, quality: usize },
}

/// Hashable identity used to deduplicate the cut pool. Two Border rows over
/// the same member set are the same row regardless of their level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CutKey {
    Icc(usize, usize),
    Border(Arc<[usize]>),
    LowerCorner,
    NonNeg(usize, usize),
}

impl ConstraintRef {
    pub fn key(&self) -> CutKey {
        match self {
            ConstraintRef::Icc { from, to } => CutKey::Icc(*from, *to),
            ConstraintRef::Border { members, .. } => CutKey::Border(Arc::clone(members)),
            ConstraintRef::LowerCorner => CutKey::LowerCorner,
            ConstraintRef::NonNeg { point, quality } => CutKey::NonNeg(*point, *quality),
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, ConstraintRef::LowerCorner | ConstraintRef::NonNeg { .. })
    }
}

impl fmt::Display for ConstraintRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintRef::Icc { from, to } => write!(f, "icc({from}->{to})"),
            ConstraintRef::Border { level, members } => {
                write!(f, "border(level {level}, {} points)", members.len())
            }
            ConstraintRef::LowerCorner => write!(f, "lower-corner"),
            ConstraintRef::NonNeg { point, quality } => write!(f, "nonneg({point},{quality})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub tag: ConstraintRef,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(var, c)| c * values[var]).sum()
    }

    /// Distance to the boundary on the feasible side; negative when violated.
    /// Equality rows report minus the absolute residual.
    pub fn slack(&self, values: &[f64]) -> f64 {
        let activity = self.activity(values);
        match self.sense {
            RowSense::Le => self.rhs - activity,
            RowSense::Ge => activity - self.rhs,
            RowSense::Eq => -(activity - self.rhs).abs(),
        }
    }
}

/// Maximization LP with column bounds and tagged sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<Row>,
}

impl LinearProgram {
    /// Program with free columns and no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); objective.len()];
        Self {
            objective,
            bounds,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    /// Adds a row after checking its column references.
    pub fn add_row(&mut self, row: Row) -> Result<(), ModelError> {
        let count = self.num_vars();
        let mut seen: Vec<usize> = row.coeffs.iter().map(|&(var, _)| var).collect();
        seen.sort_unstable();
        for pair in seen.windows(2) {
            if pair[0] == pair[1] {
                return Err(ModelError::DuplicateVariable(pair[0]));
            }
        }
        if let Some(&var) = seen.last() {
            if var >= count {
                return Err(ModelError::VariableOutOfRange { var, count });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Adds a base row. Single-column nonnegativity rows become column bounds.
    pub fn add_base_row(&mut self, row: Row) -> Result<(), ModelError> {
        if let (ConstraintRef::NonNeg { .. }, [(var, coeff)]) = (&row.tag, row.coeffs.as_slice()) {
            if *coeff > 0.0 && row.sense == RowSense::Ge {
                let (lower, upper) = self.bounds[*var];
                self.bounds[*var] = (lower.max(row.rhs / coeff), upper);
                return Ok(());
            }
        }
        self.add_row(row)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    pub fn row_slacks(&self, values: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.slack(values)).collect()
    }
}

/// Per-buyer expected profit `sum_v f(v) [sum_j (v_j - c_j) Q_j(v) - U(v)]`.
pub fn build_objective(setting: &AuctionSetting) -> Vec<f64> {
    let layout = VariableLayout::for_setting(setting);
    let grid = setting.grid();
    let mut objective = vec![0.0; layout.num_vars()];
    for v in 0..grid.len() {
        let mass = setting.density().at(v);
        for (j, cost) in setting.costs().iter().enumerate() {
            objective[layout.q(v, j)] = mass * (grid.coord(v, j) - cost);
        }
        objective[layout.u(v)] = -mass;
    }
    objective
}

/// `U(v) - U(v_hat) - sum_j (v_j - v_hat_j) Q_j(v_hat) >= 0`.
pub fn icc_row(
    layout: &VariableLayout,
    from: usize,
    to: usize,
    grid: &TypeGrid,
) -> Result<Row, ModelError> {
    let len = grid.len();
    for index in [from, to] {
        if index >= len {
            return Err(ModelError::PointOutOfRange { index, len });
        }
    }
    if from == to {
        return Err(ModelError::SelfComparison(from));
    }
    let mut coeffs = Vec::with_capacity(layout.qualities() + 2);
    coeffs.push((layout.u(from), 1.0));
    coeffs.push((layout.u(to), -1.0));
    for j in 0..layout.qualities() {
        let diff = grid.coord(from, j) - grid.coord(to, j);
        if diff != 0.0 {
            coeffs.push((layout.q(to, j), -diff));
        }
    }
    Ok(Row {
        tag: ConstraintRef::Icc { from, to },
        coeffs,
        sense: RowSense::Ge,
        rhs: 0.0,
    })
}

/// Right-hand side `1 - (mass outside A)^N` of the Border inequality for `A`.
pub fn border_rhs(setting: &AuctionSetting, in_set: &[bool]) -> f64 {
    let outside: f64 = setting
        .density()
        .mass()
        .iter()
        .zip(in_set)
        .filter(|(_, &inside)| !inside)
        .map(|(m, _)| m)
        .sum();
    1.0 - outside.powi(setting.buyers() as i32)
}

/// `N sum_{v in A} f(v) sum_j Q_j(v) <= 1 - (sum_{v not in A} f(v))^N`.
pub fn border_row(
    layout: &VariableLayout,
    members: &[usize],
    level: usize,
    setting: &AuctionSetting,
) -> Result<Row, ModelError> {
    if members.is_empty() {
        return Err(ModelError::EmptyBorderSet);
    }
    let len = setting.grid().len();
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut in_set = vec![false; len];
    for &v in &sorted {
        if v >= len {
            return Err(ModelError::PointOutOfRange { index: v, len });
        }
        in_set[v] = true;
    }
    let scale = setting.buyers() as f64;
    let mut coeffs = Vec::with_capacity(sorted.len() * layout.qualities());
    for &v in &sorted {
        let weight = scale * setting.density().at(v);
        if weight > 0.0 {
            for j in 0..layout.qualities() {
                coeffs.push((layout.q(v, j), weight));
            }
        }
    }
    Ok(Row {
        tag: ConstraintRef::Border {
            level,
            members: sorted.into(),
        },
        coeffs,
        sense: RowSense::Le,
        rhs: border_rhs(setting, &in_set),
    })
}

/// `U(lower corner) = 0` followed by `Q_j(v) >= 0` for every point and grade.
pub fn base_rows(layout: &VariableLayout, grid: &TypeGrid) -> Vec<Row> {
    let mut rows = Vec::with_capacity(1 + layout.points() * layout.qualities());
    rows.push(Row {
        tag: ConstraintRef::LowerCorner,
        coeffs: vec![(layout.u(grid.lower_corner()), 1.0)],
        sense: RowSense::Eq,
        rhs: 0.0,
    });
    for point in 0..layout.points() {
        for quality in 0..layout.qualities() {
            rows.push(Row {
                tag: ConstraintRef::NonNeg { point, quality },
                coeffs: vec![(layout.q(point, quality), 1.0)],
                sense: RowSense::Ge,
                rhs: 0.0,
            });
        }
    }
    rows
}

/// Program holding the objective and the base family.
///
/// Besides `Q >= 0`, columns carry the implied bounds `Q_j(v) <= 1` (Border
/// on a singleton gives `sum_j Q_j(v) <= 1`) and `U(v) >= 0` (incentive
/// compatibility against the lower corner). Neither changes the optimum; both
/// keep the relaxation bounded before any cut is present.
pub fn base_program(setting: &AuctionSetting) -> LinearProgram {
    let layout = VariableLayout::for_setting(setting);
    let mut lp = LinearProgram::new(build_objective(setting));
    for point in 0..layout.points() {
        for j in 0..layout.qualities() {
            lp.set_bounds(layout.q(point, j), f64::NEG_INFINITY, 1.0);
        }
        lp.set_bounds(layout.u(point), 0.0, f64::INFINITY);
    }
    for row in base_rows(&layout, setting.grid()) {
        lp.add_base_row(row).expect("base rows reference valid columns");
    }
    lp
}
