//! LP backend contract and the HiGHS implementation behind it.

use std::sync::Arc;

use highs::{Col, HighsModelStatus, Model, RowProblem, Sense, SolvedModel};
use highs_sys::{HighsInt, Highs_deleteRowsByMask};
use thiserror::Error;

use crate::lpmodel::{ConstraintRef, LinearProgram, Row, RowSense};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("LP backend hit its iteration limit")]
    IterationLimit,
    #[error("linear program has no variables")]
    Empty,
    #[error("LP backend failure: {0}")]
    Backend(String),
}

/// Optimal point of a [`LinearProgram`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    /// One entry per row, in row order; see [`crate::lpmodel::Row::slack`].
    pub slacks: Vec<f64>,
}

/// Anything that can maximize a [`LinearProgram`].
///
/// Implementations must be deterministic for a fixed program.
pub trait LpBackend {
    fn solve(&mut self, program: &LinearProgram) -> Result<LpSolution, LpError>;
}

/// Dual simplex from HiGHS, single-threaded.
///
/// The last solved model is kept. When the next program has the same
/// columns and its rows are a subsequence of the retained rows followed by
/// new ones, the dropped rows are deleted, the new ones appended and the
/// solve is warm-started from the previous basis.
pub struct HighsBackend {
    tolerance: f64,
    cached: Option<Cached>,
}

struct Cached {
    model: SolvedModel,
    cols: Vec<Col>,
    rows: Vec<Row>,
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl HighsBackend {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            cached: None,
        }
    }

    fn configure(&self, model: &mut Model) {
        model.make_quiet();
        model.set_option("solver", "simplex");
        model.set_option("threads", 1);
        model.set_option("primal_feasibility_tolerance", self.tolerance);
        model.set_option("dual_feasibility_tolerance", self.tolerance);
        model.set_option("random_seed", 0);
    }

    fn fresh_model(&self, program: &LinearProgram) -> (Model, Vec<Col>) {
        let mut problem = RowProblem::default();
        let cols: Vec<_> = program
            .objective()
            .iter()
            .zip(program.bounds())
            .map(|(&c, &(lo, hi))| problem.add_column(c, lo..=hi))
            .collect();
        for row in program.rows() {
            let factors: Vec<_> = row.coeffs.iter().map(|&(v, c)| (cols[v], c)).collect();
            match row.sense {
                RowSense::Le => problem.add_row(..=row.rhs, factors),
                RowSense::Ge => problem.add_row(row.rhs.., factors),
                RowSense::Eq => problem.add_row(row.rhs..=row.rhs, factors),
            }
        }
        let mut model = problem.optimise(Sense::Maximise);
        self.configure(&mut model);
        (model, cols)
    }

    /// Rows of the cached model to delete and the number of leading program
    /// rows they leave in place, or `None` if the columns differ.
    fn row_edit(&self, program: &LinearProgram) -> Option<(Vec<HighsInt>, usize)> {
        let cached = self.cached.as_ref()?;
        if cached.objective != program.objective() || cached.bounds != program.bounds() {
            return None;
        }
        let rows = program.rows();
        let mut kept = 0;
        let mask = cached
            .rows
            .iter()
            .map(|row| {
                if kept < rows.len() && same_row(row, &rows[kept]) {
                    kept += 1;
                    0
                } else {
                    1
                }
            })
            .collect();
        Some((mask, kept))
    }

    fn edited_model(&mut self, program: &LinearProgram) -> (Model, Vec<Col>) {
        let Some((mut mask, kept)) = self.row_edit(program) else {
            self.cached = None;
            return self.fresh_model(program);
        };
        let cached = self.cached.take().expect("row edit implies a cached model");
        let mut model = Model::from(cached.model);
        if mask.iter().any(|&m| m != 0) {
            // SAFETY: the pointer comes from a live model and the mask has one
            // entry per row of that model.
            let status = unsafe { Highs_deleteRowsByMask(model.as_mut_ptr(), mask.as_mut_ptr()) };
            if status == STATUS_ERROR {
                return self.fresh_model(program);
            }
        }
        for row in &program.rows()[kept..] {
            let factors: Vec<_> = row
                .coeffs
                .iter()
                .map(|&(v, c)| (cached.cols[v], c))
                .collect();
            match row.sense {
                RowSense::Le => model.add_row(..=row.rhs, factors),
                RowSense::Ge => model.add_row(row.rhs.., factors),
                RowSense::Eq => model.add_row(row.rhs..=row.rhs, factors),
            };
        }
        (model, cached.cols)
    }
}

const STATUS_ERROR: HighsInt = -1;

fn same_row(a: &Row, b: &Row) -> bool {
    let same_tag = match (&a.tag, &b.tag) {
        (ConstraintRef::Border { members: x, .. }, ConstraintRef::Border { members: y, .. }) => {
            Arc::ptr_eq(x, y) || x == y
        }
        (x, y) => x == y,
    };
    same_tag && a.sense == b.sense && a.rhs == b.rhs && a.coeffs == b.coeffs
}

impl LpBackend for HighsBackend {
    fn solve(&mut self, program: &LinearProgram) -> Result<LpSolution, LpError> {
        if program.num_vars() == 0 {
            return Err(LpError::Empty);
        }
        let (model, cols) = self.edited_model(program);
        let solved = model
            .try_solve()
            .map_err(|status| LpError::Backend(format!("{status:?}")))?;
        match solved.status() {
            HighsModelStatus::Optimal => {}
            HighsModelStatus::Infeasible => return Err(LpError::Infeasible),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
                return Err(LpError::Unbounded)
            }
            HighsModelStatus::ReachedIterationLimit | HighsModelStatus::ReachedTimeLimit => {
                return Err(LpError::IterationLimit)
            }
            other => return Err(LpError::Backend(format!("{other:?}"))),
        }
        let values = solved.get_solution().columns().to_vec();
        let objective = program.objective_value(&values);
        let slacks = program.row_slacks(&values);
        self.cached = Some(Cached {
            model: solved,
            cols,
            rows: program.rows().to_vec(),
            objective: program.objective().to_vec(),
            bounds: program.bounds().to_vec(),
        });
        Ok(LpSolution {
            values,
            objective,
            slacks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) -> Row {
        Row {
            tag: ConstraintRef::LowerCorner,
            coeffs,
            sense,
            rhs,
        }
    }

    #[test]
    fn bounded_single_variable() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.add_row(row(vec![(0, 1.0)], RowSense::Le, 3.0)).unwrap();
        let sol = HighsBackend::new(1e-9).solve(&lp).unwrap();
        assert!((sol.values[0] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        assert!(sol.slacks[0].abs() < 1e-9);
    }

    #[test]
    fn border_style_cap() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.add_row(row(vec![(0, 1.0)], RowSense::Le, 0.75)).unwrap();
        let sol = HighsBackend::new(1e-9).solve(&lp).unwrap();
        assert!((sol.values[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row(row(vec![(0, 1.0)], RowSense::Le, 0.0)).unwrap();
        lp.add_row(row(vec![(0, 1.0)], RowSense::Ge, 1.0)).unwrap();
        assert_eq!(HighsBackend::new(1e-9).solve(&lp), Err(LpError::Infeasible));
    }

    #[test]
    fn unbounded_reported() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        assert_eq!(HighsBackend::new(1e-9).solve(&lp), Err(LpError::Unbounded));
    }

    #[test]
    fn appended_rows_match_fresh_solve() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0, 1.0]);
        for v in 0..3 {
            lp.set_bounds(v, 0.0, f64::INFINITY);
        }
        lp.add_row(row(vec![(0, 3.0), (1, 1.0)], RowSense::Le, 6.0)).unwrap();
        lp.add_row(row(vec![(1, 1.0), (2, 2.0)], RowSense::Le, 7.0)).unwrap();
        let mut warm = HighsBackend::new(1e-9);
        warm.solve(&lp).unwrap();
        lp.add_row(row(vec![(1, 1.0)], RowSense::Le, 4.0)).unwrap();
        let a = warm.solve(&lp).unwrap();
        let b = HighsBackend::new(1e-9).solve(&lp).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        // y = 4 binds, then x = 2/3 and z = 3/2
        assert!((a.objective - 61.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn deleted_rows_match_fresh_solve() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        for v in 0..2 {
            lp.set_bounds(v, 0.0, 10.0);
        }
        lp.add_row(row(vec![(0, 1.0)], RowSense::Le, 1.0)).unwrap();
        lp.add_row(row(vec![(1, 1.0)], RowSense::Le, 2.0)).unwrap();
        lp.add_row(row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 2.5)).unwrap();
        let mut warm = HighsBackend::new(1e-9);
        assert!((warm.solve(&lp).unwrap().objective - 2.5).abs() < 1e-9);

        let mut smaller = LinearProgram::new(vec![1.0, 1.0]);
        for v in 0..2 {
            smaller.set_bounds(v, 0.0, 10.0);
        }
        smaller.add_row(lp.rows()[1].clone()).unwrap();
        smaller.add_row(row(vec![(0, 1.0)], RowSense::Le, 4.0)).unwrap();
        let a = warm.solve(&smaller).unwrap();
        let b = HighsBackend::new(1e-9).solve(&smaller).unwrap();
        assert!((a.objective - 6.0).abs() < 1e-9);
        assert!((a.objective - b.objective).abs() < 1e-9);
        assert_eq!(a.slacks.len(), 2);
    }
}
