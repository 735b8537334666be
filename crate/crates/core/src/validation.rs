//! Independent reference computations used to cross-check the solver:
//! brute-force Border enumeration, direct ICC row evaluation, an
//! all-constraints LP and the one-dimensional Myerson benchmark.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ebm::{myerson_oracle, EbmError};
use crate::lp::{HighsBackend, LpBackend, LpError};
use crate::lpmodel::{base_program, border_row, icc_row, AuctionSetting, ModelError, VariableLayout};
use crate::separation::{find_border_violations, find_icc_violations, RegionSpec};
use crate::solver::{solve_optimal_auction, SolveError, SolverConfig};
use crate::typespace::{DiscreteDensity, DistributionSpec, TypeBox, TypeGrid};

/// Largest Border slack violation over every nonempty subset of types,
/// computed by enumerating all `2^n - 1` subsets. Feasible for `n <= 20`.
pub fn border_max_excess_exhaustive(setting: &AuctionSetting, values: &[f64]) -> f64 {
    let n = setting.grid().len();
    let jn = setting.qualities();
    let buyers = setting.buyers() as i32;
    let f = setting.density().mass();
    assert!(n <= 20, "exhaustive Border enumeration is limited to 20 points");
    let mut worst = f64::NEG_INFINITY;
    for subset in 1u32..(1u32 << n) {
        let mut lhs = 0.0;
        let mut outside = 0.0;
        for v in 0..n {
            if subset >> v & 1 == 1 {
                lhs += f[v] * values[v * jn..(v + 1) * jn].iter().sum::<f64>();
            } else {
                outside += f[v];
            }
        }
        let excess = setting.buyers() as f64 * lhs - (1.0 - outside.powi(buyers));
        worst = worst.max(excess);
    }
    worst
}

/// Every violated ICC row, found by building and evaluating all `n(n-1)`
/// rows. Ordered by `(from, to)`.
pub fn icc_violations_direct(setting: &AuctionSetting, values: &[f64], tol: f64) -> Vec<(usize, usize, f64)> {
    let layout = VariableLayout::for_setting(setting);
    let n = setting.grid().len();
    let mut out = Vec::new();
    for from in 0..n {
        for to in (0..n).filter(|&t| t != from) {
            let row = icc_row(&layout, from, to, setting.grid()).expect("valid pair");
            let slack = row.slack(values);
            if slack < -tol {
                out.push((from, to, -slack));
            }
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimal per-buyer objective of the LP with every ICC row present from
/// the start and Border rows added until the prefix oracle finds nothing.
pub fn all_constraints_objective(setting: &AuctionSetting, tol: f64) -> Result<f64, ReferenceError> {
    let layout = VariableLayout::for_setting(setting);
    let grid = setting.grid();
    let mut lp = base_program(setting);
    for from in 0..grid.len() {
        for to in (0..grid.len()).filter(|&t| t != from) {
            lp.add_row(icc_row(&layout, from, to, grid)?)?;
        }
    }
    let mut backend = HighsBackend::new(1e-9);
    loop {
        let sol = backend.solve(&lp)?;
        let cuts = find_border_violations(setting, &layout, &sol.values, tol);
        if cuts.is_empty() {
            return Ok(sol.objective);
        }
        for cut in cuts {
            if let crate::lpmodel::ConstraintRef::Border { level, members } = cut.cut {
                lp.add_row(border_row(&layout, &members, level, setting)?)?;
            }
        }
    }
}

/// Random setting with at most `max_points` grid points, `J` in {1, 2},
/// `N` in 1..=4 and random positive masses, plus a random `(Q, U)` vector
/// with `Q` in `[0, 1]`.
pub fn random_instance(rng: &mut ChaCha8Rng, max_points: usize) -> (AuctionSetting, Vec<f64>) {
    loop {
        let dims = rng.gen_range(1..=2usize);
        let intervals = rng.gen_range(1..=max_points.max(2) - 1);
        let lower: Vec<f64> = (0..dims).map(|_| rng.gen_range(0.0..2.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..2.0)).collect();
        let type_box = TypeBox::new(lower, upper).expect("positive ranges");
        let grid = TypeGrid::new(type_box, intervals).expect("intervals >= 1");
        if grid.len() > max_points || grid.len() < 2 {
            continue;
        }
        let weights: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let n = grid.len();
        let density = DiscreteDensity::from_weights(grid, weights).expect("positive weights");
        let buyers = rng.gen_range(1..=4);
        let setting = AuctionSetting::new(buyers, vec![0.0; dims], density).expect("valid setting");
        let mut values: Vec<f64> = (0..n * dims).map(|_| rng.gen_range(0.0..1.0)).collect();
        values.extend((0..n).map(|_| rng.gen_range(0.0..2.0)));
        return (setting, values);
    }
}

/// Random two-grade setting with at most `max_points` grid points, up to
/// `max_buyers` buyers, random positive masses and small random costs.
pub fn random_two_grade_setting(rng: &mut ChaCha8Rng, max_points: usize, max_buyers: usize) -> AuctionSetting {
    loop {
        let lower: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..3.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..2.0)).collect();
        let intervals = rng.gen_range(1..=4);
        let grid = TypeGrid::new(TypeBox::new(lower, upper).expect("positive ranges"), intervals)
            .expect("intervals >= 1");
        if grid.len() > max_points || grid.len() < 2 {
            continue;
        }
        let weights: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let density = DiscreteDensity::from_weights(grid, weights).expect("positive weights");
        let costs = vec![rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)];
        return AuctionSetting::new(rng.gen_range(1..=max_buyers), costs, density).expect("valid setting");
    }
}

/// Trials in which the prefix Border oracle and exhaustive enumeration agree
/// on whether a violation exists, and in which the full ICC scan equals the
/// direct row evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleAgreement {
    pub trials: usize,
    pub border_agree: usize,
    pub icc_agree: usize,
}

pub fn oracle_agreement(trials: usize, seed: u64, tol: f64) -> OracleAgreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = OracleAgreement {
        trials,
        border_agree: 0,
        icc_agree: 0,
    };
    for _ in 0..trials {
        let (setting, values) = random_instance(&mut rng, 12);
        let layout = VariableLayout::for_setting(&setting);
        let prefix = !find_border_violations(&setting, &layout, &values, tol).is_empty();
        let exhaustive = border_max_excess_exhaustive(&setting, &values) > tol;
        result.border_agree += usize::from(prefix == exhaustive);

        let scan: Vec<(usize, usize, f64)> =
            find_icc_violations(setting.grid(), &layout, &values, RegionSpec::full(), tol)
                .into_iter()
                .map(|v| match v.cut {
                    crate::lpmodel::ConstraintRef::Icc { from, to } => (from, to, v.amount),
                    _ => unreachable!("ICC oracle returns ICC cuts"),
                })
                .collect();
        let direct = icc_violations_direct(&setting, &values, tol);
        let same = scan.len() == direct.len()
            && scan
                .iter()
                .zip(&direct)
                .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-12);
        result.icc_agree += usize::from(same);
    }
    result
}

/// Optimal single-grade revenue for `buyers` i.i.d. buyers whose values take
/// the increasing `points` with probabilities `masses`: the expected
/// highest discrete virtual value above `cost`, where
/// `psi_k = v_k - (v_{k+1} - v_k) (1 - F_k) / f_k`. `None` if some mass is
/// zero or `psi` is not increasing.
pub fn discrete_myerson_revenue(points: &[f64], masses: &[f64], buyers: usize, cost: f64) -> Option<f64> {
    let n = points.len();
    if n == 0 || masses.len() != n || masses.iter().any(|&m| m <= 0.0) {
        return None;
    }
    let total: f64 = masses.iter().sum();
    let mut cdf = 0.0;
    let mut previous_psi = f64::NEG_INFINITY;
    let mut revenue = 0.0;
    for k in 0..n {
        let f = masses[k] / total;
        let below = cdf;
        cdf += f;
        let psi = if k + 1 < n {
            points[k] - (points[k + 1] - points[k]) * (1.0 - cdf) / f
        } else {
            points[k]
        };
        if psi < previous_psi {
            return None;
        }
        previous_psi = psi;
        let top = cdf.min(1.0).powi(buyers as i32) - below.powi(buyers as i32);
        revenue += (psi - cost).max(0.0) * top;
    }
    Some(revenue)
}

#[derive(Debug, Clone)]
pub struct MyersonCheck {
    pub buyers: usize,
    pub lp_total: f64,
    pub oracle: f64,
    pub certified: bool,
    pub elapsed: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum MyersonError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Oracle(#[from] EbmError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] crate::typespace::TypeSpaceError),
}

/// Single-grade uniform `[0, 1]` auctions with zero cost: LP total revenue
/// against the continuous optimum for each buyer count.
pub fn myerson_suite(buyers: &[usize], intervals: usize, config: &SolverConfig) -> Result<Vec<MyersonCheck>, MyersonError> {
    let grid = TypeGrid::new(TypeBox::cube(1, 0.0, 1.0)?, intervals)?;
    let density = DiscreteDensity::discretize(&DistributionSpec::Uniform, &grid)?;
    buyers
        .iter()
        .map(|&n| {
            let setting = AuctionSetting::new(n, vec![0.0], density.clone())?;
            let started = Instant::now();
            let solution = solve_optimal_auction(&setting, config)?;
            let elapsed = started.elapsed();
            Ok(MyersonCheck {
                buyers: n,
                lp_total: solution.total_revenue,
                oracle: myerson_oracle(n, &DistributionSpec::Uniform, 0.0, 1.0, 0.0)?,
                certified: solution.certified,
                elapsed,
            })
        })
        .collect()
}
