//! Separation oracles for incentive-compatibility and Border constraints.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;

use crate::lpmodel::{border_rhs, AuctionSetting, ConstraintRef, VariableLayout};
use crate::typespace::TypeGrid;

/// Default shortfall below which a constraint counts as satisfied.
pub const DEFAULT_VIOLATION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionMode {
    /// Adjacent points plus the downward block of side `level`.
    Local,
    /// Every ordered pair of grid points.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSpec {
    pub level: usize,
    pub mode: RegionMode,
}

impl RegionSpec {
    pub fn local(level: usize) -> Self {
        assert!(level >= 1, "region level must be >= 1");
        Self {
            level,
            mode: RegionMode::Local,
        }
    }

    pub fn full() -> Self {
        Self {
            level: 1,
            mode: RegionMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub cut: ConstraintRef,
    pub amount: f64,
}

/// Grid points checked against `v` at region level `level`: the Chebyshev-1
/// shell around `v` together with every `v_hat != v` lying componentwise at
/// most `level` steps below `v`. Sorted ascending.
pub fn local_region(v: usize, level: usize, grid: &TypeGrid) -> Vec<usize> {
    let dims = grid.dims();
    let base: Vec<isize> = grid.multi_index(v).into_iter().map(|k| k as isize).collect();
    let mut out = Vec::new();
    let mut offset = vec![0isize; dims];
    // shell: offsets in {-1, 0, 1}^J
    visit_offsets(&mut offset, 0, -1, 1, &mut |off| {
        if off.iter().any(|&o| o != 0) {
            if let Some(i) = shifted(grid, &base, off) {
                out.push(i);
            }
        }
    });
    // downward block: offsets in {-level, ..., 0}^J
    visit_offsets(&mut offset, 0, -(level as isize), 0, &mut |off| {
        if off.iter().any(|&o| o != 0) {
            if let Some(i) = shifted(grid, &base, off) {
                out.push(i);
            }
        }
    });
    out.sort_unstable();
    out.dedup();
    out
}

fn shifted(grid: &TypeGrid, base: &[isize], offset: &[isize]) -> Option<usize> {
    let target: Vec<isize> = base.iter().zip(offset).map(|(b, o)| b + o).collect();
    grid.flat_index(&target)
}

fn visit_offsets(
    offset: &mut Vec<isize>,
    dim: usize,
    lo: isize,
    hi: isize,
    f: &mut dyn FnMut(&[isize]),
) {
    if dim == offset.len() {
        f(offset);
        return;
    }
    for o in lo..=hi {
        offset[dim] = o;
        visit_offsets(offset, dim + 1, lo, hi, f);
    }
    offset[dim] = 0;
}

/// Shortfall-free value of the incentive row `from -> to`:
/// `U(from) - U(to) - sum_j Q_j(to) (from_j - to_j)`.
#[inline]
pub fn icc_value(layout: &VariableLayout, grid: &TypeGrid, values: &[f64], from: usize, to: usize) -> f64 {
    let mut gain = 0.0;
    for j in 0..layout.qualities() {
        gain += values[layout.q(to, j)] * (grid.coord(from, j) - grid.coord(to, j));
    }
    values[layout.u(from)] - values[layout.u(to)] - gain
}

/// Violated incentive rows, ordered by `(from, to)`.
pub fn find_icc_violations(
    grid: &TypeGrid,
    layout: &VariableLayout,
    values: &[f64],
    region: RegionSpec,
    tol: f64,
) -> Vec<Violation> {
    let n = grid.len();
    let per_point: Vec<Vec<Violation>> = (0..n)
        .into_par_iter()
        .map(|from| {
            let check = |to: usize| {
                let value = icc_value(layout, grid, values, from, to);
                (value < -tol).then(|| Violation {
                    cut: ConstraintRef::Icc { from, to },
                    amount: -value,
                })
            };
            match region.mode {
                RegionMode::Full => (0..n).filter(|&to| to != from).filter_map(check).collect(),
                RegionMode::Local => local_region(from, region.level, grid)
                    .into_iter()
                    .filter_map(check)
                    .collect(),
            }
        })
        .collect();
    per_point.into_iter().flatten().collect()
}

/// Points sorted by total allocation `s(v) = sum_j Q_j(v)`, descending, ties
/// by index.
pub fn allocation_order(layout: &VariableLayout, values: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let totals: Vec<f64> = (0..layout.points())
        .map(|v| (0..layout.qualities()).map(|j| values[layout.q(v, j)]).sum())
        .collect();
    let mut order: Vec<usize> = (0..layout.points()).collect();
    order.sort_by(|&a, &b| match totals[b].total_cmp(&totals[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    (order, totals)
}

/// Violated Border prefixes of the allocation order. Prefix `k` holds the `k`
/// points with the largest total allocation; only prefixes need checking
/// since, for a fixed mass of `A`, the left side is largest on them.
pub fn find_border_violations(
    setting: &AuctionSetting,
    layout: &VariableLayout,
    values: &[f64],
    tol: f64,
) -> Vec<Violation> {
    let (order, totals) = allocation_order(layout, values);
    let mass = setting.density().mass();
    let n = order.len();
    // outside[k]: mass of the points not in prefix k, summed from the tail
    let mut outside = vec![0.0; n + 1];
    for k in (0..n).rev() {
        outside[k] = outside[k + 1] + mass[order[k]];
    }
    let buyers = setting.buyers() as f64;
    let mut lhs = 0.0;
    let mut out = Vec::new();
    for k in 0..n {
        let v = order[k];
        lhs += buyers * mass[v] * totals[v];
        let rhs = 1.0 - outside[k + 1].powi(setting.buyers() as i32);
        let excess = lhs - rhs;
        if excess > tol {
            let mut members = order[..=k].to_vec();
            members.sort_unstable();
            out.push(Violation {
                cut: ConstraintRef::Border {
                    level: k + 1,
                    members: Arc::from(members),
                },
                amount: excess,
            });
        }
    }
    out
}

/// Left minus right side of the Border inequality for an arbitrary set.
pub fn border_excess(setting: &AuctionSetting, layout: &VariableLayout, values: &[f64], in_set: &[bool]) -> f64 {
    let mass = setting.density().mass();
    let buyers = setting.buyers() as f64;
    let lhs: f64 = (0..layout.points())
        .filter(|&v| in_set[v])
        .map(|v| {
            let total: f64 = (0..layout.qualities()).map(|j| values[layout.q(v, j)]).sum();
            buyers * mass[v] * total
        })
        .sum();
    lhs - border_rhs(setting, in_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typespace::{DiscreteDensity, DistributionSpec, TypeBox};
    use proptest::prelude::*;

    fn grid(dims: usize, t: usize) -> TypeGrid {
        TypeGrid::new(TypeBox::cube(dims, 0.0, 1.0).unwrap(), t).unwrap()
    }

    fn uniform(buyers: usize, dims: usize, t: usize) -> AuctionSetting {
        let g = grid(dims, t);
        let d = DiscreteDensity::discretize(&DistributionSpec::Uniform, &g).unwrap();
        AuctionSetting::new(buyers, vec![0.0; dims], d).unwrap()
    }

    #[test]
    fn region_sizes() {
        let g = grid(2, 4); // 5x5
        let centre = g.flat_index(&[2, 2]).unwrap();
        assert_eq!(local_region(centre, 1, &g).len(), 8);
        assert_eq!(local_region(centre, 2, &g).len(), 13);
        let corner = g.lower_corner();
        for level in 1..5 {
            let region = local_region(corner, level, &g);
            assert_eq!(region.len(), 3);
            assert!(region.iter().all(|&i| g.multi_index(i).iter().all(|&k| k <= 1)));
        }
    }

    #[test]
    fn region_excludes_self_and_is_sorted() {
        let g = grid(2, 4);
        for v in 0..g.len() {
            let r = local_region(v, 3, &g);
            assert!(!r.contains(&v));
            assert!(r.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn no_violations_at_zero() {
        let setting = uniform(2, 2, 4);
        let layout = VariableLayout::for_setting(&setting);
        let values = vec![0.0; layout.num_vars()];
        for region in [RegionSpec::local(1), RegionSpec::local(3), RegionSpec::full()] {
            assert!(find_icc_violations(setting.grid(), &layout, &values, region, 1e-7).is_empty());
        }
        assert!(find_border_violations(&setting, &layout, &values, 1e-7).is_empty());
    }

    #[test]
    fn icc_three_point_line() {
        let setting = uniform(1, 1, 2); // {0, 0.5, 1}
        let layout = VariableLayout::for_setting(&setting);
        let mut values = vec![0.0; layout.num_vars()];
        for v in 0..3 {
            values[layout.q(v, 0)] = 1.0;
        }
        let full = find_icc_violations(setting.grid(), &layout, &values, RegionSpec::full(), 1e-7);
        let top_to_bottom = full
            .iter()
            .find(|v| v.cut == ConstraintRef::Icc { from: 2, to: 0 })
            .unwrap();
        assert!((top_to_bottom.amount - 1.0).abs() < 1e-12);

        let local = find_icc_violations(setting.grid(), &layout, &values, RegionSpec::local(1), 1e-7);
        let from_top: Vec<_> = local
            .iter()
            .filter(|v| matches!(v.cut, ConstraintRef::Icc { from: 2, .. }))
            .collect();
        assert_eq!(from_top.len(), 1);
        assert_eq!(from_top[0].cut, ConstraintRef::Icc { from: 2, to: 1 });
        assert!((from_top[0].amount - 0.5).abs() < 1e-12);
    }

    #[test]
    fn border_two_point_example() {
        let setting = uniform(2, 1, 1);
        let layout = VariableLayout::for_setting(&setting);
        let mut values = vec![0.0; layout.num_vars()];
        values[layout.q(0, 0)] = 1.0;
        let found = find_border_violations(&setting, &layout, &values, 1e-7);
        assert_eq!(found.len(), 1);
        match &found[0].cut {
            ConstraintRef::Border { level, members } => {
                assert_eq!(*level, 1);
                assert_eq!(&members[..], &[0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!((found[0].amount - 0.25).abs() < 1e-12);
    }

    #[test]
    fn border_ties_use_index_order() {
        let setting = uniform(2, 1, 3);
        let layout = VariableLayout::for_setting(&setting);
        let values = vec![0.7, 0.9, 0.7, 0.9, 0.0, 0.0, 0.0, 0.0];
        let (order, _) = allocation_order(&layout, &values);
        assert_eq!(order, vec![1, 3, 0, 2]);
    }

    proptest! {
        #[test]
        fn single_buyer_never_violated_below_one(q in proptest::collection::vec(0.0f64..=1.0, 9)) {
            let setting = uniform(1, 2, 2);
            let layout = VariableLayout::for_setting(&setting);
            let mut values = vec![0.0; layout.num_vars()];
            for (v, &s) in q.iter().enumerate() {
                values[layout.q(v, 0)] = 0.4 * s;
                values[layout.q(v, 1)] = 0.6 * s;
            }
            prop_assert!(find_border_violations(&setting, &layout, &values, 1e-9).is_empty());
        }

        #[test]
        fn regions_nest(v in 0usize..36, level in 1usize..6) {
            let g = grid(2, 5);
            let small = local_region(v, level, &g);
            let large = local_region(v, level + 1, &g);
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }

        #[test]
        fn local_violations_subset_of_full(raw in proptest::collection::vec(0.0f64..1.0, 27), level in 1usize..4) {
            let setting = uniform(2, 2, 2);
            let layout = VariableLayout::for_setting(&setting);
            let full = find_icc_violations(setting.grid(), &layout, &raw, RegionSpec::full(), 1e-9);
            let local = find_icc_violations(setting.grid(), &layout, &raw, RegionSpec::local(level), 1e-9);
            for v in &local {
                prop_assert!(full.contains(v));
            }
        }
    }
}
