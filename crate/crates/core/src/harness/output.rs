//! CSV tables, PGM heat maps and mask comparisons.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::solver::MechanismSolution;
use crate::typespace::TypeGrid;

/// Formats `x` with 12 significant digits, trailing zeros trimmed, `-0`
/// written as `0`.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let text = if (-5..12).contains(&exponent) {
        let decimals = (11 - exponent).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let sci = format!("{x:.11e}");
        let (mantissa, exp) = sci.split_once('e').expect("scientific format");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exp}")
    };
    if text == "-0" {
        "0".to_string()
    } else {
        text
    }
}

/// Per-point table: coordinates, allocation, utility, payment and the
/// exclusion flag.
pub fn solution_csv(solution: &MechanismSolution, mask: &[bool]) -> String {
    let grid = solution.setting.grid();
    let dims = grid.dims();
    let mut out = String::new();
    let header: Vec<String> = (1..=dims)
        .map(|j| format!("v_{j}"))
        .chain((1..=dims).map(|j| format!("Q_{j}")))
        .chain(["U".to_string(), "M".to_string(), "excluded".to_string()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for v in 0..grid.len() {
        let mut fields: Vec<String> = (0..dims).map(|d| fmt_num(grid.coord(v, d))).collect();
        fields.extend((0..dims).map(|j| fmt_num(solution.q_at(v, j))));
        fields.push(fmt_num(solution.u[v]));
        fields.push(fmt_num(solution.m[v]));
        fields.push(if mask[v] { "1" } else { "0" }.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Grayscale P2 image of a per-point value in `[0, 1]` on a two-dimensional
/// grid. Columns run along `v_1`; the top row is the highest `v_2`.
pub fn render_pgm(grid: &TypeGrid, values: &[f64]) -> Option<String> {
    if grid.dims() != 2 || values.len() != grid.len() {
        return None;
    }
    let (width, height) = (grid.counts()[0], grid.counts()[1]);
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in 0..height {
        let k2 = height - 1 - row;
        let line: Vec<String> = (0..width)
            .map(|k1| {
                let x = values[k1 * height + k2];
                ((255.0 * x.clamp(0.0, 1.0) + 0.5).floor() as u32).to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Some(out)
}

/// Writes [`render_pgm`] output to `path`; grids that are not
/// two-dimensional are rejected.
pub fn emit_heatmap(grid: &TypeGrid, values: &[f64], path: &Path) -> io::Result<()> {
    let img = render_pgm(grid, values).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidInput,
            "heat maps need a two-dimensional grid and one value per point",
        )
    })?;
    fs::write(path, img)
}

/// True when `mask` equals the lower-left block spanned by its own maxima,
/// i.e. `{v : v_j <= max_{w in mask} w_j for all j}`. An empty mask counts as
/// a (degenerate) rectangle.
pub fn is_lower_rectangle(grid: &TypeGrid, mask: &[bool]) -> bool {
    let dims = grid.dims();
    let mut top = vec![None::<usize>; dims];
    for v in (0..grid.len()).filter(|&v| mask[v]) {
        for (d, k) in grid.multi_index(v).into_iter().enumerate() {
            top[d] = Some(top[d].map_or(k, |t: usize| t.max(k)));
        }
    }
    if top[0].is_none() {
        return true;
    }
    (0..grid.len()).all(|v| {
        let inside = grid
            .multi_index(v)
            .iter()
            .zip(&top)
            .all(|(&k, t)| k <= t.expect("nonempty mask"));
        inside == mask[v]
    })
}

/// Masks agree up to one grid cell: every point in one mask has a point of
/// the other mask within Chebyshev distance one.
pub fn masks_fuzzy_equal(grid: &TypeGrid, a: &[bool], b: &[bool]) -> bool {
    let covered = |from: &[bool], to: &[bool]| {
        (0..grid.len()).filter(|&v| from[v] && !to[v]).all(|v| {
            let centre: Vec<isize> = grid.multi_index(v).iter().map(|&k| k as isize).collect();
            neighbourhood(centre.len()).any(|offset| {
                let at: Vec<isize> = centre.iter().zip(&offset).map(|(c, o)| c + o).collect();
                grid.flat_index(&at).is_some_and(|w| to[w])
            })
        })
    };
    covered(a, b) && covered(b, a)
}

fn neighbourhood(dims: usize) -> impl Iterator<Item = Vec<isize>> {
    let total = 3usize.pow(dims as u32);
    (0..total).map(move |mut k| {
        let mut offset = vec![0isize; dims];
        for slot in offset.iter_mut().rev() {
            *slot = (k % 3) as isize - 1;
            k /= 3;
        }
        offset
    })
}

/// Number of points in a mask.
pub fn mask_size(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}
