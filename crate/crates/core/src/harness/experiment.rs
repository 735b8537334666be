//! Runs configured experiments and writes their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigFileError, ExperimentConfig};
use super::output::{emit_heatmap, fmt_num, is_lower_rectangle, mask_size, masks_fuzzy_equal, solution_csv};
use crate::ebm::{enumeration_size, optimize_ebm, EbmError, EbmOutcome, PaymentRule, PriceMenu, MAX_ENUMERATION};
use crate::solver::{exclusion_region, solve_optimal_auction, MechanismSolution, SolveError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{name}, N={buyers}: {source}")]
    Solve {
        name: String,
        buyers: usize,
        source: SolveError,
    },
    #[error("{name}, N={buyers}: {source}")]
    Ebm {
        name: String,
        buyers: usize,
        source: EbmError,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Pgm,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn pgm(self) -> bool {
        matches!(self, OutputFormat::Pgm | OutputFormat::Both)
    }
}

/// Which parts of an experiment to run and where to write them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub optimal: bool,
    pub ebm: bool,
    /// Falls back to the config's `output` key; nothing is written if both
    /// are absent.
    pub out_dir: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            optimal: true,
            ebm: true,
            out_dir: None,
            format: OutputFormat::Both,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalRecord {
    pub solution: MechanismSolution,
    pub mask: Vec<bool>,
    pub rectangular: bool,
    /// Set when the solver stopped at an iteration limit; the solution is
    /// then the uncertified incumbent.
    pub limit: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EbmRecord {
    pub rule: PaymentRule,
    pub menu: PriceMenu,
    pub outcome: EbmOutcome,
    pub exact: bool,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub buyers: usize,
    pub optimal: Option<OptimalRecord>,
    pub ebm: Option<EbmRecord>,
}

impl RunRecord {
    /// `(total - ebm) / total` when both are known and `total > 0`.
    pub fn gap(&self) -> Option<f64> {
        let total = self.optimal.as_ref()?.solution.total_revenue;
        let ebm = self.ebm.as_ref()?.outcome.revenue;
        (total > 0.0).then(|| (total - ebm) / total)
    }

    pub fn certified(&self) -> bool {
        self.optimal.as_ref().map_or(true, |o| o.solution.certified)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub intervals: usize,
    pub qualities: usize,
    pub records: Vec<RunRecord>,
    /// Exact equality of every exclusion mask, when at least two exist.
    pub masks_identical: Option<bool>,
    /// Equality up to one grid cell.
    pub masks_fuzzy: Option<bool>,
}

impl RunReport {
    pub fn all_certified(&self) -> bool {
        self.records.iter().all(RunRecord::certified)
    }

    pub fn record(&self, buyers: usize) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.buyers == buyers)
    }

    /// One-line verdict on whether exclusion is the same for every N.
    pub fn mask_verdict(&self) -> Option<String> {
        let identical = self.masks_identical?;
        let all_empty = self
            .records
            .iter()
            .filter_map(|r| r.optimal.as_ref())
            .all(|o| mask_size(&o.mask) == 0);
        Some(match (identical, all_empty, self.masks_fuzzy == Some(true)) {
            (true, true, _) => "invariant across N: yes (all empty)".to_string(),
            (true, false, _) => "invariant across N: yes (masks identical)".to_string(),
            (false, _, true) => "invariant across N: no (masks differ, but agree within one grid cell)".to_string(),
            (false, _, false) => "invariant across N: no (masks differ)".to_string(),
        })
    }

    /// Summary table, one row per N.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "N,objective,total_revenue,certified,ebm_revenue,gap,excluded_points,rectangular\n",
        );
        for r in &self.records {
            let opt = r.optimal.as_ref();
            let fields = [
                r.buyers.to_string(),
                opt.map_or(String::new(), |o| fmt_num(o.solution.objective)),
                opt.map_or(String::new(), |o| fmt_num(o.solution.total_revenue)),
                opt.map_or(String::new(), |o| o.solution.certified.to_string()),
                r.ebm.as_ref().map_or(String::new(), |e| fmt_num(e.outcome.revenue)),
                r.gap().map_or(String::new(), fmt_num),
                opt.map_or(String::new(), |o| mask_size(&o.mask).to_string()),
                opt.map_or(String::new(), |o| o.rectangular.to_string()),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Human-readable summary including timings and the cross-N verdict.
    pub fn summary_text(&self) -> String {
        let mut out = format!("experiment {} (J={}, T={})\n", self.name, self.qualities, self.intervals);
        for r in &self.records {
            out.push('\n');
            out.push_str(&record_text(&self.name, self.intervals, r));
        }
        if let Some(verdict) = self.mask_verdict() {
            let _ = writeln!(out, "\nexclusion masks: {verdict}");
            let _ = writeln!(
                out,
                "  exact equality: {}; within one cell: {}",
                yes_no(self.masks_identical == Some(true)),
                yes_no(self.masks_fuzzy == Some(true))
            );
        }
        out
    }
}

fn rule_name(rule: PaymentRule) -> &'static str {
    match rule {
        PaymentRule::ExclusiveRight => "exclusive_right",
        PaymentRule::GradePrice => "grade_price",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn record_csv(name: &str, intervals: usize, qualities: usize, r: &RunRecord) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("name".into(), name.into()),
        ("N".into(), r.buyers.to_string()),
        ("J".into(), qualities.to_string()),
        ("T".into(), intervals.to_string()),
    ];
    if let Some(o) = &r.optimal {
        let d = &o.solution.diagnostics;
        rows.extend([
            ("objective".into(), fmt_num(o.solution.objective)),
            ("total_revenue".into(), fmt_num(o.solution.total_revenue)),
            ("certified".into(), o.solution.certified.to_string()),
            ("outer_iterations".into(), d.outer_iterations.to_string()),
            ("inner_iterations".into(), d.inner_iterations.to_string()),
            ("lp_solves".into(), d.lp_solves.to_string()),
            ("cuts_added".into(), d.cuts_added.to_string()),
            ("cuts_removed".into(), d.cuts_removed.to_string()),
            ("final_pool_size".into(), d.final_pool_size.to_string()),
            ("final_region_level".into(), d.final_region_level.to_string()),
            ("excluded_points".into(), mask_size(&o.mask).to_string()),
            ("exclusion_rectangular".into(), o.rectangular.to_string()),
        ]);
    }
    if let Some(e) = &r.ebm {
        let prices: Vec<String> = e.menu.prices().iter().map(|&p| fmt_num(p)).collect();
        rows.extend([
            ("ebm_prices".into(), prices.join(";")),
            ("ebm_rule".into(), rule_name(e.rule).into()),
            ("ebm_revenue".into(), fmt_num(e.outcome.revenue)),
            ("ebm_sale_probability".into(), fmt_num(e.outcome.sale_probability)),
            ("ebm_method".into(), if e.exact { "exact" } else { "monte_carlo" }.into()),
            ("ebm_std_error".into(), fmt_num(e.outcome.std_error)),
        ]);
    }
    if let Some(gap) = r.gap() {
        rows.push(("gap".into(), fmt_num(gap)));
    }
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn record_text(name: &str, intervals: usize, r: &RunRecord) -> String {
    let mut out = format!("{name}, N={}, T={intervals}\n", r.buyers);
    if let Some(o) = &r.optimal {
        let s = &o.solution;
        let d = &s.diagnostics;
        let _ = writeln!(out, "  optimal per-buyer profit: {}", fmt_num(s.objective));
        let _ = writeln!(out, "  optimal total revenue:    {}", fmt_num(s.total_revenue));
        let _ = writeln!(out, "  certified:                {}", yes_no(s.certified));
        if let Some(reason) = &o.limit {
            let _ = writeln!(out, "  stopped early:            {reason}");
        }
        let _ = writeln!(
            out,
            "  iterations:               {} outer, {} inner, {} LP solves",
            d.outer_iterations, d.inner_iterations, d.lp_solves
        );
        let _ = writeln!(
            out,
            "  cuts:                     {} added, {} removed, {} in final pool, final L={}",
            d.cuts_added, d.cuts_removed, d.final_pool_size, d.final_region_level
        );
        let _ = writeln!(out, "  wall time:                {:.3} s", d.wall_time.as_secs_f64());
        let _ = writeln!(
            out,
            "  exclusion region:         {} points{}",
            mask_size(&o.mask),
            match (mask_size(&o.mask), o.rectangular) {
                (0, _) => "",
                (_, true) => " (lower-left rectangle)",
                (_, false) => " (not a rectangle)",
            }
        );
    }
    if let Some(e) = &r.ebm {
        let prices: Vec<String> = e.menu.prices().iter().map(|&p| fmt_num(p)).collect();
        let _ = writeln!(out, "  EBM prices:               {} ({})", prices.join(", "), rule_name(e.rule));
        let _ = writeln!(
            out,
            "  EBM revenue:              {}{}",
            fmt_num(e.outcome.revenue),
            if e.exact {
                " (exact)".to_string()
            } else {
                format!(" (Monte Carlo, s.e. {})", fmt_num(e.outcome.std_error))
            }
        );
    }
    if let Some(gap) = r.gap() {
        let pct = format!("{:.4}", 100.0 * gap);
        let pct = if pct == "-0.0000" { &pct[1..] } else { &pct };
        let _ = writeln!(out, "  relative gap:             {pct}%");
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_one(config: &ExperimentConfig, buyers: usize, options: &RunOptions) -> Result<RunRecord, HarnessError> {
    let setting = config.setting(buyers)?;
    let optimal = if options.optimal {
        let (solution, limit) = match solve_optimal_auction(&setting, &config.solver) {
            Ok(s) => (s, None),
            Err(SolveError::IterationLimit { reason, incumbent }) => (*incumbent, Some(reason)),
            Err(source) => {
                return Err(HarnessError::Solve {
                    name: config.name.clone(),
                    buyers,
                    source,
                })
            }
        };
        let mask = exclusion_region(&solution, config.solver.exclusion_tau);
        let rectangular = is_lower_rectangle(setting.grid(), &mask);
        Some(OptimalRecord {
            solution,
            mask,
            rectangular,
            limit,
        })
    } else {
        None
    };
    let ebm = if options.ebm {
        let (menu, outcome) = optimize_ebm(&setting, &config.ebm).map_err(|source| HarnessError::Ebm {
            name: config.name.clone(),
            buyers,
            source,
        })?;
        Some(EbmRecord {
            rule: config.ebm.rule,
            menu,
            outcome,
            exact: enumeration_size(&setting) <= MAX_ENUMERATION,
        })
    } else {
        None
    };
    Ok(RunRecord { buyers, optimal, ebm })
}

fn write_record(
    config: &ExperimentConfig,
    record: &RunRecord,
    dir: &Path,
    format: OutputFormat,
) -> Result<(), HarnessError> {
    create_dir(dir)?;
    if let Some(o) = &record.optimal {
        let s = &o.solution;
        if format.csv() {
            write(&dir.join("solution.csv"), &solution_csv(s, &o.mask))?;
        }
        let grid = s.setting.grid();
        if format.pgm() && grid.dims() == 2 {
            let heatmap = |values: &[f64], file: String| {
                let path = dir.join(file);
                emit_heatmap(grid, values, &path).map_err(|source| HarnessError::Io { path, source })
            };
            for j in 0..s.qualities() {
                let plane: Vec<f64> = (0..grid.len()).map(|v| s.q_at(v, j)).collect();
                heatmap(&plane, format!("Q{}.pgm", j + 1))?;
            }
            let excluded: Vec<f64> = o.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            heatmap(&excluded, "exclusion.pgm".to_string())?;
        }
    }
    write(
        &dir.join("report.csv"),
        &record_csv(&config.name, config.intervals, config.qualities, record),
    )?;
    write(&dir.join("report.txt"), &record_text(&config.name, config.intervals, record))?;
    Ok(())
}

/// Runs every N in the config, compares exclusion masks across N and
/// writes artifacts to `out/N{n}/` plus a summary in `out/`.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport, HarnessError> {
    let records = config
        .buyers
        .par_iter()
        .map(|&n| run_one(config, n, options))
        .collect::<Result<Vec<_>, _>>()?;

    let masks: Vec<&[bool]> = records
        .iter()
        .filter_map(|r| r.optimal.as_ref().map(|o| o.mask.as_slice()))
        .collect();
    let grid = config.grid();
    let (masks_identical, masks_fuzzy) = if masks.len() >= 2 {
        (
            Some(masks.windows(2).all(|w| w[0] == w[1])),
            Some(masks.windows(2).all(|w| masks_fuzzy_equal(&grid, w[0], w[1]))),
        )
    } else {
        (None, None)
    };
    let report = RunReport {
        name: config.name.clone(),
        intervals: config.intervals,
        qualities: config.qualities,
        records,
        masks_identical,
        masks_fuzzy,
    };

    if let Some(out) = options.out_dir.as_ref().or(config.output.as_ref()) {
        create_dir(out)?;
        for r in &report.records {
            write_record(config, r, &out.join(format!("N{}", r.buyers)), options.format)?;
        }
        write(&out.join("report.csv"), &report.summary_csv())?;
        write(&out.join("report.txt"), &report.summary_text())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    const TINY: &str = "\
name = tiny
N = 1, 2
J = 2
lower = 0, 0
upper = 1, 1
T = 2
dist.kind = uniform
";

    #[test]
    fn gap_matches_fields() {
        let cfg = parse_config(TINY).unwrap();
        let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert!(report.all_certified());
        for r in &report.records {
            let total = r.optimal.as_ref().unwrap().solution.total_revenue;
            let ebm = r.ebm.as_ref().unwrap().outcome.revenue;
            assert!((r.gap().unwrap() - (total - ebm) / total).abs() < 1e-12);
            assert!(ebm <= total + 1e-7);
        }
        assert!(report.masks_identical.is_some());
        assert!(report.mask_verdict().unwrap().starts_with("invariant across N"));
    }

    #[test]
    fn writes_artifacts() {
        let cfg = parse_config(TINY).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let options = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        run_experiment(&cfg, &options).unwrap();
        for n in ["N1", "N2"] {
            for f in ["solution.csv", "Q1.pgm", "Q2.pgm", "exclusion.pgm", "report.txt", "report.csv"] {
                assert!(dir.path().join(n).join(f).is_file(), "{n}/{f}");
            }
            let csv = fs::read_to_string(dir.path().join(n).join("solution.csv")).unwrap();
            assert_eq!(csv.lines().count(), 1 + 9);
            assert!(csv.starts_with("v_1,v_2,Q_1,Q_2,U,M,excluded\n"));
        }
        assert!(dir.path().join("report.csv").is_file());
        let csv_only = RunOptions {
            out_dir: Some(dir.path().join("csv")),
            format: OutputFormat::Csv,
            ..RunOptions::default()
        };
        run_experiment(&cfg, &csv_only).unwrap();
        assert!(!dir.path().join("csv/N1/Q1.pgm").exists());
        assert!(dir.path().join("csv/N1/solution.csv").exists());
    }

    #[test]
    fn ebm_only() {
        let cfg = parse_config(TINY).unwrap();
        let options = RunOptions {
            optimal: false,
            ..RunOptions::default()
        };
        let report = run_experiment(&cfg, &options).unwrap();
        assert!(report.records.iter().all(|r| r.optimal.is_none() && r.gap().is_none()));
        assert_eq!(report.masks_identical, None);
    }
}
