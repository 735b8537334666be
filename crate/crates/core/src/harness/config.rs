//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! name = setting1
//! N = 2            # one or more buyer counts, comma separated
//! J = 2
//! lower = 2, 2
//! upper = 3, 3
//! costs = 0, 0
//! T = 20
//! dist.kind = uniform
//! ```
//!
//! Distributions nest through dotted keys: `dist.kind` is one of `uniform`,
//! `beta` (`dist.a`, `dist.b`), `truncnormal` (`dist.mean`, `dist.stddev`,
//! both optional), `product` (`dist.dim1.kind`, ..., one per grade),
//! `mixture` (`dist.alpha`, `dist.first.*`, `dist.second.*`) or `table`
//! (`dist.values`, one per grid point in grid order).
//!
//! Optional keys: `seed`, `output`, `ebm.resolution` (default `T`),
//! `ebm.samples`, `ebm.rule` (`exclusive_right` or `grade_price`) and
//! `solver.{violation_tol, lp_tol, inactive_slack, max_outer, max_inner, tau}`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::ebm::{EbmSearch, PaymentRule};
use crate::lpmodel::AuctionSetting;
use crate::solver::SolverConfig;
use crate::typespace::{DiscreteDensity, DistributionSpec, TypeBox, TypeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigFileError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigFileError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn semantic(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub buyers: Vec<usize>,
    pub qualities: usize,
    pub type_box: TypeBox,
    pub costs: Vec<f64>,
    pub distribution: DistributionSpec,
    pub intervals: usize,
    pub solver: SolverConfig,
    pub ebm: EbmSearch,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn grid(&self) -> TypeGrid {
        TypeGrid::new(self.type_box.clone(), self.intervals).expect("validated at parse time")
    }

    pub fn setting(&self, buyers: usize) -> Result<AuctionSetting, ConfigFileError> {
        let density = DiscreteDensity::discretize(&self.distribution, &self.grid())
            .map_err(|e| ConfigFileError::semantic(e.to_string()))?;
        AuctionSetting::new(buyers, self.costs.clone(), density)
            .map_err(|e| ConfigFileError::semantic(e.to_string()))
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    used: std::collections::BTreeSet<String>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let entry = self.map.get(key).cloned();
        if entry.is_some() {
            self.used.insert(key.to_string());
        }
        entry
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), ConfigFileError> {
        self.take(key)
            .ok_or_else(|| ConfigFileError::semantic(format!("missing required key `{key}`")))
    }
}

fn parse_f64(line: usize, key: &str, text: &str) -> Result<f64, ConfigFileError> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigFileError::at(line, format!("`{key}` expects a number, got `{text}`")))
}

fn parse_usize(line: usize, key: &str, text: &str) -> Result<usize, ConfigFileError> {
    text.trim()
        .parse::<usize>()
        .map_err(|_| ConfigFileError::at(line, format!("`{key}` expects a nonnegative integer, got `{text}`")))
}

fn parse_list<T>(
    line: usize,
    key: &str,
    text: &str,
    item: fn(usize, &str, &str) -> Result<T, ConfigFileError>,
) -> Result<Vec<T>, ConfigFileError> {
    text.split(',')
        .map(|part| item(line, key, part))
        .collect()
}

fn parse_dist(
    entries: &mut Entries,
    prefix: &str,
    dims: usize,
    type_box: &TypeBox,
    grid: &TypeGrid,
) -> Result<DistributionSpec, ConfigFileError> {
    let kind_key = format!("{prefix}.kind");
    let (line, kind) = entries.required(&kind_key)?;
    let number = |entries: &mut Entries, name: &str| -> Result<Option<f64>, ConfigFileError> {
        let key = format!("{prefix}.{name}");
        entries
            .take(&key)
            .map(|(l, v)| parse_f64(l, &key, &v))
            .transpose()
    };
    let list = |entries: &mut Entries, name: &str| -> Result<Option<Vec<f64>>, ConfigFileError> {
        let key = format!("{prefix}.{name}");
        entries
            .take(&key)
            .map(|(l, v)| parse_list(l, &key, &v, parse_f64))
            .transpose()
    };
    let spec = match kind.trim() {
        "uniform" => DistributionSpec::Uniform,
        "beta" => DistributionSpec::Beta {
            a: number(entries, "a")?.unwrap_or(1.0),
            b: number(entries, "b")?.unwrap_or(2.0),
        },
        "truncnormal" => {
            let DistributionSpec::TruncNormal { mean, stddev } =
                DistributionSpec::default_trunc_normal(type_box)
            else {
                unreachable!()
            };
            DistributionSpec::TruncNormal {
                mean: list(entries, "mean")?.unwrap_or(mean),
                stddev: list(entries, "stddev")?.unwrap_or(stddev),
            }
        }
        "product" => {
            let parts = (0..dims)
                .map(|d| {
                    parse_dist(
                        entries,
                        &format!("{prefix}.dim{}", d + 1),
                        1,
                        &type_box.project(d),
                        grid,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            DistributionSpec::Product(parts)
        }
        "mixture" => {
            let alpha_key = format!("{prefix}.alpha");
            let alpha = number(entries, "alpha")?
                .ok_or_else(|| ConfigFileError::semantic(format!("missing required key `{alpha_key}`")))?;
            DistributionSpec::Mixture {
                alpha,
                first: Box::new(parse_dist(entries, &format!("{prefix}.first"), dims, type_box, grid)?),
                second: Box::new(parse_dist(entries, &format!("{prefix}.second"), dims, type_box, grid)?),
            }
        }
        "table" => {
            let values = list(entries, "values")?
                .ok_or_else(|| ConfigFileError::semantic(format!("missing required key `{prefix}.values`")))?;
            DistributionSpec::Table {
                grid: grid.clone(),
                values,
            }
        }
        other => {
            return Err(ConfigFileError::at(
                line,
                format!("unknown distribution kind `{other}`"),
            ))
        }
    };
    spec.validate(dims)
        .map_err(|e| ConfigFileError::at(line, format!("`{kind_key}`: {e}")))?;
    Ok(spec)
}

/// Parses and validates a configuration, applying defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigFileError> {
    let mut map = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigFileError::at(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigFileError::at(line, "empty key"));
        }
        if map.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
            return Err(ConfigFileError::at(line, format!("duplicate key `{key}`")));
        }
    }
    let mut entries = Entries {
        map,
        used: Default::default(),
    };

    let name = entries
        .take("name")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "experiment".to_string());
    let (line, value) = entries.required("N")?;
    let buyers = parse_list(line, "N", &value, parse_usize)?;
    if buyers.iter().any(|&n| n == 0) {
        return Err(ConfigFileError::at(line, "N must be >= 1"));
    }
    let (line, value) = entries.required("J")?;
    let qualities = parse_usize(line, "J", &value)?;
    if qualities == 0 {
        return Err(ConfigFileError::at(line, "J must be >= 1"));
    }
    let (lower_line, value) = entries.required("lower")?;
    let lower = parse_list(lower_line, "lower", &value, parse_f64)?;
    let (upper_line, value) = entries.required("upper")?;
    let upper = parse_list(upper_line, "upper", &value, parse_f64)?;
    for (key, line, bounds) in [("lower", lower_line, &lower), ("upper", upper_line, &upper)] {
        if bounds.len() != qualities {
            return Err(ConfigFileError::at(
                line,
                format!("`{key}` has {} entries but J = {qualities}", bounds.len()),
            ));
        }
    }
    let type_box = TypeBox::new(lower, upper).map_err(|e| ConfigFileError::semantic(e.to_string()))?;
    let costs = match entries.take("costs") {
        Some((line, value)) => {
            let costs = parse_list(line, "costs", &value, parse_f64)?;
            if costs.len() != qualities {
                return Err(ConfigFileError::at(
                    line,
                    format!("`costs` has {} entries but J = {qualities}", costs.len()),
                ));
            }
            if costs.iter().any(|&c| c < 0.0) {
                return Err(ConfigFileError::at(line, "costs must be nonnegative"));
            }
            costs
        }
        None => vec![0.0; qualities],
    };
    let (line, value) = entries.required("T")?;
    let intervals = parse_usize(line, "T", &value)?;
    if intervals == 0 {
        return Err(ConfigFileError::at(line, "T must be ≥ 1"));
    }
    let grid = TypeGrid::new(type_box.clone(), intervals).map_err(|e| ConfigFileError::semantic(e.to_string()))?;
    let distribution = parse_dist(&mut entries, "dist", qualities, &type_box, &grid)?;

    let mut solver = SolverConfig::default();
    for (key, slot) in [
        ("solver.violation_tol", &mut solver.violation_tol),
        ("solver.lp_tol", &mut solver.lp_tol),
        ("solver.inactive_slack", &mut solver.inactive_slack),
        ("solver.tau", &mut solver.exclusion_tau),
    ] {
        if let Some((line, value)) = entries.take(key) {
            *slot = parse_f64(line, key, &value)?;
        }
    }
    for (key, slot) in [
        ("solver.max_outer", &mut solver.max_outer),
        ("solver.max_inner", &mut solver.max_inner),
    ] {
        if let Some((line, value)) = entries.take(key) {
            *slot = parse_usize(line, key, &value)?;
        }
    }
    solver
        .validate()
        .map_err(|e| ConfigFileError::semantic(e.to_string()))?;

    let mut ebm = EbmSearch {
        resolution: intervals,
        mc_samples: 200_000,
        seed: 1,
        rule: PaymentRule::ExclusiveRight,
    };
    if let Some((line, value)) = entries.take("ebm.rule") {
        ebm.rule = match value.as_str() {
            "exclusive_right" => PaymentRule::ExclusiveRight,
            "grade_price" => PaymentRule::GradePrice,
            other => {
                return Err(ConfigFileError::at(
                    line,
                    format!("`ebm.rule` must be exclusive_right or grade_price, got `{other}`"),
                ))
            }
        };
    }
    if let Some((line, value)) = entries.take("ebm.resolution") {
        ebm.resolution = parse_usize(line, "ebm.resolution", &value)?;
        if ebm.resolution == 0 {
            return Err(ConfigFileError::at(line, "ebm.resolution must be >= 1"));
        }
    }
    if let Some((line, value)) = entries.take("ebm.samples") {
        ebm.mc_samples = parse_usize(line, "ebm.samples", &value)?;
        if ebm.mc_samples == 0 {
            return Err(ConfigFileError::at(line, "ebm.samples must be >= 1"));
        }
    }
    if let Some((line, value)) = entries.take("seed") {
        ebm.seed = value
            .parse::<u64>()
            .map_err(|_| ConfigFileError::at(line, format!("`seed` expects an integer, got `{value}`")))?;
    }
    let output = entries.take("output").map(|(_, v)| PathBuf::from(v));

    if let Some((key, (line, _))) = entries
        .map
        .iter()
        .filter(|(k, _)| !entries.used.contains(*k))
        .min_by_key(|(_, (line, _))| *line)
    {
        return Err(ConfigFileError::at(*line, format!("unknown key `{key}`")));
    }

    Ok(ExperimentConfig {
        name,
        buyers,
        qualities,
        type_box,
        costs,
        distribution,
        intervals,
        solver,
        ebm,
        output,
    })
}
