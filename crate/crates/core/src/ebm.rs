//! Exclusive buyer mechanisms and the one-dimensional Myerson benchmark.
//!
//! Under a price menu `p`, each buyer's index is `beta = max_j (v_j - p_j)`.
//! The highest nonnegative index wins the exclusive right to buy. What the
//! winner pays depends on the [`PaymentRule`]. Revenue is reported net of
//! the grade's production cost.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::lpmodel::AuctionSetting;
use crate::typespace::{DistributionSpec, TypeBox, TypeSpaceError};

/// Largest `n^N` the exact evaluator will enumerate.
pub const MAX_ENUMERATION: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EbmError {
    #[error("exact enumeration of {size:e} type profiles exceeds the limit of {MAX_ENUMERATION:e}")]
    TooLarge { size: f64 },
    #[error("menu has {got} prices for {expected} grades")]
    MenuLength { got: usize, expected: usize },
    #[error("at least one Monte Carlo sample is required")]
    NoSamples,
    #[error("price grid resolution must be >= 1")]
    ZeroResolution,
    #[error("benchmark needs a one-dimensional distribution")]
    NotOneDimensional,
    #[error("virtual value is not monotone near {at}; distribution is not regular")]
    Irregular { at: f64 },
    #[error(transparent)]
    Density(#[from] TypeSpaceError),
}

/// One price per quality grade. Prices above the top of the support shut a
/// grade off.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMenu(pub Vec<f64>);

impl PriceMenu {
    pub fn prices(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmOutcome {
    /// Expected payments net of production cost.
    pub revenue: f64,
    /// Expected gross payments.
    pub payments: f64,
    pub sale_probability: f64,
    /// Probability that the object is sold in each grade.
    pub grade_shares: Vec<f64>,
    /// Standard error of `revenue`; zero for exact evaluation.
    pub std_error: f64,
}

/// How the winner of the exclusive right pays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaymentRule {
    /// Second-price auction for exclusivity: the winner takes its best grade
    /// `j` and pays `p_j` plus the highest rival `beta` (if positive).
    #[default]
    ExclusiveRight,
    /// Grade `j` costs `max(p_j, max_{l != i} v_j^l)`; the winner picks the
    /// grade with the largest surplus at those prices.
    GradePrice,
}

/// Outcome of one auction round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub winner: usize,
    pub grade: usize,
    pub price: f64,
}

/// Plays one round on explicit types (`types[i][j]` is buyer `i`'s value for
/// grade `j`). Ties go to the lowest buyer index, then the lowest grade.
pub fn play_round(types: &[Vec<f64>], menu: &PriceMenu, rule: PaymentRule) -> Option<Trade> {
    let grades = menu.prices().len();
    let flat: Vec<f64> = types.iter().flatten().copied().collect();
    let tuple: Vec<usize> = (0..types.len()).collect();
    let betas: Vec<f64> = types.iter().map(|v| beta(v, menu.prices())).collect();
    play(&flat, grades, &tuple, &betas, menu.prices(), rule)
}

fn beta(values: &[f64], prices: &[f64]) -> f64 {
    values
        .iter()
        .zip(prices)
        .map(|(v, p)| v - p)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `coords` is a flat point-major value table, `tuple` the point of each
/// buyer and `betas` the per-point index.
#[inline]
fn play(
    coords: &[f64],
    grades: usize,
    tuple: &[usize],
    betas: &[f64],
    prices: &[f64],
    rule: PaymentRule,
) -> Option<Trade> {
    let mut winner = 0;
    for i in 1..tuple.len() {
        if betas[tuple[i]] > betas[tuple[winner]] {
            winner = i;
        }
    }
    if betas[tuple[winner]] < 0.0 {
        return None;
    }
    let mine = &coords[tuple[winner] * grades..(tuple[winner] + 1) * grades];
    if rule == PaymentRule::ExclusiveRight {
        let rival = tuple
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != winner)
            .map(|(_, &v)| betas[v])
            .fold(0.0, f64::max);
        let mut grade = 0;
        for j in 1..grades {
            if mine[j] - prices[j] > mine[grade] - prices[grade] {
                grade = j;
            }
        }
        return Some(Trade {
            winner,
            grade,
            price: prices[grade] + rival,
        });
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for j in 0..grades {
        let mut price = prices[j];
        for (i, &other) in tuple.iter().enumerate() {
            if i != winner {
                price = price.max(coords[other * grades + j]);
            }
        }
        let surplus = mine[j] - price;
        if best.map_or(true, |(_, s, _)| surplus > s) {
            best = Some((j, surplus, price));
        }
    }
    match best {
        Some((grade, surplus, price)) if surplus >= 0.0 => Some(Trade {
            winner,
            grade,
            price,
        }),
        _ => None,
    }
}

struct Table {
    coords: Vec<f64>,
    mass: Vec<f64>,
    grades: usize,
}

impl Table {
    fn new(setting: &AuctionSetting) -> Self {
        let grid = setting.grid();
        let grades = setting.qualities();
        let coords = (0..grid.len())
            .flat_map(|v| (0..grades).map(move |j| grid.coord(v, j)))
            .collect();
        Self {
            coords,
            mass: setting.density().mass().to_vec(),
            grades,
        }
    }

    fn betas(&self, prices: &[f64]) -> Vec<f64> {
        self.coords
            .chunks(self.grades)
            .map(|v| beta(v, prices))
            .collect()
    }
}

#[derive(Clone)]
struct Accumulator {
    revenue: f64,
    revenue_sq: f64,
    payments: f64,
    sold: f64,
    shares: Vec<f64>,
}

impl Accumulator {
    fn new(grades: usize) -> Self {
        Self {
            revenue: 0.0,
            revenue_sq: 0.0,
            payments: 0.0,
            sold: 0.0,
            shares: vec![0.0; grades],
        }
    }

    fn record(&mut self, weight: f64, trade: Option<Trade>, costs: &[f64]) {
        if let Some(t) = trade {
            let profit = t.price - costs[t.grade];
            self.revenue += weight * profit;
            self.revenue_sq += weight * profit * profit;
            self.payments += weight * t.price;
            self.sold += weight;
            self.shares[t.grade] += weight;
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.revenue += other.revenue;
        self.revenue_sq += other.revenue_sq;
        self.payments += other.payments;
        self.sold += other.sold;
        for (a, b) in self.shares.iter_mut().zip(&other.shares) {
            *a += b;
        }
    }
}

fn check_menu(setting: &AuctionSetting, menu: &PriceMenu) -> Result<(), EbmError> {
    if menu.prices().len() != setting.qualities() {
        return Err(EbmError::MenuLength {
            got: menu.prices().len(),
            expected: setting.qualities(),
        });
    }
    Ok(())
}

/// Number of type profiles the exact evaluator would enumerate.
pub fn enumeration_size(setting: &AuctionSetting) -> f64 {
    (setting.grid().len() as f64).powi(setting.buyers() as i32)
}

/// Expected outcome by enumerating every profile of grid types.
pub fn ebm_revenue_exact(
    setting: &AuctionSetting,
    menu: &PriceMenu,
    rule: PaymentRule,
) -> Result<EbmOutcome, EbmError> {
    check_menu(setting, menu)?;
    let size = enumeration_size(setting);
    if size > MAX_ENUMERATION {
        return Err(EbmError::TooLarge { size });
    }
    Ok(exact_with_table(setting, &Table::new(setting), menu, rule))
}

fn exact_with_table(setting: &AuctionSetting, table: &Table, menu: &PriceMenu, rule: PaymentRule) -> EbmOutcome {
    let support: Vec<usize> = (0..table.mass.len()).filter(|&v| table.mass[v] > 0.0).collect();
    let betas = table.betas(menu.prices());
    let buyers = setting.buyers();
    let partials: Vec<Accumulator> = support
        .par_iter()
        .map(|&first| {
            let mut acc = Accumulator::new(table.grades);
            let mut tuple = vec![support[0]; buyers];
            tuple[0] = first;
            let mut digits = vec![0usize; buyers];
            loop {
                let weight: f64 = tuple.iter().map(|&v| table.mass[v]).product();
                let trade = play(&table.coords, table.grades, &tuple, &betas, menu.prices(), rule);
                acc.record(weight, trade, setting.costs());
                // odometer over buyers 1..N
                let mut pos = buyers;
                loop {
                    if pos == 1 {
                        return acc;
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < support.len() {
                        tuple[pos] = support[digits[pos]];
                        break;
                    }
                    digits[pos] = 0;
                    tuple[pos] = support[0];
                }
            }
        })
        .collect();
    let mut total = Accumulator::new(table.grades);
    for p in &partials {
        total.merge(p);
    }
    EbmOutcome {
        revenue: total.revenue,
        payments: total.payments,
        sale_probability: total.sold,
        grade_shares: total.shares,
        std_error: 0.0,
    }
}

/// Draws `samples` profiles of `N` i.i.d. grid types.
fn draw_profiles(setting: &AuctionSetting, samples: usize, seed: u64) -> Vec<usize> {
    let sampler = WeightedIndex::new(setting.density().mass()).expect("density has positive mass");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples * setting.buyers())
        .map(|_| sampler.sample(&mut rng))
        .collect()
}

fn mc_with_profiles(
    setting: &AuctionSetting,
    table: &Table,
    menu: &PriceMenu,
    rule: PaymentRule,
    profiles: &[usize],
) -> EbmOutcome {
    let buyers = setting.buyers();
    let samples = profiles.len() / buyers;
    let betas = table.betas(menu.prices());
    let partials: Vec<Accumulator> = profiles
        .par_chunks(buyers * 4096)
        .map(|chunk| {
            let mut acc = Accumulator::new(table.grades);
            for tuple in chunk.chunks(buyers) {
                let trade = play(&table.coords, table.grades, tuple, &betas, menu.prices(), rule);
                acc.record(1.0, trade, setting.costs());
            }
            acc
        })
        .collect();
    let mut total = Accumulator::new(table.grades);
    for p in &partials {
        total.merge(p);
    }
    let s = samples as f64;
    let mean = total.revenue / s;
    let variance = if samples > 1 {
        ((total.revenue_sq - s * mean * mean) / (s - 1.0)).max(0.0)
    } else {
        0.0
    };
    EbmOutcome {
        revenue: mean,
        payments: total.payments / s,
        sale_probability: total.sold / s,
        grade_shares: total.shares.iter().map(|x| x / s).collect(),
        std_error: (variance / s).sqrt(),
    }
}

/// Monte Carlo estimate from i.i.d. draws of the discrete density.
pub fn ebm_revenue_mc(
    setting: &AuctionSetting,
    menu: &PriceMenu,
    rule: PaymentRule,
    samples: usize,
    seed: u64,
) -> Result<EbmOutcome, EbmError> {
    check_menu(setting, menu)?;
    if samples == 0 {
        return Err(EbmError::NoSamples);
    }
    let profiles = draw_profiles(setting, samples, seed);
    Ok(mc_with_profiles(setting, &Table::new(setting), menu, rule, &profiles))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbmSearch {
    /// Steps per grade between the bottom and top of the support.
    pub resolution: usize,
    /// Draws used when the exact evaluator would be too large.
    pub mc_samples: usize,
    pub seed: u64,
    pub rule: PaymentRule,
}

/// Candidate prices for one grade: the support on a `resolution` step grid
/// plus a sentinel above the support that shuts the grade off.
pub fn price_candidates(type_box: &TypeBox, grade: usize, resolution: usize) -> Vec<f64> {
    let lo = type_box.lower()[grade];
    let hi = type_box.upper()[grade];
    let step = (hi - lo) / resolution as f64;
    let mut prices: Vec<f64> = (0..=resolution).map(|k| lo + k as f64 * step).collect();
    prices.push(hi + 1.0);
    prices
}

/// Exhaustive search over the Cartesian price grid. Menus are visited in
/// lexicographic order and only a strictly better revenue replaces the
/// incumbent.
pub fn optimize_ebm(setting: &AuctionSetting, search: &EbmSearch) -> Result<(PriceMenu, EbmOutcome), EbmError> {
    if search.resolution == 0 {
        return Err(EbmError::ZeroResolution);
    }
    let grades = setting.qualities();
    let axes: Vec<Vec<f64>> = (0..grades)
        .map(|j| price_candidates(setting.grid().type_box(), j, search.resolution))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let menus: Vec<PriceMenu> = (0..total)
        .map(|mut k| {
            let mut prices = vec![0.0; grades];
            for j in (0..grades).rev() {
                prices[j] = axes[j][k % axes[j].len()];
                k /= axes[j].len();
            }
            PriceMenu(prices)
        })
        .collect();

    let table = Table::new(setting);
    let outcomes: Vec<EbmOutcome> = if enumeration_size(setting) <= MAX_ENUMERATION {
        menus
            .par_iter()
            .map(|m| exact_with_table(setting, &table, m, search.rule))
            .collect()
    } else {
        if search.mc_samples == 0 {
            return Err(EbmError::NoSamples);
        }
        let profiles = draw_profiles(setting, search.mc_samples, search.seed);
        menus
            .par_iter()
            .map(|m| mc_with_profiles(setting, &table, m, search.rule, &profiles))
            .collect()
    };

    let mut best = 0;
    for (k, outcome) in outcomes.iter().enumerate() {
        if outcome.revenue > outcomes[best].revenue {
            best = k;
        }
    }
    Ok((menus[best].clone(), outcomes[best].clone()))
}

/// Optimal expected profit of a single grade sold to `buyers` i.i.d. buyers
/// with a continuous regular density on `[lower, upper]` and unit cost
/// `cost`: `E[max_i (psi(v_i) - c)^+]` with `psi(v) = v - (1 - F(v)) / f(v)`,
/// integrated numerically. This is the revenue of a second-price auction
/// with reserve `psi^{-1}(c)`.
pub fn myerson_oracle(
    buyers: usize,
    dist: &DistributionSpec,
    lower: f64,
    upper: f64,
    cost: f64,
) -> Result<f64, EbmError> {
    const STEPS: usize = 200_000;
    let support = TypeBox::new(vec![lower], vec![upper])?;
    dist.validate(1).map_err(|_| EbmError::NotOneDimensional)?;
    let h = (upper - lower) / STEPS as f64;
    let xs: Vec<f64> = (0..=STEPS).map(|i| lower + i as f64 * h).collect();
    let mut pdf = Vec::with_capacity(xs.len());
    for &x in &xs {
        pdf.push(dist.eval(&[x.min(upper)], &support)?);
    }
    // trapezoid CDF, then normalize
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * h * (pdf[i - 1] + pdf[i]);
    }
    let norm = cdf[STEPS];
    if !(norm > 0.0) {
        return Err(TypeSpaceError::ZeroMass.into());
    }
    for i in 0..xs.len() {
        pdf[i] /= norm;
        cdf[i] = (cdf[i] / norm).min(1.0);
    }
    let psi: Vec<Option<f64>> = (0..xs.len())
        .map(|i| {
            if pdf[i] > 0.0 {
                Some(xs[i] - (1.0 - cdf[i]) / pdf[i])
            } else if cdf[i] >= 1.0 {
                Some(xs[i])
            } else {
                None
            }
        })
        .collect();
    let mut previous: Option<f64> = None;
    for (i, value) in psi.iter().enumerate() {
        if let Some(v) = *value {
            if let Some(p) = previous {
                if v < p - 1e-6 {
                    return Err(EbmError::Irregular { at: xs[i] });
                }
            }
            previous = Some(v);
        }
    }
    let n = buyers as i32;
    let integrand: Vec<f64> = (0..xs.len())
        .map(|i| match psi[i] {
            Some(v) if v > cost => (v - cost) * buyers as f64 * cdf[i].powi(n - 1) * pdf[i],
            _ => 0.0,
        })
        .collect();
    Ok(integrand
        .windows(2)
        .map(|w| 0.5 * h * (w[0] + w[1]))
        .sum())
}
