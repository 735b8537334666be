//! Discretized type space and discrete type densities.
//!
//! A buyer type is a vector of `J` willingness-to-pay values, one per quality
//! grade, drawn from a box `[lower_1, upper_1] x ... x [lower_J, upper_J]`.
//! The box is replaced by a regular grid with a common step `epsilon`, and a
//! continuous density is replaced by its normalized values on the grid.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Tolerance used when snapping floating-point ratios to integer counts.
const SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeSpaceError {
    #[error("box must have at least one dimension")]
    EmptyBox,
    #[error("box bounds have different lengths ({lower} lower, {upper} upper)")]
    BoundLength { lower: usize, upper: usize },
    #[error("degenerate box in dimension {dim}: upper {upper} <= lower {lower}")]
    Degenerate { dim: usize, lower: f64, upper: f64 },
    #[error("T must be >= 1")]
    ZeroIntervals,
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("point {point:?} lies outside the box")]
    OutsideBox { point: Vec<f64> },
    #[error("point {point:?} is not a grid point")]
    OffGrid { point: Vec<f64> },
    #[error("invalid distribution: {0}")]
    InvalidSpec(String),
    #[error("density evaluates to a non-finite value at {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("density is zero on every grid point; cannot normalize")]
    ZeroMass,
}

/// Axis-aligned support `prod_j [lower_j, upper_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TypeBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, TypeSpaceError> {
        if lower.len() != upper.len() {
            return Err(TypeSpaceError::BoundLength {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(TypeSpaceError::EmptyBox);
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(TypeSpaceError::Degenerate {
                    dim,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval `[lower, upper]` in each of `dims` dimensions.
    pub fn cube(dims: usize, lower: f64, upper: f64) -> Result<Self, TypeSpaceError> {
        Self::new(vec![lower; dims], vec![upper; dims])
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn range(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| x >= lo - SNAP && x <= hi + SNAP)
    }

    /// Box restricted to a single dimension.
    pub fn project(&self, dim: usize) -> TypeBox {
        TypeBox {
            lower: vec![self.lower[dim]],
            upper: vec![self.upper[dim]],
        }
    }
}

/// Regular grid over a [`TypeBox`] with a common step in every dimension.
///
/// Points are enumerated in row-major order of their per-dimension indices:
/// the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeGrid {
    type_box: TypeBox,
    intervals: usize,
    epsilon: f64,
    counts: Vec<usize>,
    strides: Vec<usize>,
    axes: Vec<Vec<f64>>,
    len: usize,
}

impl TypeGrid {
    /// Builds the grid with step `epsilon = min_j range_j / intervals`.
    pub fn new(type_box: TypeBox, intervals: usize) -> Result<Self, TypeSpaceError> {
        if intervals == 0 {
            return Err(TypeSpaceError::ZeroIntervals);
        }
        let dims = type_box.dims();
        let epsilon = (0..dims)
            .map(|d| type_box.range(d) / intervals as f64)
            .fold(f64::INFINITY, f64::min);
        let counts: Vec<usize> = (0..dims)
            .map(|d| (type_box.range(d) / epsilon + SNAP).floor() as usize + 1)
            .collect();
        let axes = (0..dims)
            .map(|d| {
                (0..counts[d])
                    .map(|k| type_box.lower[d] + k as f64 * epsilon)
                    .collect()
            })
            .collect();
        let mut strides = vec![1; dims];
        for d in (0..dims.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        let len = counts.iter().product();
        Ok(Self {
            type_box,
            intervals,
            epsilon,
            counts,
            strides,
            axes,
            len,
        })
    }

    pub fn type_box(&self) -> &TypeBox {
        &self.type_box
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    /// Number of grid coordinates along each dimension.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Coordinates along dimension `dim`.
    pub fn axis(&self, dim: usize) -> &[f64] {
        &self.axes[dim]
    }

    /// Value of coordinate `dim` of point `index`.
    #[inline]
    pub fn coord(&self, index: usize, dim: usize) -> f64 {
        self.axes[dim][(index / self.strides[dim]) % self.counts[dim]]
    }

    /// Per-dimension integer indices of a flat point index.
    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        (0..self.dims())
            .map(|d| (index / self.strides[d]) % self.counts[d])
            .collect()
    }

    /// Flat index of per-dimension integer indices, `None` if any is out of range.
    pub fn flat_index(&self, multi: &[isize]) -> Option<usize> {
        let mut index = 0;
        for (d, &k) in multi.iter().enumerate() {
            if k < 0 || k as usize >= self.counts[d] {
                return None;
            }
            index += k as usize * self.strides[d];
        }
        Some(index)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        (0..self.dims()).map(|d| self.coord(index, d)).collect()
    }

    /// Index of the grid point equal (up to rounding) to `point`.
    pub fn index_of(&self, point: &[f64]) -> Result<usize, TypeSpaceError> {
        if point.len() != self.dims() {
            return Err(TypeSpaceError::Dimension {
                got: point.len(),
                expected: self.dims(),
            });
        }
        let mut index = 0;
        for (d, &x) in point.iter().enumerate() {
            let steps = (x - self.type_box.lower[d]) / self.epsilon;
            let k = steps.round();
            if (steps - k).abs() > 1e-6 || k < 0.0 || k as usize >= self.counts[d] {
                return Err(TypeSpaceError::OffGrid {
                    point: point.to_vec(),
                });
            }
            index += k as usize * self.strides[d];
        }
        Ok(index)
    }

    /// Index of the componentwise-lowest grid point.
    pub fn lower_corner(&self) -> usize {
        0
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(|i| self.point(i))
    }
}

/// Continuous (unnormalized) type density.
///
/// Beta components act on the coordinate rescaled to `[0, 1]`. Truncated
/// normals are evaluated with the untruncated pdf; truncation is absorbed by
/// normalization over the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Uniform,
    /// Independent `Beta(a, b)` in every dimension.
    Beta { a: f64, b: f64 },
    /// Independent normals, one mean and standard deviation per dimension.
    TruncNormal { mean: Vec<f64>, stddev: Vec<f64> },
    /// Independent one-dimensional specs, one per dimension.
    Product(Vec<DistributionSpec>),
    /// `alpha * first + (1 - alpha) * second`.
    Mixture {
        alpha: f64,
        first: Box<DistributionSpec>,
        second: Box<DistributionSpec>,
    },
    /// Explicit nonnegative value on each point of `grid`.
    Table { grid: TypeGrid, values: Vec<f64> },
}

impl DistributionSpec {
    /// Truncated normal centred in the box with a quarter-range deviation.
    pub fn default_trunc_normal(type_box: &TypeBox) -> Self {
        let dims = type_box.dims();
        DistributionSpec::TruncNormal {
            mean: (0..dims)
                .map(|d| 0.5 * (type_box.lower()[d] + type_box.upper()[d]))
                .collect(),
            stddev: (0..dims).map(|d| type_box.range(d) / 4.0).collect(),
        }
    }

    /// Checks parameters against a box of the given dimension.
    pub fn validate(&self, dims: usize) -> Result<(), TypeSpaceError> {
        let invalid = |msg: String| Err(TypeSpaceError::InvalidSpec(msg));
        match self {
            DistributionSpec::Uniform => Ok(()),
            DistributionSpec::Beta { a, b } => {
                if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                    return invalid(format!("beta parameters must be positive, got a={a}, b={b}"));
                }
                Ok(())
            }
            DistributionSpec::TruncNormal { mean, stddev } => {
                if mean.len() != dims || stddev.len() != dims {
                    return invalid(format!(
                        "truncated normal needs {dims} means and deviations, got {} and {}",
                        mean.len(),
                        stddev.len()
                    ));
                }
                if stddev.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return invalid("standard deviations must be positive".into());
                }
                Ok(())
            }
            DistributionSpec::Product(parts) => {
                if parts.len() != dims {
                    return invalid(format!(
                        "product has {} components for {dims} dimensions",
                        parts.len()
                    ));
                }
                for part in parts {
                    if matches!(part, DistributionSpec::Table { .. }) {
                        return invalid("table densities cannot be product components".into());
                    }
                    part.validate(1)?;
                }
                Ok(())
            }
            DistributionSpec::Mixture {
                alpha,
                first,
                second,
            } => {
                if !(0.0..=1.0).contains(alpha) {
                    return invalid(format!("mixture weight must lie in [0, 1], got {alpha}"));
                }
                first.validate(dims)?;
                second.validate(dims)
            }
            DistributionSpec::Table { grid, values } => {
                if grid.dims() != dims {
                    return invalid("table grid has the wrong dimension".into());
                }
                if values.len() != grid.len() {
                    return invalid(format!(
                        "table has {} values for {} grid points",
                        values.len(),
                        grid.len()
                    ));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return invalid("table values must be finite and nonnegative".into());
                }
                if values.iter().all(|v| *v == 0.0) {
                    return invalid("table values are all zero".into());
                }
                Ok(())
            }
        }
    }

    /// Unnormalized density at `point`, which must lie in `type_box`.
    pub fn eval(&self, point: &[f64], type_box: &TypeBox) -> Result<f64, TypeSpaceError> {
        if point.len() != type_box.dims() {
            return Err(TypeSpaceError::Dimension {
                got: point.len(),
                expected: type_box.dims(),
            });
        }
        if !type_box.contains(point) {
            return Err(TypeSpaceError::OutsideBox {
                point: point.to_vec(),
            });
        }
        self.eval_unchecked(point, type_box)
    }

    fn eval_unchecked(&self, point: &[f64], type_box: &TypeBox) -> Result<f64, TypeSpaceError> {
        let rescaled = |d: usize| {
            ((point[d] - type_box.lower()[d]) / type_box.range(d)).clamp(0.0, 1.0)
        };
        Ok(match self {
            DistributionSpec::Uniform => 1.0,
            DistributionSpec::Beta { a, b } => (0..point.len())
                .map(|d| beta_pdf(rescaled(d), *a, *b))
                .product(),
            DistributionSpec::TruncNormal { mean, stddev } => (0..point.len())
                .map(|d| normal_pdf(point[d], mean[d], stddev[d]))
                .product(),
            DistributionSpec::Product(parts) => {
                let mut value = 1.0;
                for (d, part) in parts.iter().enumerate() {
                    value *= part.eval_unchecked(&point[d..d + 1], &type_box.project(d))?;
                }
                value
            }
            DistributionSpec::Mixture {
                alpha,
                first,
                second,
            } => {
                let mut value = 0.0;
                if *alpha > 0.0 {
                    value += alpha * first.eval_unchecked(point, type_box)?;
                }
                if *alpha < 1.0 {
                    value += (1.0 - alpha) * second.eval_unchecked(point, type_box)?;
                }
                value
            }
            DistributionSpec::Table { grid, values } => values[grid.index_of(point)?],
        })
    }
}

/// `Gamma(a+b) / (Gamma(a) Gamma(b)) x^(a-1) (1-x)^(b-1)` on `[0, 1]`.
pub fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    let log_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    log_norm.exp() * x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0)
}

fn normal_pdf(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    (-0.5 * z * z).exp() / (stddev * (2.0 * std::f64::consts::PI).sqrt())
}

/// Probability mass on the points of a [`TypeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    grid: TypeGrid,
    mass: Vec<f64>,
}

impl DiscreteDensity {
    /// Evaluates `spec` on every grid point and normalizes the values.
    pub fn discretize(spec: &DistributionSpec, grid: &TypeGrid) -> Result<Self, TypeSpaceError> {
        spec.validate(grid.dims())?;
        let mut raw = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let point = grid.point(i);
            let value = spec.eval(&point, grid.type_box())?;
            if !value.is_finite() || value < 0.0 {
                return Err(TypeSpaceError::NonFinite { point });
            }
            raw.push(value);
        }
        Self::from_weights(grid.clone(), raw)
    }

    /// Normalizes arbitrary nonnegative weights, one per grid point.
    pub fn from_weights(grid: TypeGrid, weights: Vec<f64>) -> Result<Self, TypeSpaceError> {
        if weights.len() != grid.len() {
            return Err(TypeSpaceError::InvalidSpec(format!(
                "{} weights for {} grid points",
                weights.len(),
                grid.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(TypeSpaceError::ZeroMass);
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { grid, mass })
    }

    pub fn grid(&self) -> &TypeGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    #[inline]
    pub fn at(&self, index: usize) -> f64 {
        self.mass[index]
    }
}
