//! Numerical dc analysis, one-sided derivatives, second-derivative measures
//! and the companion speed measure `s'_+ dm`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::{
    BoundaryBehavior, DeclaredBoundary, DiffusionModel, ModelError, ScaleFunction, Side, SpeedMeasure,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularityError {
    #[error("difference quotients at {0} oscillate without a trend")]
    NotConverged(f64),
    #[error("function is not dc on [{0}, {1}]")]
    NotDc(f64, f64),
    #[error("need at least {0} grid points")]
    GridTooSmall(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    Value(f64),
    BlowUp,
}

impl Derivative {
    pub fn value(self) -> Option<f64> {
        match self {
            Derivative::Value(v) => Some(v),
            Derivative::BlowUp => None,
        }
    }
}

pub const DERIVATIVE_HALVINGS: usize = 20;
/// Quotients beyond this magnitude count as a blow-up outright.
pub const DERIVATIVE_CAP: f64 = 1e12;
const DERIVATIVE_TOL: f64 = 1e-5;

/// One-sided derivative of `g` at `x` from difference quotients over
/// `h = h0 2^-k`, `h0 = 1e-2 max(1, |x|)`, k = 0..=20, extrapolated with
/// first-order Richardson steps.
pub fn one_sided_derivative<G: Fn(f64) -> f64>(g: G, x: f64, side: DerivativeSide) -> Result<Derivative, RegularityError> {
    let h0 = 1e-2 * x.abs().max(1.0);
    let gx = g(x);
    let q: Vec<f64> = (0..=DERIVATIVE_HALVINGS)
        .map(|k| {
            let h = h0 * (-(k as f64)).exp2();
            match side {
                DerivativeSide::Right => (g(x + h) - gx) / h,
                DerivativeSide::Left => (gx - g(x - h)) / h,
            }
        })
        .collect();
    let n = q.len();
    if q.iter().any(|v| !v.is_finite()) || q[n - 1].abs() > DERIVATIVE_CAP {
        return Ok(Derivative::BlowUp);
    }
    let tail = &q[n - 9..];
    let increasing = tail.windows(2).all(|w| w[1].abs() > w[0].abs());
    if increasing && q[n - 1].abs() > 2.0 * q[n - 5].abs() && q[n - 1].abs() > 1e3 {
        return Ok(Derivative::BlowUp);
    }
    // Richardson values r_k = 2 q_k - q_{k-1}; take the most stable one,
    // which balances truncation against roundoff.
    let r: Vec<f64> = q.windows(2).map(|w| 2.0 * w[1] - w[0]).collect();
    let (k, spread) = r
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k + 1, (w[1] - w[0]).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least three quotients");
    if spread <= DERIVATIVE_TOL * (1.0 + r[k].abs()) {
        return Ok(Derivative::Value(r[k]));
    }
    Err(RegularityError::NotConverged(x))
}

/// Numeric one-sided derivative of a scale function.
pub fn scale_derivative(s: &ScaleFunction, x: f64, side: DerivativeSide) -> Result<Derivative, RegularityError> {
    one_sided_derivative(|y| s.value(y), x, side)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcTarget {
    Scale,
    InverseScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcVerdict {
    Dc,
    NotDc,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcLevel {
    pub grid_step: f64,
    pub total_variation_of_slopes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcReport {
    pub target: DcTarget,
    pub window: (f64, f64),
    pub levels: Vec<DcLevel>,
    pub verdict: DcVerdict,
    /// Smallest of the finest three growth ratios for `NotDc`, largest
    /// otherwise.
    pub divergence_ratio: f64,
    pub ratios: Vec<f64>,
}

impl DcReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid_step,total_variation_of_slopes\n");
        for l in &self.levels {
            out.push_str(&format!("{:e},{:e}\n", l.grid_step, l.total_variation_of_slopes));
        }
        out
    }
}

pub const DC_BASE_CELLS: usize = 16;
/// Levels used by default; the finest grid has `16 * 2^12` cells.
pub const DEFAULT_DC_LEVELS: usize = 13;
pub const NOT_DC_RATIO: f64 = 1.5;
pub const DC_RATIO: f64 = 1.01;
const TV_OFFSET: f64 = 1e-12;
const INCREMENT_DECAY: f64 = 0.6;
const REMAINDER_TOL: f64 = 0.02;

/// Slope total variation on nested dyadic grids over `window`, with
/// `16 * 2^j` cells at level `j`.
pub fn dc_check_fn<G: Fn(&[f64]) -> Vec<f64>>(eval: G, window: (f64, f64), levels: usize, target: DcTarget) -> DcReport {
    let levels = levels.max(4);
    let (a, b) = window;
    let finest = DC_BASE_CELLS << (levels - 1);
    let xs: Vec<f64> = (0..=finest).map(|i| a + (b - a) * i as f64 / finest as f64).collect();
    let g = eval(&xs);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut table = Vec::with_capacity(levels);
    for j in 0..levels {
        let stride = finest / (DC_BASE_CELLS << j);
        let h = (b - a) / (DC_BASE_CELLS << j) as f64;
        let pts: Vec<f64> = g.iter().step_by(stride).copied().collect();
        let slopes: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let floor = 8.0 * f64::EPSILON * gmax / h;
        let tv: f64 = slopes
            .windows(2)
            .map(|w| {
                let d = (w[1] - w[0]).abs();
                if d <= floor {
                    0.0
                } else {
                    d
                }
            })
            .sum();
        table.push(DcLevel { grid_step: h, total_variation_of_slopes: tv });
    }
    let ratios: Vec<f64> = table
        .windows(2)
        .map(|w| (w[1].total_variation_of_slopes + TV_OFFSET) / (w[0].total_variation_of_slopes + TV_OFFSET))
        .collect();
    let finest3 = &ratios[ratios.len() - 3..];
    let min = finest3.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finest3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (verdict, ratio) = if min >= NOT_DC_RATIO {
        (DcVerdict::NotDc, min)
    } else if max <= DC_RATIO || converging_geometrically(&table) {
        (DcVerdict::Dc, max)
    } else {
        (DcVerdict::Inconclusive, max)
    };
    DcReport { target, window, levels: table, verdict, divergence_ratio: ratio, ratios }
}

/// First-order convergence: the last TV increments shrink by a factor of at
/// most `INCREMENT_DECAY` and the extrapolated remainder is small.
fn converging_geometrically(table: &[DcLevel]) -> bool {
    let tv: Vec<f64> = table[table.len() - 4..].iter().map(|l| l.total_variation_of_slopes).collect();
    let d: Vec<f64> = tv.windows(2).map(|w| w[1] - w[0]).collect();
    if d.iter().any(|&x| x < 0.0) || d[0] <= 0.0 {
        return false;
    }
    let q = (d[1] / d[0]).max(d[2] / d[1]);
    q <= INCREMENT_DECAY && d[2] * q / (1.0 - q) <= REMAINDER_TOL * tv[3]
}

/// dc check of `s` (window in state coordinates) or of `s^{-1}` (window in
/// scale coordinates).
pub fn dc_check(s: &ScaleFunction, target: DcTarget, window: (f64, f64), levels: usize) -> DcReport {
    match target {
        DcTarget::Scale => dc_check_fn(|xs| s.values_on_grid(xs), window, levels, target),
        DcTarget::InverseScale => dc_check_fn(
            |us| us.iter().map(|&u| s.inverse(u).unwrap_or(f64::NAN)).collect(),
            window,
            levels,
            target,
        ),
    }
}

/// Image window `[s(a), s(b)]` of a state window.
pub fn image_window(s: &ScaleFunction, window: (f64, f64)) -> (f64, f64) {
    (s.value(window.0), s.value(window.1))
}

/// `g''` on grid cells: `masses[i] = g'_-(x_{i+1}) - g'_-(x_i)` for the cell
/// `[x_i, x_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedGridMeasure {
    pub breakpoints: Vec<f64>,
    pub masses: Vec<f64>,
}

impl SignedGridMeasure {
    pub fn total_variation(&self) -> f64 {
        self.masses.iter().map(|m| m.abs()).sum()
    }

    /// Mass of `[breakpoints[i], breakpoints[j])`.
    pub fn mass_between(&self, i: usize, j: usize) -> f64 {
        self.masses[i..j].iter().sum()
    }
}

pub fn second_derivative_measure<G: Fn(f64) -> f64>(g: G, grid: &[f64]) -> Result<SignedGridMeasure, RegularityError> {
    if grid.len() < 3 {
        return Err(RegularityError::GridTooSmall(3));
    }
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    let report = dc_check_fn(|xs| xs.iter().map(|&x| g(x)).collect(), (a, b), 6, DcTarget::Scale);
    if report.verdict == DcVerdict::NotDc {
        return Err(RegularityError::NotDc(a, b));
    }
    let mut left = Vec::with_capacity(grid.len());
    for &x in grid {
        match one_sided_derivative(&g, x, DerivativeSide::Left)? {
            Derivative::Value(v) => left.push(v),
            Derivative::BlowUp => return Err(RegularityError::NotDc(a, b)),
        }
    }
    let masses = left.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(SignedGridMeasure { breakpoints: grid.to_vec(), masses })
}

/// Companion speed measure `s'_+ dm`.
pub fn companion_speed(model: &DiffusionModel) -> Result<SpeedMeasure, ModelError> {
    model.speed().weighted_by(model.scale())
}

/// The companion diffusion: natural scale, speed `s'_+ dm`, finite included
/// boundaries absorbing.
pub fn companion_model(model: &DiffusionModel) -> Result<DiffusionModel, ModelError> {
    let speed = companion_speed(model)?;
    let iv = *model.interval();
    let absorb = |side: Side| {
        if iv.includes(side) {
            BoundaryBehavior::Absorbing
        } else {
            BoundaryBehavior::Unspecified
        }
    };
    let boundary = DeclaredBoundary { lower: absorb(Side::Lower), upper: absorb(Side::Upper) };
    model.with_speed(format!("companion({})", model.label()), ScaleFunction::natural(iv), speed, boundary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    /// `s'_+` blows up.
    BlowUp,
    /// Finite one-sided derivatives that differ.
    Kink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: f64,
    pub kind: SingularKind,
    pub left: Derivative,
    pub right: Derivative,
}

/// Interior points in `(a, b)` where the scale is not `C^1`: structural
/// candidates plus a scan grid where the right derivative is undefined,
/// each confirmed by numeric one-sided derivatives.
pub fn singular_points(s: &ScaleFunction, a: f64, b: f64) -> Vec<SingularPoint> {
    let mut cands = s.structural_points(a, b);
    let dom = s.domain();
    for x in dom.sample_points(64) {
        if x > a && x < b && s.derivative_right(x).is_none() {
            cands.push(x);
        }
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut out = Vec::new();
    for x in cands {
        let right = scale_derivative(s, x, DerivativeSide::Right).unwrap_or(Derivative::BlowUp);
        let left = scale_derivative(s, x, DerivativeSide::Left).unwrap_or(Derivative::BlowUp);
        let kind = match (left, right) {
            (Derivative::Value(l), Derivative::Value(r)) => {
                if (l - r).abs() <= 1e-6 * (1.0 + l.abs().max(r.abs())) {
                    continue;
                }
                SingularKind::Kink
            }
            _ => SingularKind::BlowUp,
        };
        out.push(SingularPoint { x, kind, left, right });
    }
    out
}
