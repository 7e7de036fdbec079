use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::{counterexample, ModelError, StateInterval};
use crate::quad::{self, SeriesVerdict};

/// A drift or volatility coefficient of an Itô diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `intercept + slope * x`
    Linear { intercept: f64, slope: f64 },
    /// `coeff * |x|^exponent`
    Power { coeff: f64, exponent: f64 },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn linear(intercept: f64, slope: f64) -> Self {
        Coefficient::Linear { intercept, slope }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Linear { intercept, slope } => intercept + slope * x,
            Coefficient::Power { coeff, exponent } => coeff * x.abs().powf(exponent),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Coefficient::Constant { value } => value == 0.0,
            Coefficient::Linear { intercept, slope } => intercept == 0.0 && slope == 0.0,
            Coefficient::Power { coeff, .. } => coeff == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleSide {
    TwoSided,
    HalfLine,
}

/// How a scale function is backed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ScaleKind {
    Natural,
    /// Piecewise linear: `(1 - alpha) x` for `x >= 0`, `alpha x` below.
    Skew { alpha: f64 },
    /// `s(x) = ∫_anchor^x exp(-∫_anchor^y 2 drift / vol^2) dy`.
    Coefficients { drift: Coefficient, vol: Coefficient, anchor: f64 },
    /// `s(x) = ∫_0^x f(|y|) dy` with the spiked density `f`.
    Counterexample { side: CounterexampleSide },
    /// Monotone piecewise-linear interpolation of a table.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

/// Relative tolerance for quadrature inside coefficient-backed scales.
const COEF_REL_TOL: f64 = 1e-12;
/// Number of geometric shells used for improper scale limits.
const LIMIT_SHELLS: usize = 40;

/// Strictly increasing continuous scale function on a state interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleFunction {
    #[serde(flatten)]
    kind: ScaleKind,
    #[serde(skip)]
    domain: StateInterval,
    #[serde(skip)]
    limits: OnceLock<(f64, f64)>,
}

impl PartialEq for ScaleFunction {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.domain == other.domain
    }
}

impl ScaleFunction {
    pub fn natural(domain: StateInterval) -> Self {
        Self::from_kind(ScaleKind::Natural, domain)
    }

    pub fn from_kind(kind: ScaleKind, domain: StateInterval) -> Self {
        Self { kind, domain, limits: OnceLock::new() }
    }

    /// Builds and validates a scale function.
    pub fn new(kind: ScaleKind, domain: StateInterval) -> Result<Self, ModelError> {
        match &kind {
            ScaleKind::Skew { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) || *alpha == 0.5 {
                    return Err(ModelError::BadParam(format!(
                        "skewness alpha must lie in (0,1) without 1/2, got {alpha}"
                    )));
                }
            }
            ScaleKind::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err(ModelError::Invalid(
                        "tabulated scale needs matching grid/values of length >= 2".into(),
                    ));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) || values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ModelError::Invalid(
                        "tabulated scale grid and values must be strictly increasing".into(),
                    ));
                }
                if grid[0] > domain.lower || grid[grid.len() - 1] < domain.upper {
                    return Err(ModelError::Invalid(
                        "tabulated scale grid must cover the closed state interval".into(),
                    ));
                }
            }
            ScaleKind::Counterexample { side: CounterexampleSide::HalfLine } => {
                if domain.lower < 0.0 {
                    return Err(ModelError::Invalid(
                        "half-line counterexample scale lives on [0, inf)".into(),
                    ));
                }
            }
            ScaleKind::Coefficients { anchor, .. } => {
                if !domain.contains_interior(*anchor) {
                    return Err(ModelError::BadParam(format!("anchor {anchor} not in the interior")));
                }
            }
            _ => {}
        }
        Ok(Self::from_kind(kind, domain))
    }

    pub fn kind(&self) -> &ScaleKind {
        &self.kind
    }

    pub fn domain(&self) -> &StateInterval {
        &self.domain
    }

    pub(crate) fn with_domain(mut self, domain: StateInterval) -> Self {
        self.domain = domain;
        self.limits = OnceLock::new();
        self
    }

    /// Affine scale functions are natural up to an affine change of units.
    pub fn is_natural(&self) -> bool {
        match &self.kind {
            ScaleKind::Natural => true,
            ScaleKind::Coefficients { drift, .. } => drift.is_zero(),
            ScaleKind::Tabulated { grid, values } => {
                let s0 = (values[1] - values[0]) / (grid[1] - grid[0]);
                grid.windows(2).zip(values.windows(2)).all(|(g, v)| {
                    let s = (v[1] - v[0]) / (g[1] - g[0]);
                    (s - s0).abs() <= 1e-12 * s0.abs()
                })
            }
            _ => false,
        }
    }

    fn coef_integrand(drift: &Coefficient, vol: &Coefficient, z: f64) -> f64 {
        let v = vol.eval(z);
        2.0 * drift.eval(z) / (v * v)
    }

    /// `∫_anchor^y 2 drift / vol^2`.
    fn coef_exponent(drift: &Coefficient, vol: &Coefficient, anchor: f64, y: f64) -> quad::Quadrature {
        quad::integrate(|z| Self::coef_integrand(drift, vol, z), anchor, y, 1e-14, COEF_REL_TOL)
    }

    fn coef_derivative(drift: &Coefficient, vol: &Coefficient, anchor: f64, y: f64) -> f64 {
        if drift.is_zero() {
            return 1.0;
        }
        (-Self::coef_exponent(drift, vol, anchor, y).value).exp()
    }

    /// Evaluates `s(x)`. Endpoints of the state interval return the limit
    /// `s(b±)`, which may be infinite.
    pub fn value(&self, x: f64) -> f64 {
        if x == self.domain.lower && !x.is_finite() {
            return self.limits().0;
        }
        if x == self.domain.upper && !x.is_finite() {
            return self.limits().1;
        }
        match &self.kind {
            ScaleKind::Natural => x,
            ScaleKind::Skew { alpha } => {
                if x >= 0.0 {
                    (1.0 - alpha) * x
                } else {
                    alpha * x
                }
            }
            ScaleKind::Coefficients { drift, vol, anchor } => {
                if drift.is_zero() {
                    return x - anchor;
                }
                if x == self.domain.lower {
                    return self.limits().0;
                }
                if x == self.domain.upper {
                    return self.limits().1;
                }
                quad::integrate(
                    |y| Self::coef_derivative(drift, vol, *anchor, y),
                    *anchor,
                    x,
                    1e-14,
                    COEF_REL_TOL,
                )
                .value
            }
            ScaleKind::Counterexample { .. } => {
                if x >= 0.0 {
                    counterexample::integral(x)
                } else {
                    -counterexample::integral(-x)
                }
            }
            ScaleKind::Tabulated { grid, values } => interp(grid, values, x),
        }
    }

    /// `s(b) - s(a)`, computed without cancellation where the backing allows.
    pub fn diff(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            ScaleKind::Coefficients { drift, vol, anchor } if a.is_finite() && b.is_finite() => {
                if drift.is_zero() {
                    return b - a;
                }
                quad::integrate(
                    |y| Self::coef_derivative(drift, vol, *anchor, y),
                    a,
                    b,
                    0.0,
                    COEF_REL_TOL,
                )
                .value
            }
            _ => self.value(b) - self.value(a),
        }
    }

    /// `s` on a sorted grid. Coefficient-backed scales accumulate cell
    /// increments instead of integrating from the anchor at every node.
    pub fn values_on_grid(&self, xs: &[f64]) -> Vec<f64> {
        match &self.kind {
            ScaleKind::Coefficients { drift, vol, anchor } if !drift.is_zero() && !xs.is_empty() => {
                let mut out = Vec::with_capacity(xs.len());
                let mut acc = self.value(xs[0]);
                let mut expo = Self::coef_exponent(drift, vol, *anchor, xs[0]).value;
                out.push(acc);
                let k = |z: f64| Self::coef_integrand(drift, vol, z);
                for w in xs.windows(2) {
                    let (p, q) = (w[0], w[1]);
                    let kp = k(p);
                    if q - p <= FINE_CELL * (1.0 + p.abs()) && kp.is_finite() && (kp * (q - p)).abs() <= FINE_CELL {
                        // Tiny smooth cell: nested three-point Gauss is exact to roundoff.
                        acc += gauss3(|y| (-(expo + gauss3(k, p, y))).exp(), p, q);
                        expo += gauss3(k, p, q);
                    } else {
                        let local = |y: f64| (-(expo + Self::coef_exponent(drift, vol, p, y).value)).exp();
                        acc += quad::integrate(local, p, q, 0.0, COEF_REL_TOL).value;
                        expo += Self::coef_exponent(drift, vol, p, q).value;
                    }
                    out.push(acc);
                }
                out
            }
            _ => xs.iter().map(|&x| self.value(x)).collect(),
        }
    }

    /// Limits `(s(l+), s(r-))` at the ends of the state interval.
    pub fn limits(&self) -> (f64, f64) {
        *self.limits.get_or_init(|| {
            let (l, r) = (self.domain.lower, self.domain.upper);
            match &self.kind {
                ScaleKind::Coefficients { drift, vol, anchor } if !drift.is_zero() => {
                    let lo = -self.improper_integral(drift, vol, *anchor, l);
                    let hi = self.improper_integral(drift, vol, *anchor, r);
                    (lo, hi)
                }
                ScaleKind::Coefficients { anchor, .. } => (l - anchor, r - anchor),
                _ => (self.value_finite_or_limit(l), self.value_finite_or_limit(r)),
            }
        })
    }

    fn value_finite_or_limit(&self, b: f64) -> f64 {
        if b.is_finite() {
            return self.value(b);
        }
        match &self.kind {
            ScaleKind::Natural | ScaleKind::Skew { .. } | ScaleKind::Counterexample { .. } => b,
            ScaleKind::Tabulated { grid, values } => interp(grid, values, b),
            ScaleKind::Coefficients { .. } => unreachable!("handled in limits"),
        }
    }

    /// `|∫_anchor^b s'(y) dy|` via geometric shells toward `b`.
    fn improper_integral(&self, drift: &Coefficient, vol: &Coefficient, anchor: f64, b: f64) -> f64 {
        let sp = |y: f64| Self::coef_derivative(drift, vol, anchor, y);
        let edges = shell_edges(anchor, b, LIMIT_SHELLS);
        let mut terms = Vec::with_capacity(edges.len());
        for w in edges.windows(2) {
            let q = quad::integrate(sp, w[0], w[1], 0.0, COEF_REL_TOL);
            terms.push(q.value.abs());
        }
        let partial: f64 = terms.iter().sum();
        match quad::series_verdict(&terms) {
            (SeriesVerdict::Divergent, _) => f64::INFINITY,
            (SeriesVerdict::Convergent, tail) => partial + tail,
        }
    }

    /// Right derivative `s'_+(x)`, or `None` where it blows up.
    pub fn derivative_right(&self, x: f64) -> Option<f64> {
        self.derivative(x, true)
    }

    /// Left derivative `s'_-(x)`, or `None` where it blows up.
    pub fn derivative_left(&self, x: f64) -> Option<f64> {
        self.derivative(x, false)
    }

    fn derivative(&self, x: f64, right: bool) -> Option<f64> {
        match &self.kind {
            ScaleKind::Natural => Some(1.0),
            ScaleKind::Skew { alpha } => {
                let pos = if right { x >= 0.0 } else { x > 0.0 };
                Some(if pos { 1.0 - alpha } else { *alpha })
            }
            ScaleKind::Coefficients { drift, vol, anchor } => {
                Some(Self::coef_derivative(drift, vol, *anchor, x))
            }
            ScaleKind::Counterexample { .. } => {
                if x == 0.0 {
                    None
                } else {
                    Some(counterexample::density(x.abs()))
                }
            }
            ScaleKind::Tabulated { grid, values } => {
                let i = cell_index(grid, x, right);
                Some((values[i + 1] - values[i]) / (grid[i + 1] - grid[i]))
            }
        }
    }

    /// Points in `(a, b)` where the scale is structurally non-smooth: slope
    /// jumps or derivative blow-ups. These are candidates; `regularity`
    /// decides what each one is numerically.
    pub fn structural_points(&self, a: f64, b: f64) -> Vec<f64> {
        match &self.kind {
            ScaleKind::Skew { .. } | ScaleKind::Counterexample { .. } if a < 0.0 && b > 0.0 => vec![0.0],
            ScaleKind::Tabulated { grid, .. } => {
                grid[1..grid.len() - 1].iter().copied().filter(|&g| g > a && g < b).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Breakpoints of the derivative formula inside `(a, b)`, used to split
    /// quadratures.
    pub fn quadrature_breaks(&self, a: f64, b: f64) -> Vec<f64> {
        match &self.kind {
            ScaleKind::Skew { .. } if a < 0.0 && b > 0.0 => vec![0.0],
            ScaleKind::Counterexample { .. } => {
                let mut out = Vec::new();
                if b > 0.0 {
                    out.extend(counterexample::kinks(a.max(0.0), b, 512));
                }
                if a < 0.0 {
                    out.extend(counterexample::kinks((-b).max(0.0), -a, 512).into_iter().map(|x| -x));
                }
                if a < 0.0 && b > 0.0 {
                    out.push(0.0);
                }
                out.sort_by(f64::total_cmp);
                out
            }
            ScaleKind::Tabulated { grid, .. } => grid.iter().copied().filter(|&g| g > a && g < b).collect(),
            _ => Vec::new(),
        }
    }

    /// Inverse scale `q(u) = s^{-1}(u)` on the open image of the interior.
    pub fn inverse(&self, u: f64) -> Result<f64, ModelError> {
        let (lo, hi) = self.limits();
        if !(u >= lo && u <= hi) {
            return Err(ModelError::OutOfRange(format!("{u} outside scale image [{lo}, {hi}]")));
        }
        if u == lo {
            return Ok(self.domain.lower);
        }
        if u == hi {
            return Ok(self.domain.upper);
        }
        match &self.kind {
            ScaleKind::Natural => Ok(u),
            ScaleKind::Skew { alpha } => Ok(if u >= 0.0 { u / (1.0 - alpha) } else { u / alpha }),
            ScaleKind::Tabulated { grid, values } => Ok(interp(values, grid, u)),
            ScaleKind::Coefficients { drift, anchor, .. } if drift.is_zero() => Ok(u + anchor),
            ScaleKind::Counterexample { .. } => Ok(if u >= 0.0 {
                counterexample::inverse_integral(u)
            } else {
                -counterexample::inverse_integral(-u)
            }),
            _ => self.invert_numerically(u),
        }
    }

    fn invert_numerically(&self, u: f64) -> Result<f64, ModelError> {
        let (a, b) = self.bracket(u)?;
        Ok(solve_increasing(|x| self.value(x) - u, a, b))
    }

    fn bracket(&self, u: f64) -> Result<(f64, f64), ModelError> {
        let c = self.domain.reference_point();
        let sc = self.value(c);
        if u == sc {
            return Ok((c, c));
        }
        let up = u > sc;
        let end = if up { self.domain.upper } else { self.domain.lower };
        let mut near = c;
        for k in 1..2100 {
            let far = if end.is_finite() {
                end + (c - end) * (-(k as f64)).exp2()
            } else {
                let step = (k as f64 - 1.0).exp2();
                if up { c + step } else { c - step }
            };
            let sf = self.value(far);
            let passed = if up { sf >= u } else { sf <= u };
            if passed {
                return Ok(if up { (near, far) } else { (far, near) });
            }
            near = far;
            if end.is_finite() && far == end {
                break;
            }
        }
        Err(ModelError::OutOfRange(format!("could not bracket scale value {u}")))
    }
}

const FINE_CELL: f64 = 1e-3;

fn gauss3<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let d = r * 0.6f64.sqrt();
    r * (5.0 * f(c - d) + 8.0 * f(c) + 5.0 * f(c + d)) / 9.0
}

/// Edges of geometric shells from `start` toward `end` (finite or infinite).
///
/// Finite `end`: `end + (start - end) 2^-k`, k = 0..=shells. Infinite `end`:
/// `start ± 2^k` after an initial unit step.
pub fn shell_edges(start: f64, end: f64, shells: usize) -> Vec<f64> {
    let mut v = vec![start];
    if end.is_finite() {
        for k in 1..=shells {
            v.push(end + (start - end) * (-(k as f64)).exp2());
        }
    } else {
        let dir = end.signum();
        for k in 0..shells {
            v.push(start + dir * (k as f64).exp2());
        }
    }
    v
}

/// Finds the root of an increasing function on `[a, b]` to near machine
/// precision: Illinois-modified regula falsi with a bisection safeguard.
pub fn solve_increasing<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    if a == b {
        return a;
    }
    let (mut fa, mut fb) = (f(a), f(b));
    if fa >= 0.0 {
        return a;
    }
    if fb <= 0.0 {
        return b;
    }
    let mut side = 0i8;
    for it in 0..400 {
        let width = b - a;
        if width <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) || width < f64::MIN_POSITIVE {
            break;
        }
        let mut c = if it % 3 == 2 || !fa.is_finite() || !fb.is_finite() {
            0.5 * (a + b)
        } else {
            (a * fb - b * fa) / (fb - fa)
        };
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() <= fb.abs() {
        a
    } else {
        b
    }
}

fn cell_index(grid: &[f64], x: f64, right: bool) -> usize {
    let n = grid.len();
    let p = if right {
        grid.partition_point(|&g| g <= x)
    } else {
        grid.partition_point(|&g| g < x)
    };
    p.clamp(1, n - 1) - 1
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = cell_index(xs, x, true);
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_line() -> StateInterval {
        StateInterval::real_line()
    }

    #[test]
    fn skew_values_and_inverse() {
        let s = ScaleFunction::new(ScaleKind::Skew { alpha: 0.3 }, real_line()).unwrap();
        assert!((s.value(1.0) - 0.7).abs() < 1e-15);
        assert!((s.value(-1.0) + 0.3).abs() < 1e-15);
        assert!((s.inverse(0.7).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.derivative_right(0.0), Some(0.7));
        assert_eq!(s.derivative_left(0.0), Some(0.3));
    }

    #[test]
    fn rejects_bad_alpha() {
        for a in [0.0, 0.5, 1.0, -0.2] {
            assert!(ScaleFunction::new(ScaleKind::Skew { alpha: a }, real_line()).is_err());
        }
    }

    #[test]
    fn counterexample_limits_and_round_trip() {
        let s = ScaleFunction::new(
            ScaleKind::Counterexample { side: CounterexampleSide::TwoSided },
            real_line(),
        )
        .unwrap();
        assert_eq!(s.limits(), (f64::NEG_INFINITY, f64::INFINITY));
        for &x in &[-3.0, -0.3, -1e-4, 1e-6, 0.0625, 0.4375, 2.5] {
            let back = s.inverse(s.value(x)).unwrap();
            assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs()), "{x} -> {back}");
        }
        assert_eq!(s.derivative_right(0.0), None);
    }

    #[test]
    fn tabulated_interpolation_and_inverse() {
        let dom = StateInterval::new(0.0, 2.0, true, true).unwrap();
        let s = ScaleFunction::new(
            ScaleKind::Tabulated { grid: vec![0.0, 1.0, 2.0], values: vec![0.0, 2.0, 3.0] },
            dom,
        )
        .unwrap();
        assert_eq!(s.value(0.5), 1.0);
        assert_eq!(s.value(1.5), 2.5);
        assert_eq!(s.inverse(2.5).unwrap(), 1.5);
        assert_eq!(s.derivative_left(1.0), Some(2.0));
        assert_eq!(s.derivative_right(1.0), Some(1.0));
        assert_eq!(s.structural_points(0.0, 2.0), vec![1.0]);
    }

    #[test]
    fn solver_hits_machine_precision() {
        let x = solve_increasing(|x| x * x * x - 2.0, 0.0, 2.0);
        assert!((x - 2f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn shell_edges_shapes() {
        let e = shell_edges(1.0, 0.0, 3);
        assert_eq!(e, vec![1.0, 0.5, 0.25, 0.125]);
        let e = shell_edges(0.0, f64::INFINITY, 3);
        assert_eq!(e, vec![0.0, 1.0, 2.0, 4.0]);
    }
}
