use serde::{Deserialize, Serialize};

use super::scale::{shell_edges, Coefficient, ScaleFunction};
use super::ModelError;
use crate::quad::{self, SeriesVerdict};

/// Absolutely continuous part of a speed measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Constant { value: f64 },
    /// `values[i]` on `[breaks[i-1], breaks[i])`, with `values.len() == breaks.len() + 1`.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    /// `coeff * |x|^exponent`
    Power { coeff: f64, exponent: f64 },
    /// `1 / (s'(x) vol(x)^2)` for the coefficient-backed scale.
    Coefficients { drift: Coefficient, vol: Coefficient, anchor: f64 },
    /// Piecewise-linear interpolation of a nonnegative table.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Density::Constant { value } => *value,
            Density::Piecewise { breaks, values } => values[breaks.partition_point(|&b| b <= x)],
            Density::Power { coeff, exponent } => coeff * x.abs().powf(*exponent),
            Density::Coefficients { drift, vol, anchor } => {
                let v = vol.eval(x);
                let i = if drift.is_zero() {
                    0.0
                } else {
                    quad::integrate(|z| 2.0 * drift.eval(z) / vol.eval(z).powi(2), *anchor, x, 1e-14, 1e-12).value
                };
                i.exp() / (v * v)
            }
            Density::Tabulated { grid, values } => {
                if x <= grid[0] {
                    return values[0];
                }
                let n = grid.len();
                if x >= grid[n - 1] {
                    return values[n - 1];
                }
                let i = grid.partition_point(|&g| g <= x) - 1;
                let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn breaks(&self, a: f64, b: f64) -> Vec<f64> {
        let pts: Vec<f64> = match self {
            Density::Piecewise { breaks, .. } => breaks.clone(),
            Density::Tabulated { grid, .. } => grid.clone(),
            _ => Vec::new(),
        };
        pts.into_iter().filter(|&p| p > a && p < b).collect()
    }

    fn singular_points(&self) -> Vec<f64> {
        match self {
            Density::Power { exponent, .. } if *exponent < 0.0 => vec![0.0],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(m.to_string()));
        match self {
            Density::Constant { value } if !(*value >= 0.0 && value.is_finite()) => bad("density must be finite and nonnegative"),
            Density::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 || breaks.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("piecewise density needs sorted breaks and one more value than breaks");
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("piecewise density values must be finite and nonnegative");
                }
                Ok(())
            }
            Density::Power { coeff, .. } if !(*coeff > 0.0) => bad("power density coefficient must be positive"),
            Density::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("tabulated density needs a sorted grid matching its values");
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("tabulated density values must be finite and nonnegative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A point mass of the speed measure. Boundary atoms may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    #[serde(with = "quad::extreal")]
    pub mass: f64,
}

/// Countable atom family `coeff / n^power` at `2^-n` (and `-2^-n` when
/// two-sided), `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicAtoms {
    pub two_sided: bool,
    pub coeff: f64,
    pub power: f64,
}

/// Largest dyadic index enumerated explicitly; the remaining tail is
/// judged by the series test.
pub const DYADIC_MAX_N: usize = 900;

impl DyadicAtoms {
    pub fn base_mass(&self, n: usize) -> f64 {
        self.coeff / (n as f64).powf(self.power)
    }
}

/// Number of geometric shells for improper integrals near singular ends.
pub const SHELLS: usize = 40;
/// Growth per shell treated as divergence once the total is large.
pub const BLOWUP_GROWTH: f64 = 0.10;
/// Total beyond which sustained growth is called divergence.
pub const BLOWUP_BOUND: f64 = 1e6;

/// Speed measure under the convention that Brownian motion has Lebesgue
/// speed. An optional weight `s'_+` turns it into the companion measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedMeasure {
    pub density: Density,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dyadic_series: Option<DyadicAtoms>,
    #[serde(skip)]
    weight: Option<Box<ScaleFunction>>,
}

pub const CONVENTION_NOTE: &str = "BM-speed=Lebesgue";

impl SpeedMeasure {
    pub fn new(density: Density, atoms: Vec<Atom>, dyadic_series: Option<DyadicAtoms>) -> Result<Self, ModelError> {
        density.validate()?;
        let mut sorted = atoms;
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        if sorted.windows(2).any(|w| w[0].x == w[1].x) {
            return Err(ModelError::Invalid("at most one atom per location".into()));
        }
        if sorted.iter().any(|a| !(a.mass > 0.0) || !a.x.is_finite()) {
            return Err(ModelError::Invalid("atoms need a finite location and positive mass".into()));
        }
        if let Some(d) = &dyadic_series {
            if !(d.coeff > 0.0) || !d.power.is_finite() {
                return Err(ModelError::Invalid("dyadic atoms need a positive coefficient".into()));
            }
        }
        Ok(Self { density, atoms: sorted, dyadic_series, weight: None })
    }

    pub fn lebesgue() -> Self {
        Self::new(Density::Constant { value: 1.0 }, Vec::new(), None).expect("valid")
    }

    /// The companion measure `s'_+ dm`.
    pub fn weighted_by(&self, scale: &ScaleFunction) -> Result<Self, ModelError> {
        if self.weight.is_some() {
            return Err(ModelError::Invalid("measure is already weighted".into()));
        }
        for a in &self.atoms {
            if scale.derivative_right(a.x).is_none() {
                return Err(ModelError::AtomAtBlowUp(a.x));
            }
        }
        let mut out = self.clone();
        out.weight = Some(Box::new(scale.clone()));
        Ok(out)
    }

    pub fn weight(&self) -> Option<&ScaleFunction> {
        self.weight.as_deref()
    }

    fn weight_at(&self, x: f64) -> f64 {
        match &self.weight {
            None => 1.0,
            Some(s) => s.derivative_right(x).unwrap_or(f64::INFINITY),
        }
    }

    /// Density of the (possibly weighted) absolutely continuous part.
    pub fn density_at(&self, x: f64) -> f64 {
        if let (Density::Coefficients { drift, vol, .. }, Some(w)) = (&self.density, &self.weight) {
            if let super::ScaleKind::Coefficients { drift: wd, vol: wv, .. } = w.kind() {
                if wd == drift && wv == vol {
                    // s' cancels: the companion density is 1 / vol^2.
                    return 1.0 / vol.eval(x).powi(2);
                }
            }
        }
        let d = self.density.eval(x);
        if d == 0.0 {
            return 0.0;
        }
        d * self.weight_at(x)
    }

    /// Mass of the atom at `x` (finite atoms and dyadic family), weighted.
    pub fn atom_mass(&self, x: f64) -> f64 {
        let mut m = 0.0;
        if let Ok(i) = self.atoms.binary_search_by(|a| a.x.total_cmp(&x)) {
            m += self.atoms[i].mass;
        }
        if let Some(n) = self.dyadic_index(x) {
            m += self.dyadic_series.unwrap().base_mass(n);
        }
        if m == 0.0 {
            0.0
        } else {
            m * self.weight_at(x)
        }
    }

    fn dyadic_index(&self, x: f64) -> Option<usize> {
        let d = self.dyadic_series?;
        if x == 0.0 || (!d.two_sided && x < 0.0) {
            return None;
        }
        let l = -x.abs().log2();
        let n = l.round();
        if n >= 1.0 && (n as usize) <= DYADIC_MAX_N && (-n).exp2() == x.abs() {
            Some(n as usize)
        } else {
            None
        }
    }

    /// Finite atoms plus dyadic atoms with index `<= n_max` inside `[a, b]`,
    /// weighted, sorted by location.
    pub fn atoms_in(&self, a: f64, b: f64, n_max: usize) -> Vec<Atom> {
        let mut out: Vec<Atom> = self
            .atoms
            .iter()
            .filter(|at| at.x >= a && at.x <= b)
            .map(|at| Atom { x: at.x, mass: at.mass * self.weight_at(at.x) })
            .collect();
        if let Some(d) = self.dyadic_series {
            for n in 1..=n_max.min(DYADIC_MAX_N) {
                let p = (-(n as f64)).exp2();
                let mut locs = vec![p];
                if d.two_sided {
                    locs.push(-p);
                }
                for x in locs {
                    if x >= a && x <= b {
                        out.push(Atom { x, mass: d.base_mass(n) * self.weight_at(x) });
                    }
                }
            }
        }
        out.sort_by(|p, q| p.x.total_cmp(&q.x));
        out
    }

    /// Points where the weighted density may be unbounded.
    pub fn singular_points(&self) -> Vec<f64> {
        let mut v = self.density.singular_points();
        if let Some(w) = &self.weight {
            if w.derivative_right(0.0).is_none() {
                v.push(0.0);
            }
            v.extend(w.structural_points(f64::NEG_INFINITY, f64::INFINITY).into_iter().filter(|&p| w.derivative_right(p).is_none()));
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn breaks(&self, a: f64, b: f64) -> Vec<f64> {
        let mut v = self.density.breaks(a, b);
        if let Some(w) = &self.weight {
            v.extend(w.quadrature_breaks(a, b));
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// `m([a, b])` with closed-interval semantics; `+inf` on divergence.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.integrate(|_| 1.0, a, b, true, true)
    }

    /// `∫ g dm` over the interval from `a` to `b` with the given endpoint
    /// inclusion for atoms. Returns `+inf` when the integral diverges.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G, a: f64, b: f64, incl_a: bool, incl_b: bool) -> f64 {
        let h = |x: f64| {
            let d = self.density_at(x);
            if d == 0.0 {
                return 0.0;
            }
            let gx = g(x);
            if gx == 0.0 {
                0.0
            } else {
                gx * d
            }
        };
        self.integrate_parts(h, &g, a, b, incl_a, incl_b)
    }

    /// Like [`integrate`](Self::integrate) but with the Lebesgue integrand
    /// `h = g * density` supplied directly, for callers that can evaluate
    /// the product more stably than its factors.
    pub fn integrate_parts<H: Fn(f64) -> f64, G: Fn(f64) -> f64>(
        &self,
        h: H,
        g: &G,
        a: f64,
        b: f64,
        incl_a: bool,
        incl_b: bool,
    ) -> f64 {
        if b < a || (a == b && !(incl_a && incl_b)) {
            return 0.0;
        }
        let leb = if a < b { self.lebesgue_integral(&h, a, b) } else { 0.0 };
        if leb.is_infinite() {
            return leb;
        }
        leb + self.atom_part(g, a, b, incl_a, incl_b)
    }

    /// `∫_a^b h(x) dx` for a Lebesgue integrand `h` already multiplied by
    /// the density, splitting at singular points and using shells toward
    /// singular ends.
    pub fn lebesgue_integral<H: Fn(f64) -> f64>(&self, h: &H, a: f64, b: f64) -> f64 {
        let sing = self.singular_points();
        let mut cuts = vec![a];
        cuts.extend(sing.iter().copied().filter(|&p| p > a && p < b));
        cuts.push(b);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let is_sing = |e: f64| !e.is_finite() || sing.contains(&e) || !h(e).is_finite();
            total += self.segment(h, lo, hi, is_sing(lo), is_sing(hi));
            if total.is_infinite() {
                return f64::INFINITY;
            }
        }
        total
    }

    fn segment<H: Fn(f64) -> f64>(&self, h: &H, lo: f64, hi: f64, sing_lo: bool, sing_hi: bool) -> f64 {
        let regular = |p: f64, q: f64| {
            let br = self.breaks(p, q);
            quad::integrate_split(h, p, q, &br, 1e-14, 1e-10).value
        };
        match (sing_lo, sing_hi) {
            (false, false) => regular(lo, hi),
            (true, false) => self.shells(h, hi, lo),
            (false, true) => self.shells(h, lo, hi),
            (true, true) => {
                let mid = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0,
                    (false, true) => hi - 1.0,
                    (false, false) => 0.0,
                };
                let left = self.shells(h, mid, lo);
                if left.is_infinite() {
                    return left;
                }
                left + self.shells(h, mid, hi)
            }
        }
    }

    /// `|∫_start^end h|` via geometric shells with divergence detection.
    fn shells<H: Fn(f64) -> f64>(&self, h: &H, start: f64, end: f64) -> f64 {
        let edges = shell_edges(start, end, SHELLS);
        let terms: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let (p, q) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
                let br = self.breaks(p, q);
                quad::integrate_split(h, p, q, &br, 0.0, 1e-10).value
            })
            .collect();
        shell_series_sum(&terms)
    }

    fn atom_part<G: Fn(f64) -> f64>(&self, g: &G, a: f64, b: f64, incl_a: bool, incl_b: bool) -> f64 {
        let inside = |x: f64| (x > a || (incl_a && x == a)) && (x < b || (incl_b && x == b));
        let term = |x: f64, mass: f64| {
            let gx = g(x);
            if gx == 0.0 {
                0.0
            } else {
                gx * mass
            }
        };
        let mut total = 0.0;
        for at in self.atoms.iter().filter(|at| inside(at.x)) {
            total += term(at.x, at.mass * self.weight_at(at.x));
        }
        if let Some(d) = self.dyadic_series {
            for sign in [1.0, -1.0] {
                if sign < 0.0 && !d.two_sided {
                    continue;
                }
                let terms: Vec<f64> = (1..=DYADIC_MAX_N)
                    .map(|n| {
                        let x = sign * (-(n as f64)).exp2();
                        if inside(x) {
                            term(x, d.base_mass(n) * self.weight_at(x))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let accumulates = inside(sign * (-(DYADIC_MAX_N as f64)).exp2());
                total += if accumulates {
                    shell_series_sum(&terms)
                } else {
                    terms.iter().sum()
                };
            }
        }
        total
    }
}

/// Sums a nonnegative series of shell contributions, returning `+inf` when
/// it is judged divergent.
///
/// Divergence fires on either the series test or sustained growth: three
/// successive shells each add at least 10% with a total above `1e6`.
pub fn shell_series_sum(terms: &[f64]) -> f64 {
    if terms.iter().any(|t| t.is_infinite() || t.is_nan()) {
        return f64::INFINITY;
    }
    let mut partial = 0.0;
    let mut growth_run = 0;
    for &t in terms {
        let prev = partial;
        partial += t.abs();
        if prev > 0.0 && t.abs() >= BLOWUP_GROWTH * prev {
            growth_run += 1;
        } else {
            growth_run = 0;
        }
    }
    if growth_run >= 3 && partial > BLOWUP_BOUND {
        return f64::INFINITY;
    }
    let abs: Vec<f64> = terms.iter().map(|t| t.abs()).collect();
    match quad::series_verdict(&abs) {
        (SeriesVerdict::Divergent, _) => f64::INFINITY,
        (SeriesVerdict::Convergent, tail) => partial + tail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sticky_mass() {
        let m = SpeedMeasure::new(Density::Constant { value: 1.0 }, vec![Atom { x: 0.0, mass: 2.0 }], None).unwrap();
        assert!((m.mass(-1.0, 1.0) - 4.0).abs() < 1e-12);
        assert!((m.mass(0.0, 1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dyadic_mass_closed_interval() {
        let m = SpeedMeasure::new(
            Density::Constant { value: 1.0 },
            vec![],
            Some(DyadicAtoms { two_sided: true, coeff: 1.0, power: 2.0 }),
        )
        .unwrap();
        assert!((m.mass(0.25, 0.5) - 1.5).abs() < 1e-12);
        assert!((m.atom_mass(0.125) - 1.0 / 9.0).abs() < 1e-15);
        assert!((m.atom_mass(-0.125) - 1.0 / 9.0).abs() < 1e-15);
        // Full family near the origin: 2 * pi^2/6 plus Lebesgue 2.
        let total = m.mass(-1.0, 1.0);
        let exact = 2.0 + std::f64::consts::PI.powi(2) / 3.0;
        assert!((total - exact).abs() < 1e-3, "{total}");
    }

    #[test]
    fn divergent_mass_at_singular_endpoint() {
        let m = SpeedMeasure::new(Density::Power { coeff: 1.0, exponent: -2.0 }, vec![], None).unwrap();
        assert!(m.mass(0.0, 1.0).is_infinite());
        assert!((m.mass(0.5, 1.0) - 1.0).abs() < 1e-9);
        // ∫_0^1 x * x^-1 dx = 1
        let m1 = SpeedMeasure::new(Density::Power { coeff: 1.0, exponent: -1.0 }, vec![], None).unwrap();
        assert!((m1.integrate(|x| x, 0.0, 1.0, false, true) - 1.0).abs() < 1e-6);
        // ∫_0^1 x * x^-2 dx diverges logarithmically
        assert!(m.integrate(|x| x, 0.0, 1.0, false, true).is_infinite());
    }

    #[test]
    fn infinite_range_mass_diverges() {
        let m = SpeedMeasure::lebesgue();
        assert!(m.mass(0.0, f64::INFINITY).is_infinite());
        assert!((m.mass(0.0, 3.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn series_sum_detects_growth() {
        let t: Vec<f64> = (0..40).map(|k| 2f64.powi(k)).collect();
        assert!(shell_series_sum(&t).is_infinite());
        let t: Vec<f64> = (0..40).map(|k| 0.5f64.powi(k)).collect();
        assert!((shell_series_sum(&t) - 2.0).abs() < 1e-9);
    }
}
