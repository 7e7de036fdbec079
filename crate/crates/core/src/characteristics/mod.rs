//! Diffusion characteristics: state interval, scale function and speed
//! measure, plus the built-in model catalog.
//!
//! Convention: the speed measure of standard Brownian motion is Lebesgue
//! measure, so expected exit times are `2 ∫ G dm`.

pub mod counterexample;
pub mod scale;
pub mod speed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;
pub use scale::{Coefficient, CounterexampleSide, ScaleFunction, ScaleKind};
pub use speed::{Atom, Density, DyadicAtoms, SpeedMeasure, CONVENTION_NOTE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("volatility vanishes at x = {0}")]
    VolVanishes(f64),
    #[error("inner scale integral diverges on [{0}, {1}]")]
    QuadratureDiverged(f64, f64),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("speed atom at {0} sits on a blow-up point of the scale derivative")]
    AtomAtBlowUp(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// The state space `J` with `l = inf J` and `r = sup J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    #[serde(with = "quad::extreal")]
    pub lower: f64,
    #[serde(with = "quad::extreal")]
    pub upper: f64,
    #[serde(default)]
    pub lower_included: bool,
    #[serde(default)]
    pub upper_included: bool,
}

impl Default for StateInterval {
    fn default() -> Self {
        Self::real_line()
    }
}

impl StateInterval {
    pub fn new(lower: f64, upper: f64, lower_included: bool, upper_included: bool) -> Result<Self, ModelError> {
        let iv = Self { lower, upper, lower_included, upper_included };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lower.is_nan() || self.upper.is_nan() || !(self.lower < self.upper) {
            return Err(ModelError::Invalid(format!("need lower < upper, got [{}, {}]", self.lower, self.upper)));
        }
        if (self.lower_included && !self.lower.is_finite()) || (self.upper_included && !self.upper.is_finite()) {
            return Err(ModelError::Invalid("an infinite endpoint cannot be included".into()));
        }
        Ok(())
    }

    pub fn real_line() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY, lower_included: false, upper_included: false }
    }

    /// `[0, inf)` or `(0, inf)`.
    pub fn half_line(included: bool) -> Self {
        Self { lower: 0.0, upper: f64::INFINITY, lower_included: included, upper_included: false }
    }

    pub fn endpoint(&self, side: Side) -> f64 {
        match side {
            Side::Lower => self.lower,
            Side::Upper => self.upper,
        }
    }

    pub fn includes(&self, side: Side) -> bool {
        match side {
            Side::Lower => self.lower_included,
            Side::Upper => self.upper_included,
        }
    }

    pub fn contains_interior(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn contains(&self, x: f64) -> bool {
        self.contains_interior(x) || (x == self.lower && self.lower_included) || (x == self.upper && self.upper_included)
    }

    /// A canonical interior point: the midpoint, or one unit inside a
    /// single finite end, or 0.
    pub fn reference_point(&self) -> f64 {
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => 0.5 * (self.lower + self.upper),
            (true, false) => self.lower + 1.0,
            (false, true) => self.upper - 1.0,
            (false, false) => 0.0,
        }
    }

    /// Maps `u in (0, 1)` monotonically onto the interior.
    pub fn from_unit(&self, u: f64) -> f64 {
        let c = self.reference_point();
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => self.lower + (self.upper - self.lower) * u,
            (true, false) => self.lower + (c - self.lower) * u / (1.0 - u) * 2.0,
            (false, true) => self.upper - (self.upper - c) * (1.0 - u) / u * 2.0,
            (false, false) => c + (std::f64::consts::PI * (u - 0.5)).tan(),
        }
    }

    /// `n` interior sample points, increasing.
    pub fn sample_points(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.from_unit(i as f64 / (n as f64 + 1.0))).collect()
    }
}

/// Declared behavior of a finite boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryBehavior {
    #[default]
    Unspecified,
    Absorbing,
    InstantaneouslyReflecting,
    StickyReflecting { mass: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DeclaredBoundary {
    #[serde(default)]
    pub lower: BoundaryBehavior,
    #[serde(default)]
    pub upper: BoundaryBehavior,
}

impl DeclaredBoundary {
    pub fn get(&self, side: Side) -> BoundaryBehavior {
        match side {
            Side::Lower => self.lower,
            Side::Upper => self.upper,
        }
    }
}

/// Serializable model-spec document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub label: String,
    pub interval: StateInterval,
    pub scale: ScaleKind,
    pub speed: SpeedMeasure,
    #[serde(default)]
    pub boundary: DeclaredBoundary,
}

/// A general diffusion market model `(J, s, m)` with boundary declarations.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    label: String,
    interval: StateInterval,
    scale: ScaleFunction,
    speed: SpeedMeasure,
    boundary: DeclaredBoundary,
}

impl DiffusionModel {
    pub fn new(
        label: impl Into<String>,
        interval: StateInterval,
        scale: ScaleFunction,
        speed: SpeedMeasure,
        boundary: DeclaredBoundary,
    ) -> Result<Self, ModelError> {
        interval.validate()?;
        let scale = scale.with_domain(interval);
        let model = Self { label: label.into(), interval, scale, speed, boundary };
        model.validate()?;
        Ok(model)
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.interval.validate()?;
        let scale = ScaleFunction::new(spec.scale, spec.interval)?;
        let speed = SpeedMeasure::new(spec.speed.density, spec.speed.atoms, spec.speed.dyadic_series)?;
        Self::new(spec.label, spec.interval, scale, speed, spec.boundary)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            label: self.label.clone(),
            interval: self.interval,
            scale: self.scale.kind().clone(),
            speed: SpeedMeasure::new(self.speed.density.clone(), self.speed.atoms.clone(), self.speed.dyadic_series)
                .expect("already validated"),
            boundary: self.boundary,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let iv = &self.interval;
        for at in &self.speed.atoms {
            if !iv.contains(at.x) {
                return Err(ModelError::Invalid(format!("atom at {} outside the state interval", at.x)));
            }
            if at.mass.is_infinite() && iv.contains_interior(at.x) {
                return Err(ModelError::Invalid("infinite atoms are only allowed at boundaries".into()));
            }
        }
        if let Some(d) = &self.speed.dyadic_series {
            if !(iv.contains_interior(0.5) && iv.lower <= 0.0 && (!d.two_sided || iv.contains_interior(-0.5))) {
                return Err(ModelError::Invalid("dyadic atoms must lie in the interior".into()));
            }
        }
        for side in [Side::Lower, Side::Upper] {
            let b = iv.endpoint(side);
            let decl = self.boundary.get(side);
            let atom = self.speed.atoms.iter().find(|a| a.x == b).map(|a| a.mass);
            if decl != BoundaryBehavior::Unspecified && !iv.includes(side) {
                return Err(ModelError::Invalid(format!("boundary {b} is declared but not part of the state space")));
            }
            match decl {
                BoundaryBehavior::StickyReflecting { mass } => {
                    if !(mass > 0.0 && mass.is_finite()) || atom != Some(mass) {
                        return Err(ModelError::Invalid(format!(
                            "sticky boundary at {b} needs a matching finite atom of mass {mass}"
                        )));
                    }
                }
                BoundaryBehavior::InstantaneouslyReflecting if atom.is_some() => {
                    return Err(ModelError::Invalid(format!("instantaneously reflecting {b} cannot carry an atom")));
                }
                _ => {}
            }
        }
        for w in self.sample_compacts() {
            let m = self.speed.mass(w.0, w.1);
            if !(m > 0.0 && m.is_finite()) {
                return Err(ModelError::Invalid(format!("speed mass of [{}, {}] is {m}, not in (0, inf)", w.0, w.1)));
            }
        }
        Ok(())
    }

    /// A few compacts inside the interior, used to sanity-check the speed
    /// measure.
    pub fn sample_compacts(&self) -> Vec<(f64, f64)> {
        let p = self.interval.sample_points(5);
        vec![(p[0], p[1]), (p[1], p[3]), (p[3], p[4])]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn interval(&self) -> &StateInterval {
        &self.interval
    }

    pub fn scale(&self) -> &ScaleFunction {
        &self.scale
    }

    pub fn speed(&self) -> &SpeedMeasure {
        &self.speed
    }

    pub fn declared(&self, side: Side) -> BoundaryBehavior {
        self.boundary.get(side)
    }

    pub fn declared_boundary(&self) -> &DeclaredBoundary {
        &self.boundary
    }

    /// `|s(y) - s(b)| * density(y)`, the Lebesgue integrand of boundary and
    /// Green-kernel integrals near `b`. For coefficient models it is
    /// evaluated as `|∫_b^y exp(-∫_y^z 2 drift / vol^2) dz| / vol(y)^2`,
    /// which stays finite where `s'` underflows and the density overflows.
    pub fn scale_gap_density(&self, b: f64, y: f64) -> f64 {
        if let (ScaleKind::Coefficients { drift, vol, .. }, Density::Coefficients { drift: d2, vol: v2, .. }) =
            (self.scale.kind(), &self.speed.density)
        {
            if drift == d2 && vol == v2 && self.speed.weight().is_none() && b.is_finite() {
                let ratio = |z: f64| {
                    let e = quad::integrate(|w| 2.0 * drift.eval(w) / vol.eval(w).powi(2), y, z, 1e-14, 1e-12).value;
                    (-e).exp()
                };
                let gap = quad::integrate(ratio, b, y, 0.0, 1e-10).value.abs();
                return gap / vol.eval(y).powi(2);
            }
        }
        let d = self.speed.density_at(y);
        if d == 0.0 {
            return 0.0;
        }
        let gap = self.scale.diff(b, y).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap * d
        }
    }

    /// Replaces the speed measure; used for companion models.
    pub fn with_speed(&self, label: impl Into<String>, scale: ScaleFunction, speed: SpeedMeasure, boundary: DeclaredBoundary) -> Result<Self, ModelError> {
        Self::new(label, self.interval, scale, speed, boundary)
    }
}

/// Parameters for the built-in catalog. Unset fields take documented
/// defaults: `rho = 2`, `alpha = 0.3`, and for `absorbed_ito`
/// `drift = -1`, `vol = x`, `J = [0, inf)`, `anchor = 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuiltinParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<StateInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
}

pub const BUILTIN_NAMES: [&str; 6] = [
    "brownian",
    "sticky_bm",
    "skew_bm",
    "absorbed_ito",
    "counterexample_nondc",
    "counterexample_reflecting",
];

/// Builds a catalog model by name.
pub fn builtin(name: &str, params: &BuiltinParams) -> Result<DiffusionModel, ModelError> {
    let line = StateInterval::real_line();
    let none = DeclaredBoundary::default();
    match name {
        "brownian" => DiffusionModel::new("brownian", line, ScaleFunction::natural(line), SpeedMeasure::lebesgue(), none),
        "sticky_bm" => {
            let rho = params.rho.unwrap_or(2.0);
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(ModelError::BadParam(format!("stickiness rho must be positive, got {rho}")));
            }
            let speed = SpeedMeasure::new(Density::Constant { value: 1.0 }, vec![Atom { x: 0.0, mass: rho }], None)?;
            DiffusionModel::new(format!("sticky_bm(rho={rho})"), line, ScaleFunction::natural(line), speed, none)
        }
        "skew_bm" => {
            let alpha = params.alpha.unwrap_or(0.3);
            let scale = ScaleFunction::new(ScaleKind::Skew { alpha }, line)?;
            let speed = SpeedMeasure::new(
                Density::Piecewise { breaks: vec![0.0], values: vec![1.0 / alpha, 1.0 / (1.0 - alpha)] },
                vec![],
                None,
            )?;
            DiffusionModel::new(format!("skew_bm(alpha={alpha})"), line, scale, speed, none)
        }
        "absorbed_ito" => {
            let drift = params.drift.unwrap_or(Coefficient::constant(-1.0));
            let vol = params.vol.unwrap_or(Coefficient::linear(0.0, 1.0));
            let interval = params.interval.unwrap_or(StateInterval::half_line(true));
            interval.validate()?;
            let anchor = params.anchor.unwrap_or_else(|| interval.reference_point());
            let scale = scale_from_coefficients(drift, vol, interval, anchor)?;
            let speed = speed_from_coefficients(drift, vol, &scale)?;
            let absorb = |inc: bool| if inc { BoundaryBehavior::Absorbing } else { BoundaryBehavior::Unspecified };
            let boundary = DeclaredBoundary { lower: absorb(interval.lower_included), upper: absorb(interval.upper_included) };
            DiffusionModel::new("absorbed_ito", interval, scale, speed, boundary)
        }
        "counterexample_nondc" => {
            let scale = ScaleFunction::new(ScaleKind::Counterexample { side: CounterexampleSide::TwoSided }, line)?;
            let speed = SpeedMeasure::new(
                Density::Constant { value: 1.0 },
                vec![],
                Some(DyadicAtoms { two_sided: true, coeff: 1.0, power: 2.0 }),
            )?;
            DiffusionModel::new("counterexample_nondc", line, scale, speed, none)
        }
        "counterexample_reflecting" => {
            let half = StateInterval::half_line(true);
            let scale = ScaleFunction::new(ScaleKind::Counterexample { side: CounterexampleSide::HalfLine }, half)?;
            let speed = SpeedMeasure::new(
                Density::Constant { value: 1.0 },
                vec![],
                Some(DyadicAtoms { two_sided: false, coeff: 1.0, power: 2.0 }),
            )?;
            let boundary = DeclaredBoundary { lower: BoundaryBehavior::InstantaneouslyReflecting, upper: BoundaryBehavior::Unspecified };
            DiffusionModel::new("counterexample_reflecting", half, scale, speed, boundary)
        }
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// All catalog models with default parameters.
pub fn catalog() -> Vec<DiffusionModel> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n, &BuiltinParams::default()).expect("catalog defaults are valid"))
        .collect()
}

/// Scale function of `dX = drift dt + vol dW` anchored at `anchor`.
pub fn scale_from_coefficients(
    drift: Coefficient,
    vol: Coefficient,
    interval: StateInterval,
    anchor: f64,
) -> Result<ScaleFunction, ModelError> {
    interval.validate()?;
    if !interval.contains_interior(anchor) {
        return Err(ModelError::BadParam(format!("anchor {anchor} not in the interior")));
    }
    let pts = interval.sample_points(257);
    for &x in pts.iter().chain(std::iter::once(&anchor)) {
        if vol.eval(x).abs() < 1e-150 {
            return Err(ModelError::VolVanishes(x));
        }
    }
    let probe: Vec<f64> = interval.sample_points(9);
    for w in probe.windows(2) {
        let q = quad::integrate(|z| (1.0 + drift.eval(z).abs()) / vol.eval(z).powi(2), w[0], w[1], 1e-14, 1e-10);
        if !q.value.is_finite() || !q.converged {
            return Err(ModelError::QuadratureDiverged(w[0], w[1]));
        }
    }
    ScaleFunction::new(ScaleKind::Coefficients { drift, vol, anchor }, interval)
}

/// Speed measure `dx / (s'(x) vol(x)^2)` matching a coefficient-backed scale.
pub fn speed_from_coefficients(drift: Coefficient, vol: Coefficient, scale: &ScaleFunction) -> Result<SpeedMeasure, ModelError> {
    let anchor = match scale.kind() {
        ScaleKind::Coefficients { anchor, drift: d, vol: v } if *d == drift && *v == vol => *anchor,
        ScaleKind::Natural if drift.is_zero() => scale.domain().reference_point(),
        _ => {
            return Err(ModelError::Invalid(
                "speed_from_coefficients needs the scale built from the same coefficients".into(),
            ))
        }
    };
    for x in scale.domain().sample_points(257) {
        if vol.eval(x).abs() < 1e-150 {
            return Err(ModelError::VolVanishes(x));
        }
    }
    SpeedMeasure::new(Density::Coefficients { drift, vol, anchor }, vec![], None)
}

/// The smoothened spiked density `f(x)`, `x > 0`.
pub fn counterexample_density(x: f64) -> Result<f64, ModelError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ModelError::DomainError(format!("density defined for finite x > 0, got {x}")));
    }
    Ok(counterexample::density(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_validation() {
        assert!(StateInterval::new(1.0, 0.0, false, false).is_err());
        assert!(StateInterval::new(f64::NEG_INFINITY, 0.0, true, false).is_err());
        assert!(StateInterval::new(0.0, 1.0, true, true).is_ok());
    }

    #[test]
    fn catalog_examples() {
        let sticky = builtin("sticky_bm", &BuiltinParams { rho: Some(2.0), ..Default::default() }).unwrap();
        assert_eq!(sticky.speed().atoms, vec![Atom { x: 0.0, mass: 2.0 }]);
        assert!((sticky.speed().mass(-1.0, 1.0) - 4.0).abs() < 1e-12);
        let skew = builtin("skew_bm", &BuiltinParams { alpha: Some(0.3), ..Default::default() }).unwrap();
        assert!((skew.scale().value(1.0) - 0.7).abs() < 1e-15);
        assert!((skew.scale().value(-1.0) + 0.3).abs() < 1e-15);
        let nondc = builtin("counterexample_nondc", &BuiltinParams::default()).unwrap();
        assert!((nondc.speed().atom_mass(0.125) - 1.0 / 9.0).abs() < 1e-15);
        assert!((nondc.speed().mass(0.25, 0.5) - 1.5).abs() < 1e-12);
        let bm = builtin("brownian", &BuiltinParams::default()).unwrap();
        assert!((bm.speed().mass(0.0, 3.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_params_rejected() {
        assert!(matches!(
            builtin("sticky_bm", &BuiltinParams { rho: Some(0.0), ..Default::default() }),
            Err(ModelError::BadParam(_))
        ));
        assert!(matches!(
            builtin("skew_bm", &BuiltinParams { alpha: Some(0.5), ..Default::default() }),
            Err(ModelError::BadParam(_))
        ));
        assert!(matches!(builtin("nope", &BuiltinParams::default()), Err(ModelError::UnknownModel(_))));
    }

    #[test]
    fn density_domain() {
        assert!(counterexample_density(0.0).is_err());
        assert!((counterexample_density(0.125).unwrap() - 24.0).abs() < 1e-9);
        assert_eq!(counterexample_density(1.0).unwrap(), 2.0);
    }

    #[test]
    fn vol_vanishing_detected() {
        let r = scale_from_coefficients(
            Coefficient::constant(0.0),
            Coefficient::linear(0.0, 1.0),
            StateInterval::real_line(),
            1.0,
        );
        assert!(matches!(r, Err(ModelError::VolVanishes(_)) | Err(ModelError::QuadratureDiverged(..))));
    }

    #[test]
    fn spec_round_trip() {
        for m in catalog() {
            let spec = m.to_spec();
            let text = serde_json::to_string(&spec).unwrap();
            let back: ModelSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
            let rebuilt = DiffusionModel::from_spec(back).unwrap();
            assert_eq!(rebuilt.label(), m.label());
        }
    }

    #[test]
    fn sticky_boundary_needs_atom() {
        let iv = StateInterval::half_line(true);
        let r = DiffusionModel::new(
            "x",
            iv,
            ScaleFunction::natural(iv),
            SpeedMeasure::lebesgue(),
            DeclaredBoundary { lower: BoundaryBehavior::StickyReflecting { mass: 1.0 }, upper: BoundaryBehavior::Unspecified },
        );
        assert!(r.is_err());
    }
}
