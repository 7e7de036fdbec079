//! Accessibility and behavior of boundary points and interior bad points,
//! via integral tests in scale coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::scale::shell_edges;
use crate::characteristics::speed::{DYADIC_MAX_N, SHELLS};
use crate::characteristics::{BoundaryBehavior, DiffusionModel, Side, SpeedMeasure};
use crate::quad;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("boundary {0} is accessible but its behavior is not declared")]
    NeedsDeclaration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accessibility {
    Accessible,
    Inaccessible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Absorbing,
    InstantaneouslyReflecting,
    StickyReflecting { mass: f64 },
    NotApplicable,
}

/// One geometric shell of an improper boundary integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellRow {
    pub outer: f64,
    pub inner: f64,
    #[serde(with = "quad::extreal")]
    pub contribution: f64,
    #[serde(with = "quad::extreal")]
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClassification {
    pub side: Side,
    #[serde(with = "quad::extreal")]
    pub point: f64,
    pub accessibility: Accessibility,
    pub behavior: Behavior,
    /// `s(b±)`.
    #[serde(with = "quad::extreal")]
    pub scale_limit: f64,
    /// `∫ |s(x) - s(b)| m(dx)` near `b`; `inf` when not computed because
    /// the scale limit is infinite.
    #[serde(with = "quad::extreal")]
    pub integral_estimate: f64,
    pub evidence: Vec<ShellRow>,
}

/// Feller accessibility test at one end of the state interval.
pub fn classify_boundary(model: &DiffusionModel, side: Side) -> Result<BoundaryClassification, BoundaryError> {
    let iv = model.interval();
    let b = iv.endpoint(side);
    let c = iv.reference_point();
    let (lo, hi) = model.scale().limits();
    let scale_limit = match side {
        Side::Lower => lo,
        Side::Upper => hi,
    };
    if scale_limit.is_infinite() {
        return Ok(BoundaryClassification {
            side,
            point: b,
            accessibility: Accessibility::Inaccessible,
            behavior: Behavior::NotApplicable,
            scale_limit,
            integral_estimate: f64::INFINITY,
            evidence: Vec::new(),
        });
    }
    let speed = model.speed();
    let g = |x: f64| {
        if x == b {
            0.0
        } else if b.is_finite() {
            model.scale().diff(b, x).abs()
        } else {
            (scale_limit - model.scale().value(x)).abs()
        }
    };
    let h = |x: f64| {
        if b.is_finite() {
            model.scale_gap_density(b, x)
        } else {
            let d = speed.density_at(x);
            if d == 0.0 {
                0.0
            } else {
                g(x) * d
            }
        }
    };
    let total = match side {
        Side::Lower => speed.integrate_parts(h, &g, b, c, false, true),
        Side::Upper => speed.integrate_parts(h, &g, c, b, true, false),
    };
    let evidence = shell_table(speed, &h, &g, c, b);
    let accessibility = if total.is_finite() { Accessibility::Accessible } else { Accessibility::Inaccessible };
    let behavior = match accessibility {
        Accessibility::Inaccessible => Behavior::NotApplicable,
        Accessibility::Accessible => behavior_at(model, side)?,
    };
    Ok(BoundaryClassification { side, point: b, accessibility, behavior, scale_limit, integral_estimate: total, evidence })
}

/// Behavior of an accessible boundary: the declaration wins, then the atom
/// at `b` (infinite: absorbing, finite: sticky). An included endpoint with
/// neither is instantaneously reflecting (`m({b}) = 0`); an excluded one
/// needs a declaration.
fn behavior_at(model: &DiffusionModel, side: Side) -> Result<Behavior, BoundaryError> {
    let iv = model.interval();
    let b = iv.endpoint(side);
    match model.declared(side) {
        BoundaryBehavior::Absorbing => return Ok(Behavior::Absorbing),
        BoundaryBehavior::InstantaneouslyReflecting => return Ok(Behavior::InstantaneouslyReflecting),
        BoundaryBehavior::StickyReflecting { mass } => return Ok(Behavior::StickyReflecting { mass }),
        BoundaryBehavior::Unspecified => {}
    }
    match model.speed().atoms.iter().find(|a| a.x == b) {
        Some(a) if a.mass.is_infinite() => Ok(Behavior::Absorbing),
        Some(a) => Ok(Behavior::StickyReflecting { mass: a.mass }),
        None if iv.includes(side) => Ok(Behavior::InstantaneouslyReflecting),
        None => Err(BoundaryError::NeedsDeclaration(b)),
    }
}

fn shell_table<H: Fn(f64) -> f64, G: Fn(f64) -> f64>(speed: &SpeedMeasure, h: &H, g: &G, c: f64, b: f64) -> Vec<ShellRow> {
    let edges = shell_edges(c, b, SHELLS);
    let mut partial = 0.0;
    edges
        .windows(2)
        .map(|w| {
            let (outer, inner) = (w[0], w[1]);
            let (p, q) = if outer < inner { (outer, inner) } else { (inner, outer) };
            // Half-open toward c so atoms are counted once.
            let (ia, ib) = if outer < inner { (true, false) } else { (false, true) };
            let contribution = speed.integrate_parts(h, g, p, q, ia, ib);
            partial += contribution;
            ShellRow { outer, inner, contribution, partial_sum: partial }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Neighborhood `(c, c + eps]`.
    Above,
    /// Neighborhood `[c - eps, c)`.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomPartialSum {
    pub x: f64,
    pub term: f64,
    pub partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorAccessibility {
    pub point: f64,
    pub from: Approach,
    pub eps: f64,
    pub accessibility: Accessibility,
    #[serde(with = "quad::extreal")]
    pub integral_estimate: f64,
    #[serde(with = "quad::extreal")]
    pub lebesgue_part: f64,
    /// `|x - c| m({x})` in order of decreasing distance from `c`.
    pub atom_partial_sums: Vec<AtomPartialSum>,
}

/// Number of atom partial sums listed in reports.
pub const REPORTED_ATOM_TERMS: usize = 64;

/// Accessibility of an interior point `c` for the natural-scale diffusion
/// with speed `speed`, approached from one side within `eps`:
/// inaccessible iff `∫ |x - c| m(dx)` over that neighborhood diverges.
pub fn interior_point_accessibility(speed: &SpeedMeasure, c: f64, from: Approach, eps: f64) -> InteriorAccessibility {
    let (a, b, ia, ib) = match from {
        Approach::Above => (c, c + eps, false, true),
        Approach::Below => (c - eps, c, true, false),
    };
    let g = |x: f64| (x - c).abs();
    let lebesgue_part = speed.integrate_parts(
        |x| {
            let d = speed.density_at(x);
            if d == 0.0 {
                0.0
            } else {
                g(x) * d
            }
        },
        &|_| 0.0,
        a,
        b,
        ia,
        ib,
    );
    let total = speed.integrate(g, a, b, ia, ib);
    let mut atoms = speed.atoms_in(a, b, DYADIC_MAX_N);
    atoms.retain(|at| at.x != c);
    atoms.sort_by(|p, q| g(q.x).total_cmp(&g(p.x)));
    let mut partial = 0.0;
    let atom_partial_sums = atoms
        .iter()
        .take(REPORTED_ATOM_TERMS)
        .map(|at| {
            let term = g(at.x) * at.mass;
            partial += term;
            AtomPartialSum { x: at.x, term, partial_sum: partial }
        })
        .collect();
    InteriorAccessibility {
        point: c,
        from,
        eps,
        accessibility: if total.is_finite() { Accessibility::Accessible } else { Accessibility::Inaccessible },
        integral_estimate: total,
        lebesgue_part,
        atom_partial_sums,
    }
}

/// Both ends of the state interval.
pub fn classify_both(model: &DiffusionModel) -> Result<[BoundaryClassification; 2], BoundaryError> {
    Ok([classify_boundary(model, Side::Lower)?, classify_boundary(model, Side::Upper)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{
        builtin, BuiltinParams, Coefficient, Density, StateInterval,
    };
    use crate::regularity::companion_speed;

    fn cat(name: &str) -> DiffusionModel {
        builtin(name, &BuiltinParams::default()).unwrap()
    }

    #[test]
    fn counterexample_infinite_ends_inaccessible() {
        let m = cat("counterexample_nondc");
        let [lo, hi] = classify_both(&m).unwrap();
        assert_eq!(lo.accessibility, Accessibility::Inaccessible);
        assert_eq!(hi.accessibility, Accessibility::Inaccessible);
        assert_eq!(lo.behavior, Behavior::NotApplicable);
    }

    #[test]
    fn reflecting_origin_accessible() {
        let m = cat("counterexample_reflecting");
        let lo = classify_boundary(&m, Side::Lower).unwrap();
        assert_eq!(lo.accessibility, Accessibility::Accessible);
        assert_eq!(lo.behavior, Behavior::InstantaneouslyReflecting);
        assert!(lo.integral_estimate.is_finite());
    }

    #[test]
    fn geometric_bm_origin_inaccessible() {
        let m = builtin(
            "absorbed_ito",
            &BuiltinParams {
                drift: Some(Coefficient::constant(0.0)),
                interval: Some(StateInterval::half_line(false)),
                ..Default::default()
            },
        )
        .unwrap();
        let lo = classify_boundary(&m, Side::Lower).unwrap();
        assert_eq!(lo.accessibility, Accessibility::Inaccessible);
    }

    #[test]
    fn absorbed_ito_origin_accessible_and_absorbing() {
        let m = cat("absorbed_ito");
        let lo = classify_boundary(&m, Side::Lower).unwrap();
        assert_eq!(lo.accessibility, Accessibility::Accessible, "{lo:?}");
        assert_eq!(lo.behavior, Behavior::Absorbing);
        let hi = classify_boundary(&m, Side::Upper).unwrap();
        assert_eq!(hi.accessibility, Accessibility::Inaccessible);
    }

    #[test]
    fn companion_origin_inaccessible_with_harmonic_partial_sums() {
        let m = cat("counterexample_nondc");
        let c = companion_speed(&m).unwrap();
        let r = interior_point_accessibility(&c, 0.0, Approach::Above, 1.0);
        assert_eq!(r.accessibility, Accessibility::Inaccessible);
        let mut h = 0.0;
        for (n, row) in r.atom_partial_sums.iter().take(30).enumerate() {
            h += 1.0 / (n + 1) as f64;
            assert!((row.partial_sum - h).abs() < 1e-12 * h, "N={}", n + 1);
        }
        let below = interior_point_accessibility(&c, 0.0, Approach::Below, 1.0);
        assert_eq!(below.accessibility, Accessibility::Inaccessible);
    }

    #[test]
    fn detector_agrees_with_closed_form_series() {
        let c = companion_speed(&cat("counterexample_nondc")).unwrap();
        for k in [2, 5, 8] {
            let eps = (-(k as f64)).exp2();
            let r = interior_point_accessibility(&c, 0.0, Approach::Above, eps);
            // Closed form: the atom terms are 1/n for n >= k, a divergent tail.
            assert_eq!(r.accessibility, Accessibility::Inaccessible, "eps=2^-{k}");
            assert!((r.atom_partial_sums[0].term - 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn lebesgue_and_inverse_density_accessible() {
        let bm = SpeedMeasure::lebesgue();
        let r = interior_point_accessibility(&bm, 0.0, Approach::Above, 0.5);
        assert_eq!(r.accessibility, Accessibility::Accessible);
        assert!((r.integral_estimate - 0.125).abs() < 1e-12);
        let inv = SpeedMeasure::new(Density::Power { coeff: 1.0, exponent: -1.0 }, vec![], None).unwrap();
        let r = interior_point_accessibility(&inv, 0.0, Approach::Above, 0.5);
        assert_eq!(r.accessibility, Accessibility::Accessible);
        assert!((r.integral_estimate - 0.5).abs() < 1e-8);
    }

    #[test]
    fn excluded_accessible_end_needs_declaration() {
        let iv = StateInterval::new(0.0, 1.0, false, false).unwrap();
        let m = DiffusionModel::new(
            "bm on (0,1)",
            iv,
            crate::characteristics::ScaleFunction::natural(iv),
            SpeedMeasure::lebesgue(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(classify_boundary(&m, Side::Lower), Err(BoundaryError::NeedsDeclaration(0.0)));
    }
}
