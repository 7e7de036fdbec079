//! Three-valued NA / ACLMM decisions with evidence, rule traces and
//! certificates.
//!
//! Theorem-forced rules come first; the only non-forced positive rule is
//! the companion "pattern rule", which is labeled as such in the trace.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::boundary::{
    classify_boundary, interior_point_accessibility, Accessibility, Approach, Behavior, BoundaryClassification,
    BoundaryError, InteriorAccessibility,
};
use crate::characteristics::{Atom, Density, DiffusionModel, ModelError, Side, StateInterval};
use crate::regularity::{
    companion_model, companion_speed, dc_check, singular_points, DcReport, DcTarget, DcVerdict, SingularKind,
    SingularPoint, DEFAULT_DC_LEVELS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerdictError {
    #[error("start point {0} is not in the interior of the state interval")]
    BadStart(f64),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn is_finite(&self) -> bool {
        matches!(self, Horizon::Finite(_))
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Horizon {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Horizon::Infinite);
        }
        match t.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Horizon::Finite(v)),
            _ => Err(format!("horizon must be a positive number or \"inf\", got '{s}'")),
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Horizon::Finite(t) => s.serialize_f64(*t),
            Horizon::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = crate::quad::extreal::deserialize(d)?;
        if v == f64::INFINITY {
            Ok(Horizon::Infinite)
        } else if v > 0.0 && v.is_finite() {
            Ok(Horizon::Finite(v))
        } else {
            Err(serde::de::Error::custom("horizon must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tri {
    True,
    False,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcStatus {
    True,
    False,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaStatus {
    Holds,
    Fails,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AclmmStatus {
    Exists,
    NotExists,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcWindow {
    pub window: (f64, f64),
    pub verdict: DcVerdict,
    pub divergence_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEvidence {
    pub c1_aclmm_exists: Tri,
    pub c1_witness: String,
    pub c2_scale_dc: DcStatus,
    pub c2_windows: Vec<DcWindow>,
    /// The failing window's report, or the largest checked window's.
    pub c2_report: DcReport,
    pub c3_boundaries_ok: bool,
    pub boundaries: Vec<BoundaryClassification>,
    pub singular_points: Vec<SingularPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Long,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    /// Hold one unit (long or short) from the first hit of `level` on.
    BuyHoldAfterHit { level: f64, direction: Direction },
    /// Hold one unit after the first hit of `level` of a price that then
    /// moves like the clock.
    PostHitClock { level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageDescriptor {
    pub kind: StrategyKind,
    pub admissibility_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanionDescriptor {
    pub density: Density,
    pub weighted_by_scale_derivative: bool,
    pub atoms_preview: Vec<Atom>,
    pub absorbed_boundaries: Vec<f64>,
    pub bad_points: Vec<InteriorAccessibility>,
    pub boundary_checks: Vec<BoundaryClassification>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Certificate {
    Arbitrage(ArbitrageDescriptor),
    Companion(CompanionDescriptor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementStatus {
    True,
    False,
    Unknown,
    PartiallyDetermined,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementCheck {
    pub statement: String,
    pub status: StatementStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub model: String,
    pub horizon: Horizon,
    pub x0: f64,
    pub na: NaStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub na_reason: Option<String>,
    pub aclmm: AclmmStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aclmm_reason: Option<String>,
    pub evidence: ConditionEvidence,
    pub certificate: Option<Certificate>,
    pub rule_trace: Vec<String>,
    pub consistency: Vec<StatementCheck>,
}

pub const PATTERN_RULE: &str = "pattern rule";
pub const UNKNOWN_REASON: &str =
    "deterministic NA criterion of the companion literature not reproduced here";

/// Parts of the evidence that do not depend on `x0` or the horizon.
#[derive(Debug, Clone)]
pub struct ModelAnalysis<'a> {
    pub model: &'a DiffusionModel,
    pub c2: DcStatus,
    pub c2_windows: Vec<DcWindow>,
    pub c2_report: DcReport,
    pub c3: bool,
    pub boundaries: Vec<BoundaryClassification>,
    pub singular: Vec<SingularPoint>,
}

/// Exhausting compacts of the interior used for the dc check of `s`.
pub fn c2_windows(iv: &StateInterval) -> Vec<(f64, f64)> {
    let c = iv.reference_point();
    (0..3)
        .map(|k| {
            let f = (-(k as f64) - 1.0).exp2();
            let lo = if iv.lower.is_finite() { iv.lower + (c - iv.lower) * f } else { c - (k as f64).exp2() };
            let hi = if iv.upper.is_finite() {
                iv.upper - (iv.upper - c) * f
            } else {
                c + ((k + 1) as f64).exp2() - 1.0
            };
            (lo, hi)
        })
        .collect()
}

impl<'a> ModelAnalysis<'a> {
    pub fn new(model: &'a DiffusionModel) -> Result<Self, VerdictError> {
        let mut c2_windows_out = Vec::new();
        let mut decisive = None;
        let mut all_dc = true;
        for (k, w) in c2_windows(model.interval()).into_iter().enumerate() {
            // Wider windows reach steeper features and need finer grids.
            let r = dc_check(model.scale(), DcTarget::Scale, w, DEFAULT_DC_LEVELS + 2 * k);
            c2_windows_out.push(DcWindow { window: w, verdict: r.verdict, divergence_ratio: r.divergence_ratio });
            all_dc &= r.verdict == DcVerdict::Dc;
            let stop = r.verdict == DcVerdict::NotDc;
            decisive = Some(r);
            if stop {
                break;
            }
        }
        let c2_report = decisive.expect("at least one window");
        let c2 = match c2_report.verdict {
            DcVerdict::NotDc => DcStatus::False,
            _ if all_dc => DcStatus::True,
            _ => DcStatus::Inconclusive,
        };
        let boundaries = vec![classify_boundary(model, Side::Lower)?, classify_boundary(model, Side::Upper)?];
        let c3 = boundaries.iter().all(|b| {
            !b.point.is_finite() || b.accessibility == Accessibility::Inaccessible || b.behavior == Behavior::Absorbing
        });
        let iv = model.interval();
        let singular = singular_points(model.scale(), iv.lower, iv.upper);
        Ok(Self { model, c2, c2_windows: c2_windows_out, c2_report, c3, boundaries, singular })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AclmmDecision {
    pub status: Tri,
    pub witness: String,
    pub descriptor: Option<CompanionDescriptor>,
    pub trace: Vec<String>,
}

/// Decides (c1) at `x0`.
pub fn aclmm_decide(model: &DiffusionModel, x0: f64, horizon: Horizon) -> Result<AclmmDecision, VerdictError> {
    check_start(model, x0)?;
    let analysis = ModelAnalysis::new(model)?;
    Ok(decide_c1(&analysis, x0, horizon))
}

fn check_start(model: &DiffusionModel, x0: f64) -> Result<(), VerdictError> {
    if model.interval().contains_interior(x0) {
        Ok(())
    } else {
        Err(VerdictError::BadStart(x0))
    }
}

fn decide_c1(a: &ModelAnalysis, x0: f64, horizon: Horizon) -> AclmmDecision {
    let model = a.model;
    let mut trace = Vec::new();
    let at_x0 = a.singular.iter().find(|p| p.x == x0);
    if matches!(at_x0, Some(p) if p.kind == SingularKind::BlowUp) {
        trace.push("c1: x0 is a blow-up point of s'_+; an ACLMM here would force (d) and hence c2".into());
        return AclmmDecision { status: Tri::False, witness: "none: x0 is a blow-up point".into(), descriptor: None, trace };
    }
    if model.scale().is_natural() && a.c3 {
        trace.push("c1: natural scale and c3; P itself is a local martingale measure".into());
        return AclmmDecision {
            status: Tri::True,
            witness: "P itself".into(),
            descriptor: companion_descriptor(a, Vec::new(), Vec::new()),
            trace,
        };
    }
    if !horizon.is_finite() && (a.c2 == DcStatus::False || !a.c3) {
        trace.push("c1: infinite horizon with c2 or c3 failing; no ACLMM by the infinite-horizon equivalence".into());
        return AclmmDecision { status: Tri::False, witness: "none".into(), descriptor: None, trace };
    }
    if horizon.is_finite() {
        if let Some(d) = pattern_rule(a, x0, &mut trace) {
            trace.push(format!("c1: {PATTERN_RULE}: every bad point and non-absorbing boundary is companion-inaccessible"));
            return AclmmDecision {
                status: Tri::True,
                witness: "companion law P~ (natural scale, speed s'_+ dm)".into(),
                descriptor: Some(d),
                trace,
            };
        }
    }
    trace.push("c1: undecided by the implemented rules".into());
    AclmmDecision { status: Tri::Unknown, witness: UNKNOWN_REASON.into(), descriptor: None, trace }
}

/// The sufficient pattern: the companion diffusion started at `x0` never
/// reaches a bad point of the scale or a boundary where it would differ
/// from `P`.
fn pattern_rule(a: &ModelAnalysis, x0: f64, trace: &mut Vec<String>) -> Option<CompanionDescriptor> {
    let model = a.model;
    if a.singular.iter().any(|p| p.x == x0) {
        trace.push(format!("{PATTERN_RULE}: x0 = {x0} is itself a kink of s"));
        return None;
    }
    let comp = match companion_speed(model) {
        Ok(c) => c,
        Err(e) => {
            trace.push(format!("{PATTERN_RULE}: companion speed unavailable ({e})"));
            return None;
        }
    };
    let left = a.singular.iter().filter(|p| p.x < x0).last();
    let right = a.singular.iter().find(|p| p.x > x0);
    let mut bad_points = Vec::new();
    for (sp, from) in [(left, Approach::Above), (right, Approach::Below)] {
        if let Some(sp) = sp {
            let eps = (x0 - sp.x).abs().min(1.0);
            let r = interior_point_accessibility(&comp, sp.x, from, eps);
            let ok = r.accessibility == Accessibility::Inaccessible;
            trace.push(format!(
                "{PATTERN_RULE}: singular point {} is {} for the companion",
                sp.x,
                if ok { "inaccessible" } else { "accessible" }
            ));
            bad_points.push(r);
            if !ok {
                return None;
            }
        }
    }
    let mut cm = None;
    let mut checks = Vec::new();
    for (i, side) in [Side::Lower, Side::Upper].into_iter().enumerate() {
        let blocked = match side {
            Side::Lower => left.is_some(),
            Side::Upper => right.is_some(),
        };
        let p_class = &a.boundaries[i];
        if blocked || !p_class.point.is_finite() {
            continue;
        }
        if cm.is_none() {
            match companion_model(model) {
                Ok(m) => cm = Some(m),
                Err(e) => {
                    trace.push(format!("{PATTERN_RULE}: companion model invalid ({e})"));
                    return None;
                }
            }
        }
        let c_class = match classify_boundary(cm.as_ref().expect("just built"), side) {
            Ok(c) => c,
            Err(e) => {
                trace.push(format!("{PATTERN_RULE}: companion boundary undetermined ({e})"));
                return None;
            }
        };
        let c_inacc = c_class.accessibility == Accessibility::Inaccessible;
        let p_inacc = p_class.accessibility == Accessibility::Inaccessible;
        let needs = p_inacc || p_class.behavior != Behavior::Absorbing;
        checks.push(c_class);
        if needs && !c_inacc {
            trace.push(format!("{PATTERN_RULE}: boundary {} is reachable by the companion but not absorbing for P", p_class.point));
            return None;
        }
    }
    companion_descriptor(a, bad_points, checks)
}

fn companion_descriptor(
    a: &ModelAnalysis,
    bad_points: Vec<InteriorAccessibility>,
    boundary_checks: Vec<BoundaryClassification>,
) -> Option<CompanionDescriptor> {
    let model = a.model;
    let comp = companion_speed(model).ok()?;
    let iv = model.interval();
    let absorbed = [Side::Lower, Side::Upper]
        .into_iter()
        .filter(|&s| iv.includes(s))
        .map(|s| iv.endpoint(s))
        .collect();
    let c = iv.reference_point();
    let mut atoms_preview = comp.atoms_in(c - 1.0, c + 1.0, 8);
    atoms_preview.truncate(16);
    Some(CompanionDescriptor {
        density: comp.density.clone(),
        weighted_by_scale_derivative: !model.scale().is_natural(),
        atoms_preview,
        absorbed_boundaries: absorbed,
        bad_points,
        boundary_checks,
        note: "candidate ACLMM is the natural-scale law P~ with speed s'_+ dm, absorbed at accessible boundaries".into(),
    })
}

/// Constructive arbitrage for failure modes that have one: a reflecting
/// accessible boundary is bought (lower) or sold (upper) from its first hit.
pub fn arbitrage_certificate(evidence: &ConditionEvidence) -> Option<ArbitrageDescriptor> {
    for b in &evidence.boundaries {
        if !b.point.is_finite() || b.accessibility != Accessibility::Accessible {
            continue;
        }
        if matches!(b.behavior, Behavior::InstantaneouslyReflecting | Behavior::StickyReflecting { .. }) {
            let direction = match b.side {
                Side::Lower => Direction::Long,
                Side::Upper => Direction::Short,
            };
            return Some(ArbitrageDescriptor {
                kind: StrategyKind::BuyHoldAfterHit { level: b.point, direction },
                admissibility_bound: 0.0,
            });
        }
    }
    None
}

/// Certificate for the non-Markov regime-switch demo: one unit held after
/// the price first reaches 0, when it then grows like the clock.
pub fn demo_certificate() -> ArbitrageDescriptor {
    ArbitrageDescriptor { kind: StrategyKind::PostHitClock { level: 0.0 }, admissibility_bound: 0.0 }
}

pub fn na_verdict(model: &DiffusionModel, x0: f64, horizon: Horizon) -> Result<Verdict, VerdictError> {
    check_start(model, x0)?;
    let analysis = ModelAnalysis::new(model)?;
    na_verdict_with(&analysis, x0, horizon)
}

/// [`na_verdict`] reusing a precomputed model analysis.
pub fn na_verdict_with(a: &ModelAnalysis, x0: f64, horizon: Horizon) -> Result<Verdict, VerdictError> {
    check_start(a.model, x0)?;
    let c1 = decide_c1(a, x0, horizon);
    let mut trace = c1.trace.clone();
    let evidence = ConditionEvidence {
        c1_aclmm_exists: c1.status,
        c1_witness: c1.witness.clone(),
        c2_scale_dc: a.c2,
        c2_windows: a.c2_windows.clone(),
        c2_report: a.c2_report.clone(),
        c3_boundaries_ok: a.c3,
        boundaries: a.boundaries.clone(),
        singular_points: a.singular.clone(),
    };
    let c1_status = match c1.status {
        Tri::True => AclmmStatus::Exists,
        Tri::False => AclmmStatus::NotExists,
        Tri::Unknown => AclmmStatus::Unknown,
    };
    let (na, aclmm, na_reason, aclmm_reason);
    if a.model.scale().is_natural() && a.c3 {
        trace.push("R1: natural scale and c3 => NA holds, P is an equivalent local martingale measure".into());
        na = NaStatus::Holds;
        aclmm = AclmmStatus::Exists;
        na_reason = None;
        aclmm_reason = None;
    } else if a.c2 == DcStatus::False || !a.c3 || c1.status == Tri::False {
        if c1.status == Tri::False && a.c2 != DcStatus::False && a.c3 {
            trace.push("R2: no ACLMM at x0 => NA fails (NA implies an ACLMM)".into());
        } else {
            trace.push("R2: c2 or c3 fails => NA fails".into());
        }
        na = NaStatus::Fails;
        na_reason = None;
        if !horizon.is_finite() {
            trace.push("R2: infinite horizon => no ACLMM by the NA/ACLMM equivalence".into());
            aclmm = AclmmStatus::NotExists;
            aclmm_reason = None;
        } else {
            aclmm = c1_status;
            aclmm_reason = (c1_status == AclmmStatus::Unknown).then(|| UNKNOWN_REASON.to_string());
        }
    } else if c1.status == Tri::True && a.c2 == DcStatus::True && a.c3 {
        trace.push("R3: c1, c2 and c3 hold => NA holds".into());
        na = NaStatus::Holds;
        aclmm = AclmmStatus::Exists;
        na_reason = None;
        aclmm_reason = None;
    } else {
        trace.push(format!("R4: {UNKNOWN_REASON}"));
        na = NaStatus::Unknown;
        na_reason = Some(UNKNOWN_REASON.into());
        aclmm = c1_status;
        aclmm_reason = (c1_status == AclmmStatus::Unknown).then(|| UNKNOWN_REASON.to_string());
    }
    let certificate = if na == NaStatus::Fails {
        arbitrage_certificate(&evidence).map(Certificate::Arbitrage)
    } else {
        None
    }
    .or_else(|| {
        if aclmm == AclmmStatus::Exists {
            c1.descriptor.clone().map(Certificate::Companion)
        } else {
            None
        }
    });
    let consistency = theorem_consistency(&evidence, horizon);
    Ok(Verdict {
        model: a.model.label().to_string(),
        horizon,
        x0,
        na,
        na_reason,
        aclmm,
        aclmm_reason,
        evidence,
        certificate,
        rule_trace: trace,
        consistency,
    })
}

fn and3(vals: [Tri; 3]) -> Tri {
    if vals.contains(&Tri::False) {
        Tri::False
    } else if vals.contains(&Tri::Unknown) {
        Tri::Unknown
    } else {
        Tri::True
    }
}

fn status_of(t: Tri) -> StatementStatus {
    match t {
        Tri::True => StatementStatus::True,
        Tri::False => StatementStatus::False,
        Tri::Unknown => StatementStatus::Unknown,
    }
}

/// Statements (a)-(d) of the finite-horizon equivalence (which also holds
/// for an infinite horizon) derived from the evidence at one `x0`.
pub fn theorem_consistency(e: &ConditionEvidence, horizon: Horizon) -> Vec<StatementCheck> {
    let c2 = match e.c2_scale_dc {
        DcStatus::True => Tri::True,
        DcStatus::False => Tri::False,
        DcStatus::Inconclusive => Tri::Unknown,
    };
    let c3 = if e.c3_boundaries_ok { Tri::True } else { Tri::False };
    // c1 failing at x0 rules out (d1), hence every equivalent statement.
    let all = if e.c1_aclmm_exists == Tri::False { Tri::False } else { and3([e.c1_aclmm_exists, c2, c3]) };
    let d1 = match (all, e.c1_aclmm_exists) {
        (Tri::True, _) => StatementStatus::True,
        (_, Tri::False) => StatementStatus::False,
        (Tri::False, Tri::True) => StatementStatus::PartiallyDetermined,
        _ => StatementStatus::Unknown,
    };
    let s = |name: &str, status: StatementStatus| StatementCheck { statement: name.to_string(), status };
    let mut out = vec![
        s("(a) NA for some x0", status_of(all)),
        s("(b) NA for all x0", status_of(all)),
        s("(c) c1 and c2 and c3", status_of(all)),
        s("(c1) ACLMM at some x0", status_of(e.c1_aclmm_exists)),
        s("(c2) s is dc", status_of(c2)),
        s("(c3) finite boundaries inaccessible or absorbing", status_of(c3)),
        s("(d) d1 and d2", status_of(all)),
        s("(d1) ACLMM for all x0", d1),
        s("(d2) finite boundaries inaccessible or absorbing", status_of(c3)),
    ];
    let bad_c3 = e.boundaries.iter().any(|b| {
        b.point.is_finite() && b.accessibility == Accessibility::Accessible && b.behavior != Behavior::Absorbing
    });
    if bad_c3 == e.c3_boundaries_ok {
        out.push(s("c3 mirrors the boundary classifications", StatementStatus::Contradiction));
    }
    if !horizon.is_finite() && e.c1_aclmm_exists == Tri::True && (c2 == Tri::False || c3 == Tri::False) {
        out.push(s("infinite horizon: ACLMM at x0 implies c2 and c3", StatementStatus::Contradiction));
    }
    out
}

/// Violations of the verdict invariants; empty for a consistent verdict.
pub fn check_invariants(v: &Verdict) -> Vec<String> {
    let e = &v.evidence;
    let mut out = Vec::new();
    let c2_true = e.c2_scale_dc == DcStatus::True;
    let c2_false = e.c2_scale_dc == DcStatus::False;
    if v.na == NaStatus::Holds && !(v.aclmm == AclmmStatus::Exists && c2_true && e.c3_boundaries_ok) {
        out.push("na holds without ACLMM, c2 and c3".to_string());
    }
    if e.c1_aclmm_exists == Tri::True && c2_true && e.c3_boundaries_ok && v.na != NaStatus::Holds {
        out.push("c1, c2, c3 hold but na is not Holds".to_string());
    }
    if (c2_false || !e.c3_boundaries_ok) && v.na != NaStatus::Fails {
        out.push("c2 or c3 fails but na is not Fails".to_string());
    }
    if !v.horizon.is_finite() {
        let decided = v.na != NaStatus::Unknown && v.aclmm != AclmmStatus::Unknown;
        if decided && (v.na == NaStatus::Holds) != (v.aclmm == AclmmStatus::Exists) {
            out.push("infinite horizon: na and aclmm disagree".to_string());
        }
    }
    if v.na == NaStatus::Fails
        && arbitrage_certificate(e).is_some()
        && !matches!(v.certificate, Some(Certificate::Arbitrage(_)))
    {
        out.push("constructive failure without an arbitrage certificate".to_string());
    }
    for c in &v.consistency {
        if c.status == StatementStatus::Contradiction {
            out.push(format!("contradiction: {}", c.statement));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{builtin, BuiltinParams};

    fn cat(name: &str) -> DiffusionModel {
        builtin(name, &BuiltinParams::default()).unwrap()
    }

    fn ev(c1: Tri, c2: DcStatus, c3: bool) -> ConditionEvidence {
        let v = na_verdict(&cat("brownian"), 0.0, Horizon::Finite(1.0)).unwrap();
        let mut e = v.evidence;
        e.c1_aclmm_exists = c1;
        e.c2_scale_dc = c2;
        e.c3_boundaries_ok = c3;
        e
    }

    fn status(checks: &[StatementCheck], prefix: &str) -> StatementStatus {
        checks.iter().find(|c| c.statement.starts_with(prefix)).unwrap().status
    }

    #[test]
    fn horizon_parsing() {
        assert_eq!("inf".parse::<Horizon>().unwrap(), Horizon::Infinite);
        assert_eq!("2.5".parse::<Horizon>().unwrap(), Horizon::Finite(2.5));
        assert!("-1".parse::<Horizon>().is_err());
        let j = serde_json::to_string(&Horizon::Infinite).unwrap();
        assert_eq!(j, "\"inf\"");
        assert_eq!(serde_json::from_str::<Horizon>(&j).unwrap(), Horizon::Infinite);
    }

    #[test]
    fn sticky_holds_by_r1() {
        let v = na_verdict(&cat("sticky_bm"), 0.0, Horizon::Finite(1.0)).unwrap();
        assert_eq!(v.na, NaStatus::Holds);
        assert_eq!(v.aclmm, AclmmStatus::Exists);
        assert!(v.rule_trace.iter().any(|r| r.starts_with("R1")));
        assert!(check_invariants(&v).is_empty());
    }

    #[test]
    fn consistency_all_true() {
        let c = theorem_consistency(&ev(Tri::True, DcStatus::True, true), Horizon::Finite(1.0));
        for p in ["(a)", "(b)", "(c)", "(d)"] {
            assert_eq!(status(&c, p), StatementStatus::True, "{p}");
        }
    }

    #[test]
    fn consistency_c2_false_partial() {
        let c = theorem_consistency(&ev(Tri::True, DcStatus::False, true), Horizon::Finite(1.0));
        assert_eq!(status(&c, "(c)"), StatementStatus::False);
        assert_eq!(status(&c, "(a)"), StatementStatus::False);
        assert_eq!(status(&c, "(d1)"), StatementStatus::PartiallyDetermined);
    }

    #[test]
    fn consistency_unknown_propagates() {
        let c = theorem_consistency(&ev(Tri::Unknown, DcStatus::True, true), Horizon::Finite(1.0));
        assert_eq!(status(&c, "(a)"), StatementStatus::Unknown);
    }

    #[test]
    fn infinite_horizon_contradiction_flagged() {
        let c = theorem_consistency(&ev(Tri::True, DcStatus::False, true), Horizon::Infinite);
        assert!(c.iter().any(|s| s.status == StatementStatus::Contradiction));
    }

    #[test]
    fn counterexample_verdicts() {
        let m = cat("counterexample_nondc");
        let a = ModelAnalysis::new(&m).unwrap();
        assert_eq!(a.c2, DcStatus::False);
        let v = na_verdict_with(&a, 1.0, Horizon::Finite(1.0)).unwrap();
        assert_eq!((v.na, v.aclmm), (NaStatus::Fails, AclmmStatus::Exists), "{:?}", v.rule_trace);
        assert!(v.rule_trace.iter().any(|r| r.contains(PATTERN_RULE)));
        let v = na_verdict_with(&a, 1.0, Horizon::Infinite).unwrap();
        assert_eq!((v.na, v.aclmm), (NaStatus::Fails, AclmmStatus::NotExists));
        let v = na_verdict_with(&a, 0.0, Horizon::Finite(1.0)).unwrap();
        assert_eq!(v.aclmm, AclmmStatus::NotExists);
        assert!(arbitrage_certificate(&v.evidence).is_none());
    }

    #[test]
    fn reflecting_verdict_and_certificate() {
        let v = na_verdict(&cat("counterexample_reflecting"), 1.0, Horizon::Finite(1.0)).unwrap();
        assert_eq!(v.evidence.c2_scale_dc, DcStatus::True, "{:?}", v.evidence.c2_windows);
        assert_eq!((v.na, v.aclmm), (NaStatus::Fails, AclmmStatus::Exists));
        match v.certificate {
            Some(Certificate::Arbitrage(d)) => assert_eq!(
                d.kind,
                StrategyKind::BuyHoldAfterHit { level: 0.0, direction: Direction::Long }
            ),
            other => panic!("{other:?}"),
        }
        assert!(check_invariants(&v).is_empty());
    }

    #[test]
    fn skew_is_unknown() {
        let v = na_verdict(&cat("skew_bm"), 0.5, Horizon::Finite(1.0)).unwrap();
        assert_eq!(v.na, NaStatus::Unknown);
        assert_eq!(v.aclmm, AclmmStatus::Unknown);
        assert_eq!(v.na_reason.as_deref(), Some(UNKNOWN_REASON));
    }

    #[test]
    fn brownian_aclmm_witness() {
        let d = aclmm_decide(&cat("brownian"), 0.0, Horizon::Infinite).unwrap();
        assert_eq!(d.status, Tri::True);
        assert_eq!(d.witness, "P itself");
    }

    #[test]
    fn bad_start_rejected() {
        assert_eq!(
            na_verdict(&cat("counterexample_reflecting"), 0.0, Horizon::Finite(1.0)).unwrap_err(),
            VerdictError::BadStart(0.0)
        );
    }
}
