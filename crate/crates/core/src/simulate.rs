//! Monte Carlo for general diffusions through a birth-death chain built
//! from `(s, m)`, an Euler-Maruyama sampler for the post-hit clock demo,
//! and strategy / hitting / martingale statistics on the ensembles.
//!
//! Chain paths move between neighbouring nodes and hold each node for its
//! mean exit time `2 ∫ G dm`, so a path is fully described by its up/down
//! bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{classify_boundary, Accessibility, Behavior, BoundaryError};
use crate::characteristics::{DiffusionModel, ModelError, Side};
use crate::quad;
use crate::verdict::{ArbitrageDescriptor, Direction, StrategyKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("empty truncation: {0}")]
    EmptyTruncation(String),
    #[error("need at least {MIN_CELLS} cells, got {0}")]
    TooFewCells(usize),
    #[error("start point {0} outside the chain")]
    BadStart(f64),
    #[error("no path exits before the horizon")]
    NoExits,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

pub const MIN_CELLS: usize = 16;
/// Scale distance from `x0` at which unbounded state spaces are cut.
pub const TRUNCATION_SCALE_UNITS: f64 = 8.0;
pub const MAX_STEPS: u32 = 1 << 25;
/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interior,
    Atom,
    Absorbing,
    Reflecting,
    /// Artificial absorbing end of a truncated state space.
    Truncation,
}

impl NodeKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, NodeKind::Absorbing | NodeKind::Truncation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridChain {
    pub label: String,
    pub nodes: Vec<f64>,
    pub scale_values: Vec<f64>,
    pub p_up: Vec<f64>,
    /// Mean holding time; `inf` at terminal nodes and where the Green mass
    /// diverges.
    #[serde(with = "extreal_vec")]
    pub holding_time: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    pub notices: Vec<String>,
}

mod extreal_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "crate::quad::extreal")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| W(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

impl GridChain {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nearest_node(&self, x: f64) -> usize {
        let i = self.nodes.partition_point(|&n| n < x);
        if i == 0 {
            0
        } else if i == self.nodes.len() || (x - self.nodes[i - 1]) <= (self.nodes[i] - x) {
            i - 1
        } else {
            i
        }
    }

    pub fn node_index(&self, x: f64) -> Option<usize> {
        let i = self.nearest_node(x);
        (self.nodes[i] == x).then_some(i)
    }

    /// `max_k |p_k s_{k+1} + (1 - p_k) s_{k-1} - s_k|` over interior nodes.
    pub fn martingale_defect(&self) -> f64 {
        (1..self.len() - 1)
            .filter(|&k| matches!(self.kinds[k], NodeKind::Interior | NodeKind::Atom))
            .map(|k| {
                let p = self.p_up[k];
                (p * self.scale_values[k + 1] + (1.0 - p) * self.scale_values[k - 1] - self.scale_values[k]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Truncation of the state space for paths started at `x0`: finite ends
/// with finite scale are kept, otherwise the cut is made 8 scale units from
/// `x0` (or where a finite scale limit is all but reached).
pub fn default_truncation(model: &DiffusionModel, x0: f64) -> Result<(f64, f64), SimError> {
    let iv = model.interval();
    if !iv.contains_interior(x0) {
        return Err(SimError::BadStart(x0));
    }
    let s = model.scale();
    let (sl, sr) = s.limits();
    let u0 = s.value(x0);
    let end = |b: f64, sb: f64, sign: f64| -> Result<f64, SimError> {
        if b.is_finite() && sb.is_finite() {
            return Ok(b);
        }
        let target = u0 + sign * TRUNCATION_SCALE_UNITS;
        let u = if sb.is_finite() && (sb - u0).abs() <= TRUNCATION_SCALE_UNITS {
            sb - 1e-6 * (sb - u0)
        } else {
            target
        };
        Ok(s.inverse(u)?)
    };
    Ok((end(iv.lower, sl, -1.0)?, end(iv.upper, sr, 1.0)?))
}

pub fn build_chain(model: &DiffusionModel, n_cells: usize, truncation: (f64, f64)) -> Result<GridChain, SimError> {
    build_chain_pinned(model, n_cells, truncation, &[])
}

/// [`build_chain`] with extra points forced onto the grid. Explicit atoms
/// and kinks of the scale are always pinned.
pub fn build_chain_pinned(
    model: &DiffusionModel,
    n_cells: usize,
    truncation: (f64, f64),
    pins: &[f64],
) -> Result<GridChain, SimError> {
    if n_cells < MIN_CELLS {
        return Err(SimError::TooFewCells(n_cells));
    }
    let iv = model.interval();
    let (a, b) = truncation;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(SimError::EmptyTruncation(format!("[{a}, {b}] is not a bounded interval")));
    }
    if !(iv.contains(a) && iv.contains(b)) && !(a == iv.lower || b == iv.upper) || a < iv.lower || b > iv.upper {
        return Err(SimError::EmptyTruncation(format!("[{a}, {b}] is not inside the state interval")));
    }
    let s = model.scale();
    let (sa, sb) = (s.value(a), s.value(b));
    if !(sa.is_finite() && sb.is_finite()) {
        return Err(SimError::EmptyTruncation("scale is infinite at a truncation end".into()));
    }
    let mut notices = Vec::new();
    let mut nodes = vec![a];
    let mut svals = vec![sa];
    for k in 1..n_cells {
        let u = sa + (sb - sa) * k as f64 / n_cells as f64;
        nodes.push(s.inverse(u)?);
        svals.push(u);
    }
    nodes.push(b);
    svals.push(sb);

    let mut wanted: Vec<f64> = pins.to_vec();
    for at in &model.speed().atoms {
        if at.x > a && at.x < b {
            wanted.push(at.x);
        } else if iv.contains_interior(at.x) {
            notices.push(format!("atom at {} outside the truncation dropped", at.x));
        }
    }
    wanted.extend(s.structural_points(a, b));
    wanted.retain(|&p| p > a && p < b);
    wanted.sort_by(f64::total_cmp);
    wanted.dedup();
    let mut pinned = vec![false; nodes.len()];
    pinned[0] = true;
    *pinned.last_mut().expect("nonempty") = true;
    for p in wanted {
        if nodes.contains(&p) {
            let i = nodes.iter().position(|&n| n == p).expect("present");
            pinned[i] = true;
            continue;
        }
        let u = s.value(p);
        let j = svals.partition_point(|&v| v < u);
        let near = if j > 0 && (j == svals.len() || u - svals[j - 1] <= svals[j] - u) { j - 1 } else { j };
        if !pinned[near] {
            nodes[near] = p;
            svals[near] = u;
            pinned[near] = true;
        } else {
            nodes.insert(j, p);
            svals.insert(j, u);
            pinned.insert(j, true);
        }
    }

    let n = nodes.len();
    let mut kinds = vec![NodeKind::Interior; n];
    for (idx, side) in [(0usize, Side::Lower), (n - 1, Side::Upper)] {
        let x = nodes[idx];
        kinds[idx] = if x == iv.endpoint(side) {
            let c = classify_boundary(model, side)?;
            match (c.accessibility, c.behavior) {
                (Accessibility::Accessible, Behavior::InstantaneouslyReflecting | Behavior::StickyReflecting { .. }) => {
                    NodeKind::Reflecting
                }
                _ => NodeKind::Absorbing,
            }
        } else {
            NodeKind::Truncation
        };
    }
    for k in 1..n - 1 {
        if model.speed().atom_mass(nodes[k]) > 0.0 {
            kinds[k] = NodeKind::Atom;
        }
    }

    let mut p_up = vec![0.0; n];
    let mut holding = vec![f64::INFINITY; n];
    for k in 0..n {
        match kinds[k] {
            NodeKind::Interior | NodeKind::Atom => {
                p_up[k] = (svals[k] - svals[k - 1]) / (svals[k + 1] - svals[k - 1]);
                holding[k] = green_holding(model, (nodes[k - 1], nodes[k], nodes[k + 1]), (svals[k - 1], svals[k], svals[k + 1]));
            }
            NodeKind::Reflecting if k == 0 => {
                p_up[k] = 1.0;
                holding[k] = reflecting_holding(model, nodes[0], nodes[1], svals[1], true);
            }
            NodeKind::Reflecting => {
                p_up[k] = 0.0;
                holding[k] = reflecting_holding(model, nodes[k], nodes[k - 1], svals[k - 1], false);
            }
            _ => {}
        }
        if !kinds[k].is_terminal() && !(holding[k] > 0.0) {
            return Err(SimError::BadParam(format!("no speed mass around node {}", nodes[k])));
        }
    }
    Ok(GridChain {
        label: model.label().to_string(),
        nodes,
        scale_values: svals,
        p_up,
        holding_time: holding,
        kinds,
        notices,
    })
}

/// `2 ∫ G_{xl,xr}(xk, y) m(dy)` over the open cell pair.
fn green_holding(model: &DiffusionModel, (xl, xk, xr): (f64, f64, f64), (sl, sk, sr): (f64, f64, f64)) -> f64 {
    let s = model.scale();
    let d = sr - sl;
    let left = |y: f64| model.scale_gap_density(xl, y) * (sr - sk) / d;
    let right = |y: f64| model.scale_gap_density(xr, y) * (sk - sl) / d;
    let g = |y: f64| {
        let (lo, hi) = if y < xk { (y, xk) } else { (xk, y) };
        (s.value(lo) - sl) * (sr - s.value(hi)) / d
    };
    let sp = model.speed();
    2.0 * (sp.integrate_parts(left, &g, xl, xk, false, true) + sp.integrate_parts(right, &g, xk, xr, false, false))
}

/// Mean time to reach the neighbour `x1` from a reflecting end `b`:
/// `2 ∫ |s(x1) - s(y)| m(dy)` over the cell including `b` itself, so a
/// sticky atom adds `2 |s(x1) - s(b)| m({b})`.
fn reflecting_holding(model: &DiffusionModel, b: f64, x1: f64, s1: f64, lower: bool) -> f64 {
    let s = model.scale();
    let h = |y: f64| model.scale_gap_density(x1, y);
    let g = |y: f64| (s1 - s.value(y)).abs();
    let sp = model.speed();
    2.0 * if lower {
        sp.integrate_parts(h, &g, b, x1, true, false)
    } else {
        sp.integrate_parts(h, &g, x1, b, false, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathEnd {
    Horizon,
    Absorbed,
    /// Stuck at a node with infinite holding time.
    Stuck,
    StepCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    bits: Vec<u64>,
    steps: u32,
    pub end: PathEnd,
}

impl ChainPath {
    pub fn steps(&self) -> u32 {
        self.steps
    }

    fn up(&self, i: u32) -> bool {
        (self.bits[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoPath {
    /// First grid time with `Y <= 0`.
    pub hit_time: Option<f64>,
    pub final_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathStore {
    Chain { chain: GridChain, start: usize, paths: Vec<ChainPath> },
    Demo { dt: f64, paths: Vec<DemoPath> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub label: String,
    pub seed: u64,
    pub horizon: f64,
    pub x0: f64,
    pub store: PathStore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub state: f64,
    /// `s(state)`; the state itself for the demo.
    pub scale: f64,
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn run_chain_path(chain: &GridChain, start: usize, horizon: f64, rng: &mut ChaCha8Rng) -> ChainPath {
    let mut bits = Vec::new();
    let mut steps = 0u32;
    let mut k = start;
    let mut t = 0.0;
    let end = loop {
        if chain.kinds[k].is_terminal() {
            break PathEnd::Absorbed;
        }
        let hold = chain.holding_time[k];
        if hold.is_infinite() {
            break PathEnd::Stuck;
        }
        if t + hold > horizon {
            break PathEnd::Horizon;
        }
        if steps == MAX_STEPS {
            break PathEnd::StepCap;
        }
        t += hold;
        let up = rng.gen::<f64>() < chain.p_up[k];
        if steps % 64 == 0 {
            bits.push(0u64);
        }
        if up {
            *bits.last_mut().expect("pushed") |= 1 << (steps % 64);
            k += 1;
        } else {
            k -= 1;
        }
        steps += 1;
    };
    bits.shrink_to_fit();
    ChainPath { bits, steps, end }
}

/// Seeded ensemble of chain paths from the node nearest `x0`. Path `i`
/// uses its own ChaCha stream, so results do not depend on scheduling.
pub fn simulate_paths(chain: &GridChain, x0: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<PathEnsemble, SimError> {
    if !(horizon > 0.0) {
        return Err(SimError::BadParam(format!("horizon must be positive, got {horizon}")));
    }
    if !(x0 >= chain.nodes[0] && x0 <= chain.nodes[chain.len() - 1]) {
        return Err(SimError::BadStart(x0));
    }
    let start = chain.nearest_node(x0);
    let paths: Vec<ChainPath> = (0..n_paths)
        .into_par_iter()
        .map(|i| run_chain_path(chain, start, horizon, &mut path_rng(seed, i as u64)))
        .collect();
    Ok(PathEnsemble {
        label: chain.label.clone(),
        seed,
        horizon,
        x0: chain.nodes[start],
        store: PathStore::Chain { chain: chain.clone(), start, paths },
    })
}

/// Euler-Maruyama for `dY = -dt + Y dW` until the first grid time with
/// `Y <= 0`; from there `Y` is snapped to 0 and grows like the clock.
pub fn simulate_demo_25(x0: f64, horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Result<PathEnsemble, SimError> {
    if !(x0 > 0.0) || !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SimError::BadParam("demo needs x0 > 0 and a finite positive horizon".into()));
    }
    if !(dt > 0.0 && dt <= horizon / 100.0) {
        return Err(SimError::BadParam(format!("dt must lie in (0, T/100], got {dt}")));
    }
    let n = (horizon / dt).ceil() as usize;
    let h = horizon / n as f64;
    let sq = h.sqrt();
    let paths: Vec<DemoPath> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut y = x0;
            for k in 1..=n {
                let z: f64 = rng.sample(StandardNormal);
                y += -h + y * sq * z;
                if y <= 0.0 {
                    let t0 = k as f64 * h;
                    return DemoPath { hit_time: Some(t0), final_value: horizon - t0 };
                }
            }
            DemoPath { hit_time: None, final_value: y }
        })
        .collect();
    Ok(PathEnsemble {
        label: "demo_post_hit_clock".into(),
        seed,
        horizon,
        x0,
        store: PathStore::Demo { dt: h, paths },
    })
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        match &self.store {
            PathStore::Chain { paths, .. } => paths.len(),
            PathStore::Demo { paths, .. } => paths.len(),
        }
    }

    pub fn chain(&self) -> Option<&GridChain> {
        match &self.store {
            PathStore::Chain { chain, .. } => Some(chain),
            PathStore::Demo { .. } => None,
        }
    }

    /// Visits the events of path `i` in time order, starting with the
    /// initial state at time 0, until `f` returns `false`. Chain paths are
    /// constant between events; the last state is kept up to the horizon.
    pub fn for_each_event(&self, i: usize, mut f: impl FnMut(Event) -> bool) {
        match &self.store {
            PathStore::Chain { chain, start, paths } => {
                let p = &paths[i];
                let mut k = *start;
                let mut t = 0.0;
                if !f(Event { time: t, state: chain.nodes[k], scale: chain.scale_values[k] }) {
                    return;
                }
                for j in 0..p.steps {
                    t += chain.holding_time[k];
                    if p.up(j) {
                        k += 1;
                    } else {
                        k -= 1;
                    }
                    if !f(Event { time: t, state: chain.nodes[k], scale: chain.scale_values[k] }) {
                        return;
                    }
                }
            }
            PathStore::Demo { paths, .. } => {
                let p = &paths[i];
                if !f(Event { time: 0.0, state: self.x0, scale: self.x0 }) {
                    return;
                }
                if let Some(t0) = p.hit_time {
                    if !f(Event { time: t0, state: 0.0, scale: 0.0 }) {
                        return;
                    }
                }
                f(Event { time: self.horizon, state: p.final_value, scale: p.final_value });
            }
        }
    }

    pub fn final_state(&self, i: usize) -> f64 {
        let mut last = self.x0;
        self.for_each_event(i, |e| {
            last = e.state;
            true
        });
        last
    }

    pub fn end_counts(&self) -> EndCounts {
        let mut c = EndCounts::default();
        match &self.store {
            PathStore::Chain { paths, .. } => {
                for p in paths {
                    match p.end {
                        PathEnd::Horizon => c.horizon += 1,
                        PathEnd::Absorbed => c.absorbed += 1,
                        PathEnd::Stuck => c.stuck += 1,
                        PathEnd::StepCap => c.step_cap += 1,
                    }
                }
            }
            PathStore::Demo { paths, .. } => c.horizon = paths.len(),
        }
        c
    }

    /// Number of paths that ever occupy the node nearest `x`.
    pub fn paths_visiting(&self, x: f64) -> usize {
        (0..self.n_paths())
            .into_par_iter()
            .filter(|&i| {
                let mut hit = false;
                self.for_each_event(i, |e| {
                    hit = e.state == x;
                    !hit
                });
                hit
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndCounts {
    pub horizon: usize,
    pub absorbed: usize,
    pub stuck: usize,
    pub step_cap: usize,
}

/// Fixed-order pairwise sum.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        v.iter().sum()
    } else {
        let m = v.len() / 2;
        pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        if v.is_empty() {
            return Self { mean: f64::NAN, std_err: f64::NAN };
        }
        let mean = pairwise_sum(v) / n;
        if v.len() < 2 {
            return Self { mean, std_err: 0.0 };
        }
        let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Self { mean, std_err: (var / n).sqrt() }
    }

    /// `|mean - target| <= k SE`; a zero SE demands agreement to roundoff.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let tol = if self.std_err > 0.0 { k * self.std_err } else { 1e-12 * (1.0 + target.abs()) };
        (self.mean - target).abs() <= tol
    }
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub a: f64,
    pub b: f64,
    pub n_paths: usize,
    pub n_exited: usize,
    pub p_hit_upper: Estimate,
    pub mean_exit_time: Estimate,
}

/// First-exit statistics of `(a, b)` over the paths that exit before the
/// horizon.
pub fn hitting_stats(ens: &PathEnsemble, a: f64, b: f64) -> Result<HittingStats, SimError> {
    if !(a < ens.x0 && ens.x0 < b) {
        return Err(SimError::BadParam(format!("need a < x0 < b, got a = {a}, x0 = {}, b = {b}", ens.x0)));
    }
    let exits: Vec<Option<(f64, f64)>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut out = None;
            ens.for_each_event(i, |e| {
                if e.state <= a || e.state >= b {
                    out = Some((if e.state >= b { 1.0 } else { 0.0 }, e.time));
                    return false;
                }
                true
            });
            out
        })
        .collect();
    let (ups, times): (Vec<f64>, Vec<f64>) = exits.iter().flatten().copied().unzip();
    if ups.is_empty() {
        return Err(SimError::NoExits);
    }
    Ok(HittingStats {
        a,
        b,
        n_paths: ens.n_paths(),
        n_exited: ups.len(),
        p_hit_upper: Estimate::from_samples(&ups),
        mean_exit_time: Estimate::from_samples(&times),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffStats {
    pub n: usize,
    pub min_payoff: f64,
    pub mean: f64,
    pub std_err: f64,
    pub frac_positive: f64,
    /// 99% Wilson interval.
    pub frac_positive_ci: (f64, f64),
    pub admissibility_violations: usize,
}

/// Gains `∫ H dX` of a strategy holding one unit from a trigger on, with
/// the running minimum checked against `-c`.
pub fn evaluate_strategy(ens: &PathEnsemble, strategy: &ArbitrageDescriptor, c: f64) -> PayoffStats {
    let (level, sign) = match strategy.kind {
        StrategyKind::BuyHoldAfterHit { level, direction: Direction::Long } => (level, 1.0),
        StrategyKind::BuyHoldAfterHit { level, direction: Direction::Short } => (level, -1.0),
        StrategyKind::PostHitClock { level } => (level, 1.0),
    };
    let tol = 1e-12 * (1.0 + level.abs());
    let per_path: Vec<(f64, f64)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut entry: Option<f64> = None;
            let mut value = 0.0f64;
            let mut running_min = 0.0f64;
            ens.for_each_event(i, |e| {
                match entry {
                    None => {
                        let hit = if sign > 0.0 { e.state <= level + tol } else { e.state >= level - tol };
                        if hit {
                            entry = Some(e.state);
                        }
                    }
                    Some(p) => {
                        value = sign * (e.state - p);
                        running_min = running_min.min(value);
                    }
                }
                true
            });
            (value, running_min)
        })
        .collect();
    let payoffs: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let est = Estimate::from_samples(&payoffs);
    let positive = payoffs.iter().filter(|&&v| v > 0.0).count();
    let n = payoffs.len();
    PayoffStats {
        n,
        min_payoff: payoffs.iter().copied().fold(f64::INFINITY, f64::min),
        mean: est.mean,
        std_err: est.std_err,
        frac_positive: if n == 0 { 0.0 } else { positive as f64 / n as f64 },
        frac_positive_ci: wilson_interval(positive, n, Z99),
        admissibility_violations: per_path.iter().filter(|p| p.1 < -c - 1e-12).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: f64,
    pub estimate: Estimate,
    pub target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub band: (f64, f64),
    pub raw: Vec<CheckpointRow>,
    pub scale: Vec<CheckpointRow>,
    pub raw_pass: bool,
    pub scale_pass: bool,
}

impl MartingaleReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,raw_mean,raw_se,raw_pass,scale_mean,scale_se,scale_pass\n");
        for (r, s) in self.raw.iter().zip(&self.scale) {
            out.push_str(&format!(
                "{},{:e},{:e},{},{:e},{:e},{}\n",
                r.t, r.estimate.mean, r.estimate.std_err, r.pass, s.estimate.mean, s.estimate.std_err, s.pass
            ));
        }
        out
    }
}

/// `E[X_{t ∧ τ}]` and `E[s(X_{t ∧ τ})]` at each checkpoint, `τ` the exit
/// time of `band`; each passes when within 3 SE of its start value.
pub fn martingale_test(ens: &PathEnsemble, checkpoints: &[f64], band: (f64, f64)) -> Result<MartingaleReport, SimError> {
    let (a, b) = band;
    if !(a < ens.x0 && ens.x0 < b) {
        return Err(SimError::BadParam(format!("stop band ({a}, {b}) must contain x0 = {}", ens.x0)));
    }
    if let Some(ch) = ens.chain() {
        if !(a >= ch.nodes[0] && b <= ch.nodes[ch.len() - 1]) {
            return Err(SimError::BadParam("stop band must lie inside the truncation".into()));
        }
    }
    let mut ts = checkpoints.to_vec();
    ts.sort_by(f64::total_cmp);
    let m = ts.len();
    let samples: Vec<Vec<(f64, f64)>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(m);
            let mut cur = (ens.x0, f64::NAN);
            ens.for_each_event(i, |e| {
                if e.time == 0.0 {
                    cur = (e.state, e.scale);
                    return true;
                }
                while out.len() < m && ts[out.len()] < e.time {
                    out.push(cur);
                }
                if out.len() == m {
                    return false;
                }
                cur = (e.state, e.scale);
                e.state > a && e.state < b
            });
            while out.len() < m {
                out.push(cur);
            }
            out
        })
        .collect();
    let x0 = ens.x0;
    let s_x0 = match &ens.store {
        PathStore::Chain { chain, start, .. } => chain.scale_values[*start],
        PathStore::Demo { .. } => x0,
    };
    let mut raw = Vec::with_capacity(m);
    let mut scale = Vec::with_capacity(m);
    for (j, &t) in ts.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|v| v[j].0).collect();
        let ss: Vec<f64> = samples.iter().map(|v| v[j].1).collect();
        let ex = Estimate::from_samples(&xs);
        let es = Estimate::from_samples(&ss);
        raw.push(CheckpointRow { t, estimate: ex, target: x0, pass: ex.within(x0, 3.0) });
        scale.push(CheckpointRow { t, estimate: es, target: s_x0, pass: es.within(s_x0, 3.0) });
    }
    Ok(MartingaleReport {
        band,
        raw_pass: raw.iter().all(|r| r.pass),
        scale_pass: scale.iter().all(|r| r.pass),
        raw,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_nodes: usize,
    pub lower: f64,
    pub upper: f64,
    pub lower_kind: NodeKind,
    pub upper_kind: NodeKind,
    pub martingale_defect: f64,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub label: String,
    pub seed: u64,
    #[serde(with = "quad::extreal")]
    pub horizon: f64,
    pub x0: f64,
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSummary>,
    pub ends: EndCounts,
    pub final_state: Estimate,
}

pub fn summarize(ens: &PathEnsemble) -> EnsembleSummary {
    let finals: Vec<f64> = (0..ens.n_paths()).into_par_iter().map(|i| ens.final_state(i)).collect();
    let grid = ens.chain().map(|c| GridSummary {
        n_nodes: c.len(),
        lower: c.nodes[0],
        upper: c.nodes[c.len() - 1],
        lower_kind: c.kinds[0],
        upper_kind: c.kinds[c.len() - 1],
        martingale_defect: c.martingale_defect(),
        notices: c.notices.clone(),
    });
    EnsembleSummary {
        label: ens.label.clone(),
        seed: ens.seed,
        horizon: ens.horizon,
        x0: ens.x0,
        n_paths: ens.n_paths(),
        grid,
        ends: ens.end_counts(),
        final_state: Estimate::from_samples(&finals),
    }
}

/// Per-path events of the first `max_paths` paths as `path,time,state`.
pub fn event_dump_csv(ens: &PathEnsemble, max_paths: usize) -> String {
    let mut out = String::from("path,time,state\n");
    for i in 0..ens.n_paths().min(max_paths) {
        ens.for_each_event(i, |e| {
            out.push_str(&format!("{i},{:e},{:e}\n", e.time, e.state));
            true
        });
    }
    out
}

pub fn hitting_csv(h: &HittingStats) -> String {
    format!(
        "a,b,n_paths,n_exited,p_hit_upper,p_se,mean_exit_time,exit_se\n{},{},{},{},{:e},{:e},{:e},{:e}\n",
        h.a,
        h.b,
        h.n_paths,
        h.n_exited,
        h.p_hit_upper.mean,
        h.p_hit_upper.std_err,
        h.mean_exit_time.mean,
        h.mean_exit_time.std_err
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{builtin, BuiltinParams};
    use crate::verdict::demo_certificate;

    fn cat(name: &str) -> DiffusionModel {
        builtin(name, &BuiltinParams::default()).unwrap()
    }

    #[test]
    fn brownian_node_zero() {
        let c = build_chain(&cat("brownian"), 64, (-1.0, 1.0)).unwrap();
        let k = c.node_index(0.0).unwrap();
        let h = c.nodes[k + 1] - c.nodes[k];
        assert!((c.p_up[k] - 0.5).abs() < 1e-15);
        assert!((c.holding_time[k] - h * h).abs() < 1e-12 * h * h);
        assert_eq!(c.kinds[0], NodeKind::Truncation);
    }

    #[test]
    fn sticky_atom_holding() {
        let c = build_chain(&cat("sticky_bm"), 64, (-1.0, 1.0)).unwrap();
        let k = c.node_index(0.0).unwrap();
        let h = c.nodes[k + 1] - c.nodes[k];
        assert_eq!(c.kinds[k], NodeKind::Atom);
        assert!((c.holding_time[k] - (h * h + 2.0 * h)).abs() < 1e-10);
    }

    #[test]
    fn skew_p_up_is_alpha() {
        let c = build_chain(&cat("skew_bm"), 64, (-1.0, 1.0)).unwrap();
        let k = c.node_index(0.0).unwrap();
        let (l, r) = (c.nodes[k - 1], c.nodes[k + 1]);
        let want = 0.3 * (-l) / (0.3 * (-l) + 0.7 * r);
        assert!((c.p_up[k] - want).abs() < 1e-14);
        assert!(c.martingale_defect() < 1e-14);
    }

    #[test]
    fn reflected_bm_exit_time() {
        use crate::characteristics::{BoundaryBehavior, DeclaredBoundary, ScaleFunction, SpeedMeasure, StateInterval};
        let half = StateInterval::half_line(true);
        let decl = DeclaredBoundary { lower: BoundaryBehavior::InstantaneouslyReflecting, upper: BoundaryBehavior::Unspecified };
        let m = DiffusionModel::new("reflected_bm", half, ScaleFunction::natural(half), SpeedMeasure::lebesgue(), decl).unwrap();
        let c = build_chain(&m, 32, (0.0, 1.0)).unwrap();
        let h = c.nodes[1];
        assert!((c.holding_time[0] - h * h).abs() < 1e-12);
        // E_0[T_1] = 1 for reflected Brownian motion.
        let e = simulate_paths(&c, 0.0, f64::INFINITY, 4000, 1).unwrap();
        let times: Vec<f64> = (0..e.n_paths())
            .map(|i| {
                let mut t = 0.0;
                e.for_each_event(i, |ev| {
                    t = ev.time;
                    true
                });
                t
            })
            .collect();
        let est = Estimate::from_samples(&times);
        assert!(est.within(1.0, 4.0), "{est:?}");
    }

    #[test]
    fn reflecting_boundary_node() {
        let c = build_chain(&cat("counterexample_reflecting"), 64, (0.0, 4.0)).unwrap();
        assert_eq!(c.kinds[0], NodeKind::Reflecting);
        assert_eq!(c.p_up[0], 1.0);
        assert!(c.holding_time[0].is_finite() && c.holding_time[0] > 0.0);
    }

    #[test]
    fn reproducible_and_scheduling_free() {
        let c = build_chain(&cat("brownian"), 32, (-1.0, 1.0)).unwrap();
        let a = simulate_paths(&c, 0.0, 1.0, 200, 11).unwrap();
        let b = simulate_paths(&c, 0.0, 1.0, 200, 11).unwrap();
        assert_eq!(a, b);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c1 = one.install(|| simulate_paths(&c, 0.0, 1.0, 200, 11).unwrap());
        assert_eq!(a, c1);
        let d = simulate_paths(&c, 0.0, 1.0, 200, 12).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn events_strictly_increasing() {
        let c = build_chain(&cat("sticky_bm"), 32, (-1.0, 1.0)).unwrap();
        let e = simulate_paths(&c, 0.0, 2.0, 50, 3).unwrap();
        for i in 0..e.n_paths() {
            let mut last = -1.0;
            e.for_each_event(i, |ev| {
                assert!(ev.time > last);
                assert!(c.node_index(ev.state).is_some());
                last = ev.time;
                true
            });
            assert!(last <= 2.0);
        }
    }

    #[test]
    fn zero_position_strategy() {
        let c = build_chain(&cat("brownian"), 32, (-1.0, 1.0)).unwrap();
        let e = simulate_paths(&c, 0.0, 1.0, 100, 5).unwrap();
        let s = ArbitrageDescriptor {
            kind: StrategyKind::BuyHoldAfterHit { level: -5.0, direction: Direction::Long },
            admissibility_bound: 0.0,
        };
        let p = evaluate_strategy(&e, &s, 0.0);
        assert_eq!(p.min_payoff, 0.0);
        assert_eq!(p.frac_positive, 0.0);
    }

    #[test]
    fn demo_payoffs_in_range() {
        let e = simulate_demo_25(0.1, 1.0, 1e-3, 500, 9).unwrap();
        let p = evaluate_strategy(&e, &demo_certificate(), 0.0);
        assert!(p.min_payoff >= 0.0);
        assert!(p.frac_positive > 0.0);
        if let PathStore::Demo { paths, .. } = &e.store {
            for q in paths {
                if let Some(t0) = q.hit_time {
                    assert!((0.0..=1.0).contains(&(1.0 - t0)));
                }
            }
        }
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100, Z99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.1);
        let (lo, hi) = wilson_interval(50, 100, Z99);
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }
}
