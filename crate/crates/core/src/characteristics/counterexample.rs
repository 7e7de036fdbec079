//! The spiked density `f` behind the non-dc scale counterexample and its
//! antiderivative.
//!
//! Work in the coordinate `t = -log2(x)`. The upper envelope is
//! `U(t) = t 2^t` (value `|log2 x| / x`), the lower envelope is
//! `L(t) = 2^t / t^2` (value `1 / (x log2(x)^2)`). On each dyadic block
//! `t in [n, n+1]` the log-density is piecewise linear in `t`:
//!
//! * a falling spike flank from `ln U(n)` at `t = n` to `ln L` at `t = n + w_n`,
//! * the lower envelope on `[n + w_n, n + 1 - w_{n+1}]`,
//! * a rising flank from `ln L` up to `ln U(n+1)` at `t = n + 1`,
//!
//! with `w_n = 1 / (4 n^3)`. `ln L` is convex and `ln U` concave in `t`, so the
//! flanks stay between the envelopes. The spike widths make `∫_0 f` finite.
//! For `x > 1/2` the density is the constant 2.

use std::f64::consts::LN_2;
use std::sync::OnceLock;

/// Last block carrying a spike; beyond it the density equals the lower
/// envelope. `2^-1075` is below the smallest positive double.
pub const LAST_SPIKE_BLOCK: usize = 1075;

pub(crate) fn spike_halfwidth(n: usize) -> f64 {
    let n = n as f64;
    0.25 / (n * n * n)
}

fn ln_upper(t: f64) -> f64 {
    t.ln() + t * LN_2
}

fn ln_lower(t: f64) -> f64 {
    t * LN_2 - 2.0 * t.ln()
}

/// A piece of the log-density on which it is affine in `t` (or the lower
/// envelope, flagged by `envelope = true`).
#[derive(Debug, Clone, Copy)]
struct Piece {
    t0: f64,
    t1: f64,
    l0: f64,
    l1: f64,
    envelope: bool,
}

fn pieces_of_block(n: usize) -> [Piece; 3] {
    let nf = n as f64;
    let wl = spike_halfwidth(n);
    let a = nf + wl;
    let (b, up) = if n < LAST_SPIKE_BLOCK {
        (nf + 1.0 - spike_halfwidth(n + 1), ln_upper(nf + 1.0))
    } else {
        (nf + 1.0, ln_lower(nf + 1.0))
    };
    [
        Piece { t0: nf, t1: a, l0: ln_upper(nf), l1: ln_lower(a), envelope: false },
        Piece { t0: a, t1: b, l0: ln_lower(a), l1: ln_lower(b), envelope: true },
        Piece { t0: b, t1: nf + 1.0, l0: ln_lower(b), l1: up, envelope: b == nf + 1.0 },
    ]
}

fn ln_density_t(t: f64) -> f64 {
    if t < 1.0 {
        return 2f64.ln();
    }
    let n = t.floor() as usize;
    if n > LAST_SPIKE_BLOCK {
        return ln_lower(t);
    }
    for p in pieces_of_block(n) {
        if t <= p.t1 {
            if p.envelope {
                return ln_lower(t);
            }
            let beta = (p.l1 - p.l0) / (p.t1 - p.t0);
            return p.l0 + beta * (t - p.t0);
        }
    }
    ln_upper(n as f64 + 1.0)
}

/// `ln2 * ∫_{ta}^{tb} f(t) 2^{-t} dt` over a sub-range of one piece, which is
/// `∫ f dx` over the matching `x` range.
fn piece_integral(p: &Piece, ta: f64, tb: f64) -> f64 {
    if tb <= ta {
        return 0.0;
    }
    if p.envelope {
        // f 2^{-t} = 1/t^2 on the envelope.
        return LN_2 * (1.0 / ta - 1.0 / tb);
    }
    let beta = (p.l1 - p.l0) / (p.t1 - p.t0);
    let c = beta - LN_2;
    let g0 = p.l0 + beta * (ta - p.t0) - ta * LN_2;
    let d = tb - ta;
    let factor = if c.abs() < 1e-300 { d } else { (c * d).exp_m1() / c };
    LN_2 * g0.exp() * factor
}

fn block_integral_from(n: usize, t: f64) -> f64 {
    pieces_of_block(n)
        .iter()
        .map(|p| piece_integral(p, t.max(p.t0), p.t1))
        .sum()
}

/// `s(2^-m)` for m = 1..=LAST_SPIKE_BLOCK + 1, stored at index m.
fn dyadic_values() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let k = LAST_SPIKE_BLOCK;
        let mut s = vec![0.0; k + 2];
        s[k + 1] = LN_2 / (k as f64 + 1.0);
        for m in (1..=k).rev() {
            s[m] = s[m + 1] + block_integral_from(m, m as f64);
        }
        s
    })
}

/// The smoothened density `f(x)` for `x > 0`.
pub fn density(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x > 0.5 {
        2.0
    } else {
        ln_density_t(-x.log2()).exp()
    }
}

/// `∫_0^x f(y) dy` for `x >= 0`.
pub fn integral(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let table = dyadic_values();
    if x > 0.5 {
        return table[1] + 2.0 * (x - 0.5);
    }
    let t = -x.log2();
    let n = t.floor() as usize;
    if n > LAST_SPIKE_BLOCK {
        return LN_2 / t;
    }
    table[n + 1] + block_integral_from(n, t)
}

/// Inverse of [`integral`] on `[0, inf)`.
pub fn inverse_integral(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let table = dyadic_values();
    if u >= table[1] {
        return 0.5 + 0.5 * (u - table[1]);
    }
    let k = LAST_SPIKE_BLOCK;
    if u < table[k + 1] {
        return (-(LN_2 / u)).exp2();
    }
    // table[1..] is decreasing; find n with table[n+1] <= u < table[n].
    let n = table[1..=k + 1].partition_point(|&v| v > u);
    let lo = (-(n as f64) - 1.0).exp2();
    let hi = (-(n as f64)).exp2();
    super::scale::solve_increasing(|x| integral(x) - u, lo, hi)
}

/// Points in `(a, b)` (with `0 <= a`) where `f` changes formula.
pub fn kinks(a: f64, b: f64, max_points: usize) -> Vec<f64> {
    let mut out = Vec::new();
    if b <= a || b <= 0.0 {
        return out;
    }
    if a < 0.5 && b > 0.5 {
        out.push(0.5);
    }
    let t_hi = if a > 0.0 { -a.log2() } else { f64::INFINITY };
    let t_lo = (-b.log2()).max(1.0);
    let mut n = t_lo.floor().max(1.0) as usize;
    while (n as f64) <= t_hi && n <= LAST_SPIKE_BLOCK && out.len() < max_points {
        for p in pieces_of_block(n) {
            for t in [p.t0, p.t1] {
                let x = (-t).exp2();
                if x > a && x < b {
                    out.push(x);
                }
            }
        }
        n += 1;
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Lower envelope `1 / (x log2(x)^2)`.
pub fn lower_envelope(x: f64) -> f64 {
    let l = x.log2();
    1.0 / (x * l * l)
}

/// Upper envelope `|log2 x| / x`.
pub fn upper_envelope(x: f64) -> f64 {
    x.log2().abs() / x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    #[test]
    fn dyadic_values_match_spikes() {
        for n in 1..=20 {
            let x = (-(n as f64)).exp2();
            let expected = n as f64 * (n as f64).exp2();
            assert!((density(x) - expected).abs() <= 1e-9 * expected, "n={n}");
        }
        assert_eq!(density(1.0), 2.0);
        assert!((density(0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_bounds_hold_off_dyadics() {
        for i in 1..4000 {
            let x = 0.5 * (i as f64 / 4000.0).powi(6);
            if x <= 0.0 {
                continue;
            }
            let f = density(x);
            let lo = lower_envelope(x);
            let hi = upper_envelope(x);
            assert!(f >= lo * (1.0 - 1e-12) && f <= hi * (1.0 + 1e-12), "x={x} f={f} [{lo},{hi}]");
        }
    }

    #[test]
    fn falls_then_rises_on_each_block() {
        for n in 1..12 {
            let a = (-(n as f64) - 1.0).exp2();
            let b = (-(n as f64)).exp2();
            let m = 20_000;
            let vals: Vec<f64> = (0..=m)
                .map(|i| density(a + (b - a) * i as f64 / m as f64))
                .collect();
            let imin = vals
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .unwrap()
                .0;
            assert!(vals[..=imin].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "n={n}");
            assert!(vals[imin..].windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)), "n={n}");
        }
    }

    #[test]
    fn closed_form_integral_matches_quadrature() {
        // Independent route: adaptive quadrature of the density split at kinks.
        for &(a, b) in &[(0.25, 0.5), (0.125, 0.3), (2f64.powi(-9), 2f64.powi(-4)), (0.4, 3.0)] {
            let br = kinks(a, b, 10_000);
            let q = quad::integrate_split(density, a, b, &br, 1e-13, 1e-12);
            let closed = integral(b) - integral(a);
            assert!((q.value - closed).abs() < 1e-9 * (1.0 + closed), "[{a},{b}] {} vs {closed}", q.value);
        }
    }

    #[test]
    fn inverse_round_trip() {
        for &x in &[1e-300, 1e-40, 3e-9, 2f64.powi(-12), 0.07, 0.25, 0.4375, 0.5, 0.9, 4.0] {
            let back = inverse_integral(integral(x));
            assert!((back - x).abs() <= 1e-12 * x, "{x} -> {back}");
        }
    }

    #[test]
    fn integral_is_finite_and_continuous_near_zero() {
        let s_half = integral(0.5);
        assert!(s_half.is_finite() && s_half > LN_2);
        assert!(integral(1e-300) < 0.01);
        for n in 2..60 {
            let x = (-(n as f64)).exp2();
            let l = integral(x * (1.0 - 1e-12));
            let r = integral(x * (1.0 + 1e-12));
            assert!((r - l).abs() < 1e-9, "jump at 2^-{n}");
        }
    }
}
