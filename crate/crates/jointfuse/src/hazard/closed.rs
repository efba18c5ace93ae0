//! Closed-form cumulative hazards for flat and piecewise-constant baselines
//! when the log relative hazard is affine in time: log lambda_i(s) =
//! log lambda_0(s) + A0 + A1 s.

/// Below this |A1 t| the exact form 0/0-degenerates; a second-order
/// expansion in A1 t takes over. The switch keys on the product because the
/// expansion's validity does: a tiny slope over a huge horizon is not a
/// small perturbation.
pub const A1_EPSILON: f64 = 1e-8;

/// Cumulative hazards are clamped here; exp(-cap) underflows to zero
/// survival long before this, so the clamp only tames overflow.
pub const CUM_HAZARD_CAP: f64 = 1e300;

/// integral of exp(a1 u) du over [0, dt], stable for small and large a1*dt.
fn exp_ramp_integral(a1: f64, dt: f64) -> f64 {
    if (a1 * dt).abs() <= A1_EPSILON {
        // Second-order expansion around a1 dt = 0.
        dt * (1.0 + 0.5 * a1 * dt)
    } else {
        (a1 * dt).exp_m1() / a1
    }
}

/// log of `exp_ramp_integral`, used when the direct form overflows.
fn log_exp_ramp_integral(a1: f64, dt: f64) -> f64 {
    if (a1 * dt).abs() <= A1_EPSILON {
        (dt * (1.0 + 0.5 * a1 * dt)).ln()
    } else if a1 > 0.0 {
        // (e^{a1 dt} - 1)/a1, written to survive a1*dt beyond 700.
        a1 * dt + (-((-(a1 * dt)).exp_m1())).ln() - a1.ln()
    } else {
        (-((a1 * dt).exp_m1())).ln() - (-a1).ln()
    }
}

/// Cumulative hazard of lambda(s) = lambda0 exp(A0 + A1 s) over [0, t].
///
/// Exact value lambda0 e^{A0} (e^{A1 t} - 1)/A1 with the expansion
/// lambda0 e^{A0} t (1 + A1 t / 2) when |A1 t| <= `A1_EPSILON`. Large
/// exponents are evaluated in log space and the result is clamped at
/// `CUM_HAZARD_CAP`.
pub fn cum_hazard_closed_constant(a0: f64, a1: f64, lambda0: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    let log_scale = lambda0.ln() + a0;
    if log_scale < 600.0 && a1 * t < 600.0 {
        let v = log_scale.exp() * exp_ramp_integral(a1, t);
        return v.min(CUM_HAZARD_CAP);
    }
    let log_v = log_scale + log_exp_ramp_integral(a1, t);
    if log_v >= CUM_HAZARD_CAP.ln() {
        CUM_HAZARD_CAP
    } else {
        log_v.exp()
    }
}

/// Index of the interval containing t under right-closed cuts:
/// (0, k_1], (k_1, k_2], ..., (k_{J-1}, inf).
pub fn piecewise_interval(knots: &[f64], t: f64) -> usize {
    knots.partition_point(|&k| k < t)
}

/// Cumulative hazard for a step baseline with heights `heights` cut at
/// `knots` (one fewer knot than heights), times exp(A0 + A1 s).
///
/// Each covered segment contributes h_j e^{A0 + A1 s_{j-1}} times a ramp
/// integral over the segment length; the pieces are summed left to right.
pub fn cum_hazard_closed_piecewise(
    a0: f64,
    a1: f64,
    heights: &[f64],
    knots: &[f64],
    t: f64,
) -> f64 {
    debug_assert_eq!(heights.len(), knots.len() + 1);
    debug_assert!(t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0f64;
    let mut seg_start = 0.0;
    for (j, &h) in heights.iter().enumerate() {
        let seg_end = if j < knots.len() { knots[j].min(t) } else { t };
        if seg_end <= seg_start {
            break;
        }
        let dt = seg_end - seg_start;
        let term_log_scale = a0 + a1 * seg_start + h.ln();
        if term_log_scale < 600.0 && a1 * dt < 600.0 {
            acc += term_log_scale.exp() * exp_ramp_integral(a1, dt);
        } else {
            let log_term = term_log_scale + log_exp_ramp_integral(a1, dt);
            acc += if log_term >= CUM_HAZARD_CAP.ln() {
                CUM_HAZARD_CAP
            } else {
                log_term.exp()
            };
        }
        if acc >= CUM_HAZARD_CAP {
            return CUM_HAZARD_CAP;
        }
        seg_start = seg_end;
        if seg_end >= t {
            break;
        }
    }
    acc.min(CUM_HAZARD_CAP)
}
