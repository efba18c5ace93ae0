//! Fixed-order quadrature rules on [-1, 1] used for cumulative hazards.
//!
//! Two rule families: Gauss-Legendre of configurable order (nodes found by
//! Newton iteration on the Legendre polynomial) and the hard-coded 15-point
//! Gauss-Kronrod rule. Both integrate on [-1, 1]; `scale_to_interval` maps a
//! rule onto [a, b] so `sum(w_i * f(x_i))` approximates the integral there.

use thiserror::Error;

/// Largest supported Gauss-Legendre order.
pub const MAX_LEGENDRE_ORDER: usize = 64;

/// Smallest supported Gauss-Legendre order.
pub const MIN_LEGENDRE_ORDER: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("unsupported Gauss-Legendre order {0}, expected {MIN_LEGENDRE_ORDER}..={MAX_LEGENDRE_ORDER}")]
    UnsupportedOrder(usize),
    #[error("empty interval [{a}, {b}]")]
    EmptyInterval { a: f64, b: f64 },
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFiniteIntegrand(f64),
}

/// Which family a rule came from. Kronrod15 is the default for hazard work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    GaussLegendre,
    Kronrod15,
}

/// Nodes and weights, stored in ascending node order.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Positive Gauss-Kronrod 15-point abscissae (QUADPACK dqk15 values).
const KRONROD15_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Weights matching `KRONROD15_NODES`; the final entry belongs to x = 0.
const KRONROD15_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Builds the K-point Gauss-Legendre rule by Newton iteration on P_K.
///
/// Roots start from the Chebyshev-like guess cos(pi (i - 1/4) / (K + 1/2))
/// and converge quadratically; weights are 2 / ((1 - x^2) P_K'(x)^2). Only
/// the positive half is solved, the rest is mirrored so the rule is exactly
/// symmetric.
pub fn legendre_rule(order: usize) -> Result<QuadratureRule, QuadratureError> {
    if !(MIN_LEGENDRE_ORDER..=MAX_LEGENDRE_ORDER).contains(&order) {
        return Err(QuadratureError::UnsupportedOrder(order));
    }
    let k = order;
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    // Solve for the first half (positive roots); i counts roots from +1 down.
    for i in 0..(k + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_value_and_derivative(k, x);
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_value_and_derivative(k, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Roots were solved from the largest down; store ascending.
        nodes[k - 1 - i] = x;
        weights[k - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if k % 2 == 1 {
        // Odd orders own the exact midpoint; the mirror loop wrote it twice.
        nodes[k / 2] = 0.0;
    }
    Ok(QuadratureRule {
        kind: RuleKind::GaussLegendre,
        nodes,
        weights,
    })
}

/// Evaluates (P_k(x), P_k'(x)) by the three-term recurrence.
fn legendre_value_and_derivative(k: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for n in 1..k {
        let p_next = ((2 * n + 1) as f64 * x * p - n as f64 * p_prev) / (n + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    let d = k as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, d)
}

/// Returns the 15-point Gauss-Kronrod rule on [-1, 1].
pub fn kronrod15_rule() -> QuadratureRule {
    let mut nodes = Vec::with_capacity(15);
    let mut weights = Vec::with_capacity(15);
    for i in 0..7 {
        nodes.push(-KRONROD15_NODES[i]);
        weights.push(KRONROD15_WEIGHTS[i]);
    }
    nodes.push(0.0);
    weights.push(KRONROD15_WEIGHTS[7]);
    for i in (0..7).rev() {
        nodes.push(KRONROD15_NODES[i]);
        weights.push(KRONROD15_WEIGHTS[i]);
    }
    QuadratureRule {
        kind: RuleKind::Kronrod15,
        nodes,
        weights,
    }
}

/// Maps a [-1, 1] rule onto [a, b]: x' = (x+1)/2 (b-a) + a, w' = w (b-a)/2.
pub fn scale_to_interval(
    rule: &QuadratureRule,
    a: f64,
    b: f64,
) -> Result<QuadratureRule, QuadratureError> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(QuadratureError::EmptyInterval { a, b });
    }
    let half = 0.5 * (b - a);
    let nodes = rule.nodes.iter().map(|x| (x + 1.0) * half + a).collect();
    let weights = rule.weights.iter().map(|w| w * half).collect();
    Ok(QuadratureRule {
        kind: rule.kind,
        nodes,
        weights,
    })
}

/// Integrates `f` over [a, b] with the given [-1, 1] rule.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rule: &QuadratureRule,
) -> Result<f64, QuadratureError> {
    let scaled = scale_to_interval(rule, a, b)?;
    let mut acc = 0.0;
    for (&x, &w) in scaled.nodes.iter().zip(&scaled.weights) {
        let fx = f(x);
        if !fx.is_finite() {
            return Err(QuadratureError::NonFiniteIntegrand(x));
        }
        acc += w * fx;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_weights_sum_to_two() {
        for k in MIN_LEGENDRE_ORDER..=MAX_LEGENDRE_ORDER {
            let rule = legendre_rule(k).unwrap();
            let sum: f64 = rule.weights.iter().sum();
            assert!(
                (sum - 2.0).abs() < 1e-12,
                "order {k}: weight sum {sum} drifts from 2"
            );
        }
    }

    #[test]
    fn gauss_nodes_ascending_and_symmetric() {
        for k in [2, 3, 7, 15, 32, 64] {
            let rule = legendre_rule(k).unwrap();
            for pair in rule.nodes.windows(2) {
                assert!(pair[0] < pair[1]);
            }
            for i in 0..k {
                let mirror = rule.nodes[k - 1 - i];
                assert_eq!(rule.nodes[i], -mirror, "order {k} node {i} not mirrored");
                assert_eq!(rule.weights[i], rule.weights[k - 1 - i]);
            }
        }
    }

    #[test]
    fn gauss_five_point_is_exact_through_degree_nine() {
        // Analytic moments on [-1, 1]: 0 for odd powers, 2/(n+1) for even.
        let rule = legendre_rule(5).unwrap();
        for n in 0..=9usize {
            let exact = if n % 2 == 1 { 0.0 } else { 2.0 / (n as f64 + 1.0) };
            let got = integrate(|x| x.powi(n as i32), -1.0, 1.0, &rule).unwrap();
            assert!(
                (got - exact).abs() < 1e-10,
                "x^{n}: got {got}, want {exact}"
            );
        }
    }

    #[test]
    fn legendre_fifteen_integrates_degree_28_monomial() {
        // 15 points are exact through degree 29; int x^28 over [-1,1] = 2/29.
        let rule = legendre_rule(15).unwrap();
        let got = integrate(|x| x.powi(28), -1.0, 1.0, &rule).unwrap();
        assert!((got - 2.0 / 29.0).abs() < 1e-10);
    }

    #[test]
    fn kronrod_weights_sum_to_two() {
        let rule = kronrod15_rule();
        assert_eq!(rule.nodes.len(), 15);
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-12);
        for pair in rule.nodes.windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn kronrod_matches_exponential_reference() {
        // int e^x over [-1,1] = e - 1/e.
        let rule = kronrod15_rule();
        let got = integrate(f64::exp, -1.0, 1.0, &rule).unwrap();
        let exact = std::f64::consts::E - 1.0 / std::f64::consts::E;
        assert!((got - exact).abs() < 1e-10);
    }

    #[test]
    fn scaled_rule_integrates_quadratic() {
        // int s^2 over [0,3] = 9, and both families agree to near machine level.
        for rule in [legendre_rule(15).unwrap(), kronrod15_rule()] {
            let got = integrate(|s| s * s, 0.0, 3.0, &rule).unwrap();
            assert!((got - 9.0).abs() < 1e-12, "{:?}: {got}", rule.kind);
        }
    }

    #[test]
    fn scaled_rule_integrates_exponential() {
        // int e^{s/2} over [0,2] = 2(e - 1).
        let exact = 2.0 * (std::f64::consts::E - 1.0);
        for rule in [legendre_rule(15).unwrap(), kronrod15_rule()] {
            let got = integrate(|s| (0.5 * s).exp(), 0.0, 2.0, &rule).unwrap();
            assert!((got - exact).abs() < 1e-9, "{:?}: {got}", rule.kind);
        }
    }

    #[test]
    fn scale_preserves_weight_mass() {
        let rule = kronrod15_rule();
        let scaled = scale_to_interval(&rule, 2.0, 7.5).unwrap();
        let sum: f64 = scaled.weights.iter().sum();
        assert!((sum - 5.5).abs() < 1e-12);
        assert!(scaled.nodes.iter().all(|&x| x > 2.0 && x < 7.5));
    }

    #[test]
    fn rejects_out_of_range_orders() {
        for k in [0, 1, 65, 1000] {
            assert_eq!(
                legendre_rule(k).unwrap_err(),
                QuadratureError::UnsupportedOrder(k)
            );
        }
    }

    #[test]
    fn rejects_empty_intervals() {
        let rule = kronrod15_rule();
        assert!(matches!(
            scale_to_interval(&rule, 1.0, 1.0),
            Err(QuadratureError::EmptyInterval { .. })
        ));
        assert!(matches!(
            integrate(|x| x, 2.0, -1.0, &rule),
            Err(QuadratureError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_integrand() {
        let rule = kronrod15_rule();
        let res = integrate(|x| (x - 0.3).ln(), 0.0, 1.0, &rule);
        assert!(matches!(res, Err(QuadratureError::NonFiniteIntegrand(_))));
    }
}
