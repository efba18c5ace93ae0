//! B-spline basis for the log baseline hazard, plus the difference-penalty
//! matrices backing its random-walk smoothness prior.

use nalgebra::DMatrix;

use crate::stats::quantile_type7;

/// Clamped B-spline basis on [0, t_max] with the first basis function
/// dropped, so a separate explicit intercept stays identifiable. With
/// `degree` d and m interior knots the full clamped basis has d + m + 1
/// functions; dropping one leaves `n_basis` = d + m.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    /// Full clamped knot vector: degree+1 copies of each boundary.
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Places interior knots at empirical quantiles of the observed event
    /// times. Six knots use the probabilities 0.10, 0.25, ..., 0.85; any
    /// other count spreads them evenly at i/(m+1).
    pub fn from_event_times(degree: usize, interior_knots: usize, times: &[f64]) -> SplineBasis {
        assert!(degree >= 1 && interior_knots >= 1);
        let mut sorted: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t_max = sorted.last().copied().unwrap_or(1.0).max(1e-8);
        let probs: Vec<f64> = if interior_knots == 6 {
            (0..6).map(|i| 0.10 + 0.15 * i as f64).collect()
        } else {
            (1..=interior_knots)
                .map(|i| i as f64 / (interior_knots + 1) as f64)
                .collect()
        };
        let mut interior: Vec<f64> = probs
            .iter()
            .map(|&p| {
                if sorted.is_empty() {
                    p * t_max
                } else {
                    quantile_type7(&sorted, p)
                }
            })
            .collect();
        // Guard against ties from heavily discrete times: force a strictly
        // increasing interior sequence inside (0, t_max).
        let mut prev = 0.0;
        for (idx, k) in interior.iter_mut().enumerate() {
            let floor = prev + 1e-9;
            if *k <= floor {
                *k = floor;
            }
            if *k >= t_max {
                *k = t_max - 1e-9 * (interior_knots - idx) as f64;
            }
            prev = *k;
        }
        Self::from_knots(degree, 0.0, t_max, &interior)
    }

    /// Builds the clamped knot vector directly; interior knots must be
    /// strictly increasing inside (t_min, t_max).
    pub fn from_knots(degree: usize, t_min: f64, t_max: f64, interior: &[f64]) -> SplineBasis {
        assert!(t_max > t_min);
        let mut knots = Vec::with_capacity(2 * (degree + 1) + interior.len());
        for _ in 0..=degree {
            knots.push(t_min);
        }
        knots.extend_from_slice(interior);
        for _ in 0..=degree {
            knots.push(t_max);
        }
        SplineBasis { degree, knots }
    }

    /// Number of retained basis functions (degree + interior knots).
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 2
    }

    fn n_full(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Evaluates the retained basis functions at `t` (clamped to the
    /// domain, so the hazard extrapolates flat beyond the data range).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let full = self.eval_full(t);
        full[1..].to_vec()
    }

    /// All `n_full` clamped basis functions at `t` (Cox-de Boor recursion);
    /// they are nonnegative and sum to one on the domain.
    pub fn eval_full(&self, t: f64) -> Vec<f64> {
        let d = self.degree;
        let n = self.n_full();
        let (lo, hi) = self.domain();
        // Clamp into the half-open convention; the right boundary belongs to
        // the last span.
        let t = t.clamp(lo, hi);
        let span = if t >= hi {
            n - 1
        } else {
            // Largest index with knots[span] <= t < knots[span+1].
            let mut s = d;
            while s + 1 < n && self.knots[s + 1] <= t {
                s += 1;
            }
            s
        };
        // Triangular scheme for the d+1 nonzero functions on this span.
        let mut vals = vec![0.0f64; d + 1];
        vals[0] = 1.0;
        let mut left = vec![0.0f64; d + 1];
        let mut right = vec![0.0f64; d + 1];
        for j in 1..=d {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = if denom == 0.0 { 0.0 } else { vals[r] / denom };
                vals[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            vals[j] = saved;
        }
        let mut out = vec![0.0f64; n];
        for (r, &v) in vals.iter().enumerate() {
            out[span - d + r] = v;
        }
        out
    }
}

/// m-th order difference matrix K_m of shape (L-m) x L; row i holds the
/// signed binomial pattern of the m-th forward difference at offset i.
pub fn difference_matrix(l: usize, order: usize) -> DMatrix<f64> {
    assert!(order >= 1 && l > order);
    let mut k = DMatrix::zeros(l - 1, l);
    for i in 0..l - 1 {
        k[(i, i)] = -1.0;
        k[(i, i + 1)] = 1.0;
    }
    let mut acc = k;
    for m in 2..=order {
        let rows = l - m;
        let prev = acc;
        let mut next = DMatrix::zeros(rows, l);
        // K_m = K_1^{(L-m+1)} * K_{m-1}.
        for i in 0..rows {
            for j in 0..l {
                next[(i, j)] = prev[(i + 1, j)] - prev[(i, j)];
            }
        }
        acc = next;
    }
    acc
}

/// Penalty matrix K_m' K_m: symmetric positive semidefinite with rank L - m.
pub fn penalty_matrix(l: usize, order: usize) -> DMatrix<f64> {
    let k = difference_matrix(l, order);
    k.transpose() * k
}
