//! Dmax lactate threshold: the point of a fitted lactate curve at maximal
//! perpendicular distance from the chord joining the curve's endpoints.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmaxError {
    #[error("need at least {0} points for the fit, got {1}")]
    TooFewPoints(usize, usize),
    #[error("singular fit: duplicated x values")]
    SingularFit,
    #[error("x values must be strictly increasing")]
    UnsortedX,
    #[error("degenerate curve: indistinguishable from its chord")]
    DegenerateCurve,
}

/// A lactate-vs-intensity curve together with its cubic least-squares fit.
/// `x` may be relative intensity or km/h; the Dmax point keeps its units.
#[derive(Debug, Clone)]
pub struct LactateCurve {
    pub points: Vec<(f64, f64)>,
    /// Polynomial coefficients, lowest degree first: c0 + c1 x + c2 x^2 + c3 x^3.
    pub coefficients: [f64; 4],
    x_first: f64,
    x_last: f64,
}

impl LactateCurve {
    /// Builds a curve directly from coefficients on a given x interval.
    /// Used for noiseless ground-truth curves and tests.
    pub fn from_coefficients(coefficients: [f64; 4], x_first: f64, x_last: f64) -> Self {
        Self {
            points: Vec::new(),
            coefficients,
            x_first,
            x_last,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coefficients;
        ((c3 * x + c2) * x + c1) * x + c0
    }

    /// First derivative of the fitted cubic at `x`.
    pub fn deriv(&self, x: f64) -> f64 {
        let [_, c1, c2, c3] = self.coefficients;
        (3.0 * c3 * x + 2.0 * c2) * x + c1
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_first, self.x_last)
    }
}

/// The extracted individual lactate threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPoint {
    /// Threshold location in curve units (relative intensity or km/h).
    pub x_at_lt: f64,
    /// Lactate at the threshold, mmol/L.
    pub lactate_at_lt: f64,
    /// Running speed at the threshold, km/h.
    pub speed_at_lt: f64,
    /// Pace at the threshold, s/km.
    pub pace_at_lt: f64,
}

impl ThresholdPoint {
    /// Converts a Dmax point on a relative-intensity curve into a full
    /// threshold report using the athlete's peak treadmill speed.
    pub fn from_relative(x_at_lt: f64, lactate_at_lt: f64, pts: f64) -> Self {
        let speed = x_at_lt * pts;
        Self {
            x_at_lt,
            lactate_at_lt,
            speed_at_lt: speed,
            pace_at_lt: 3600.0 / speed,
        }
    }
}

/// Least-squares cubic fit. Requires at least 5 points with distinct,
/// strictly increasing x.
pub fn fit_cubic(points: &[(f64, f64)]) -> Result<LactateCurve, DmaxError> {
    if points.len() < 5 {
        return Err(DmaxError::TooFewPoints(5, points.len()));
    }
    for w in points.windows(2) {
        if w[1].0 < w[0].0 {
            return Err(DmaxError::UnsortedX);
        }
        if (w[1].0 - w[0].0).abs() < 1e-12 {
            return Err(DmaxError::SingularFit);
        }
    }
    let n = points.len();
    let mut a = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, &(x, v)) in points.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = x;
        a[(i, 2)] = x * x;
        a[(i, 3)] = x * x * x;
        y[i] = v;
    }
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&y, 1e-12)
        .map_err(|_| DmaxError::SingularFit)?;
    Ok(LactateCurve {
        coefficients: [c[0], c[1], c[2], c[3]],
        x_first: points[0].0,
        x_last: points[n - 1].0,
        points: points.to_vec(),
    })
}

/// Dmax point: maximizes the perpendicular distance from the fitted curve to
/// the chord joining the fitted endpoints. For a cubic the maximizer solves
/// the quadratic y'(x) = chord slope; candidates outside the open interval
/// are discarded. Ties within 1e-12 resolve to the lower x.
pub fn dmax_threshold(curve: &LactateCurve) -> Result<(f64, f64), DmaxError> {
    let (x0, x1) = curve.x_range();
    if !(x1 > x0) {
        return Err(DmaxError::DegenerateCurve);
    }
    let y0 = curve.eval(x0);
    let y1 = curve.eval(x1);
    let slope = (y1 - y0) / (x1 - x0);
    let norm = (1.0 + slope * slope).sqrt();
    let dist = |x: f64| (curve.eval(x) - (y0 + slope * (x - x0))).abs() / norm;

    // y'(x) = slope  =>  3 c3 x^2 + 2 c2 x + (c1 - slope) = 0
    let [_, c1, c2, c3] = curve.coefficients;
    let (qa, qb, qc) = (3.0 * c3, 2.0 * c2, c1 - slope);
    let mut roots: Vec<f64> = Vec::new();
    if qa.abs() < 1e-14 {
        if qb.abs() > 1e-14 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-qb + sq) / (2.0 * qa));
            roots.push((-qb - sq) / (2.0 * qa));
        }
    }
    roots.retain(|&x| x > x0 && x < x1);
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<(f64, f64)> = None;
    for &x in &roots {
        let d = dist(x);
        match best {
            None => best = Some((x, d)),
            Some((_, bd)) if d > bd + 1e-12 => best = Some((x, d)),
            _ => {}
        }
    }
    match best {
        Some((x, d)) if d >= 1e-9 => Ok((x, curve.eval(x))),
        _ => Err(DmaxError::DegenerateCurve),
    }
}

/// Converts a relative-intensity threshold to pace in s/km.
pub fn to_pace(x_at_lt: f64, pts: f64) -> f64 {
    3600.0 / (x_at_lt * pts)
}
