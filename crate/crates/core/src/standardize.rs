//! Intensity-axis standardization: relativize each session to % of the
//! athlete's maximum intensity and resample every channel onto a fixed grid.

use crate::domain::ValidatedSession;
use thiserror::Error;

/// Default number of grid points. Exceeds the maximum stage count of the
/// protocol (11 stages at 20 km/h) so resampling never discards samples.
pub const DEFAULT_GRID_K: usize = 20;

#[derive(Debug, Error)]
pub enum StandardizeError {
    #[error("channel {0} has fewer than 2 points")]
    ChannelTooShort(&'static str),
    #[error("grid size must be at least 2, got {0}")]
    GridTooSmall(usize),
}

/// Equal-length, intensity-relativized series for one athlete.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedGridSeries {
    pub athlete_id: String,
    /// Relative intensities, strictly increasing, last value exactly 1.0.
    pub grid: Vec<f64>,
    /// Lactate, mmol/L.
    pub lactate: Vec<f64>,
    /// Heart rate at stage end, beats/min.
    pub hrevo: Vec<f64>,
    /// Heart rate after 1 min recovery, beats/min.
    pub hrrevo: Vec<f64>,
    /// Perceived exertion (mean of respiratory and muscular), Borg units.
    pub rpeevo: Vec<f64>,
    /// Peak treadmill speed, km/h; kept so grid values can be mapped back to
    /// absolute speeds.
    pub pts: f64,
}

impl FixedGridSeries {
    pub fn k(&self) -> usize {
        self.grid.len()
    }
}

/// Per-stage relative intensities: stage speed over peak treadmill speed.
/// The final stage maps to exactly 1.0.
pub fn relativize(session: &ValidatedSession) -> Vec<f64> {
    let pts = session.pts();
    session.stages().iter().map(|s| s.speed / pts).collect()
}

/// Piecewise-linear interpolation with constant extension outside the sample
/// span. `xs` must be strictly increasing.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v < x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Resamples all channels of a validated session onto a `k`-point uniform
/// grid spanning the athlete's first to last relative intensity. Channels are
/// linearly interpolated; endpoint values are reproduced exactly. Stages
/// without a lactate value contribute to the feature channels only.
pub fn resample(session: &ValidatedSession, k: usize) -> Result<FixedGridSeries, StandardizeError> {
    if k < 2 {
        return Err(StandardizeError::GridTooSmall(k));
    }
    let rel = relativize(session);
    if rel.len() < 2 {
        return Err(StandardizeError::ChannelTooShort("features"));
    }
    let stages = session.stages();

    let lac_x: Vec<f64> = rel
        .iter()
        .zip(stages)
        .filter(|(_, s)| s.lactate.is_some())
        .map(|(&x, _)| x)
        .collect();
    let lac_y: Vec<f64> = stages.iter().filter_map(|s| s.lactate).collect();
    if lac_y.len() < 2 {
        return Err(StandardizeError::ChannelTooShort("lactate"));
    }

    let x0 = rel[0];
    let x1 = rel[rel.len() - 1];
    let grid: Vec<f64> = (0..k)
        .map(|i| {
            if i == k - 1 {
                x1
            } else {
                x0 + (x1 - x0) * i as f64 / (k - 1) as f64
            }
        })
        .collect();

    let hr: Vec<f64> = stages.iter().map(|s| s.hr_end).collect();
    let hrr: Vec<f64> = stages.iter().map(|s| s.hrr_1min).collect();
    let rpe: Vec<f64> = stages.iter().map(|s| s.rpe_mean()).collect();

    Ok(FixedGridSeries {
        athlete_id: session.athlete_id().to_string(),
        lactate: grid.iter().map(|&x| interp(&lac_x, &lac_y, x)).collect(),
        hrevo: grid.iter().map(|&x| interp(&rel, &hr, x)).collect(),
        hrrevo: grid.iter().map(|&x| interp(&rel, &hrr, x)).collect(),
        rpeevo: grid.iter().map(|&x| interp(&rel, &rpe, x)).collect(),
        grid,
        pts: session.pts(),
    })
}

/// Feature channels resampled without a lactate requirement; the deployment
/// path for sessions that carry no lactate column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGridSeries {
    pub athlete_id: String,
    pub grid: Vec<f64>,
    pub hrevo: Vec<f64>,
    pub hrrevo: Vec<f64>,
    pub rpeevo: Vec<f64>,
    pub pts: f64,
}

/// Resamples only the feature channels of a raw session. Lactate values, if
/// any, are ignored.
pub fn resample_features(
    session: &crate::domain::TestSession,
    k: usize,
) -> Result<FeatureGridSeries, StandardizeError> {
    if k < 2 {
        return Err(StandardizeError::GridTooSmall(k));
    }
    if session.stages.len() < 2 {
        return Err(StandardizeError::ChannelTooShort("features"));
    }
    let pts = session.pts();
    let rel: Vec<f64> = session.stages.iter().map(|s| s.speed / pts).collect();
    let x0 = rel[0];
    let x1 = rel[rel.len() - 1];
    let grid: Vec<f64> = (0..k)
        .map(|i| {
            if i == k - 1 {
                x1
            } else {
                x0 + (x1 - x0) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let hr: Vec<f64> = session.stages.iter().map(|s| s.hr_end).collect();
    let hrr: Vec<f64> = session.stages.iter().map(|s| s.hrr_1min).collect();
    let rpe: Vec<f64> = session.stages.iter().map(|s| s.rpe_mean()).collect();
    Ok(FeatureGridSeries {
        athlete_id: session.athlete_id.clone(),
        hrevo: grid.iter().map(|&x| interp(&rel, &hr, x)).collect(),
        hrrevo: grid.iter().map(|&x| interp(&rel, &hrr, x)).collect(),
        rpeevo: grid.iter().map(|&x| interp(&rel, &rpe, x)).collect(),
        grid,
        pts,
    })
}

/// Mean and standard deviation of one input channel, computed on the
/// training set and reused verbatim for test and deployment data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

pub const STANDARDIZED_HEADER: &str = "athlete_id,rel_intensity,lactate,hrevo,hrrevo,rpeevo,pts";

/// One row per athlete per grid point. The trailing `pts` column carries the
/// athlete's peak treadmill speed so thresholds can be de-relativized
/// downstream without the raw session file.
pub fn write_standardized(cohort: &[FixedGridSeries]) -> String {
    let mut out = String::new();
    out.push_str(STANDARDIZED_HEADER);
    out.push('\n');
    for s in cohort {
        for i in 0..s.k() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.athlete_id, s.grid[i], s.lactate[i], s.hrevo[i], s.hrrevo[i], s.rpeevo[i], s.pts
            ));
        }
    }
    out
}

pub fn read_standardized(content: &str) -> Result<Vec<FixedGridSeries>, String> {
    let mut cohort: Vec<FixedGridSeries> = Vec::new();
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == STANDARDIZED_HEADER => {}
        other => return Err(format!("bad standardized header: {other:?}")),
    }
    for (line, raw) in lines {
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 7 {
            return Err(format!("line {line}: expected 7 fields"));
        }
        let mut vals = [0.0f64; 6];
        for (i, v) in f[1..].iter().enumerate() {
            vals[i] = v
                .trim()
                .parse()
                .map_err(|_| format!("line {line}: bad number {v:?}"))?;
        }
        let id = f[0].trim();
        if cohort.last().map(|s: &FixedGridSeries| s.athlete_id.as_str()) != Some(id) {
            if cohort.iter().any(|s| s.athlete_id == id) {
                return Err(format!("line {line}: athlete {id:?} not contiguous"));
            }
            cohort.push(FixedGridSeries {
                athlete_id: id.to_string(),
                grid: vec![],
                lactate: vec![],
                hrevo: vec![],
                hrrevo: vec![],
                rpeevo: vec![],
                pts: vals[5],
            });
        }
        let s = cohort.last_mut().unwrap();
        s.grid.push(vals[0]);
        s.lactate.push(vals[1]);
        s.hrevo.push(vals[2]);
        s.hrrevo.push(vals[3]);
        s.rpeevo.push(vals[4]);
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{protocol_speeds, validate, Stage, TestSession};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn make_session(pts: f64, lactate: impl Fn(f64) -> f64) -> ValidatedSession {
        let speeds = protocol_speeds(pts).unwrap();
        let stages = speeds
            .iter()
            .map(|&v| Stage {
                speed: v,
                lactate: Some(lactate(v / pts)),
                hr_end: 120.0 + 60.0 * v / pts,
                hrr_1min: 100.0 + 60.0 * v / pts,
                rpe_respiratory: 10.0 * v / pts,
                rpe_muscular: 8.0 * v / pts,
            })
            .collect();
        validate(TestSession::new("A", stages, "").unwrap()).unwrap()
    }

    #[test]
    fn relativize_ratios() {
        let s = make_session(16.5, |x| x);
        let rel = relativize(&s);
        assert_relative_eq!(rel[0], 9.0 / 16.5, epsilon = 1e-12);
        assert_eq!(*rel.last().unwrap(), 1.0);

        let s = make_session(14.5, |x| x);
        assert_relative_eq!(relativize(&s)[0], 9.0 / 14.5, epsilon = 1e-12);
    }

    #[test]
    fn resample_linear_midpoint() {
        // Linear channel: midpoint of endpoints after resampling.
        let s = make_session(18.5, |x| 2.0 * x);
        let g = resample(&s, 3).unwrap();
        assert_relative_eq!(g.lactate[1], (g.lactate[0] + g.lactate[2]) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.grid[1], (g.grid[0] + g.grid[2]) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn resample_at_stage_count_is_identity_for_linear_grid() {
        // Stage rel-intensities are not uniform across the 1.5/1.0 phase
        // change, so exact identity holds only for channels linear in x.
        let s = make_session(16.5, |x| 3.0 * x + 0.5);
        let k = s.stages().len();
        let g = resample(&s, k).unwrap();
        assert_eq!(g.k(), k);
        assert_relative_eq!(g.lactate[0], 3.0 * g.grid[0] + 0.5, epsilon = 1e-9);
        assert_relative_eq!(g.lactate[k - 1], 3.0 + 0.5, epsilon = 1e-9);
    }

    #[test]
    fn endpoints_reproduced_exactly() {
        let s = make_session(17.5, |x| (3.0 * x).exp());
        let g = resample(&s, 20).unwrap();
        let first = s.stages()[0].lactate.unwrap();
        let last = s.stages().last().unwrap().lactate.unwrap();
        assert_eq!(g.lactate[0], first);
        assert_eq!(g.lactate[19], last);
        assert_eq!(*g.grid.last().unwrap(), 1.0);
    }

    #[test]
    fn missing_lactate_stages_feed_features_only() {
        let speeds = protocol_speeds(15.5).unwrap();
        let n = speeds.len();
        let stages: Vec<Stage> = speeds
            .iter()
            .enumerate()
            .map(|(i, &v)| Stage {
                speed: v,
                lactate: if i == n - 2 { None } else { Some(1.0 + i as f64) },
                hr_end: 130.0 + i as f64,
                hrr_1min: 110.0,
                rpe_respiratory: 4.0,
                rpe_muscular: 4.0,
            })
            .collect();
        let v = validate(TestSession::new("A", stages, "").unwrap()).unwrap();
        let g = resample(&v, 20).unwrap();
        assert_eq!(g.hrevo.len(), 20);
        // lactate interpolates across the gap and stays within sample bounds
        assert!(g.lactate.iter().all(|&l| (1.0..=(n as f64)).contains(&l)));
    }

    #[test]
    fn standardized_file_roundtrip() {
        let cohort: Vec<FixedGridSeries> = [14.5, 16.5]
            .iter()
            .enumerate()
            .map(|(i, &pts)| {
                let mut g = resample(&make_session(pts, |x| x * x), 5).unwrap();
                g.athlete_id = format!("A{i}");
                g
            })
            .collect();
        let text = write_standardized(&cohort);
        let back = read_standardized(&text).unwrap();
        assert_eq!(back, cohort);
    }

    proptest! {
        #[test]
        fn resampled_values_within_channel_bounds(pts_idx in 0usize..6, k in 2usize..40, a in -2.0f64..2.0, b in 0.1f64..5.0) {
            let pts = 14.5 + pts_idx as f64;
            let s = make_session(pts, |x| (a * x).exp() * b);
            let g = resample(&s, k).unwrap();
            let lac: Vec<f64> = s.stages().iter().filter_map(|st| st.lactate).collect();
            let lo = lac.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = lac.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in &g.lactate {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            // monotone channel stays monotone
            for w in g.hrevo.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            // de-relativization recovers a speed within [9, pts]
            for &x in &g.grid {
                let v = x * pts;
                prop_assert!(v >= 9.0 - 1e-9 && v <= pts + 1e-9);
            }
        }
    }
}
