//! Synthetic cohort generator. Produces raw incremental-test sessions from a
//! saturating-exponential lactate model with planted curve families, plus a
//! truth table with each athlete's noiseless threshold.

use crate::dmax::{dmax_threshold, fit_cubic};
use crate::domain::{protocol_speeds, DomainError, Stage, TestSession, PROTOCOL_START_SPEED};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cohort must have at least one athlete")]
    EmptyCohort,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("truth curve for {0} has no threshold: {1}")]
    DegenerateTruth(String, String),
    #[error("malformed truth table: {0}")]
    Malformed(String),
}

/// One planted curve family. Athletes of a family share the lactate-curve
/// shape and the cardiovascular response, up to small individual jitter, so
/// the family structure is recoverable by clustering on the curves.
#[derive(Debug, Clone, Copy)]
pub struct FamilySpec {
    /// Resting/early-stage lactate, mmol/L.
    pub baseline: f64,
    /// Lactate rise from the first to the last stage, mmol/L.
    pub amplitude: f64,
    /// Target threshold location as a fraction of peak treadmill speed.
    pub dmax_fraction: f64,
    /// Heart rate at the first stage, beats/min.
    pub hr_start: f64,
    /// Heart rate ceiling approached at peak speed, beats/min.
    pub hr_peak: f64,
    /// Peak treadmill speed of the family, km/h (a protocol ladder value at
    /// or above the validity minimum).
    pub pts: f64,
}

/// Ten families spanning slow/fast accumulators, low/high baselines and a
/// range of fitness levels. The families form a monotone progression with
/// well-separated lactate curves, so the planted structure is recoverable by
/// clustering; each family tests to a fixed peak speed.
pub fn default_families() -> Vec<FamilySpec> {
    let ladder = [14.5, 15.5, 16.5, 17.5, 18.5];
    (0..10)
        .map(|i| {
            let fitness = i as f64 / 9.0;
            FamilySpec {
                baseline: 0.8 + 0.28 * i as f64,
                amplitude: 3.0 + 1.5 * i as f64,
                dmax_fraction: if i % 2 == 0 { 0.85 } else { 0.90 },
                hr_start: 140.0 - 18.0 * fitness,
                hr_peak: 198.0 - 10.0 * fitness,
                pts: ladder[i % ladder.len()],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub n_athletes: usize,
    pub seed: u64,
    /// Standard deviation of the lactate measurement noise, mmol/L.
    pub noise_sigma: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n_athletes: 105,
            seed: 0,
            noise_sigma: 0.3,
        }
    }
}

/// The generator's ground truth for one athlete.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub athlete_id: String,
    /// Threshold location on the noiseless curve, fraction of peak speed.
    pub true_lt_rel: f64,
    /// Threshold pace on the noiseless curve, s/km.
    pub true_lt_pace: f64,
    pub family: usize,
}

/// Threshold fraction of the exponential y(x) = A + B e^{cx} on [x0, 1]
/// relative to its chord: x* = (1/c) ln((e^c - e^{c x0}) / (c (1 - x0))),
/// computed in log space so large exponents do not overflow.
fn exp_dmax_fraction(c: f64, x0: f64) -> f64 {
    let log_num = c + (-((-c * (1.0 - x0)).exp())).ln_1p();
    (log_num - (c * (1.0 - x0)).ln()) / c
}

/// Solves, by bisection, for the exponent that places the exponential
/// curve's threshold at `target` on [x0, 1]. The attainable range is
/// ((x0+1)/2, 1); targets below it are clamped just above the midpoint.
fn solve_exponent(target: f64, x0: f64) -> f64 {
    let midpoint = 0.5 * (x0 + 1.0);
    let target = target.max(midpoint + 0.005).min(0.99);
    let (mut lo, mut hi) = (1e-6, 500.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if exp_dmax_fraction(mid, x0) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Noiseless lactate at relative intensity `x` in [x0, 1]: baseline at x0,
/// baseline + amplitude at 1, exponential in between.
fn lactate_model(x: f64, x0: f64, baseline: f64, amplitude: f64, c: f64) -> f64 {
    let num = (c * (x - x0) / (1.0 - x0)).exp() - 1.0;
    baseline + amplitude * num / (c.exp() - 1.0)
}

/// Saturating rise from 0 at x0 to 1 at x = 1.
fn saturation(x: f64, x0: f64) -> f64 {
    let r = 3.0_f64;
    (1.0 - (-r * (x - x0) / (1.0 - x0)).exp()) / (1.0 - (-r).exp())
}

struct AthleteParams {
    pts: f64,
    baseline: f64,
    amplitude: f64,
    exponent: f64,
    hr_start: f64,
    hr_peak: f64,
}

fn draw_athlete(rng: &mut ChaCha8Rng, spec: &FamilySpec) -> AthleteParams {
    let pts = spec.pts;
    let x0 = PROTOCOL_START_SPEED / pts;
    let jitter = |rng: &mut ChaCha8Rng, scale: f64| rng.gen_range(-scale..scale);
    let baseline = (spec.baseline + jitter(rng, 0.06)).max(0.4);
    let amplitude = (spec.amplitude * (1.0 + jitter(rng, 0.04))).max(1.0);
    let fraction = spec.dmax_fraction + jitter(rng, 0.008);
    AthleteParams {
        pts,
        baseline,
        amplitude,
        exponent: solve_exponent(fraction, x0),
        hr_start: spec.hr_start + jitter(rng, 2.0),
        hr_peak: spec.hr_peak + jitter(rng, 2.0),
    }
}

/// Truth threshold from a dense noiseless sampling of the athlete's curve,
/// extracted exactly as measured curves are: cubic fit plus Dmax.
fn truth_threshold(params: &AthleteParams) -> Result<(f64, f64), String> {
    let x0 = PROTOCOL_START_SPEED / params.pts;
    let n = 200;
    let points: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = x0 + (1.0 - x0) * i as f64 / (n - 1) as f64;
            (
                x,
                lactate_model(x, x0, params.baseline, params.amplitude, params.exponent),
            )
        })
        .collect();
    let curve = fit_cubic(&points).map_err(|e| e.to_string())?;
    let (x, _) = dmax_threshold(&curve).map_err(|e| e.to_string())?;
    Ok((x, 3600.0 / (x * params.pts)))
}

/// Generates a deterministic cohort of raw sessions plus its truth table.
pub fn generate_cohort(
    options: &SynthOptions,
) -> Result<(Vec<TestSession>, Vec<TruthRow>), SynthError> {
    if options.n_athletes == 0 {
        return Err(SynthError::EmptyCohort);
    }
    let families = default_families();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let noise = Normal::new(0.0, options.noise_sigma.max(0.0)).expect("finite sigma");
    let mut sessions = Vec::with_capacity(options.n_athletes);
    let mut truth = Vec::with_capacity(options.n_athletes);

    for i in 0..options.n_athletes {
        let family_idx = i % families.len();
        let params = draw_athlete(&mut rng, &families[family_idx]);
        let id = format!("A{:03}", i + 1);
        let (true_rel, true_pace) = truth_threshold(&params)
            .map_err(|e| SynthError::DegenerateTruth(id.clone(), e))?;

        let x0 = PROTOCOL_START_SPEED / params.pts;
        let speeds = protocol_speeds(params.pts)?;
        let mut stages = Vec::with_capacity(speeds.len());
        for &speed in &speeds {
            let x = speed / params.pts;
            let lac = lactate_model(x, x0, params.baseline, params.amplitude, params.exponent)
                + noise.sample(&mut rng);
            let sat = saturation(x, x0);
            let hr = params.hr_start
                + (params.hr_peak - params.hr_start) * sat
                + noise.sample(&mut rng) * 4.0;
            let recovery_drop = 28.0 - 12.0 * sat + noise.sample(&mut rng) * 3.0;
            let rpe = 1.0 + 8.5 * (x - x0) / (1.0 - x0);
            stages.push(Stage {
                speed,
                lactate: Some(lac.max(0.3)),
                hr_end: hr,
                hrr_1min: hr - recovery_drop.max(5.0),
                rpe_respiratory: (rpe + noise.sample(&mut rng)).clamp(0.0, 10.0),
                rpe_muscular: (rpe + 0.4 + noise.sample(&mut rng)).clamp(0.0, 10.0),
            });
        }
        sessions.push(TestSession::new(id.clone(), stages, "")?);
        truth.push(TruthRow {
            athlete_id: id,
            true_lt_rel: true_rel,
            true_lt_pace: true_pace,
            family: family_idx,
        });
    }
    Ok((sessions, truth))
}

pub const TRUTH_HEADER: &str = "athlete_id,true_lt_rel,true_lt_pace,family";

pub fn write_truth(rows: &[TruthRow]) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.athlete_id, r.true_lt_rel, r.true_lt_pace, r.family
        ));
    }
    out
}

pub fn read_truth(content: &str) -> Result<Vec<TruthRow>, SynthError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in content.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != TRUTH_HEADER {
                return Err(SynthError::Malformed(format!("bad header {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(SynthError::Malformed(format!("bad row {line:?}")));
        }
        rows.push(TruthRow {
            athlete_id: parts[0].to_string(),
            true_lt_rel: parts[1]
                .parse()
                .map_err(|_| SynthError::Malformed(format!("bad float in {line:?}")))?,
            true_lt_pace: parts[2]
                .parse()
                .map_err(|_| SynthError::Malformed(format!("bad float in {line:?}")))?,
            family: parts[3]
                .parse()
                .map_err(|_| SynthError::Malformed(format!("bad family in {line:?}")))?,
        });
    }
    Ok(rows)
}
