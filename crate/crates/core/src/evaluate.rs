//! Performance indicators: the pace-dependent individualization error bands,
//! the heuristic (% individualization) and statistical (Pearson R)
//! indicators, model ranking with parsimony selection, sensitivity tables and
//! the final applicability report.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("pace {0} s/km is above the target population (faster than 3 min/km)")]
    OutOfScope(f64),
    #[error("pace must be positive, got {0}")]
    InvalidPace(f64),
    #[error("need at least 2 paired values")]
    TooFewPairs,
    #[error("degenerate variance: an input vector is constant")]
    DegenerateVariance,
}

/// One row of the error-band table: paces at or above `min_pace` (and below
/// the next row's threshold) tolerate `max_error` seconds per km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBand {
    pub min_pace: f64,
    pub max_error: f64,
}

/// Maximum acceptable lactate-threshold error as a function of the athlete's
/// pace at the threshold. Faster athletes need tighter individualization;
/// paces under 3 min/km are above the target population entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBandTable {
    /// Sorted by ascending `min_pace`; a pace below the first row is out of
    /// scope.
    pub bands: Vec<ErrorBand>,
}

impl Default for ErrorBandTable {
    fn default() -> Self {
        Self {
            bands: vec![
                ErrorBand { min_pace: 180.0, max_error: 3.0 },
                ErrorBand { min_pace: 210.0, max_error: 5.0 },
                ErrorBand { min_pace: 240.0, max_error: 10.0 },
                ErrorBand { min_pace: 270.0, max_error: 15.0 },
                ErrorBand { min_pace: 300.0, max_error: 20.0 },
            ],
        }
    }
}

impl ErrorBandTable {
    /// Allowed absolute error in s/km for a threshold at `pace` s/km.
    /// Boundary paces belong to the stricter (faster) band.
    pub fn max_error_band(&self, pace: f64) -> Result<f64, EvaluateError> {
        if !(pace > 0.0) {
            return Err(EvaluateError::InvalidPace(pace));
        }
        if pace < self.bands[0].min_pace {
            return Err(EvaluateError::OutOfScope(pace));
        }
        let mut allowed = self.bands[0].max_error;
        for b in &self.bands {
            if pace >= b.min_pace {
                allowed = b.max_error;
            }
        }
        Ok(allowed)
    }
}

/// Shortcut using the default table.
pub fn max_error_band(pace: f64) -> Result<f64, EvaluateError> {
    ErrorBandTable::default().max_error_band(pace)
}

/// Per-athlete outcome of the heuristic indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct AthleteOutcome {
    pub athlete_id: String,
    /// Pace at the experimentally tested threshold, s/km.
    pub tested_pace: f64,
    /// Pace at the model-estimated threshold, s/km.
    pub estimated_pace: f64,
    pub error: f64,
    pub allowed: f64,
    pub within_band: bool,
}

/// Result of the heuristic indicator over a set of athletes.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicOutcome {
    /// % of in-scope athletes whose estimate falls within their band.
    pub pct: f64,
    pub outcomes: Vec<AthleteOutcome>,
    /// Athletes excluded because their tested pace is out of scope.
    pub out_of_scope: Vec<String>,
}

/// Heuristic indicator (% individualization): share of athletes whose
/// estimated threshold pace deviates from the tested pace by at most the
/// band allowed at the TESTED pace. Out-of-scope athletes are excluded from
/// the denominator and reported.
pub fn heuristic_indicator(
    pairs: &[(String, f64, f64)],
    table: &ErrorBandTable,
) -> Result<HeuristicOutcome, EvaluateError> {
    if pairs.is_empty() {
        return Err(EvaluateError::TooFewPairs);
    }
    let mut outcomes = Vec::new();
    let mut out_of_scope = Vec::new();
    for (id, tested, estimated) in pairs {
        match table.max_error_band(*tested) {
            Ok(allowed) => {
                let error = (tested - estimated).abs();
                outcomes.push(AthleteOutcome {
                    athlete_id: id.clone(),
                    tested_pace: *tested,
                    estimated_pace: *estimated,
                    error,
                    allowed,
                    within_band: error <= allowed,
                });
            }
            Err(EvaluateError::OutOfScope(_)) => out_of_scope.push(id.clone()),
            Err(e) => return Err(e),
        }
    }
    let n = outcomes.len();
    let pct = if n == 0 {
        0.0
    } else {
        100.0 * outcomes.iter().filter(|o| o.within_band).count() as f64 / n as f64
    };
    Ok(HeuristicOutcome {
        pct,
        outcomes,
        out_of_scope,
    })
}

/// Product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvaluateError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvaluateError::TooFewPairs);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx < 1e-300 || syy < 1e-300 {
        return Err(EvaluateError::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Both indicators for one model on one athlete set.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub heuristic_pct: f64,
    pub pearson_r: f64,
    pub n_athletes: usize,
    pub outcomes: Vec<AthleteOutcome>,
    pub out_of_scope: Vec<String>,
}

/// Builds a report from (id, tested pace, estimated pace, tested LT speed,
/// estimated LT speed) tuples. Pearson correlates the threshold speeds.
pub fn performance_report(
    rows: &[(String, f64, f64, f64, f64)],
    table: &ErrorBandTable,
) -> Result<PerformanceReport, EvaluateError> {
    let pairs: Vec<(String, f64, f64)> = rows
        .iter()
        .map(|(id, tp, ep, _, _)| (id.clone(), *tp, *ep))
        .collect();
    let heur = heuristic_indicator(&pairs, table)?;
    let tested: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let estimated: Vec<f64> = rows.iter().map(|r| r.4).collect();
    let r = pearson(&tested, &estimated)?;
    Ok(PerformanceReport {
        heuristic_pct: heur.pct,
        pearson_r: r,
        n_athletes: rows.len(),
        outcomes: heur.outcomes,
        out_of_scope: heur.out_of_scope,
    })
}

/// One grid cell's aggregate result, as ranked by `rank_models`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub hidden_units: usize,
    pub delays: usize,
    pub heuristic_pct: f64,
    pub pearson_r: f64,
    pub param_count: usize,
}

/// Tolerances defining "performance comparable to the top rank".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionTolerance {
    pub heuristic_pts: f64,
    pub pearson: f64,
}

impl Default for SelectionTolerance {
    fn default() -> Self {
        Self {
            heuristic_pts: 2.0,
            pearson: 0.01,
        }
    }
}

/// Optional configuration-zone preference: among tolerance-tied candidates,
/// models inside the zone win before parsimony is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferredZone {
    pub hu: (usize, usize),
    pub delays: (usize, usize),
}

impl PreferredZone {
    fn contains(&self, e: &RankEntry) -> bool {
        (self.hu.0..=self.hu.1).contains(&e.hidden_units)
            && (self.delays.0..=self.delays.1).contains(&e.delays)
    }
}

#[derive(Debug, Clone)]
pub struct RankOutcome {
    /// Indices into the input slice, best first.
    pub ranked: Vec<usize>,
    /// Index of the selected model.
    pub selected: usize,
}

/// Ranks models by (heuristic desc, pearson desc) and selects the
/// lowest-complexity model whose indicators are within tolerance of the top
/// rank. Complexity is the parameter count; ties break on fewer hidden
/// units, then fewer delays. A preferred zone, when given, is applied before
/// parsimony among the tolerance-tied candidates.
pub fn rank_models(
    entries: &[RankEntry],
    tol: SelectionTolerance,
    zone: Option<PreferredZone>,
) -> Option<RankOutcome> {
    if entries.is_empty() {
        return None;
    }
    let mut ranked: Vec<usize> = (0..entries.len()).collect();
    ranked.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        eb.heuristic_pct
            .partial_cmp(&ea.heuristic_pct)
            .unwrap()
            .then(eb.pearson_r.partial_cmp(&ea.pearson_r).unwrap())
            .then(ea.hidden_units.cmp(&eb.hidden_units))
            .then(ea.delays.cmp(&eb.delays))
    });
    let top = &entries[ranked[0]];
    let mut candidates: Vec<usize> = ranked
        .iter()
        .copied()
        .filter(|&i| {
            let e = &entries[i];
            top.heuristic_pct - e.heuristic_pct <= tol.heuristic_pts + 1e-12
                && top.pearson_r - e.pearson_r <= tol.pearson + 1e-12
        })
        .collect();
    if let Some(zone) = zone {
        let in_zone: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| zone.contains(&entries[i]))
            .collect();
        if !in_zone.is_empty() {
            candidates = in_zone;
        }
    }
    let selected = candidates
        .into_iter()
        .min_by(|&a, &b| {
            let (ea, eb) = (&entries[a], &entries[b]);
            ea.param_count
                .cmp(&eb.param_count)
                .then(ea.hidden_units.cmp(&eb.hidden_units))
                .then(ea.delays.cmp(&eb.delays))
        })
        .unwrap();
    Some(RankOutcome { ranked, selected })
}

/// Per-cell sensitivity statistics across restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub hidden_units: usize,
    pub delays: usize,
    pub set: &'static str,
    pub heuristic_mean: f64,
    pub heuristic_max: f64,
    pub pearson_mean: f64,
    pub pearson_max: f64,
}

/// Aggregates (heuristic, pearson) samples per (HU, delays, set) cell into
/// mean/max rows, ordered by cell then set.
pub fn sensitivity_rows(
    samples: &[(usize, usize, &'static str, f64, f64)],
) -> Vec<SensitivityRow> {
    let mut groups: BTreeMap<(usize, usize, &'static str), Vec<(f64, f64)>> = BTreeMap::new();
    for &(hu, d, set, h, r) in samples {
        groups.entry((hu, d, set)).or_default().push((h, r));
    }
    groups
        .into_iter()
        .map(|((hu, d, set), vals)| {
            let n = vals.len() as f64;
            SensitivityRow {
                hidden_units: hu,
                delays: d,
                set,
                heuristic_mean: vals.iter().map(|v| v.0).sum::<f64>() / n,
                heuristic_max: vals.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max),
                pearson_mean: vals.iter().map(|v| v.1).sum::<f64>() / n,
                pearson_max: vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Final applicability report: indicators per set, failed athletes, and the
/// train-test parity gap.
#[derive(Debug, Clone)]
pub struct ApplicabilityReport {
    pub global: PerformanceReport,
    pub train: PerformanceReport,
    pub test: PerformanceReport,
    /// |train - test| heuristic gap, percentage points.
    pub parity: f64,
    /// Athletes whose estimate fell outside their band, with set labels.
    pub failed: Vec<(String, &'static str)>,
}

pub fn applicability_report(
    train: PerformanceReport,
    test: PerformanceReport,
    global: PerformanceReport,
) -> ApplicabilityReport {
    let parity = (train.heuristic_pct - test.heuristic_pct).abs();
    let mut failed = Vec::new();
    for o in &train.outcomes {
        if !o.within_band {
            failed.push((o.athlete_id.clone(), "train"));
        }
    }
    for o in &test.outcomes {
        if !o.within_band {
            failed.push((o.athlete_id.clone(), "test"));
        }
    }
    ApplicabilityReport {
        global,
        train,
        test,
        parity,
        failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn band_table_values() {
        assert_eq!(max_error_band(330.0).unwrap(), 20.0);
        assert_eq!(max_error_band(252.0).unwrap(), 10.0);
        assert_eq!(max_error_band(185.0).unwrap(), 3.0);
        assert_eq!(max_error_band(215.0).unwrap(), 5.0);
        assert_eq!(max_error_band(280.0).unwrap(), 15.0);
        assert!(matches!(
            max_error_band(170.0),
            Err(EvaluateError::OutOfScope(_))
        ));
    }

    #[test]
    fn band_boundaries_belong_to_slower_row() {
        // a boundary pace gets the larger allowance of the row it opens
        assert_eq!(max_error_band(180.0).unwrap(), 3.0);
        assert_eq!(max_error_band(210.0).unwrap(), 5.0);
        assert_eq!(max_error_band(240.0).unwrap(), 10.0);
        assert_eq!(max_error_band(270.0).unwrap(), 15.0);
        assert_eq!(max_error_band(300.0).unwrap(), 20.0);
    }

    #[test]
    fn heuristic_two_athletes() {
        let table = ErrorBandTable::default();
        let pairs = vec![
            ("a".to_string(), 252.0, 258.0), // err 6 <= 10
            ("b".to_string(), 310.0, 340.0), // err 30 > 20
        ];
        let h = heuristic_indicator(&pairs, &table).unwrap();
        assert_relative_eq!(h.pct, 50.0);
    }

    #[test]
    fn heuristic_exact_estimates() {
        let table = ErrorBandTable::default();
        let pairs: Vec<_> = (0..5)
            .map(|i| (format!("a{i}"), 250.0 + i as f64, 250.0 + i as f64))
            .collect();
        assert_relative_eq!(heuristic_indicator(&pairs, &table).unwrap().pct, 100.0);
    }

    #[test]
    fn heuristic_excludes_out_of_scope() {
        let table = ErrorBandTable::default();
        let pairs = vec![
            ("fast".to_string(), 170.0, 171.0),
            ("ok".to_string(), 250.0, 251.0),
        ];
        let h = heuristic_indicator(&pairs, &table).unwrap();
        assert_eq!(h.out_of_scope, vec!["fast".to_string()]);
        assert_relative_eq!(h.pct, 100.0);
    }

    #[test]
    fn pearson_extremes() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_relative_eq!(pearson(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), -1.0);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvaluateError::DegenerateVariance)
        ));
    }

    fn entry(hu: usize, d: usize, h: f64, r: f64) -> RankEntry {
        RankEntry {
            hidden_units: hu,
            delays: d,
            heuristic_pct: h,
            pearson_r: r,
            param_count: hu * 2 + hu * hu * d + hu + hu + 1,
        }
    }

    #[test]
    fn rank_single_candidate() {
        let e = vec![entry(2, 6, 89.5, 0.89)];
        let out = rank_models(&e, SelectionTolerance::default(), None).unwrap();
        assert_eq!(out.selected, 0);
    }

    #[test]
    fn rank_parsimony_tiebreak() {
        let e = vec![entry(3, 6, 90.0, 0.90), entry(1, 6, 90.0, 0.90)];
        let out = rank_models(&e, SelectionTolerance::default(), None).unwrap();
        assert_eq!(out.selected, 1);
    }

    #[test]
    fn zone_preference_overrides_parsimony_within_tolerance() {
        // mirrors picking a 2x6 model over a higher-ranked 1x8 one when the
        // sensitivity zone says so
        let e = vec![entry(1, 8, 91.43, 0.89), entry(2, 6, 89.52, 0.89)];
        let zone = PreferredZone {
            hu: (2, 3),
            delays: (5, 7),
        };
        let out = rank_models(&e, SelectionTolerance::default(), Some(zone)).unwrap();
        assert_eq!(out.ranked[0], 0);
        assert_eq!(out.selected, 1);
        // without the zone, parsimony picks the smaller model
        let out = rank_models(&e, SelectionTolerance::default(), None).unwrap();
        assert_eq!(out.selected, 0);
    }

    #[test]
    fn selection_never_dominated_in_size() {
        let e = vec![
            entry(4, 10, 91.0, 0.90),
            entry(2, 6, 90.0, 0.895),
            entry(1, 5, 89.5, 0.89),
        ];
        let out = rank_models(&e, SelectionTolerance::default(), None).unwrap();
        let sel = &e[out.selected];
        for other in &e {
            let tied = (sel.heuristic_pct - other.heuristic_pct).abs() <= 2.0
                && (sel.pearson_r - other.pearson_r).abs() <= 0.01;
            if tied {
                assert!(sel.param_count <= other.param_count);
            }
        }
    }

    #[test]
    fn sensitivity_rows_shape() {
        let mut samples = Vec::new();
        for hu in 1..=4usize {
            for d in 5..=11usize {
                for r in 0..3 {
                    samples.push((hu, d, "train", 80.0 + r as f64, 0.8));
                    samples.push((hu, d, "test", 78.0 + r as f64, 0.82));
                }
            }
        }
        let rows = sensitivity_rows(&samples);
        assert_eq!(rows.len(), 4 * 7 * 2);
        let first = rows.iter().find(|r| r.hidden_units == 1 && r.delays == 5 && r.set == "train").unwrap();
        assert_relative_eq!(first.heuristic_mean, 81.0);
        assert_relative_eq!(first.heuristic_max, 82.0);
    }

    #[test]
    fn applicability_parity_and_partition() {
        let mk = |ok: bool, id: &str| AthleteOutcome {
            athlete_id: id.to_string(),
            tested_pace: 250.0,
            estimated_pace: if ok { 251.0 } else { 290.0 },
            error: if ok { 1.0 } else { 40.0 },
            allowed: 10.0,
            within_band: ok,
        };
        let train = PerformanceReport {
            heuristic_pct: 89.04,
            pearson_r: 0.89,
            n_athletes: 2,
            outcomes: vec![mk(true, "t1"), mk(false, "t2")],
            out_of_scope: vec![],
        };
        let test = PerformanceReport {
            heuristic_pct: 90.63,
            pearson_r: 0.92,
            n_athletes: 1,
            outcomes: vec![mk(true, "s1")],
            out_of_scope: vec![],
        };
        let global = PerformanceReport {
            heuristic_pct: 89.52,
            pearson_r: 0.89,
            n_athletes: 3,
            outcomes: vec![],
            out_of_scope: vec![],
        };
        let rep = applicability_report(train.clone(), test.clone(), global);
        assert_relative_eq!(rep.parity, 1.59, epsilon = 1e-9);
        assert_eq!(rep.failed, vec![("t2".to_string(), "train")]);
        let failed: Vec<&String> = rep.failed.iter().map(|f| &f.0).collect();
        let all: Vec<&str> = train
            .outcomes
            .iter()
            .chain(&test.outcomes)
            .map(|o| o.athlete_id.as_str())
            .collect();
        for o in train.outcomes.iter().chain(&test.outcomes) {
            assert_eq!(
                failed.contains(&&o.athlete_id),
                !o.within_band,
                "athlete {} in {all:?}",
                o.athlete_id
            );
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..20),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.5 + (i as f64).sin() * 10.0).collect();
            if let Ok(r0) = pearson(&xs, &ys) {
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r1 = pearson(&scaled, &ys).unwrap();
                prop_assert!((r0 - r1).abs() < 1e-12);
            }
        }

        #[test]
        fn band_is_nondecreasing_step_function(pace in 180.0f64..500.0, delta in 0.0f64..100.0) {
            let a = max_error_band(pace).unwrap();
            let b = max_error_band(pace + delta).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn heuristic_invariant_under_reordering(seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let table = ErrorBandTable::default();
            let mut pairs: Vec<(String, f64, f64)> = (0..10)
                .map(|i| (format!("a{i}"), 200.0 + 12.0 * i as f64, 205.0 + 11.0 * i as f64))
                .collect();
            let base = heuristic_indicator(&pairs, &table).unwrap().pct;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            pairs.shuffle(&mut rng);
            prop_assert_eq!(heuristic_indicator(&pairs, &table).unwrap().pct, base);
        }
    }
}
