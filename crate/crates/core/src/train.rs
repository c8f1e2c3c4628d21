//! Levenberg-Marquardt training with Bayesian regularization, multi-start
//! initialization, the staged preliminary tuning grids, the hidden-units x
//! delays grid search and constructive feature selection.

use crate::dmax::{dmax_threshold, fit_cubic, ThresholdPoint};
use crate::evaluate::{
    heuristic_indicator, pearson, AthleteOutcome, ErrorBandTable, PerformanceReport,
};
use crate::fileio::mix_seed;
use crate::lrnn::{forward, init_nguyen_widrow, jacobian, LrnnConfig, LrnnWeights, Sequence};
use crate::sampling::SplitPlan;
use crate::standardize::{ChannelStats, FeatureGridSeries, FixedGridSeries};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("numerical failure: damped normal matrix not invertible at mu_max")]
    NumericalFailure,
    #[error("all restarts failed: {0}")]
    AllRestartsFailed(String),
    #[error("empty parameter range")]
    EmptyRange,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error(transparent)]
    Lrnn(#[from] crate::lrnn::LrnnError),
    #[error("athlete {0}: {1}")]
    Athlete(String, String),
    #[error("model file: {0}")]
    ModelFile(String),
}

/// Which measured feature channels drive the network. Relative intensity is
/// always the first input channel; it carries no measured information beyond
/// the standardized axis itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeatureSet {
    /// Driving signal only (relative intensity).
    None,
    /// + heart rate at stage end.
    Hr,
    /// + heart rate after 1 min recovery.
    HrHrr,
    /// + perceived exertion.
    HrHrrRpe,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::None,
        FeatureSet::Hr,
        FeatureSet::HrHrr,
        FeatureSet::HrHrrRpe,
    ];

    pub fn n_inputs(self) -> usize {
        match self {
            FeatureSet::None => 1,
            FeatureSet::Hr => 2,
            FeatureSet::HrHrr => 3,
            FeatureSet::HrHrrRpe => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::None => "none",
            FeatureSet::Hr => "hr",
            FeatureSet::HrHrr => "hr+hrr",
            FeatureSet::HrHrrRpe => "hr+hrr+rpe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FeatureSet::None),
            "hr" => Some(FeatureSet::Hr),
            "hr+hrr" => Some(FeatureSet::HrHrr),
            "hr+hrr+rpe" => Some(FeatureSet::HrHrrRpe),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Levenberg-Marquardt schedule and multi-start configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub mu_init: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub mu_max: f64,
    pub min_gradient: f64,
    pub restarts: usize,
    pub seed: u64,
    /// When false, alpha is pinned to 0 and beta to 1: plain LM.
    pub bayes: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            mu_init: 1e-3,
            mu_increase: 10.0,
            mu_decrease: 0.1,
            mu_max: 1e10,
            min_gradient: 1e-7,
            restarts: 10,
            seed: 0,
            bayes: true,
        }
    }
}

/// Evidence-framework hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesState {
    /// Weight-decay hyperparameter.
    pub alpha: f64,
    /// Noise hyperparameter.
    pub beta: f64,
    /// Effective number of parameters, in [0, P].
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Regularized objective before the step, under this epoch's alpha/beta.
    pub f_before: f64,
    /// Objective after the step (equals f_before when the epoch only raised mu).
    pub f_after: f64,
    pub accepted: bool,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientConverged,
    MuExceeded,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: LrnnConfig,
    pub weights: LrnnWeights,
    pub bayes: BayesState,
    pub trace: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Final regularized objective beta*E_D + alpha*E_W.
    pub objective: f64,
    /// Final sum of squared residuals.
    pub sse: f64,
    pub init_seed: u64,
}

impl TrainedModel {
    pub fn rms(&self, n_residuals: usize) -> f64 {
        (self.sse / n_residuals.max(1) as f64).sqrt()
    }
}

/// Trains one network with Levenberg-Marquardt minimizing
/// F = beta*E_D + alpha*E_W. After each accepted step the evidence-framework
/// update re-estimates gamma, alpha and beta from the Gauss-Newton Hessian.
pub fn train_lm_bayes(
    config: &LrnnConfig,
    data: &[Sequence],
    options: &TrainOptions,
    init_seed: u64,
) -> Result<TrainedModel, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let p = config.param_count();
    let n: usize = data.iter().map(|s| s.targets.len()).sum();
    let identity = DMatrix::<f64>::identity(p, p);

    let mut weights = init_nguyen_widrow(config, init_seed);
    let mut theta = weights.to_vector(config);
    let (mut residuals, mut jac) = jacobian(config, &weights, data)?;
    let mut ed = residuals.dot(&residuals);
    let mut ew = theta.dot(&theta);

    let mut alpha = if options.bayes { 1e-3 } else { 0.0 };
    let mut beta = 1.0;
    let mut gamma = p as f64;
    let mut mu = options.mu_init;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    let mut jtj = jac.transpose() * &jac;
    let mut jtr = jac.transpose() * &residuals;

    'epochs: for epoch in 0..options.max_epochs {
        let gradient = &jtr * beta + &theta * alpha;
        if gradient.amax() < options.min_gradient {
            stop = StopReason::GradientConverged;
            break;
        }
        let f_current = beta * ed + alpha * ew;

        // Raise mu until a step decreases F; mu overflow ends training.
        loop {
            let a = &jtj * beta + &identity * (alpha + mu);
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&gradient),
                None => {
                    if mu >= options.mu_max {
                        return Err(TrainError::NumericalFailure);
                    }
                    mu *= options.mu_increase;
                    continue;
                }
            };
            let theta_new = &theta + &step;
            let w_new = LrnnWeights::from_vector(config, &theta_new);
            let mut ed_new = 0.0;
            for seq in data {
                let y = forward(config, &w_new, &seq.inputs)?;
                let r = y - &seq.targets;
                ed_new += r.dot(&r);
            }
            let ew_new = theta_new.dot(&theta_new);
            let f_new = beta * ed_new + alpha * ew_new;
            if f_new.is_finite() && f_new < f_current {
                theta = theta_new;
                weights = w_new;
                ed = ed_new;
                ew = ew_new;
                mu = (mu * options.mu_decrease).max(1e-20);
                trace.push(EpochRecord {
                    epoch,
                    f_before: f_current,
                    f_after: f_new,
                    accepted: true,
                    mu,
                    alpha,
                    beta,
                    gamma,
                });
                break;
            }
            mu *= options.mu_increase;
            if mu > options.mu_max {
                trace.push(EpochRecord {
                    epoch,
                    f_before: f_current,
                    f_after: f_current,
                    accepted: false,
                    mu,
                    alpha,
                    beta,
                    gamma,
                });
                stop = StopReason::MuExceeded;
                break 'epochs;
            }
        }

        // A step was accepted: refresh the Jacobian and the hyperparameters.
        let (r2, j2) = jacobian(config, &weights, data)?;
        residuals = r2;
        jac = j2;
        jtj = jac.transpose() * &jac;
        jtr = jac.transpose() * &residuals;

        if options.bayes {
            // gamma = sum_i lambda_i / (lambda_i + alpha) for the
            // Gauss-Newton Hessian beta J'J + alpha I; written via the trace
            // of the inverse this is P - alpha*tr((beta J'J + alpha I)^-1),
            // which keeps gamma in [0, P].
            let h = &jtj * beta + &identity * alpha;
            if let Some(ch) = h.cholesky() {
                let hinv = ch.inverse();
                gamma = p as f64 - alpha * hinv.trace();
                gamma = gamma.clamp(0.0, p as f64);
                alpha = (gamma / (2.0 * ew)).max(1e-12);
                beta = ((n as f64 - gamma) / (2.0 * ed)).max(1e-12);
            }
        }
    }

    Ok(TrainedModel {
        config: *config,
        weights,
        bayes: BayesState { alpha, beta, gamma },
        trace,
        stop,
        objective: beta * ed + alpha * ew,
        sse: ed,
        init_seed,
    })
}

/// Winner-selection score: training-set heuristic indicator first, lower
/// regularized objective as tie-break.
fn better(score_a: (f64, f64), score_b: (f64, f64)) -> bool {
    score_a.0 > score_b.0 + 1e-12 || (score_a.0 >= score_b.0 - 1e-12 && score_a.1 < score_b.1)
}

/// Trains `options.restarts` networks from distinct Nguyen-Widrow seeds and
/// keeps the one with the best training-set heuristic indicator (ties broken
/// by lower objective). Deterministic given `options.seed`.
pub fn multi_start(
    config: &LrnnConfig,
    data: &[Sequence],
    options: &TrainOptions,
    score: impl Fn(&TrainedModel) -> f64,
) -> Result<(TrainedModel, Vec<TrainedModel>), TrainError> {
    assert!(options.restarts >= 1);
    let mut models = Vec::new();
    let mut last_error = String::new();
    for r in 0..options.restarts {
        let seed = mix_seed(options.seed, &[config.hidden_units as u64, config.delays as u64, r as u64]);
        match train_lm_bayes(config, data, options, seed) {
            Ok(m) => models.push(m),
            Err(e) => last_error = e.to_string(),
        }
    }
    if models.is_empty() {
        return Err(TrainError::AllRestartsFailed(last_error));
    }
    let mut best = 0;
    let mut best_score = (score(&models[0]), models[0].objective);
    for (i, m) in models.iter().enumerate().skip(1) {
        let s = (score(m), m.objective);
        if better(s, best_score) {
            best = i;
            best_score = s;
        }
    }
    Ok((models[best].clone(), models))
}

// ---------------------------------------------------------------------------
// Data preparation and model evaluation on prepared cohorts
// ---------------------------------------------------------------------------

/// One athlete's learning-ready series: z-scored inputs, natural-unit lactate
/// targets and the tested (measured-curve) threshold.
#[derive(Debug, Clone)]
pub struct PreparedAthlete {
    pub id: String,
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub grid: Vec<f64>,
    pub pts: f64,
    pub tested: ThresholdPoint,
}

impl PreparedAthlete {
    pub fn sequence(&self) -> Sequence {
        Sequence {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }
}

/// A cohort prepared for one feature set and one split plan.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub features: FeatureSet,
    pub k: usize,
    /// Per input channel, fitted on the training set only.
    pub stats: Vec<ChannelStats>,
    pub train: Vec<PreparedAthlete>,
    pub test: Vec<PreparedAthlete>,
    /// Athletes dropped because their measured curve has no Dmax point.
    pub skipped: Vec<(String, String)>,
}

impl PreparedCohort {
    pub fn train_sequences(&self) -> Vec<Sequence> {
        self.train.iter().map(|a| a.sequence()).collect()
    }

    pub fn n_train_residuals(&self) -> usize {
        self.train.iter().map(|a| a.targets.len()).sum()
    }
}

fn raw_input_matrix(features: FeatureSet, grid: &[f64], hr: &[f64], hrr: &[f64], rpe: &[f64]) -> DMatrix<f64> {
    let k = grid.len();
    let n = features.n_inputs();
    DMatrix::from_fn(k, n, |t, c| match c {
        0 => grid[t],
        1 => hr[t],
        2 => hrr[t],
        _ => rpe[t],
    })
}

/// Builds z-scored train/test datasets and the tested thresholds from a
/// standardized cohort and a split plan. Normalization statistics come from
/// the training set only.
pub fn prepare(
    cohort: &[FixedGridSeries],
    plan: &SplitPlan,
    features: FeatureSet,
) -> Result<PreparedCohort, TrainError> {
    let k = cohort.first().map(|s| s.k()).unwrap_or(0);
    if k < 2 {
        return Err(TrainError::EmptyTrainSet);
    }
    let n_in = features.n_inputs();

    // channel statistics from training athletes
    let mut stats = Vec::with_capacity(n_in);
    for c in 0..n_in {
        let values = cohort
            .iter()
            .filter(|s| !plan.is_test(&s.athlete_id))
            .flat_map(|s| {
                let ch: &[f64] = match c {
                    0 => &s.grid,
                    1 => &s.hrevo,
                    2 => &s.hrrevo,
                    _ => &s.rpeevo,
                };
                ch.iter().copied().collect::<Vec<f64>>()
            });
        stats.push(ChannelStats::fit(values));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut skipped = Vec::new();
    for s in cohort {
        let points: Vec<(f64, f64)> = s.grid.iter().copied().zip(s.lactate.iter().copied()).collect();
        let tested = match fit_cubic(&points).and_then(|c| dmax_threshold(&c)) {
            Ok((x, y)) => ThresholdPoint::from_relative(x, y, s.pts),
            Err(e) => {
                skipped.push((s.athlete_id.clone(), e.to_string()));
                continue;
            }
        };
        let mut inputs = raw_input_matrix(features, &s.grid, &s.hrevo, &s.hrrevo, &s.rpeevo);
        for c in 0..n_in {
            for t in 0..k {
                inputs[(t, c)] = stats[c].apply(inputs[(t, c)]);
            }
        }
        let athlete = PreparedAthlete {
            id: s.athlete_id.clone(),
            inputs,
            targets: DVector::from_vec(s.lactate.clone()),
            grid: s.grid.clone(),
            pts: s.pts,
            tested,
        };
        if plan.is_test(&s.athlete_id) {
            test.push(athlete);
        } else {
            train.push(athlete);
        }
    }
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    Ok(PreparedCohort {
        features,
        k,
        stats,
        train,
        test,
        skipped,
    })
}

/// Simulated lactate series for one prepared athlete.
pub fn simulate(
    config: &LrnnConfig,
    weights: &LrnnWeights,
    athlete: &PreparedAthlete,
) -> Result<DVector<f64>, TrainError> {
    Ok(forward(config, weights, &athlete.inputs)?)
}

/// Threshold extracted from an estimated lactate series over the athlete's
/// grid.
pub fn estimated_threshold(
    athlete: &PreparedAthlete,
    estimate: &DVector<f64>,
) -> Result<ThresholdPoint, String> {
    let points: Vec<(f64, f64)> = athlete
        .grid
        .iter()
        .copied()
        .zip(estimate.iter().copied())
        .collect();
    let curve = fit_cubic(&points).map_err(|e| e.to_string())?;
    let (x, y) = dmax_threshold(&curve).map_err(|e| e.to_string())?;
    Ok(ThresholdPoint::from_relative(x, y, athlete.pts))
}

/// Evaluates a trained network on a set of prepared athletes. Athletes whose
/// estimated curve has no Dmax point count as band failures and are excluded
/// from the Pearson correlation.
pub fn evaluate_model(
    config: &LrnnConfig,
    weights: &LrnnWeights,
    athletes: &[PreparedAthlete],
    table: &ErrorBandTable,
) -> Result<PerformanceReport, TrainError> {
    if athletes.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut pairs: Vec<(String, f64, f64)> = Vec::new();
    let mut speeds: Vec<(f64, f64)> = Vec::new();
    let mut degenerate: Vec<String> = Vec::new();
    for a in athletes {
        let est = simulate(config, weights, a)?;
        match estimated_threshold(a, &est) {
            Ok(t) => {
                pairs.push((a.id.clone(), a.tested.pace_at_lt, t.pace_at_lt));
                speeds.push((a.tested.speed_at_lt, t.speed_at_lt));
            }
            Err(_) => degenerate.push(a.id.clone()),
        }
    }
    if pairs.is_empty() {
        return Err(TrainError::AllRestartsFailed(
            "every estimated curve was degenerate".into(),
        ));
    }
    let heur = heuristic_indicator(&pairs, table)
        .map_err(|e| TrainError::Athlete("<set>".into(), e.to_string()))?;
    let mut outcomes = heur.outcomes;
    for id in &degenerate {
        let tested = athletes.iter().find(|a| &a.id == id).unwrap().tested.pace_at_lt;
        outcomes.push(AthleteOutcome {
            athlete_id: id.clone(),
            tested_pace: tested,
            estimated_pace: f64::NAN,
            error: f64::INFINITY,
            allowed: table.max_error_band(tested).unwrap_or(0.0),
            within_band: false,
        });
    }
    let in_scope = outcomes.len();
    let pct = if in_scope == 0 {
        0.0
    } else {
        100.0 * outcomes.iter().filter(|o| o.within_band).count() as f64 / in_scope as f64
    };
    let xs: Vec<f64> = speeds.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = speeds.iter().map(|s| s.1).collect();
    let r = pearson(&xs, &ys).unwrap_or(0.0);
    Ok(PerformanceReport {
        heuristic_pct: pct,
        pearson_r: r,
        n_athletes: athletes.len(),
        outcomes,
        out_of_scope: heur.out_of_scope,
    })
}

// ---------------------------------------------------------------------------
// Grid search, preliminary tuning, feature selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RestartResult {
    pub restart: usize,
    pub init_seed: u64,
    pub objective: f64,
    pub train_report: PerformanceReport,
    pub test_report: Option<PerformanceReport>,
    pub global_report: Option<PerformanceReport>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: LrnnConfig,
    pub restarts: Vec<RestartResult>,
    /// Index of the multi-start winner among `restarts`.
    pub winner: usize,
    pub winner_model: TrainedModel,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub hidden_units: usize,
    pub delays: usize,
    pub result: Result<CellResult, String>,
}

/// Multi-start training of a single (HU, delays) cell with per-restart
/// evaluation on train, test and global sets.
pub fn train_cell(
    prepared: &PreparedCohort,
    hu: usize,
    delays: usize,
    options: &TrainOptions,
    table: &ErrorBandTable,
) -> Result<CellResult, String> {
    let config = LrnnConfig::new(prepared.features.n_inputs(), hu, delays);
    let data = prepared.train_sequences();
    // Restarts are independent (sub-seeded from the base seed), so they run
    // in parallel; results are collected in restart order, keeping the
    // outcome identical regardless of scheduling.
    let trained: Vec<Result<(usize, u64, TrainedModel, RestartResult), String>> = (0..options
        .restarts)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(options.seed, &[hu as u64, delays as u64, r as u64]);
            let model = train_lm_bayes(&config, &data, options, seed).map_err(|e| e.to_string())?;
            let train_report = evaluate_model(&config, &model.weights, &prepared.train, table)
                .map_err(|e| e.to_string())?;
            let test_report = if prepared.test.is_empty() {
                None
            } else {
                Some(
                    evaluate_model(&config, &model.weights, &prepared.test, table)
                        .map_err(|e| e.to_string())?,
                )
            };
            let global_report = if prepared.test.is_empty() {
                None
            } else {
                let mut all = prepared.train.clone();
                all.extend(prepared.test.iter().cloned());
                Some(
                    evaluate_model(&config, &model.weights, &all, table)
                        .map_err(|e| e.to_string())?,
                )
            };
            let result = RestartResult {
                restart: r,
                init_seed: seed,
                objective: model.objective,
                train_report,
                test_report,
                global_report,
            };
            Ok((r, seed, model, result))
        })
        .collect();

    let mut restarts = Vec::new();
    let mut winner: Option<usize> = None;
    let mut winner_model: Option<TrainedModel> = None;
    let mut winner_score = (f64::NEG_INFINITY, f64::INFINITY);
    let mut last_error = String::new();
    for item in trained {
        match item {
            Ok((_, _, model, result)) => {
                let score = (result.train_report.heuristic_pct, model.objective);
                if winner.is_none() || better(score, winner_score) {
                    winner = Some(restarts.len());
                    winner_score = score;
                    winner_model = Some(model);
                }
                restarts.push(result);
            }
            Err(e) => last_error = e,
        }
    }
    match (winner, winner_model) {
        (Some(w), Some(m)) => Ok(CellResult {
            config,
            restarts,
            winner: w,
            winner_model: m,
        }),
        _ => Err(format!("all restarts failed: {last_error}")),
    }
}

/// Trains every (HU, delays) cell with multi-start and evaluates each restart
/// on train, test and global sets. Cells run in parallel; per-cell failures
/// are recorded, not fatal. Results are deterministic and independent of the
/// execution order.
pub fn grid_search(
    prepared: &PreparedCohort,
    hu_values: &[usize],
    delay_values: &[usize],
    options: &TrainOptions,
    table: &ErrorBandTable,
) -> Result<Vec<CellOutcome>, TrainError> {
    if hu_values.is_empty() || delay_values.is_empty() {
        return Err(TrainError::EmptyRange);
    }
    let cells: Vec<(usize, usize)> = hu_values
        .iter()
        .flat_map(|&hu| delay_values.iter().map(move |&d| (hu, d)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(hu, delays)| CellOutcome {
            hidden_units: hu,
            delays,
            result: train_cell(prepared, hu, delays, options, table),
        })
        .collect())
}

/// The three staged tuning grids: coarse, increased resolution, fine.
pub fn tuning_stages() -> [(&'static str, Vec<usize>, Vec<usize>); 3] {
    [
        ("coarse", vec![1, 5, 10], vec![1, 3, 5, 8, 10]),
        ("resolution", (1..=4).collect(), (1..=10).collect()),
        ("fine", (1..=4).collect(), (5..=11).collect()),
    ]
}

#[derive(Debug, Clone)]
pub struct TuningStageResult {
    pub name: &'static str,
    pub cells: Vec<CellOutcome>,
}

#[derive(Debug, Clone)]
pub struct TuningReport {
    pub stages: Vec<TuningStageResult>,
    pub recommended_hu: (usize, usize),
    pub recommended_delays: (usize, usize),
}

/// Runs the staged preliminary-tuning grids on a small subset (athletes that
/// completed the 17.5 km/h stage). The surviving range is the fine-tuning
/// grid span.
pub fn preliminary_tuning(
    prepared: &PreparedCohort,
    options: &TrainOptions,
    table: &ErrorBandTable,
) -> Result<TuningReport, TrainError> {
    let mut stages = Vec::new();
    for (name, hu, delays) in tuning_stages() {
        let cells = grid_search(prepared, &hu, &delays, options, table)?;
        stages.push(TuningStageResult { name, cells });
    }
    let (_, fine_hu, fine_delays) = &tuning_stages()[2];
    Ok(TuningReport {
        stages,
        recommended_hu: (*fine_hu.first().unwrap(), *fine_hu.last().unwrap()),
        recommended_delays: (*fine_delays.first().unwrap(), *fine_delays.last().unwrap()),
    })
}

#[derive(Debug, Clone)]
pub struct FeatureRow {
    pub features: FeatureSet,
    pub train_report: PerformanceReport,
    pub test_report: Option<PerformanceReport>,
    pub global_report: Option<PerformanceReport>,
}

#[derive(Debug, Clone)]
pub struct FeatureSelectionOutcome {
    pub rows: Vec<FeatureRow>,
    pub selected: FeatureSet,
}

/// Constructive feature selection: evaluates the cumulative candidate sets
/// in relevance order and keeps growing the selection while the training-set
/// indicator pair improves; the first non-improving addition freezes the
/// selection (ties keep the smaller set). All four sets are still evaluated
/// so the comparison table is complete.
pub fn constructive_feature_selection(
    cohort: &[FixedGridSeries],
    plan: &SplitPlan,
    hu: usize,
    delays: usize,
    options: &TrainOptions,
    table: &ErrorBandTable,
) -> Result<FeatureSelectionOutcome, TrainError> {
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut selected = FeatureSet::None;
    let mut best: Option<(f64, f64)> = None;
    let mut frozen = false;
    for features in FeatureSet::ALL {
        let prepared = prepare(cohort, plan, features)?;
        let cell = train_cell(&prepared, hu, delays, options, table)
            .map_err(TrainError::AllRestartsFailed)?;
        let w = &cell.restarts[cell.winner];
        let pair = (w.train_report.heuristic_pct, w.train_report.pearson_r);
        rows.push(FeatureRow {
            features,
            train_report: w.train_report.clone(),
            test_report: w.test_report.clone(),
            global_report: w.global_report.clone(),
        });
        match best {
            None => {
                best = Some(pair);
                selected = features;
            }
            Some(b) if !frozen => {
                let improves = (pair.0 > b.0 + 1e-9 && pair.1 >= b.1 - 1e-9)
                    || (pair.1 > b.1 + 1e-9 && pair.0 >= b.0 - 1e-9);
                if improves {
                    best = Some(pair);
                    selected = features;
                } else {
                    frozen = true;
                }
            }
            _ => {}
        }
    }
    Ok(FeatureSelectionOutcome { rows, selected })
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

/// Everything needed to estimate thresholds for new sessions: architecture,
/// weights, feature set, grid size and the training-set channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: LrnnConfig,
    pub features: FeatureSet,
    pub k: usize,
    pub stats: Vec<ChannelStats>,
    pub weights: LrnnWeights,
}

impl SavedModel {
    pub fn new(prepared: &PreparedCohort, model: &TrainedModel) -> Self {
        Self {
            config: model.config,
            features: prepared.features,
            k: prepared.k,
            stats: prepared.stats.clone(),
            weights: model.weights.clone(),
        }
    }

    /// Estimates the lactate threshold of a raw session from its feature
    /// channels alone.
    pub fn estimate(&self, series: &FeatureGridSeries) -> Result<ThresholdPoint, TrainError> {
        let mut inputs = raw_input_matrix(
            self.features,
            &series.grid,
            &series.hrevo,
            &series.hrrevo,
            &series.rpeevo,
        );
        for c in 0..self.features.n_inputs() {
            for t in 0..series.grid.len() {
                inputs[(t, c)] = self.stats[c].apply(inputs[(t, c)]);
            }
        }
        let est = forward(&self.config, &self.weights, &inputs)?;
        let points: Vec<(f64, f64)> = series.grid.iter().copied().zip(est.iter().copied()).collect();
        let curve = fit_cubic(&points)
            .map_err(|e| TrainError::Athlete(series.athlete_id.clone(), e.to_string()))?;
        let (x, y) = dmax_threshold(&curve)
            .map_err(|e| TrainError::Athlete(series.athlete_id.clone(), e.to_string()))?;
        Ok(ThresholdPoint::from_relative(x, y, series.pts))
    }

    /// Serializes to the versioned text container documented in the README.
    pub fn to_text(&self) -> String {
        let fmt_slice = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        out.push_str("format=ltmodel.v1\n");
        out.push_str(&format!("features={}\n", self.features));
        out.push_str(&format!("k={}\n", self.k));
        out.push_str(&format!("n_inputs={}\n", self.config.n_inputs));
        out.push_str(&format!("hidden_units={}\n", self.config.hidden_units));
        out.push_str(&format!("delays={}\n", self.config.delays));
        out.push_str(&format!(
            "stat_mean={}\n",
            fmt_slice(&self.stats.iter().map(|s| s.mean).collect::<Vec<_>>())
        ));
        out.push_str(&format!(
            "stat_std={}\n",
            fmt_slice(&self.stats.iter().map(|s| s.std).collect::<Vec<_>>())
        ));
        let theta = self.weights.to_vector(&self.config);
        out.push_str(&format!("weights={}\n", fmt_slice(theta.as_slice())));
        out
    }

    pub fn from_text(content: &str) -> Result<Self, TrainError> {
        let mut kv = std::collections::BTreeMap::new();
        for line in content.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::ModelFile(format!("bad line {line:?}")))?;
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| TrainError::ModelFile(format!("missing key {k:?}")))
        };
        if get("format")? != "ltmodel.v1" {
            return Err(TrainError::ModelFile(format!(
                "unsupported format {:?}",
                get("format")?
            )));
        }
        let features = FeatureSet::parse(get("features")?)
            .ok_or_else(|| TrainError::ModelFile("bad features".into()))?;
        let parse_usize = |k: &str| -> Result<usize, TrainError> {
            get(k)?
                .parse()
                .map_err(|_| TrainError::ModelFile(format!("bad integer for {k:?}")))
        };
        let parse_floats = |k: &str| -> Result<Vec<f64>, TrainError> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| TrainError::ModelFile(format!("bad float in {k:?}")))
                })
                .collect()
        };
        let config = LrnnConfig::new(
            parse_usize("n_inputs")?,
            parse_usize("hidden_units")?,
            parse_usize("delays")?,
        );
        if config.n_inputs != features.n_inputs() {
            return Err(TrainError::ModelFile("n_inputs/features mismatch".into()));
        }
        let means = parse_floats("stat_mean")?;
        let stds = parse_floats("stat_std")?;
        if means.len() != config.n_inputs || stds.len() != config.n_inputs {
            return Err(TrainError::ModelFile("stats length mismatch".into()));
        }
        let theta = parse_floats("weights")?;
        if theta.len() != config.param_count() {
            return Err(TrainError::ModelFile(format!(
                "expected {} weights, found {}",
                config.param_count(),
                theta.len()
            )));
        }
        Ok(Self {
            config,
            features,
            k: parse_usize("k")?,
            stats: means
                .into_iter()
                .zip(stds)
                .map(|(mean, std)| ChannelStats { mean, std })
                .collect(),
            weights: LrnnWeights::from_vector(&config, &DVector::from_vec(theta)),
        })
    }
}
