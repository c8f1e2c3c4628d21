//! Acceptance gate: seven system-level checks, one test per criterion.
//! Each prints a single PASS line on success; run them with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use lactate_threshold::dmax::{dmax_threshold, fit_cubic, LactateCurve};
use lactate_threshold::domain::validate;
use lactate_threshold::evaluate::{heuristic_indicator, max_error_band, pearson, ErrorBandTable};
use lactate_threshold::lrnn::{forward, init_nguyen_widrow, jacobian, LrnnConfig, LrnnWeights, Sequence};
use lactate_threshold::sampling::{hierarchical_cluster, stratified_split, write_split_plan, Linkage};
use lactate_threshold::standardize::resample;
use lactate_threshold::synth::{generate_cohort, read_truth, SynthOptions};
use lactate_threshold::train::{train_lm_bayes, TrainOptions};

fn pass(n: usize, name: &str) {
    println!("ACCEPTANCE CRITERION {n} ({name}): PASS");
}

// ---------------------------------------------------------------------------
// 1. Threshold extraction agrees with an exhaustive search oracle.

/// Brute-force Dmax: scan a dense grid for the point of maximal perpendicular
/// distance from the chord. Independent of the analytic quadratic solve.
fn dmax_by_scan(curve: &LactateCurve, n: usize) -> Option<(f64, f64)> {
    let (x0, x1) = curve.x_range();
    let (y0, y1) = (curve.eval(x0), curve.eval(x1));
    let slope = (y1 - y0) / (x1 - x0);
    let norm = (1.0 + slope * slope).sqrt();
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 1..n {
        let x = x0 + (x1 - x0) * i as f64 / n as f64;
        let d = (curve.eval(x) - (y0 + slope * (x - x0))) / norm;
        let d = d.abs();
        if best.map_or(true, |(_, _, bd)| d > bd) {
            best = Some((x, curve.eval(x), d));
        }
    }
    best.filter(|&(_, _, d)| d > 1e-9).map(|(x, y, _)| (x, y))
}

#[test]
fn criterion_1_dmax_matches_search_oracle() {
    let start = Instant::now();

    // Closed-form case: x^2 on [0, 1] has its Dmax point exactly at 1/2.
    let parabola = LactateCurve::from_coefficients([0.0, 0.0, 1.0, 0.0], 0.0, 1.0);
    let (x, y) = dmax_threshold(&parabola).unwrap();
    assert!((x - 0.5).abs() < 1e-9, "parabola Dmax at {x}, want 0.5");
    assert!((y - 0.25).abs() < 1e-9);

    // 200 random cubics, fitted from sampled points, against the scan oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(20260826);
    let mut checked = 0;
    for _ in 0..200 {
        let x_first: f64 = rng.gen_range(0.4..0.6);
        let coeffs = [
            rng.gen_range(0.5..2.0),
            rng.gen_range(-3.0..1.0),
            rng.gen_range(-2.0..4.0),
            rng.gen_range(0.5..12.0),
        ];
        let truth = LactateCurve::from_coefficients(coeffs, x_first, 1.0);
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let x = x_first + (1.0 - x_first) * i as f64 / 11.0;
                (x, truth.eval(x))
            })
            .collect();
        let fitted = fit_cubic(&points).unwrap();
        let analytic = match dmax_threshold(&fitted) {
            Ok(p) => p,
            Err(_) => continue, // no interior Dmax point for this draw
        };
        let oracle = dmax_by_scan(&fitted, 200_000).expect("oracle found no point");
        assert!(
            (analytic.0 - oracle.0).abs() < 1e-4,
            "analytic x={} vs oracle x={} for coeffs {coeffs:?}",
            analytic.0,
            oracle.0
        );
        checked += 1;
    }
    assert!(checked >= 150, "only {checked} of 200 draws had a Dmax point");
    assert!(start.elapsed().as_secs() < 5, "criterion 1 exceeded 5 s");
    pass(1, "Dmax against exhaustive-search oracle");
}

// ---------------------------------------------------------------------------
// 2. The analytic network Jacobian matches central finite differences.

fn fd_jacobian(config: &LrnnConfig, weights: &LrnnWeights, data: &[Sequence]) -> DMatrix<f64> {
    let p = config.param_count();
    let n: usize = data.iter().map(|s| s.inputs.nrows()).sum();
    let theta = weights.to_vector(config);
    let h = 1e-6;
    let mut jac = DMatrix::zeros(n, p);
    for j in 0..p {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let wp = LrnnWeights::from_vector(config, &plus);
        let wm = LrnnWeights::from_vector(config, &minus);
        let mut row = 0;
        for seq in data {
            let yp = forward(config, &wp, &seq.inputs).unwrap();
            let ym = forward(config, &wm, &seq.inputs).unwrap();
            for t in 0..seq.inputs.nrows() {
                jac[(row + t, j)] = (yp[t] - ym[t]) / (2.0 * h);
            }
            row += seq.inputs.nrows();
        }
    }
    jac
}

#[test]
fn criterion_2_jacobian_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut case = 0;
    for n_inputs in 1..=2usize {
        for hidden in 1..=4usize {
            for delays in [1usize, 3, 6] {
                if case >= 20 {
                    break;
                }
                case += 1;
                let config = LrnnConfig::new(n_inputs, hidden, delays);
                let weights = init_nguyen_widrow(&config, 1000 + case as u64);
                let k = 20;
                let inputs = DMatrix::from_fn(k, n_inputs, |_, _| rng.gen_range(-1.0..1.0));
                let targets = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
                let seq = Sequence { inputs, targets };
                let (_, analytic) = jacobian(&config, &weights, std::slice::from_ref(&seq)).unwrap();
                let fd = fd_jacobian(&config, &weights, std::slice::from_ref(&seq));
                let scale = fd.amax().max(1.0);
                let err = (&analytic - &fd).amax() / scale;
                assert!(
                    err < 1e-4,
                    "Jacobian mismatch {err:.3e} (inputs={n_inputs} hidden={hidden} delays={delays})"
                );
            }
        }
    }
    assert!(case >= 20);
    assert!(start.elapsed().as_secs() < 30, "criterion 2 exceeded 30 s");
    pass(2, "exact Jacobian against finite differences");
}

// ---------------------------------------------------------------------------
// 3. The optimizer converges on realizable data and honors its invariants.

#[test]
fn criterion_3_training_converges_with_invariants() {
    let config = LrnnConfig::new(1, 3, 2);
    let teacher = init_nguyen_widrow(&config, 7);
    let k = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = DMatrix::from_fn(k, 1, |_, _| rng.gen_range(-1.0..1.0));
    let targets = forward(&config, &teacher, &inputs).unwrap();
    let seq = Sequence { inputs, targets };
    let data = std::slice::from_ref(&seq);

    let options = TrainOptions { max_epochs: 400, restarts: 1, seed: 3, ..Default::default() };
    let mut best_rms = f64::INFINITY;
    for restart in 0..5u64 {
        let model = train_lm_bayes(&config, data, &options, 100 + restart).unwrap();
        best_rms = best_rms.min(model.rms(k));

        // Accepted steps must strictly decrease the regularized objective,
        // and the effective parameter count must stay inside [0, P].
        let p = config.param_count() as f64;
        for record in &model.trace {
            if record.accepted {
                assert!(
                    record.f_after < record.f_before,
                    "accepted step raised the objective at epoch {}",
                    record.epoch
                );
            }
            assert!(
                record.gamma >= 0.0 && record.gamma <= p,
                "gamma {} outside [0, {p}]",
                record.gamma
            );
        }
    }
    assert!(best_rms < 1e-3, "teacher-student RMS {best_rms} >= 1e-3");

    // With the evidence framework off, the loop must reduce to plain
    // Levenberg-Marquardt: no weight decay, unit noise weight.
    let plain = TrainOptions { bayes: false, max_epochs: 50, ..options };
    let model = train_lm_bayes(&config, data, &plain, 11).unwrap();
    for record in &model.trace {
        assert_eq!(record.alpha, 0.0);
        assert_eq!(record.beta, 1.0);
    }
    pass(3, "optimizer convergence and invariants");
}

// ---------------------------------------------------------------------------
// 4. Clustering recovers planted cohort structure; the split is stratified,
//    proportional and reproducible.

#[test]
fn criterion_4_stratified_split_recovers_structure() {
    let (sessions, truth) = generate_cohort(&SynthOptions { n_athletes: 105, seed: 0, noise_sigma: 0.3 }).unwrap();
    let cohort: Vec<_> = sessions
        .iter()
        .map(|s| resample(&validate(s.clone()).unwrap(), 20).unwrap())
        .collect();
    let ids: Vec<String> = cohort.iter().map(|s| s.athlete_id.clone()).collect();

    let strata = hierarchical_cluster(&cohort, Linkage::Average, Some(10)).unwrap();
    assert_eq!(strata.n_strata, 10);

    // Purity against the generator's planted families.
    let mut clusters: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for row in &truth {
        let c = strata.assignments[&row.athlete_id];
        *clusters.entry(c).or_default().entry(row.family).or_default() += 1;
    }
    let majority: usize = clusters.values().map(|m| *m.values().max().unwrap()).sum();
    let purity = majority as f64 / truth.len() as f64;
    assert!(purity >= 0.90, "cluster purity {purity:.3} < 0.90");

    // Per-stratum test counts follow round(fraction * stratum size).
    let plan = stratified_split(&ids, &strata, 0.3, 42);
    for stratum in 0..strata.n_strata {
        let members: Vec<&String> = ids
            .iter()
            .filter(|id| strata.assignments[*id] == stratum)
            .collect();
        let in_test = members.iter().filter(|id| plan.is_test(id)).count();
        let expected = ((0.3 * members.len() as f64).round() as usize).min(members.len());
        assert_eq!(
            in_test, expected,
            "stratum {stratum}: {in_test} test athletes, want {expected} of {}",
            members.len()
        );
    }

    // Same seed, byte-identical plan; every athlete lands in exactly one set.
    let again = stratified_split(&ids, &strata, 0.3, 42);
    assert_eq!(write_split_plan(&plan, &ids), write_split_plan(&again, &ids));
    assert_eq!(plan.train_ids.len() + plan.test_ids.len(), ids.len());
    pass(4, "stratified split purity, proportions and reproducibility");
}

// ---------------------------------------------------------------------------
// Shared helpers for the CLI-driven criteria.

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ltcli")
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("launch ltcli");
    assert!(
        out.status.success(),
        "ltcli {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"))
}

struct Pipeline {
    dir: PathBuf,
}

impl Pipeline {
    fn p(&self, name: &str) -> String {
        self.dir.join(name).to_string_lossy().into_owned()
    }
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn run_pipeline(
    dir: &Path,
    n: &str,
    seed: &str,
    hu: &str,
    delays: &str,
    restarts: &str,
    epochs: &str,
    with_tune: bool,
) -> Pipeline {
    std::fs::create_dir_all(dir).unwrap();
    let p = Pipeline { dir: dir.to_path_buf() };
    run_cli(&[
        "gen", "--out", &p.p("sessions.csv"), "--truth-out", &p.p("truth.csv"),
        "--n", n, "--seed", seed,
    ]);
    run_cli(&["standardize", "--input", &p.p("sessions.csv"), "--out", &p.p("std.csv")]);
    run_cli(&[
        "split", "--input", &p.p("std.csv"), "--out", &p.p("split.csv"),
        "--strata", "10", "--seed", seed,
    ]);
    if with_tune {
        run_cli(&[
            "tune", "--input", &p.p("std.csv"), "--out", &p.p("tuning.csv"),
            "--restarts", "2", "--max-epochs", epochs, "--features", "hr", "--seed", seed,
        ]);
    }
    run_cli(&[
        "train", "--input", &p.p("std.csv"), "--split", &p.p("split.csv"),
        "--out", &p.p("run"), "--hu", hu, "--delays", delays,
        "--restarts", restarts, "--max-epochs", epochs,
        "--features", "hr", "--seed", seed, "--feature-select",
    ]);
    run_cli(&[
        "evaluate", "--model", &p.p("run/model.txt"), "--input", &p.p("std.csv"),
        "--split", &p.p("split.csv"), "--out", &p.p("eval.csv"), "--seed", seed,
    ]);
    run_cli(&[
        "estimate", "--model", &p.p("run/model.txt"), "--input", &p.p("sessions.csv"),
        "--out", &p.p("estimates.csv"), "--seed", seed,
    ]);
    p
}

// ---------------------------------------------------------------------------
// 5. The full pipeline meets the published performance bar on a fresh cohort.

#[test]
fn criterion_5_end_to_end_performance() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let p = run_pipeline(tmp.path(), "105", "42", "1-4", "5-11", "10", "60", true);

    // Staged tuning visited the expected grids: 15 coarse, 40 resolution,
    // 28 fine architecture cells.
    let tuning = read(&p.path("tuning.csv"));
    let mut stage_cells: BTreeMap<String, std::collections::BTreeSet<(String, String)>> = BTreeMap::new();
    for line in tuning.lines() {
        if line.starts_with('#') || line.starts_with("stage,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 8 {
            stage_cells
                .entry(f[0].to_string())
                .or_default()
                .insert((f[1].to_string(), f[2].to_string()));
        }
    }
    assert_eq!(stage_cells["coarse"].len(), 15);
    assert_eq!(stage_cells["resolution"].len(), 40);
    assert_eq!(stage_cells["fine"].len(), 28);

    // The final grid covered 4 x 7 cells with 10 restarts each.
    let grid = read(&p.path("run/grid.csv"));
    let train_rows: Vec<&str> = grid.lines().filter(|l| l.split(',').nth(3) == Some("train")).collect();
    assert_eq!(train_rows.len(), 4 * 7 * 10, "expected 280 train grid rows");

    // Heuristic indicator and correlation, against the held-out tested
    // thresholds, on both sets; train/test parity within 5 points.
    let eval = read(&p.path("eval.csv"));
    let mut summary: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut parity = f64::NAN;
    for line in eval.lines() {
        if let Some(v) = line.strip_prefix("# parity=") {
            parity = v.parse().unwrap();
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 5 && matches!(f[0], "train" | "test" | "global") {
            summary.insert(f[0].into(), (f[1].parse().unwrap(), f[2].parse().unwrap()));
        }
    }
    for set in ["train", "test"] {
        let (pct, r) = summary[set];
        assert!(pct >= 80.0, "{set} heuristic {pct:.2}% < 80%");
        assert!(r >= 0.85, "{set} Pearson r {r:.3} < 0.85");
    }
    assert!(parity.abs() <= 5.0, "train/test parity {parity:.2} > 5");

    // The very same model, fed only intensity and physiological features
    // (no lactate), must also recover the generator's ground truth.
    let truth = read_truth(&read(&p.path("truth.csv"))).unwrap();
    let truth_pace: BTreeMap<&str, f64> =
        truth.iter().map(|t| (t.athlete_id.as_str(), t.true_lt_pace)).collect();
    let mut pairs = Vec::new();
    for row in read(&p.path("estimates.csv")).lines() {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() == 3 && truth_pace.contains_key(f[0]) {
            pairs.push((f[0].to_string(), truth_pace[f[0]], f[2].parse::<f64>().unwrap()));
        }
    }
    assert_eq!(pairs.len(), 105);
    let outcome = heuristic_indicator(&pairs, &ErrorBandTable::default()).unwrap();
    assert!(
        outcome.pct >= 80.0,
        "heuristic vs generator truth {:.2}% < 80%",
        outcome.pct
    );
    let tested_speeds: Vec<f64> = pairs.iter().map(|p| 3600.0 / p.1).collect();
    let estimated_speeds: Vec<f64> = pairs.iter().map(|p| 3600.0 / p.2).collect();
    let r = pearson(&tested_speeds, &estimated_speeds).unwrap();
    assert!(r >= 0.85, "Pearson vs generator truth {r:.3} < 0.85");

    assert!(start.elapsed().as_secs() < 1800, "criterion 5 exceeded 30 min");
    pass(5, "end-to-end pipeline performance");
}

// ---------------------------------------------------------------------------
// 6. Dual indicators: the pace-banded error table is exact and the
//    correlation indicator has the defining analytic properties.

#[test]
fn criterion_6_dual_indicators() {
    for (pace, allowed) in [
        (180.0, 3.0),
        (209.9, 3.0),
        (210.0, 5.0),
        (239.9, 5.0),
        (240.0, 10.0),
        (269.9, 10.0),
        (270.0, 15.0),
        (299.9, 15.0),
        (300.0, 20.0),
        (480.0, 20.0),
    ] {
        assert_eq!(max_error_band(pace).unwrap(), allowed, "band at pace {pace}");
    }
    assert!(max_error_band(179.9).is_err(), "sub-3:00/km paces are out of scope");

    let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.3 - 4.0).collect();
    let pos: Vec<f64> = xs.iter().map(|x| 2.5 * x + 1.0).collect();
    let neg: Vec<f64> = xs.iter().map(|x| -0.7 * x + 3.0).collect();
    assert!((pearson(&xs, &pos).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);

    // Invariance under positive affine maps of either variable.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-1.0..1.0)).collect();
    let r = pearson(&xs, &ys).unwrap();
    let xs2: Vec<f64> = xs.iter().map(|x| 3.2 * x - 7.0).collect();
    let ys2: Vec<f64> = ys.iter().map(|y| 0.4 * y + 2.0).collect();
    assert!((pearson(&xs2, &ys2).unwrap() - r).abs() < 1e-12);
    pass(6, "dual indicators: error bands and correlation");
}

// ---------------------------------------------------------------------------
// 7. Reruns with the same seed are byte-identical end to end.

#[test]
fn criterion_7_byte_identical_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_pipeline(&tmp.path().join("a"), "40", "9", "1-2", "5-6", "3", "40", false);
    let b = run_pipeline(&tmp.path().join("b"), "40", "9", "1-2", "5-6", "3", "40", false);
    for name in [
        "sessions.csv",
        "truth.csv",
        "std.csv",
        "split.csv",
        "run/grid.csv",
        "run/rank.csv",
        "run/features.csv",
        "run/model.txt",
        "eval.csv",
        "estimates.csv",
    ] {
        assert_eq!(
            read(&a.path(name)),
            read(&b.path(name)),
            "{name} differs between identically seeded runs"
        );
    }
    pass(7, "byte-identical reruns");
}
