//! Train/test split construction: expert (knowledge-based) assignment and
//! stratified sampling over hierarchically clustered lactate-curve shapes.

use crate::standardize::FixedGridSeries;
use kodama::{linkage, Method};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("grid mismatch: {0} vs {1} points")]
    GridMismatch(usize, usize),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("split file mentions unknown athlete {0:?}")]
    UnknownAthlete(String),
    #[error("split file is missing athlete {0:?}")]
    MissingAthlete(String),
    #[error("split file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

impl Linkage {
    fn method(self) -> Method {
        match self {
            Linkage::Single => Method::Single,
            Linkage::Complete => Method::Complete,
            Linkage::Average => Method::Average,
        }
    }
}

/// Cluster assignment of every athlete, with the dendrogram cut height used.
#[derive(Debug, Clone)]
pub struct Strata {
    /// athlete_id -> stratum index, contiguous from 0 in cohort order.
    pub assignments: BTreeMap<String, usize>,
    pub n_strata: usize,
    /// Dissimilarity height at which the dendrogram was cut.
    pub linkage_cut: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMethod {
    Knowledge,
    Stratified,
}

impl std::fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitMethod::Knowledge => write!(f, "knowledge"),
            SplitMethod::Stratified => write!(f, "stratified"),
        }
    }
}

/// Train/test assignment with stratum provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub method: SplitMethod,
    pub seed: u64,
    /// athlete_id -> stratum; empty for knowledge-based plans.
    pub stratum_provenance: BTreeMap<String, usize>,
}

impl SplitPlan {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }
}

/// Point-to-point curve dissimilarity: Euclidean distance over the lactate
/// channels of two equally standardized series.
pub fn curve_distance(a: &FixedGridSeries, b: &FixedGridSeries) -> Result<f64, SamplingError> {
    if a.k() != b.k() {
        return Err(SamplingError::GridMismatch(a.k(), b.k()));
    }
    Ok(a.lactate
        .iter()
        .zip(&b.lactate)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Condensed pairwise distance matrix in kodama's expected order.
pub fn distance_matrix(cohort: &[FixedGridSeries]) -> Result<Vec<f64>, SamplingError> {
    let n = cohort.len();
    let mut cond = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            cond.push(curve_distance(&cohort[i], &cohort[j])?);
        }
    }
    Ok(cond)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Agglomerative clustering of standardized lactate curves. When `n_target`
/// is given the dendrogram is cut to that many strata; otherwise it is cut at
/// the largest gap between consecutive merge heights.
pub fn hierarchical_cluster(
    cohort: &[FixedGridSeries],
    method: Linkage,
    n_target: Option<usize>,
) -> Result<Strata, SamplingError> {
    let n = cohort.len();
    if n == 0 {
        return Err(SamplingError::EmptyCohort);
    }
    if n == 1 {
        let mut assignments = BTreeMap::new();
        assignments.insert(cohort[0].athlete_id.clone(), 0);
        return Ok(Strata {
            assignments,
            n_strata: 1,
            linkage_cut: 0.0,
        });
    }
    let mut cond = distance_matrix(cohort)?;
    let dend = linkage(&mut cond, n, method.method());
    let heights: Vec<f64> = dend.steps().iter().map(|s| s.dissimilarity).collect();

    // Number of merge steps to apply.
    let n_merges = match n_target {
        Some(k) => {
            let k = k.clamp(1, n);
            n - k
        }
        None => {
            // Largest gap between consecutive merge heights; merges at or
            // below the gap are applied. A single step means two clusters
            // only if its height dominates nothing, so default to one
            // cluster when no interior gap exists.
            if heights.len() == 1 {
                1
            } else {
                let mut best = (0usize, f64::NEG_INFINITY);
                for i in 0..heights.len() - 1 {
                    let gap = heights[i + 1] - heights[i];
                    if gap > best.1 {
                        best = (i, gap);
                    }
                }
                best.0 + 1
            }
        }
    };

    // Replay merges through a union-find. kodama labels original
    // observations 0..n-1 and the cluster created by step i as n+i.
    let mut uf = UnionFind::new(2 * n - 1);
    for (i, step) in dend.steps().iter().take(n_merges).enumerate() {
        uf.union(step.cluster1, n + i);
        uf.union(step.cluster2, n + i);
    }
    let mut label_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    let mut ordered: Vec<(String, usize)> = Vec::with_capacity(n);
    for (i, s) in cohort.iter().enumerate() {
        let root = uf.find(i);
        let next = label_of_root.len();
        let label = *label_of_root.entry(root).or_insert(next);
        ordered.push((s.athlete_id.clone(), label));
    }
    for (id, label) in ordered {
        assignments.insert(id, label);
    }
    let n_strata = label_of_root.len();
    let linkage_cut = if n_merges == 0 {
        0.0
    } else {
        heights[n_merges - 1]
    };
    Ok(Strata {
        assignments,
        n_strata,
        linkage_cut,
    })
}

/// Draws round(test_fraction * m) members of each stratum into the test set,
/// uniformly without replacement; the remainder trains. Strata of size 1 go
/// to train. Deterministic under a fixed seed.
pub fn stratified_split(
    cohort_ids: &[String],
    strata: &Strata,
    test_fraction: f64,
    seed: u64,
) -> SplitPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for stratum in 0..strata.n_strata {
        let mut members: Vec<&String> = cohort_ids
            .iter()
            .filter(|id| strata.assignments.get(*id) == Some(&stratum))
            .collect();
        let m = members.len();
        let k = ((test_fraction * m as f64).round() as usize).min(m);
        members.shuffle(&mut rng);
        let (test, train) = members.split_at(k);
        test_ids.extend(test.iter().map(|s| s.to_string()));
        train_ids.extend(train.iter().map(|s| s.to_string()));
    }
    // Stable cohort ordering in the emitted plan.
    train_ids.sort_by_key(|id| cohort_ids.iter().position(|c| c == id));
    test_ids.sort_by_key(|id| cohort_ids.iter().position(|c| c == id));
    SplitPlan {
        train_ids,
        test_ids,
        method: SplitMethod::Stratified,
        seed,
        stratum_provenance: strata.assignments.clone(),
    }
}

pub const SPLIT_HEADER: &str = "athlete_id,set,stratum";

pub fn write_split_plan(plan: &SplitPlan, cohort_ids: &[String]) -> String {
    let mut out = String::new();
    out.push_str(SPLIT_HEADER);
    out.push('\n');
    for id in cohort_ids {
        let set = if plan.is_test(id) { "test" } else { "train" };
        let stratum = plan
            .stratum_provenance
            .get(id)
            .map(|s| s.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{id},{set},{stratum}\n"));
    }
    out
}

/// Parses a split plan file. Every cohort athlete must be assigned exactly
/// once. A test share away from `expected_fraction` yields a warning string,
/// not an error.
pub fn read_split_plan(
    content: &str,
    cohort_ids: &[String],
    method: SplitMethod,
    expected_fraction: f64,
) -> Result<(SplitPlan, Vec<String>), SamplingError> {
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SPLIT_HEADER => {}
        other => {
            return Err(SamplingError::Malformed {
                line: 1,
                msg: format!("expected header {SPLIT_HEADER:?}, got {other:?}"),
            })
        }
    }
    let mut seen: BTreeMap<String, bool> = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for (line, raw) in lines {
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 3 {
            return Err(SamplingError::Malformed {
                line,
                msg: "expected athlete_id,set,stratum".into(),
            });
        }
        let id = f[0].trim().to_string();
        if !cohort_ids.contains(&id) {
            return Err(SamplingError::UnknownAthlete(id));
        }
        let is_test = match f[1].trim() {
            "train" => false,
            "test" => true,
            other => {
                return Err(SamplingError::Malformed {
                    line,
                    msg: format!("set must be train or test, got {other:?}"),
                })
            }
        };
        if seen.insert(id.clone(), is_test).is_some() {
            return Err(SamplingError::Malformed {
                line,
                msg: format!("athlete {id:?} assigned twice"),
            });
        }
        let stratum = f[2].trim();
        if !stratum.is_empty() {
            provenance.insert(
                id,
                stratum.parse::<usize>().map_err(|_| SamplingError::Malformed {
                    line,
                    msg: format!("bad stratum {stratum:?}"),
                })?,
            );
        }
    }
    for id in cohort_ids {
        if !seen.contains_key(id) {
            return Err(SamplingError::MissingAthlete(id.clone()));
        }
    }
    let train_ids: Vec<String> = cohort_ids.iter().filter(|id| !seen[*id]).cloned().collect();
    let test_ids: Vec<String> = cohort_ids.iter().filter(|id| seen[*id]).cloned().collect();
    let mut warnings = Vec::new();
    let actual = test_ids.len() as f64 / cohort_ids.len() as f64;
    if (actual - expected_fraction).abs() > 0.5 / cohort_ids.len() as f64 + 1e-9 {
        warnings.push(format!(
            "test fraction {:.1}% differs from expected {:.1}%",
            100.0 * actual,
            100.0 * expected_fraction
        ));
    }
    Ok((
        SplitPlan {
            train_ids,
            test_ids,
            method,
            seed: 0,
            stratum_provenance: provenance,
        },
        warnings,
    ))
}

/// Knowledge-based split: the expert file is taken verbatim.
pub fn knowledge_split(
    content: &str,
    cohort_ids: &[String],
) -> Result<(SplitPlan, Vec<String>), SamplingError> {
    read_split_plan(content, cohort_ids, SplitMethod::Knowledge, 0.30)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(id: &str, lactate: Vec<f64>) -> FixedGridSeries {
        let k = lactate.len();
        FixedGridSeries {
            athlete_id: id.to_string(),
            grid: (0..k).map(|i| 0.5 + 0.5 * i as f64 / (k - 1) as f64).collect(),
            lactate,
            hrevo: vec![150.0; k],
            hrrevo: vec![130.0; k],
            rpeevo: vec![5.0; k],
            pts: 16.5,
        }
    }

    #[test]
    fn distance_closed_forms() {
        let a = series("a", vec![1.0; 20]);
        let b = series("b", vec![2.0; 20]);
        assert!((curve_distance(&a, &a).unwrap()).abs() < 1e-12);
        assert!((curve_distance(&a, &b).unwrap() - 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_grid_mismatch() {
        let a = series("a", vec![1.0; 20]);
        let b = series("b", vec![1.0; 10]);
        assert!(matches!(
            curve_distance(&a, &b),
            Err(SamplingError::GridMismatch(20, 10))
        ));
    }

    fn two_group_cohort() -> Vec<FixedGridSeries> {
        let mut cohort = Vec::new();
        for i in 0..6 {
            let base = if i < 3 { 1.0 } else { 8.0 };
            let jitter = 0.05 * i as f64;
            cohort.push(series(
                &format!("A{i}"),
                (0..10).map(|j| base + jitter + 0.1 * j as f64).collect(),
            ));
        }
        cohort
    }

    #[test]
    fn gap_cut_recovers_two_groups() {
        let cohort = two_group_cohort();
        let strata = hierarchical_cluster(&cohort, Linkage::Average, None).unwrap();
        assert_eq!(strata.n_strata, 2);
        let s0 = strata.assignments["A0"];
        for i in 0..3 {
            assert_eq!(strata.assignments[&format!("A{i}")], s0);
        }
        for i in 3..6 {
            assert_ne!(strata.assignments[&format!("A{i}")], s0);
        }
    }

    #[test]
    fn full_cut_gives_singletons() {
        let cohort = two_group_cohort();
        let strata = hierarchical_cluster(&cohort, Linkage::Average, Some(6)).unwrap();
        assert_eq!(strata.n_strata, 6);
    }

    #[test]
    fn empty_cohort_is_error() {
        assert!(matches!(
            hierarchical_cluster(&[], Linkage::Average, None),
            Err(SamplingError::EmptyCohort)
        ));
    }

    #[test]
    fn average_linkage_heights_monotone() {
        let cohort = two_group_cohort();
        let mut cond = distance_matrix(&cohort).unwrap();
        let dend = linkage(&mut cond, cohort.len(), Method::Average);
        let h: Vec<f64> = dend.steps().iter().map(|s| s.dissimilarity).collect();
        for w in h.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn stratified_counts_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("A{i}")).collect();
        let mut assignments = BTreeMap::new();
        for id in &ids {
            assignments.insert(id.clone(), 0);
        }
        let strata = Strata {
            assignments,
            n_strata: 1,
            linkage_cut: 0.0,
        };
        let p1 = stratified_split(&ids, &strata, 0.30, 7);
        assert_eq!(p1.test_ids.len(), 3);
        let p2 = stratified_split(&ids, &strata, 0.30, 7);
        assert_eq!(p1, p2);
    }

    #[test]
    fn singleton_stratum_goes_to_train() {
        let ids = vec!["solo".to_string()];
        let mut assignments = BTreeMap::new();
        assignments.insert("solo".to_string(), 0);
        let strata = Strata {
            assignments,
            n_strata: 1,
            linkage_cut: 0.0,
        };
        let p = stratified_split(&ids, &strata, 0.30, 1);
        assert_eq!(p.train_ids, ids);
        assert!(p.test_ids.is_empty());
    }

    #[test]
    fn knowledge_split_roundtrip_and_coverage() {
        let ids: Vec<String> = (0..10).map(|i| format!("A{i}")).collect();
        let mut content = format!("{SPLIT_HEADER}\n");
        for (i, id) in ids.iter().enumerate() {
            content.push_str(&format!("{id},{},\n", if i < 7 { "train" } else { "test" }));
        }
        let (plan, warnings) = knowledge_split(&content, &ids).unwrap();
        assert_eq!(plan.test_ids.len(), 3);
        assert!(warnings.is_empty());

        let missing = content.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            knowledge_split(&missing, &ids),
            Err(SamplingError::MissingAthlete(_))
        ));

        let unknown = format!("{content}ZZ,test,\n");
        assert!(matches!(
            knowledge_split(&unknown, &ids),
            Err(SamplingError::UnknownAthlete(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_partition(seed in 0u64..200, sizes in proptest::collection::vec(1usize..8, 1..5)) {
            let mut ids = Vec::new();
            let mut assignments = BTreeMap::new();
            for (s, &m) in sizes.iter().enumerate() {
                for j in 0..m {
                    let id = format!("S{s}_{j}");
                    assignments.insert(id.clone(), s);
                    ids.push(id);
                }
            }
            let strata = Strata { assignments, n_strata: sizes.len(), linkage_cut: 0.0 };
            let plan = stratified_split(&ids, &strata, 0.30, seed);
            let mut all: Vec<&String> = plan.train_ids.iter().chain(&plan.test_ids).collect();
            all.sort();
            let mut want: Vec<&String> = ids.iter().collect();
            want.sort();
            prop_assert_eq!(all, want);
            prop_assert!(plan.train_ids.iter().all(|t| !plan.test_ids.contains(t)));
            // per-stratum rounding bound
            for (s, &m) in sizes.iter().enumerate() {
                let in_test = plan.test_ids.iter().filter(|id| strata.assignments[*id] == s).count();
                let share = in_test as f64 / m as f64;
                prop_assert!((share - 0.30).abs() <= 0.5 / m as f64 + 1e-9);
            }
        }

        #[test]
        fn distance_symmetry(va in proptest::collection::vec(0.0f64..10.0, 10), vb in proptest::collection::vec(0.0f64..10.0, 10)) {
            let a = series("a", va);
            let b = series("b", vb);
            prop_assert!((curve_distance(&a, &b).unwrap() - curve_distance(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
