//! Predicts from a home's first days of activity whether its local model
//! catches up with the collaborative one within `d` days of deployment.

mod knn;
mod svm;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{ActivityProportions, CrossoverReport};
use crate::deploy::DeploymentSchedule;
use crate::error::{Error, Result};
use crate::ontology::NUM_CATEGORIES;
use crate::seed;

pub use knn::{Knn, Standardizer};
pub use svm::LinearSvm;
pub use tree::{bootstrap_sample, DecisionTree, RandomForest};

pub const MAX_D: u32 = 45;
pub const KNN_K: usize = 2;
pub const FOREST_SIZE: usize = 10;
pub const SVM_LAMBDA: f64 = 1e-3;
pub const SVM_PASSES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorRow {
    pub home_id: String,
    pub proportions: [f64; NUM_CATEGORIES],
    pub pool_average: Option<[f64; NUM_CATEGORIES]>,
    pub deployment_day: u32,
    pub d: u32,
    pub label: bool,
}

impl AdvisorRow {
    /// Proportions, then the pool average when present, then deployment
    /// day and `d`.
    pub fn features(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.proportions.to_vec();
        if let Some(pool) = &self.pool_average {
            f.extend_from_slice(pool);
        }
        f.push(f64::from(self.deployment_day));
        f.push(f64::from(self.d));
        f
    }
}

/// One row per (home, d) for `d` in `1..=d_max`, ordered by home then `d`.
///
/// A row is positive when the home's first-reach crossover happens within
/// `d` days of its deployment.
pub fn build_rows(
    reports: &[CrossoverReport],
    proportions: &[ActivityProportions],
    schedule: &DeploymentSchedule,
    d_max: u32,
    pool_average: Option<[f64; NUM_CATEGORIES]>,
) -> Result<Vec<AdvisorRow>> {
    let by_home: BTreeMap<&str, &CrossoverReport> = reports.iter().map(|r| (r.home_id.as_str(), r)).collect();
    let mut props: Vec<&ActivityProportions> = proportions.iter().collect();
    props.sort_by(|a, b| a.home_id.cmp(&b.home_id));
    let mut rows = Vec::with_capacity(props.len() * d_max as usize);
    for p in props {
        let report = by_home
            .get(p.home_id.as_str())
            .ok_or_else(|| Error::IncompleteInput(format!("no crossover report for home {}", p.home_id)))?;
        let start = schedule
            .start_day(&p.home_id)
            .ok_or_else(|| Error::IncompleteInput(format!("home {} is not in the schedule", p.home_id)))?;
        let offset = report.crossover_day.map(|c| c.saturating_sub(start));
        for d in 1..=d_max {
            rows.push(AdvisorRow {
                home_id: p.home_id.clone(),
                proportions: p.proportions,
                pool_average,
                deployment_day: start,
                d,
                label: offset.is_some_and(|o| o <= d),
            });
        }
    }
    Ok(rows)
}

/// Replaces labels by `features()[feature] > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub feature: usize,
    pub threshold: f64,
}

impl LabelRule {
    pub fn apply(&self, rows: &mut [AdvisorRow]) -> Result<()> {
        for r in rows {
            let f = r.features();
            let v = f.get(self.feature).ok_or_else(|| {
                Error::InvalidInput(format!("label rule feature {} of {}", self.feature, f.len()))
            })?;
            r.label = *v > self.threshold;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierKind {
    DecisionTree,
    LinearSvm,
    Knn,
    RandomForest,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::DecisionTree,
        ClassifierKind::LinearSvm,
        ClassifierKind::Knn,
        ClassifierKind::RandomForest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::DecisionTree => "DECISION_TREE",
            ClassifierKind::LinearSvm => "LINEAR_SVM",
            ClassifierKind::Knn => "KNN",
            ClassifierKind::RandomForest => "RANDOM_FOREST",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_dims(train: &[Vec<f64>], labels: &[bool], test: &[Vec<f64>]) -> Result<()> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidInput("empty training set".into()));
    };
    if labels.len() != train.len() {
        return Err(Error::InvalidInput(format!(
            "{} training rows but {} labels",
            train.len(),
            labels.len()
        )));
    }
    let p = first.len();
    if p == 0 || train.iter().chain(test).any(|r| r.len() != p) {
        return Err(Error::InvalidInput("feature rows differ in length".into()));
    }
    Ok(())
}

/// Fits `kind` on the training rows and predicts the test rows.
pub fn fit_predict(
    kind: ClassifierKind,
    train: &[Vec<f64>],
    labels: &[bool],
    test: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<bool>> {
    check_dims(train, labels, test)?;
    let p = train[0].len();
    Ok(match kind {
        ClassifierKind::DecisionTree => {
            let t = DecisionTree::fit(train, labels);
            test.iter().map(|r| t.predict_one(r)).collect()
        }
        ClassifierKind::LinearSvm => {
            let m = LinearSvm::fit(train, labels, SVM_LAMBDA, SVM_PASSES, seed);
            test.iter().map(|r| m.predict_one(r)).collect()
        }
        ClassifierKind::Knn => {
            let m = Knn::fit(train, labels, KNN_K);
            test.iter().map(|r| m.predict_one(r)).collect()
        }
        ClassifierKind::RandomForest => {
            let max_features = ((p as f64).sqrt().floor() as usize).max(1);
            let m = RandomForest::fit(train, labels, FOREST_SIZE, max_features, seed);
            test.iter().map(|r| m.predict_one(r)).collect()
        }
    })
}

/// F1 of the positive class: `2 TP / (2 TP + FP + FN)`.
///
/// Undefined when neither labels nor predictions contain a positive.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Err(Error::UndefinedMetric("F1 without any positive label or prediction".into()));
    }
    Ok((2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub classifier: ClassifierKind,
    pub fold_home: String,
    /// `None` when the fold has no positive label or prediction.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub classifier: ClassifierKind,
    /// Mean over folds with a defined F1; `None` if there are none.
    pub mean_f1: Option<f64>,
    pub folds_scored: usize,
    pub folds_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorReport {
    pub folds: Vec<FoldResult>,
    pub summary: Vec<ClassifierSummary>,
}

impl AdvisorReport {
    pub fn mean_f1(&self, kind: ClassifierKind) -> Option<f64> {
        self.summary.iter().find(|s| s.classifier == kind).and_then(|s| s.mean_f1)
    }

    pub fn write_folds_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "classifier,fold_home,f1")?;
        for f in &self.folds {
            match f.f1 {
                Some(v) => writeln!(w, "{},{},{}", f.classifier, f.fold_home, v)?,
                None => writeln!(w, "{},{},nan", f.classifier, f.fold_home)?,
            }
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.summary)?;
        Ok(())
    }
}

/// Leave-one-home-out cross-validation: every home's rows form one test
/// fold. Folds where F1 is undefined are counted but not averaged.
pub fn evaluate_advisor(rows: &[AdvisorRow], kinds: &[ClassifierKind], seed: u64) -> Result<AdvisorReport> {
    let homes: BTreeSet<&str> = rows.iter().map(|r| r.home_id.as_str()).collect();
    if homes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "leave-one-home-out needs at least 2 homes, got {}",
            homes.len()
        )));
    }
    let features: Vec<Vec<f64>> = rows.iter().map(AdvisorRow::features).collect();
    let mut folds = Vec::new();
    for &kind in kinds {
        for &home in &homes {
            let (mut train_x, mut train_y, mut test_x, mut test_y) = (vec![], vec![], vec![], vec![]);
            for (r, f) in rows.iter().zip(&features) {
                if r.home_id == home {
                    test_x.push(f.clone());
                    test_y.push(r.label);
                } else {
                    train_x.push(f.clone());
                    train_y.push(r.label);
                }
            }
            let fold_seed = seed::derive(seed::derive(seed, kind.name()), home);
            let preds = fit_predict(kind, &train_x, &train_y, &test_x, fold_seed)?;
            let f1 = match f1_score(&preds, &test_y) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            folds.push(FoldResult {
                classifier: kind,
                fold_home: home.to_string(),
                f1,
            });
        }
    }
    let summary = kinds
        .iter()
        .map(|&kind| {
            let scores: Vec<f64> = folds.iter().filter(|f| f.classifier == kind).filter_map(|f| f.f1).collect();
            let total = folds.iter().filter(|f| f.classifier == kind).count();
            ClassifierSummary {
                classifier: kind,
                mean_f1: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                folds_scored: scores.len(),
                folds_undefined: total - scores.len(),
            }
        })
        .collect();
    Ok(AdvisorReport { folds, summary })
}

pub fn write_rows_csv<W: Write>(mut w: W, rows: &[AdvisorRow]) -> Result<()> {
    write!(w, "home_id,deployment_day,d")?;
    for i in 0..NUM_CATEGORIES {
        write!(w, ",p{i}")?;
    }
    if rows.first().is_some_and(|r| r.pool_average.is_some()) {
        for i in 0..NUM_CATEGORIES {
            write!(w, ",pool{i}")?;
        }
    }
    writeln!(w, ",label")?;
    for r in rows {
        write!(w, "{},{},{}", r.home_id, r.deployment_day, r.d)?;
        for v in r.proportions.iter().chain(r.pool_average.iter().flatten()) {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", u8::from(r.label))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::fixed_schedule;
    use crate::regimes::RegimeKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn report(home: &str, crossover: Option<u32>) -> CrossoverReport {
        CrossoverReport {
            home_id: home.into(),
            collaborative: RegimeKind::Federated,
            first_day: None,
            crossover_day: crossover,
            stable_crossover_day: crossover,
            regret: 0.0,
            horizon: None,
            open_ended: crossover.is_none(),
        }
    }

    fn props(home: &str, v: [f64; NUM_CATEGORIES]) -> ActivityProportions {
        ActivityProportions {
            home_id: home.into(),
            k: 2,
            proportions: v,
            empty: false,
        }
    }

    #[test]
    fn f1_fixtures() {
        // TP = 2, FP = 1, FN = 1.
        let preds = [true, true, true, false, false];
        let labels = [true, true, false, true, false];
        assert_eq!(f1_score(&preds, &labels).unwrap(), 2.0 / 3.0);
        assert_eq!(f1_score(&labels, &labels).unwrap(), 1.0);
        assert_eq!(f1_score(&[false; 5], &labels).unwrap(), 0.0);
        assert!(matches!(f1_score(&[false; 2], &[false; 2]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(f1_score(&[true], &[true, false]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rows_follow_threshold_semantics() {
        let schedule = fixed_schedule([("a", 5), ("b", 0), ("c", 2)]).unwrap();
        let reports = [report("a", Some(15)), report("b", None), report("c", Some(3))];
        let p = [props("c", [0.1; 10]), props("a", [0.1; 10]), props("b", [0.1; 10])];
        let rows = build_rows(&reports, &p, &schedule, MAX_D, None).unwrap();
        assert_eq!(rows.len(), 3 * 45);
        let labels = |h: &str| -> Vec<bool> { rows.iter().filter(|r| r.home_id == h).map(|r| r.label).collect() };
        // Crossover ten days after deployment.
        let a = labels("a");
        assert!(a[..9].iter().all(|&l| !l) && a[9..].iter().all(|&l| l));
        assert!(labels("b").iter().all(|&l| !l));
        assert!(labels("c").iter().all(|&l| l));
        assert_eq!(rows[0].home_id, "a");
        assert_eq!(rows[0].d, 1);
        assert_eq!(rows[0].features().len(), 12);

        let missing = build_rows(&reports[..2], &p, &schedule, MAX_D, None);
        assert!(matches!(missing, Err(Error::IncompleteInput(_))));
    }

    #[test]
    fn thirty_homes_give_1350_rows() {
        let ids: Vec<String> = (0..30).map(|i| format!("h{i:02}")).collect();
        let schedule = fixed_schedule(ids.iter().map(|h| (h.clone(), 0))).unwrap();
        let reports: Vec<_> = ids.iter().map(|h| report(h, Some(7))).collect();
        let p: Vec<_> = ids.iter().map(|h| props(h, [0.1; 10])).collect();
        let rows = build_rows(&reports, &p, &schedule, MAX_D, Some([0.1; 10])).unwrap();
        assert_eq!(rows.len(), 1350);
        assert_eq!(rows[0].features().len(), 22);
    }

    #[test]
    fn fit_predict_rejects_bad_dimensions() {
        let train = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        for kind in ClassifierKind::ALL {
            assert!(fit_predict(kind, &train, &[true, false], &[vec![0.0]], 0).is_err());
            assert!(fit_predict(kind, &train, &[true], &[vec![0.0, 0.0]], 0).is_err());
            assert!(fit_predict(kind, &[], &[], &[vec![0.0, 0.0]], 0).is_err());
        }
    }

    /// Homes whose first proportion is far above or below one half, with
    /// labels given by that feature.
    pub(crate) fn known_rule_rows(n_homes: usize, seed: u64) -> Vec<AdvisorRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reports = Vec::new();
        let mut p = Vec::new();
        let mut starts = Vec::new();
        for h in 0..n_homes {
            let id = format!("h{h:02}");
            let high = h % 2 == 0;
            let lead: f64 = if high { rng.random_range(0.6..0.9) } else { rng.random_range(0.0..0.3) };
            let mut v = [0.0; NUM_CATEGORIES];
            let rest: Vec<f64> = (1..NUM_CATEGORIES).map(|_| rng.random_range(0.9..1.1)).collect();
            let total: f64 = rest.iter().sum();
            v[0] = lead;
            for (i, r) in rest.iter().enumerate() {
                v[i + 1] = r / total * (1.0 - lead);
            }
            starts.push((id.clone(), rng.random_range(0..30u32)));
            reports.push(report(&id, None));
            p.push(props(&id, v));
        }
        let schedule = fixed_schedule(starts).unwrap();
        let mut rows = build_rows(&reports, &p, &schedule, MAX_D, None).unwrap();
        LabelRule {
            feature: 0,
            threshold: 0.5,
        }
        .apply(&mut rows)
        .unwrap();
        rows
    }

    #[test]
    fn known_rule_is_learned_by_every_classifier() {
        let rows = known_rule_rows(30, 3);
        let report = evaluate_advisor(&rows, &ClassifierKind::ALL, 0).unwrap();
        for kind in ClassifierKind::ALL {
            let mean = report.mean_f1(kind).unwrap();
            assert!(mean >= 0.95, "{kind}: {mean}");
        }
        assert_eq!(report.folds.len(), 4 * 30);
        let mut csv = Vec::new();
        report.write_folds_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("classifier,fold_home,f1\n"));
        assert!(text.contains(",nan"));
    }

    #[test]
    fn evaluation_needs_two_homes() {
        let rows = known_rule_rows(2, 1);
        let one: Vec<_> = rows.iter().filter(|r| r.home_id == "h00").cloned().collect();
        assert!(matches!(evaluate_advisor(&one, &ClassifierKind::ALL, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let rows = known_rule_rows(8, 2);
        let a = evaluate_advisor(&rows, &ClassifierKind::ALL, 4).unwrap();
        let b = evaluate_advisor(&rows, &ClassifierKind::ALL, 4).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn labels_monotone_in_d(start in 0u32..40, crossover in prop::option::of(0u32..100)) {
            let schedule = fixed_schedule([("a", start)]).unwrap();
            let c = crossover.map(|c| c.max(start));
            let rows = build_rows(&[report("a", c)], &[props("a", [0.1; 10])], &schedule, MAX_D, None).unwrap();
            for w in rows.windows(2) {
                prop_assert!(!w[0].label || w[1].label);
            }
        }

        #[test]
        fn f1_is_order_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50), seed in any::<u64>()) {
            let mut shuffled = pairs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { v.iter().copied().unzip() };
            let (p1, l1) = split(&pairs);
            let (p2, l2) = split(&shuffled);
            match (f1_score(&p1, &l1), f1_score(&p2, &l2)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "definedness changed under reordering"),
            }
        }
    }
}
