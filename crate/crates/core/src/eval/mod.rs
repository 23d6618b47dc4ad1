//! Final softmax classifier, per-class accuracy metrics, conventional and
//! generalized protocols, and a hubness diagnostic.

mod classifier;
mod hubness;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelId, LabelSpace, LabeledRows};
use crate::error::{Result, SabrError};

pub use classifier::{
    argmax, cap_per_class, train_final_classifier, ClassifierConfig, SoftmaxClassifier,
};
pub use hubness::{hubness_skew, k_occurrences};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Zsl,
    Gzsl,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Zsl => "zsl",
            Setting::Gzsl => "gzsl",
        }
    }

    /// Classifier label universe: `U` for zsl, `S ∪ U` for gzsl.
    pub fn universe(self, space: &LabelSpace) -> Vec<LabelId> {
        match self {
            Setting::Zsl => space.unseen().to_vec(),
            Setting::Gzsl => space.all(),
        }
    }
}

/// Correct/total tallies of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassTally {
    pub label: LabelId,
    pub count: usize,
    pub correct: usize,
}

impl ClassTally {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }
}

/// Per-class tallies over `class_set`, in `class_set` order.
pub fn per_class_tallies(
    predictions: &[LabelId],
    truths: &[LabelId],
    class_set: &[LabelId],
) -> Result<Vec<ClassTally>> {
    if predictions.len() != truths.len() {
        return Err(SabrError::dim(
            "per-class accuracy",
            format!("{} predictions", predictions.len()),
            format!("{} truths", truths.len()),
        ));
    }
    if class_set.is_empty() {
        return Err(SabrError::Metric("class set is empty".into()));
    }
    let mut tallies: Vec<ClassTally> = class_set
        .iter()
        .map(|&label| ClassTally {
            label,
            count: 0,
            correct: 0,
        })
        .collect();
    let slot: BTreeMap<LabelId, usize> =
        class_set.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for (p, t) in predictions.iter().zip(truths) {
        let &i = slot.get(t).ok_or_else(|| {
            SabrError::Usage(format!("test label {t} is outside the evaluated class set"))
        })?;
        tallies[i].count += 1;
        tallies[i].correct += usize::from(p == t);
    }
    if let Some(t) = tallies.iter().find(|t| t.count == 0) {
        return Err(SabrError::Metric(format!(
            "class {} has no test instances",
            t.label
        )));
    }
    Ok(tallies)
}

/// Mean over `class_set` of per-class top-1 accuracy.
pub fn mca(predictions: &[LabelId], truths: &[LabelId], class_set: &[LabelId]) -> Result<f64> {
    let tallies = per_class_tallies(predictions, truths, class_set)?;
    Ok(mean_accuracy(&tallies))
}

fn mean_accuracy(tallies: &[ClassTally]) -> f64 {
    tallies.iter().map(ClassTally::accuracy).sum::<f64>() / tallies.len() as f64
}

/// `2·s·u / (s + u)`; exactly `s` when `s == u` (so 0 for two zeros).
/// Inputs are fractions in `[0, 1]`.
pub fn harmonic_mean(mca_s: f64, mca_u: f64) -> Result<f64> {
    for v in [mca_s, mca_u] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SabrError::Usage(format!("accuracy {v} is outside [0, 1]")));
        }
    }
    if mca_s == mca_u {
        return Ok(mca_s);
    }
    Ok(2.0 * mca_s * mca_u / (mca_s + mca_u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub id: LabelId,
    pub seen: bool,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub per_class: Vec<ClassAccuracy>,
    pub mca_s: Option<f64>,
    pub mca_u: f64,
    /// Present only for the generalized setting.
    pub h: Option<f64>,
}

impl EvalReport {
    pub fn per_class_acc(&self) -> BTreeMap<String, f64> {
        self.per_class
            .iter()
            .map(|c| (c.label.clone(), c.accuracy))
            .collect()
    }

    /// `class,count,accuracy` rows followed by a `# setting=…` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,accuracy\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{}", c.label, c.count, c.accuracy);
        }
        let _ = write!(out, "# setting={}", self.setting.as_str());
        if let Some(s) = self.mca_s {
            let _ = write!(out, " mca_s={s}");
        }
        let _ = write!(out, " mca_u={}", self.mca_u);
        if let Some(h) = self.h {
            let _ = write!(out, " h={h}");
        }
        out.push('\n');
        out
    }

    /// One results-table row in percent, e.g. `gzsl  sabr_i  67.2  73.7  70.3`.
    pub fn to_table(&self, method: &str) -> String {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        format!(
            "{:<8}{:<10}{:>8}{:>8}{:>8}\n{:<8}{:<10}{:>8}{:>8}{:>8}\n",
            "setting",
            "method",
            "MCA_u",
            "MCA_s",
            "H",
            self.setting.as_str(),
            method,
            pct(Some(self.mca_u)),
            pct(self.mca_s),
            pct(self.h),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| SabrError::io(path, e))
    }
}

fn class_rows(space: &LabelSpace, tallies: &[ClassTally]) -> Vec<ClassAccuracy> {
    tallies
        .iter()
        .map(|t| ClassAccuracy {
            label: space.name(t.label).to_string(),
            id: t.label,
            seen: space.is_seen(t.label),
            count: t.count,
            correct: t.correct,
            accuracy: t.accuracy(),
        })
        .collect()
}

fn check_universe(clf: &SoftmaxClassifier, expected: &[LabelId], setting: Setting) -> Result<()> {
    let mut a = clf.universe.clone();
    let mut b = expected.to_vec();
    a.sort();
    b.sort();
    if a != b {
        return Err(SabrError::Usage(format!(
            "{} evaluation needs a classifier over exactly {} labels, got {}",
            setting.as_str(),
            b.len(),
            a.len()
        )));
    }
    Ok(())
}

fn check_labels(rows: &LabeledRows, allowed: &[LabelId], what: &str) -> Result<()> {
    match rows.labels.iter().find(|l| !allowed.contains(l)) {
        Some(l) => Err(SabrError::Usage(format!(
            "{what} instance labeled {l} is outside its class set"
        ))),
        None => Ok(()),
    }
}

/// Conventional protocol: unseen test rows, classifier over `U`.
/// `test_unseen.features` are latent rows.
pub fn evaluate_zsl(
    clf: &SoftmaxClassifier,
    test_unseen: &LabeledRows,
    space: &LabelSpace,
) -> Result<EvalReport> {
    check_universe(clf, space.unseen(), Setting::Zsl)?;
    check_labels(test_unseen, space.unseen(), "unseen test")?;
    let pred = clf.predict(&test_unseen.features)?;
    let tallies = per_class_tallies(&pred, &test_unseen.labels, space.unseen())?;
    Ok(EvalReport {
        setting: Setting::Zsl,
        per_class: class_rows(space, &tallies),
        mca_s: None,
        mca_u: mean_accuracy(&tallies),
        h: None,
    })
}

/// Generalized protocol: seen and unseen test rows, classifier over `S ∪ U`.
pub fn evaluate_gzsl(
    clf: &SoftmaxClassifier,
    test_seen: &LabeledRows,
    test_unseen: &LabeledRows,
    space: &LabelSpace,
) -> Result<EvalReport> {
    check_universe(clf, &space.all(), Setting::Gzsl)?;
    check_labels(test_seen, space.seen(), "seen test")?;
    check_labels(test_unseen, space.unseen(), "unseen test")?;
    let seen = per_class_tallies(
        &clf.predict(&test_seen.features)?,
        &test_seen.labels,
        space.seen(),
    )?;
    let unseen = per_class_tallies(
        &clf.predict(&test_unseen.features)?,
        &test_unseen.labels,
        space.unseen(),
    )?;
    let mca_s = mean_accuracy(&seen);
    let mca_u = mean_accuracy(&unseen);
    let mut per_class = class_rows(space, &seen);
    per_class.extend(class_rows(space, &unseen));
    Ok(EvalReport {
        setting: Setting::Gzsl,
        per_class,
        mca_s: Some(mca_s),
        mca_u,
        h: Some(harmonic_mean(mca_s, mca_u)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;

    fn ids(v: &[usize]) -> Vec<LabelId> {
        v.iter().map(|&i| LabelId(i)).collect()
    }

    #[test]
    fn mca_examples() {
        assert_eq!(
            mca(&ids(&[0, 1, 1]), &ids(&[0, 1, 1]), &ids(&[0, 1])).unwrap(),
            1.0
        );
        assert_eq!(
            mca(&ids(&[0, 1, 0]), &ids(&[0, 1, 1]), &ids(&[0, 1])).unwrap(),
            0.75
        );
        let mut pred = vec![LabelId(0); 1000];
        let mut truth = vec![LabelId(0); 1000];
        pred.push(LabelId(0));
        truth.push(LabelId(1));
        assert_eq!(mca(&pred, &truth, &ids(&[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn mca_errors() {
        let err = mca(&ids(&[0]), &ids(&[0]), &ids(&[0, 1])).unwrap_err();
        assert!(matches!(&err, SabrError::Metric(m) if m.contains("#1")));
        assert!(matches!(
            mca(&ids(&[0]), &ids(&[3]), &ids(&[0])),
            Err(SabrError::Usage(_))
        ));
        assert!(matches!(mca(&[], &[], &[]), Err(SabrError::Metric(_))));
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((100.0 * harmonic_mean(0.797, 0.910).unwrap() - 85.0).abs() < 0.05);
        assert!((100.0 * harmonic_mean(0.737, 0.672).unwrap() - 70.3).abs() < 0.05);
        assert!((100.0 * harmonic_mean(0.415, 0.588).unwrap() - 48.658).abs() < 1e-3);
        assert_eq!(harmonic_mean(0.3, 0.3).unwrap(), 0.3);
        assert_eq!(harmonic_mean(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(harmonic_mean(1.2, 0.5), Err(SabrError::Usage(_))));
        assert!(matches!(
            harmonic_mean(f64::NAN, 0.5),
            Err(SabrError::Usage(_))
        ));
    }

    fn space() -> LabelSpace {
        LabelSpace::new(
            vec!["s0".into(), "s1".into(), "u0".into(), "u1".into()],
            Matrix::zeros(4, 2),
            ids(&[0, 1]),
            ids(&[2, 3]),
        )
        .unwrap()
    }

    /// One-hot latent rows so that an identity-weight classifier is perfect.
    fn rows(labels: &[usize], dim_of: impl Fn(usize) -> usize, width: usize) -> LabeledRows {
        let mut x = Matrix::zeros(labels.len(), width);
        for (r, &l) in labels.iter().enumerate() {
            x.set(r, dim_of(l), 1.0);
        }
        LabeledRows {
            features: x,
            labels: ids(labels),
        }
    }

    fn identity_classifier(universe: &[usize]) -> SoftmaxClassifier {
        let k = universe.len();
        let mut w = Matrix::zeros(k, k);
        for i in 0..k {
            w.set(i, i, 1.0);
        }
        SoftmaxClassifier {
            weight: w,
            bias: Matrix::zeros(1, k),
            universe: ids(universe),
        }
    }

    #[test]
    fn perfect_classifiers() {
        let sp = space();
        let zsl = identity_classifier(&[2, 3]);
        let report = evaluate_zsl(&zsl, &rows(&[2, 3, 3], |l| l - 2, 2), &sp).unwrap();
        assert_eq!(report.mca_u, 1.0);
        assert_eq!(report.h, None);

        let gzsl = identity_classifier(&[0, 1, 2, 3]);
        let report = evaluate_gzsl(
            &gzsl,
            &rows(&[0, 1], |l| l, 4),
            &rows(&[2, 3], |l| l, 4),
            &sp,
        )
        .unwrap();
        assert_eq!(
            (report.mca_s, report.mca_u, report.h),
            (Some(1.0), 1.0, Some(1.0))
        );
    }

    #[test]
    fn constant_classifier_scores_one_over_k() {
        let sp = space();
        let clf = SoftmaxClassifier {
            weight: Matrix::zeros(2, 2),
            bias: Matrix::zeros(1, 2),
            universe: ids(&[2, 3]),
        };
        let report = evaluate_zsl(&clf, &rows(&[2, 2, 3, 3], |l| l - 2, 2), &sp).unwrap();
        assert_eq!(report.mca_u, 0.5);
        let acc: f64 = report.per_class.iter().map(|c| c.accuracy).sum::<f64>() / 2.0;
        assert_eq!(acc, report.mca_u);
    }

    #[test]
    fn zsl_rejects_seen_test_rows_and_wrong_universe() {
        let sp = space();
        let clf = identity_classifier(&[2, 3]);
        assert!(matches!(
            evaluate_zsl(&clf, &rows(&[0], |_| 0, 2), &sp),
            Err(SabrError::Usage(_))
        ));
        let wide = identity_classifier(&[0, 1, 2, 3]);
        assert!(matches!(
            evaluate_zsl(&wide, &rows(&[2, 3], |l| l, 4), &sp),
            Err(SabrError::Usage(_))
        ));
    }

    #[test]
    fn report_serializes_and_formats() {
        let sp = space();
        let gzsl = identity_classifier(&[0, 1, 2, 3]);
        let report = evaluate_gzsl(
            &gzsl,
            &rows(&[0, 1, 1], |l| l, 4),
            &rows(&[2, 3], |_| 0, 4),
            &sp,
        )
        .unwrap();
        assert_eq!(
            report.h,
            Some(harmonic_mean(report.mca_s.unwrap(), report.mca_u).unwrap())
        );
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let csv = report.to_csv();
        assert!(csv.starts_with("class,count,accuracy\ns0,1,1\ns1,2,1\nu0,1,0\n"));
        assert!(csv.ends_with("# setting=gzsl mca_s=1 mca_u=0 h=0\n"));
        let table = report.to_table("sabr_i");
        assert!(table.lines().nth(1).unwrap().contains("100.0"));
    }
}
