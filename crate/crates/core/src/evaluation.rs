//! Closed-set and open-set scoring, plus the time-gap match curve.
//!
//! Closed set: precision = correct / (correct + wrong), recall = correct / |query|.
//!
//! Open set: a query image without prediction is read as a new individual.
//! Recall is taken over query images whose identity occurs in the reference
//! set; the naive variant over all query images is reported alongside.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::geomverify::PairDecision;
use crate::matchgraph::PredictionSet;
use crate::splitgen::{classify_problem, ProblemKind, Split};

/// Percentage with one decimal, rounded half away from zero. `NA` for `None`.
pub fn format_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.1}%", (v * 1000.0).round() / 10.0),
        None => "NA".into(),
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Fingerprint of the images a split evaluates over (reference ∪ query).
pub fn universe_fingerprint(split: &Split) -> String {
    let mut h = Sha256::new();
    let all: BTreeSet<&String> = split.reference.iter().chain(&split.query).collect();
    for id in all {
        h.update(id.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..12])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClosedCounts {
    pub correct: usize,
    pub wrong: usize,
    pub no_prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedSetReport {
    pub correct: usize,
    pub wrong: usize,
    pub no_prediction: usize,
    pub n_query: usize,
    /// `None` when nothing was predicted.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_individual: BTreeMap<String, ClosedCounts>,
    pub universe: Option<String>,
}

impl ClosedSetReport {
    pub fn from_counts(correct: usize, wrong: usize, no_prediction: usize) -> Self {
        let n_query = correct + wrong + no_prediction;
        ClosedSetReport {
            correct,
            wrong,
            no_prediction,
            n_query,
            precision: ratio(correct, correct + wrong),
            recall: ratio(correct, n_query),
            per_individual: BTreeMap::new(),
            universe: None,
        }
    }
}

impl fmt::Display for ClosedSetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "correct {} wrong {} none {} | precision {} recall {}",
            self.correct,
            self.wrong,
            self.no_prediction,
            format_pct(self.precision),
            format_pct(self.recall)
        )
    }
}

fn check_query_only(predictions: &PredictionSet, split: &Split) -> Result<()> {
    match predictions.predictions.keys().find(|id| !split.query.contains(*id)) {
        Some(id) => Err(Error::Contract(format!("prediction for non-query image `{id}`"))),
        None => Ok(()),
    }
}

pub fn score_closed(predictions: &PredictionSet, split: &Split, catalog: &Catalog) -> Result<ClosedSetReport> {
    check_query_only(predictions, split)?;
    if classify_problem(split, catalog).kind != ProblemKind::ClosedSet {
        log::warn!("closed-set scoring of split `{}`, which is an open-set problem", split.name);
    }
    let mut per_individual: BTreeMap<String, ClosedCounts> = BTreeMap::new();
    let mut total = ClosedCounts::default();
    for qid in &split.query {
        let truth = catalog.individual_of(qid);
        let predicted = predictions.get(qid).and_then(|p| p.identity());
        let slot = per_individual.entry(truth.unwrap_or("").to_string()).or_default();
        match predicted {
            None => {
                slot.no_prediction += 1;
                total.no_prediction += 1;
            }
            Some(p) if Some(p) == truth => {
                slot.correct += 1;
                total.correct += 1;
            }
            Some(_) => {
                slot.wrong += 1;
                total.wrong += 1;
            }
        }
    }
    let mut report = ClosedSetReport::from_counts(total.correct, total.wrong, total.no_prediction);
    report.per_individual = per_individual;
    report.universe = Some(universe_fingerprint(split));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpenCounts {
    pub pred_correct: usize,
    /// Wrong prediction for an image whose identity is in the reference set.
    pub pred_wrong_known: usize,
    /// Any prediction for an image of an individual new to the reference set.
    pub pred_wrong_new: usize,
    /// No prediction, identity indeed absent from the reference set.
    pub new_correct: usize,
    /// No prediction although the identity is in the reference set.
    pub new_wrong: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetReport {
    pub pred_correct: usize,
    pub pred_wrong: usize,
    pub new_correct: usize,
    pub new_wrong: usize,
    pub counts: OpenCounts,
    pub n_query: usize,
    pub precision: Option<f64>,
    /// Over query images whose identity occurs in the reference set.
    pub recall: Option<f64>,
    /// Over all query images.
    pub recall_naive: Option<f64>,
    pub universe: Option<String>,
}

impl OpenSetReport {
    pub fn from_counts(c: OpenCounts) -> Self {
        let pred_wrong = c.pred_wrong_known + c.pred_wrong_new;
        let n_query = c.pred_correct + pred_wrong + c.new_correct + c.new_wrong;
        OpenSetReport {
            pred_correct: c.pred_correct,
            pred_wrong,
            new_correct: c.new_correct,
            new_wrong: c.new_wrong,
            counts: c,
            n_query,
            precision: ratio(c.pred_correct, c.pred_correct + pred_wrong),
            recall: ratio(c.pred_correct, c.pred_correct + c.pred_wrong_known + c.new_wrong),
            recall_naive: ratio(c.pred_correct, n_query),
            universe: None,
        }
    }
}

impl fmt::Display for OpenSetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "predicted correct {} wrong {} | new correct {} wrong {} | precision {} recall {}",
            self.pred_correct,
            self.pred_wrong,
            self.new_correct,
            self.new_wrong,
            format_pct(self.precision),
            format_pct(self.recall)
        )
    }
}

pub fn score_open(predictions: &PredictionSet, split: &Split, catalog: &Catalog) -> Result<OpenSetReport> {
    check_query_only(predictions, split)?;
    let known: BTreeSet<&str> = split.reference.iter().filter_map(|id| catalog.individual_of(id)).collect();
    let mut c = OpenCounts::default();
    for qid in &split.query {
        let truth = catalog.individual_of(qid);
        let is_known = truth.is_some_and(|t| known.contains(t));
        match (predictions.get(qid).and_then(|p| p.identity()), is_known) {
            (Some(p), true) if Some(p) == truth => c.pred_correct += 1,
            (Some(_), true) => c.pred_wrong_known += 1,
            (Some(_), false) => c.pred_wrong_new += 1,
            (None, false) => c.new_correct += 1,
            (None, true) => c.new_wrong += 1,
        }
    }
    let mut report = OpenSetReport::from_counts(c);
    report.universe = Some(universe_fingerprint(split));
    Ok(report)
}

/// Fraction of correct predictions; every query image must carry a prediction.
pub fn score_accuracy(predictions: &PredictionSet, split: &Split, catalog: &Catalog) -> Result<f64> {
    check_query_only(predictions, split)?;
    let mut correct = 0;
    for qid in &split.query {
        match predictions.get(qid).and_then(|p| p.identity()) {
            None => return Err(Error::Contract(format!("query image `{qid}` has no prediction"))),
            Some(p) if Some(p) == catalog.individual_of(qid) => correct += 1,
            Some(_) => {}
        }
    }
    accuracy_from_counts(correct, split.query.len())
}

pub fn accuracy_from_counts(correct: usize, n_query: usize) -> Result<f64> {
    if correct > n_query {
        return Err(Error::Contract(format!("{correct} correct out of {n_query} queries")));
    }
    ratio(correct, n_query).ok_or_else(|| Error::Contract("empty query set".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapBucket {
    SameDay,
    UpToDay,
    UpToWeek,
    UpToMonth,
    UpToYear,
    More,
}

impl GapBucket {
    pub const ALL: [GapBucket; 6] = [
        GapBucket::SameDay,
        GapBucket::UpToDay,
        GapBucket::UpToWeek,
        GapBucket::UpToMonth,
        GapBucket::UpToYear,
        GapBucket::More,
    ];

    /// Bucket edges: 0; (0,1]; (1,7]; (7,31]; (31,365]; >365 days.
    pub fn from_days(days: i64) -> GapBucket {
        match days.abs() {
            0 => GapBucket::SameDay,
            1 => GapBucket::UpToDay,
            2..=7 => GapBucket::UpToWeek,
            8..=31 => GapBucket::UpToMonth,
            32..=365 => GapBucket::UpToYear,
            _ => GapBucket::More,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GapBucket::SameDay => "same day",
            GapBucket::UpToDay => "<=1 day",
            GapBucket::UpToWeek => "<=1 week",
            GapBucket::UpToMonth => "<=1 month",
            GapBucket::UpToYear => "<=1 year",
            GapBucket::More => ">1 year",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GapCell {
    pub n_pairs: usize,
    pub n_accepted: usize,
}

impl GapCell {
    pub fn proportion(&self) -> Option<f64> {
        ratio(self.n_accepted, self.n_pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeGapCurve {
    pub buckets: BTreeMap<GapBucket, GapCell>,
}

impl TimeGapCurve {
    pub fn cell(&self, b: GapBucket) -> GapCell {
        self.buckets.get(&b).copied().unwrap_or_default()
    }

    pub fn total_pairs(&self) -> usize {
        self.buckets.values().map(|c| c.n_pairs).sum()
    }

    /// Proportions of nonempty buckets, in bucket order.
    pub fn proportions(&self) -> Vec<(GapBucket, f64)> {
        GapBucket::ALL
            .iter()
            .filter_map(|&b| self.cell(b).proportion().map(|p| (b, p)))
            .collect()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "n_pairs", "n_accepted", "proportion"])?;
        for b in GapBucket::ALL {
            let c = self.cell(b);
            w.write_record([
                b.label().to_string(),
                c.n_pairs.to_string(),
                c.n_accepted.to_string(),
                c.proportion().map(|p| format!("{p:.6}")).unwrap_or_else(|| "NA".into()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }
}

/// Pairs of the same individual with the same head orientation, `a < b`.
pub fn eligible_pairs(catalog: &Catalog) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for ind in catalog.individuals() {
        let mut imgs: Vec<_> = catalog.images_of(ind).collect();
        imgs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        for (i, a) in imgs.iter().enumerate() {
            for b in &imgs[i + 1..] {
                if a.orientation == b.orientation {
                    out.push((a.image_id.clone(), b.image_id.clone()));
                }
            }
        }
    }
    out
}

/// Acceptance rate of same-individual, same-orientation pairs by date gap.
/// Ineligible decisions are ignored; duplicates count once.
pub fn time_gap_curve(decisions: &[PairDecision], catalog: &Catalog) -> Result<TimeGapCurve> {
    let mut seen = BTreeSet::new();
    let mut curve = TimeGapCurve::default();
    for b in GapBucket::ALL {
        curve.buckets.insert(b, GapCell::default());
    }
    for d in decisions {
        let (a, b) = if d.image_a <= d.image_b {
            (&d.image_a, &d.image_b)
        } else {
            (&d.image_b, &d.image_a)
        };
        let ra = catalog.get(a).ok_or_else(|| Error::UnknownImage(a.clone()))?;
        let rb = catalog.get(b).ok_or_else(|| Error::UnknownImage(b.clone()))?;
        let same = ra.individual_id.is_some() && ra.individual_id == rb.individual_id;
        if !same || ra.orientation != rb.orientation || !seen.insert((a, b)) {
            continue;
        }
        let (Some(da), Some(db)) = (ra.date, rb.date) else {
            return Err(Error::Contract(format!("pair ({a}, {b}) has an undated image")));
        };
        let cell = curve.buckets.get_mut(&GapBucket::from_days((db - da).num_days())).unwrap();
        cell.n_pairs += 1;
        cell.n_accepted += d.decision.accepted as usize;
    }
    Ok(curve)
}

pub fn write_closed_reports<W: Write>(rows: &[(&str, &ClosedSetReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "split",
        "correct",
        "wrong",
        "no_prediction",
        "n_query",
        "precision",
        "recall",
        "universe",
    ])?;
    for (name, r) in rows {
        w.write_record([
            name.to_string(),
            r.correct.to_string(),
            r.wrong.to_string(),
            r.no_prediction.to_string(),
            r.n_query.to_string(),
            format_pct(r.precision),
            format_pct(r.recall),
            r.universe.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn write_open_reports<W: Write>(rows: &[(&str, &OpenSetReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "split",
        "pred_correct",
        "pred_wrong",
        "new_correct",
        "new_wrong",
        "precision",
        "recall",
        "recall_naive",
        "n_query",
        "universe",
    ])?;
    for (name, r) in rows {
        w.write_record([
            name.to_string(),
            r.pred_correct.to_string(),
            r.pred_wrong.to_string(),
            r.new_correct.to_string(),
            r.new_wrong.to_string(),
            format_pct(r.precision),
            format_pct(r.recall),
            format_pct(r.recall_naive),
            r.n_query.to_string(),
            r.universe.clone().unwrap_or_default(),
        ])?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io("<report>", e.into_error()))?;
    writeln!(
        inner,
        "# recall counts only query images whose identity occurs in the reference set; recall_naive divides by all query images"
    )
    .map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// The headline numbers of one scored split, as needed for comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: String,
    pub n_query: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub universe: Option<String>,
}

impl SplitScore {
    pub fn closed(split: &str, r: &ClosedSetReport) -> Self {
        SplitScore {
            split: split.to_string(),
            n_query: r.n_query,
            precision: r.precision,
            recall: r.recall,
            universe: r.universe.clone(),
        }
    }

    pub fn open(split: &str, r: &OpenSetReport) -> Self {
        SplitScore {
            split: split.to_string(),
            n_query: r.n_query,
            precision: r.precision,
            recall: r.recall,
            universe: r.universe.clone(),
        }
    }
}

fn parse_pct(s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.strip_suffix('%')
        .and_then(|v| v.parse::<f64>().ok())
        .map(|v| Some(v / 100.0))
        .ok_or_else(|| Error::Contract(format!("bad percentage `{s}`")))
}

/// Reads the rows of a closed-set or open-set report file.
pub fn read_report_scores<R: std::io::Read>(input: R) -> Result<Vec<SplitScore>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Contract(format!("report lacks column `{name}`")))
    };
    let (c_split, c_n, c_p, c_r) = (col("split")?, col("n_query")?, col("precision")?, col("recall")?);
    let c_u = col("universe").ok();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(SplitScore {
            split: row[c_split].to_string(),
            n_query: row[c_n]
                .parse()
                .map_err(|_| Error::Contract(format!("bad n_query `{}`", &row[c_n])))?,
            precision: parse_pct(&row[c_p])?,
            recall: parse_pct(&row[c_r])?,
            universe: c_u.map(|c| row[c].to_string()).filter(|u| !u.is_empty()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::rec;
    use crate::catalog::{ImageRecord, Orientation};
    use crate::geomverify::VerificationDecision;
    use crate::matchgraph::tests::toy_graph;
    use crate::matchgraph::{propagate_identities, Prediction};
    use crate::splitgen::SplitPolicy;

    fn pct(v: Option<f64>) -> f64 {
        v.unwrap() * 100.0
    }

    #[test]
    fn closed_counts_from_table() {
        let r = ClosedSetReport::from_counts(781, 2, 2554);
        assert_eq!(r.n_query, 3337);
        assert!((pct(r.precision) - 99.7).abs() < 0.05);
        assert!((pct(r.recall) - 23.4).abs() < 0.05);
        assert_eq!(format_pct(r.precision), "99.7%");
    }

    #[test]
    fn closed_without_predictions() {
        let r = ClosedSetReport::from_counts(0, 0, 12);
        assert_eq!((r.precision, r.recall), (None, Some(0.0)));
        assert_eq!(format_pct(r.precision), "NA");
    }

    #[test]
    fn open_all_new_without_predictions() {
        let r = OpenSetReport::from_counts(OpenCounts {
            new_correct: 9,
            ..OpenCounts::default()
        });
        assert_eq!((r.new_correct, r.n_query, r.precision, r.recall), (9, 9, None, None));
    }

    #[test]
    fn toy_graph_scores() {
        let (catalog, split, graph) = toy_graph();
        let p = propagate_identities(&graph, &split, &catalog, None);
        let r = score_closed(&p, &split, &catalog).unwrap();
        assert_eq!((r.correct, r.wrong, r.no_prediction), (6, 0, 4));
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(0.6)));
        assert_eq!(r.per_individual["orange"].no_prediction, 4);
        assert!(matches!(score_accuracy(&p, &split, &catalog), Err(Error::Contract(_))));
    }

    #[test]
    fn prediction_outside_query_is_an_error() {
        let (catalog, split, graph) = toy_graph();
        let mut p = propagate_identities(&graph, &split, &catalog, None);
        p.predictions.insert("rb0".into(), Prediction::Identity("blue".into()));
        assert!(score_closed(&p, &split, &catalog).is_err());
        assert!(score_open(&p, &split, &catalog).is_err());
    }

    #[test]
    fn full_prediction_precision_equals_recall_equals_accuracy() {
        let (catalog, split, _) = toy_graph();
        let mut p = PredictionSet::default();
        for (i, q) in split.query.iter().enumerate() {
            let guess = if i % 3 == 0 { "blue" } else { catalog.individual_of(q).unwrap() };
            p.predictions.insert(q.clone(), Prediction::Identity(guess.into()));
        }
        let r = score_closed(&p, &split, &catalog).unwrap();
        let acc = score_accuracy(&p, &split, &catalog).unwrap();
        assert_eq!(r.precision, r.recall);
        assert_eq!(r.recall, Some(acc));
        assert!((accuracy_from_counts(2776, 3337).unwrap() - 0.832).abs() < 0.0005);
    }

    #[test]
    fn open_set_partitions_query() {
        let catalog = Catalog::from_records(vec![
            rec("r1", "A", "2015-01-01"),
            rec("q1", "A", "2016-01-01"),
            rec("q2", "A", "2016-01-01"),
            rec("q3", "N", "2016-01-01"),
            rec("q4", "N", "2016-01-01"),
        ])
        .unwrap();
        let split = Split {
            name: "s".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ["r1".to_string()].into(),
            query: ["q1", "q2", "q3", "q4"].map(String::from).into(),
            excluded: BTreeSet::new(),
        };
        let mut p = PredictionSet::default();
        p.predictions.insert("q1".into(), Prediction::Identity("A".into()));
        p.predictions.insert("q2".into(), Prediction::NoPrediction);
        p.predictions.insert("q3".into(), Prediction::Identity("A".into()));
        let r = score_open(&p, &split, &catalog).unwrap();
        assert_eq!((r.pred_correct, r.pred_wrong, r.new_correct, r.new_wrong), (1, 1, 1, 1));
        assert_eq!(r.counts.pred_wrong_new, 1);
        assert_eq!(r.recall, Some(0.5));
        assert_eq!(r.recall_naive, Some(0.25));
        assert_eq!(r.precision, Some(0.5));
    }

    fn dec(a: &str, b: &str, accepted: bool) -> PairDecision {
        PairDecision {
            image_a: a.into(),
            image_b: b.into(),
            decision: VerificationDecision {
                accepted,
                cond_t: 1.0,
                cond_t_tilde: 1.0,
                n_correspondences: 10,
                residual: 0.0,
                reason: None,
            },
        }
    }

    #[test]
    fn gap_bucket_edges() {
        let got: Vec<_> = [0, 1, 2, 7, 8, 31, 32, 365, 366, 400].map(GapBucket::from_days).to_vec();
        use GapBucket::*;
        assert_eq!(got, vec![SameDay, UpToDay, UpToWeek, UpToWeek, UpToMonth, UpToMonth, UpToYear, UpToYear, More, More]);
    }

    #[test]
    fn curve_counts_eligible_pairs_once() {
        let mut other = rec("c", "A", "2016-02-05");
        other.orientation = Orientation::Right;
        let catalog = Catalog::from_records(vec![
            rec("a", "A", "2015-01-01"),
            rec("b", "A", "2015-01-01"),
            rec("d", "A", "2016-02-05"),
            other,
            rec("x", "B", "2015-01-01"),
        ])
        .unwrap();
        let decisions = vec![
            dec("a", "b", true),
            dec("a", "b", true),
            dec("a", "d", false),
            dec("b", "d", true),
            dec("a", "c", true),
            dec("a", "x", true),
        ];
        let curve = time_gap_curve(&decisions, &catalog).unwrap();
        assert_eq!(curve.cell(GapBucket::SameDay), GapCell { n_pairs: 1, n_accepted: 1 });
        assert_eq!(curve.cell(GapBucket::More), GapCell { n_pairs: 2, n_accepted: 1 });
        assert_eq!(curve.total_pairs(), 3);
        assert_eq!(eligible_pairs(&catalog).len(), 3);

        let mut rev = decisions.clone();
        rev.reverse();
        assert_eq!(time_gap_curve(&rev, &catalog).unwrap(), curve);
    }

    #[test]
    fn curve_rejects_undated_pair() {
        let undated = ImageRecord {
            date: None,
            ..rec("b", "A", "2015-01-01")
        };
        let catalog = Catalog::from_records(vec![rec("a", "A", "2015-01-01"), undated]).unwrap();
        assert!(time_gap_curve(&[dec("a", "b", true)], &catalog).is_err());
    }

    #[test]
    fn report_tables() {
        let closed = ClosedSetReport::from_counts(781, 2, 2554);
        let mut buf = Vec::new();
        write_closed_reports(&[("time_proportion", &closed)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().nth(1).unwrap(),
            "time_proportion,781,2,2554,3337,99.7%,23.4%,"
        );
        let open = OpenSetReport::from_counts(OpenCounts {
            pred_correct: 638,
            pred_wrong_new: 10,
            new_correct: 3800,
            new_wrong: 3053,
            ..OpenCounts::default()
        });
        let mut buf = Vec::new();
        write_open_reports(&[("time_cutoff", &open)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("time_cutoff,638,10,3800,3053,98.5%,17.3%,8.5%"), "{text}");
        assert!(text.lines().last().unwrap().starts_with('#'));

        let scores = read_report_scores(text.as_bytes()).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].n_query, open.n_query);
        assert!((scores[0].recall.unwrap() - 0.173).abs() < 1e-12);
    }
}

