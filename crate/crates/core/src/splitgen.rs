//! Reference/query split policies and split validation.
//!
//! Three policies are provided:
//!
//! * **time-proportion**: per individual, observation days are sorted and the
//!   earliest `ceil(p * D)` days go to the reference set. Individuals seen on a
//!   single day are excluded. Always yields a closed-set problem.
//! * **time-cutoff**: everything before a cutoff date is reference, everything
//!   in the query window starting at the cutoff is query.
//! * **random (matched)**: per individual, the same number of reference images
//!   as a time-aware template, drawn uniformly with a seeded generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};

/// Name of the generator used by [`random_split_matched`], written to split metadata.
pub const SPLIT_RNG: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference,
    Query,
    Excluded,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Reference => "reference",
            Role::Query => "query",
            Role::Excluded => "excluded",
        }
    }
}

/// How many days after the cutoff are eligible for the query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryWindow {
    /// One calendar year starting at the cutoff.
    #[default]
    OneYear,
    /// Everything on or after the cutoff.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SplitPolicy {
    TimeProportion { proportion: f64 },
    TimeCutoff { cutoff: NaiveDate, window: QueryWindow },
    RandomMatched { seed: u64, template: String },
}

impl SplitPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SplitPolicy::TimeProportion { .. } => "time_proportion",
            SplitPolicy::TimeCutoff { .. } => "time_cutoff",
            SplitPolicy::RandomMatched { .. } => "random_matched",
        }
    }

    fn params(&self) -> Vec<(&'static str, String)> {
        match self {
            SplitPolicy::TimeProportion { proportion } => vec![("proportion", proportion.to_string())],
            SplitPolicy::TimeCutoff { cutoff, window } => vec![
                ("cutoff", cutoff.to_string()),
                (
                    "window",
                    match window {
                        QueryWindow::OneYear => "one_year",
                        QueryWindow::Unbounded => "unbounded",
                    }
                    .to_string(),
                ),
            ],
            SplitPolicy::RandomMatched { seed, template } => vec![
                ("seed", seed.to_string()),
                ("rng", SPLIT_RNG.to_string()),
                ("template", template.clone()),
            ],
        }
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        for (k, v) in self.params() {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Disjoint reference/query image-id sets plus the images a policy dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub policy: SplitPolicy,
    pub reference: BTreeSet<String>,
    pub query: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
}

impl Split {
    pub fn role_of(&self, image_id: &str) -> Option<Role> {
        if self.reference.contains(image_id) {
            Some(Role::Reference)
        } else if self.query.contains(image_id) {
            Some(Role::Query)
        } else if self.excluded.contains(image_id) {
            Some(Role::Excluded)
        } else {
            None
        }
    }

    /// Per-individual reference-set sizes.
    pub fn reference_counts(&self, catalog: &Catalog) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for id in &self.reference {
            if let Some(ind) = catalog.individual_of(id) {
                *counts.entry(ind.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<split>", e);
        writeln!(out, "# name={}", self.name).map_err(io)?;
        writeln!(out, "# policy={}", self.policy.name()).map_err(io)?;
        for (k, v) in self.policy.params() {
            writeln!(out, "# {k}={v}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_id", "role"])?;
        let mut rows: Vec<(&str, Role)> = self
            .reference
            .iter()
            .map(|id| (id.as_str(), Role::Reference))
            .chain(self.query.iter().map(|id| (id.as_str(), Role::Query)))
            .chain(self.excluded.iter().map(|id| (id.as_str(), Role::Excluded)))
            .collect();
        rows.sort();
        for (id, role) in rows {
            w.write_record([id, role.as_str()])?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut body = String::new();
        let mut n_comment = 0u64;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<split>", e))?;
            if let Some(c) = line.strip_prefix('#') {
                n_comment += 1;
                let (k, v) = c.trim().split_once('=').ok_or_else(|| Error::SplitFile {
                    line: i as u64 + 1,
                    message: format!("metadata line `{line}` is not key=value"),
                })?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let meta_err = |message: String| Error::SplitFile { line: 1, message };
        let get = |k: &str| meta.get(k).ok_or_else(|| meta_err(format!("missing metadata `{k}`")));
        let parse_date = |s: &String| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| meta_err(format!("bad date `{s}`: {e}")))
        };
        let policy = match get("policy")?.as_str() {
            "time_proportion" => SplitPolicy::TimeProportion {
                proportion: get("proportion")?.parse().map_err(|_| meta_err("bad proportion".into()))?,
            },
            "time_cutoff" => SplitPolicy::TimeCutoff {
                cutoff: parse_date(get("cutoff")?)?,
                window: match get("window")?.as_str() {
                    "one_year" => QueryWindow::OneYear,
                    "unbounded" => QueryWindow::Unbounded,
                    w => return Err(meta_err(format!("unknown window `{w}`"))),
                },
            },
            "random_matched" => SplitPolicy::RandomMatched {
                seed: get("seed")?.parse().map_err(|_| meta_err("bad seed".into()))?,
                template: get("template")?.clone(),
            },
            p => return Err(meta_err(format!("unknown policy `{p}`"))),
        };
        let mut split = Split {
            name: meta.get("name").cloned().unwrap_or_default(),
            policy,
            reference: BTreeSet::new(),
            query: BTreeSet::new(),
            excluded: BTreeSet::new(),
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line()) + n_comment;
            let (id, role) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
            let set = match role {
                "reference" => &mut split.reference,
                "query" => &mut split.query,
                "excluded" => &mut split.excluded,
                _ => {
                    return Err(Error::SplitFile {
                        line,
                        message: format!("unknown role `{role}`"),
                    })
                }
            };
            if !set.insert(id.to_string()) {
                return Err(Error::SplitFile {
                    line,
                    message: format!("image `{id}` listed twice"),
                });
            }
        }
        Ok(split)
    }
}

pub fn time_proportion_split(catalog: &Catalog, proportion: f64) -> Result<Split> {
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(Error::UnusableSplit(format!(
            "proportion {proportion} outside the open interval (0, 1)"
        )));
    }
    let mut split = Split {
        name: format!("time_proportion_{proportion}"),
        policy: SplitPolicy::TimeProportion { proportion },
        reference: BTreeSet::new(),
        query: BTreeSet::new(),
        excluded: BTreeSet::new(),
    };
    let mut usable = false;
    for ind in catalog.individuals() {
        let days = catalog.observation_days(ind);
        if days.len() < 2 {
            split.excluded.extend(catalog.images_of(ind).map(|r| r.image_id.clone()));
            continue;
        }
        usable = true;
        let n_ref = (proportion * days.len() as f64).ceil() as usize;
        let last_ref_day = days[n_ref - 1];
        for r in catalog.images_of(ind) {
            let target = match r.date {
                None => &mut split.excluded,
                Some(d) if d <= last_ref_day => &mut split.reference,
                Some(_) => &mut split.query,
            };
            target.insert(r.image_id.clone());
        }
    }
    // unlabelled images carry no truth for per-individual day ordering
    split.excluded.extend(
        catalog
            .records()
            .iter()
            .filter(|r| r.individual_id.is_none())
            .map(|r| r.image_id.clone()),
    );
    if !usable {
        return Err(Error::UnusableSplit(
            "no individual was photographed on two or more days".into(),
        ));
    }
    Ok(split)
}

pub fn time_cutoff_split(catalog: &Catalog, cutoff: NaiveDate, window: QueryWindow) -> Result<Split> {
    let window_end = match window {
        QueryWindow::OneYear => cutoff.checked_add_months(Months::new(12)),
        QueryWindow::Unbounded => None,
    };
    let mut split = Split {
        name: format!("time_cutoff_{cutoff}"),
        policy: SplitPolicy::TimeCutoff { cutoff, window },
        reference: BTreeSet::new(),
        query: BTreeSet::new(),
        excluded: BTreeSet::new(),
    };
    for r in catalog.records() {
        let target = match r.date {
            Some(d) if d < cutoff => &mut split.reference,
            Some(d) if window_end.is_none_or(|end| d < end) => &mut split.query,
            _ => &mut split.excluded,
        };
        target.insert(r.image_id.clone());
    }
    if split.reference.is_empty() {
        return Err(Error::UnusableSplit(format!("no image dated before cutoff {cutoff}")));
    }
    if split.query.is_empty() {
        return Err(Error::UnusableSplit(format!("no image in the query window starting {cutoff}")));
    }
    Ok(split)
}

/// One cutoff split per year boundary inside the catalog span, each querying
/// the following year. A catalog covering 12 calendar years yields 11 splits.
pub fn yearly_cutoff_splits(catalog: &Catalog) -> Result<Vec<Split>> {
    let (lo, hi) = catalog
        .date_range()
        .ok_or_else(|| Error::UnusableSplit("catalog has no dated images".into()))?;
    let mut splits = Vec::new();
    for year in lo.year() + 1..=hi.year() {
        let cutoff = NaiveDate::from_ymd_opt(year, 1, 1).expect("January 1st exists");
        match time_cutoff_split(catalog, cutoff, QueryWindow::OneYear) {
            Ok(s) => splits.push(s),
            // a year without photographs is a gap, not a failure
            Err(Error::UnusableSplit(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(splits)
}

/// Random split with the template's per-individual reference counts.
///
/// Only images the template assigned to reference or query are redistributed;
/// the template's excluded images stay excluded.
pub fn random_split_matched(catalog: &Catalog, template: &Split, seed: u64) -> Result<Split> {
    for id in template.reference.iter().chain(&template.query).chain(&template.excluded) {
        if !catalog.contains(id) {
            return Err(Error::UnknownImage(id.clone()));
        }
    }
    let mut covered: BTreeMap<Option<&str>, Vec<&str>> = BTreeMap::new();
    for id in template.reference.iter().chain(&template.query) {
        covered.entry(catalog.individual_of(id)).or_default().push(id);
    }
    let mut split = Split {
        name: format!("random_matched_{}", template.name),
        policy: SplitPolicy::RandomMatched {
            seed,
            template: template.name.clone(),
        },
        reference: BTreeSet::new(),
        query: BTreeSet::new(),
        excluded: template.excluded.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ind, mut ids) in covered {
        ids.sort_unstable();
        if ind.is_none() {
            // no identity to match counts on: keep the template's roles
            for id in ids {
                match template.role_of(id) {
                    Some(Role::Reference) => split.reference.insert(id.to_string()),
                    _ => split.query.insert(id.to_string()),
                };
            }
            continue;
        }
        let n_ref = ids.iter().filter(|id| template.reference.contains(**id)).count();
        let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, ids.len(), n_ref).into_iter().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if picked.contains(&i) {
                split.reference.insert(id.to_string());
            } else {
                split.query.insert(id.to_string());
            }
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ClosedSet,
    OpenSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemClass {
    pub kind: ProblemKind,
    /// Identities present in the query set but absent from the reference set.
    pub new_individual_ids: BTreeSet<String>,
}

pub fn classify_problem(split: &Split, catalog: &Catalog) -> ProblemClass {
    let known: BTreeSet<&str> = split.reference.iter().filter_map(|id| catalog.individual_of(id)).collect();
    let new_individual_ids: BTreeSet<String> = split
        .query
        .iter()
        .filter_map(|id| catalog.individual_of(id))
        .filter(|ind| !known.contains(ind))
        .map(String::from)
        .collect();
    ProblemClass {
        kind: if new_individual_ids.is_empty() {
            ProblemKind::ClosedSet
        } else {
            ProblemKind::OpenSet
        },
        new_individual_ids,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    /// Image listed in more than one role.
    Overlap { image_id: String },
    UnknownImage { image_id: String },
    /// Catalog image that the split does not mention at all.
    Uncovered { image_id: String },
    EmptySide { role: Role },
    /// An encounter (same individual, same day) with images on both sides.
    SameDayStraddle {
        individual_id: String,
        date: NaiveDate,
        n_reference: usize,
        n_query: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    /// True when the split is usable: disjoint, known ids, both sides nonempty.
    pub fn is_usable(&self) -> bool {
        !self.findings.iter().any(|f| {
            matches!(
                f,
                Finding::Overlap { .. } | Finding::UnknownImage { .. } | Finding::EmptySide { .. }
            )
        })
    }

    pub fn leakage_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::SameDayStraddle { .. }))
            .count()
    }
}

pub fn validate_split(split: &Split, catalog: &Catalog) -> ValidationReport {
    let mut findings = Vec::new();
    let sets = [(Role::Reference, &split.reference), (Role::Query, &split.query), (Role::Excluded, &split.excluded)];
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, set) in &sets {
        for id in set.iter() {
            *seen.entry(id).or_insert(0) += 1;
        }
    }
    for (id, n) in &seen {
        if *n > 1 {
            findings.push(Finding::Overlap { image_id: id.to_string() });
        }
        if !catalog.contains(id) {
            findings.push(Finding::UnknownImage { image_id: id.to_string() });
        }
    }
    for r in catalog.records() {
        if !seen.contains_key(r.image_id.as_str()) {
            findings.push(Finding::Uncovered {
                image_id: r.image_id.clone(),
            });
        }
    }
    for (role, set) in &sets[..2] {
        if set.is_empty() {
            findings.push(Finding::EmptySide { role: *role });
        }
    }
    for enc in catalog.derive_encounters().encounters {
        let n_reference = enc.image_ids.iter().filter(|id| split.reference.contains(*id)).count();
        let n_query = enc.image_ids.iter().filter(|id| split.query.contains(*id)).count();
        if n_reference > 0 && n_query > 0 {
            findings.push(Finding::SameDayStraddle {
                individual_id: enc.individual_id,
                date: enc.date,
                n_reference,
                n_query,
            });
        }
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::{d, rec};

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn three_day_catalog() -> Catalog {
        Catalog::from_records(vec![
            rec("a1", "A", "2015-01-01"),
            rec("a2", "A", "2015-01-01"),
            rec("a3", "A", "2015-06-01"),
            rec("a4", "A", "2016-03-01"),
            rec("b1", "B", "2015-02-01"),
            rec("b2", "B", "2015-02-01"),
            rec("c1", "C", "2015-02-01"),
            rec("c2", "C", "2017-02-01"),
        ])
        .unwrap()
    }

    #[test]
    fn time_proportion_rounds_days_up_chronologically() {
        let cat = three_day_catalog();
        let s = time_proportion_split(&cat, 0.5).unwrap();
        assert_eq!(s.reference, ids(&["a1", "a2", "a3", "c1"]));
        assert_eq!(s.query, ids(&["a4", "c2"]));
        assert_eq!(s.excluded, ids(&["b1", "b2"]));
        assert_eq!(classify_problem(&s, &cat).kind, ProblemKind::ClosedSet);
        assert_eq!(validate_split(&s, &cat).leakage_count(), 0);
    }

    #[test]
    fn time_proportion_needs_a_multi_day_individual() {
        let cat = Catalog::from_records(vec![rec("x", "A", "2015-01-01"), rec("y", "B", "2015-01-02")]).unwrap();
        assert!(matches!(time_proportion_split(&cat, 0.5), Err(Error::UnusableSplit(_))));
        assert!(matches!(time_proportion_split(&three_day_catalog(), 1.0), Err(Error::UnusableSplit(_))));
    }

    #[test]
    fn cutoff_between_two_days() {
        let cat = Catalog::from_records(vec![rec("x", "A", "2015-01-01"), rec("y", "A", "2015-01-02")]).unwrap();
        let s = time_cutoff_split(&cat, d("2015-01-02"), QueryWindow::OneYear).unwrap();
        assert_eq!((s.reference, s.query), (ids(&["x"]), ids(&["y"])));
        assert!(s.excluded.is_empty());
    }

    #[test]
    fn cutoff_outside_span_is_rejected() {
        let cat = three_day_catalog();
        assert!(time_cutoff_split(&cat, d("2014-01-01"), QueryWindow::OneYear).is_err());
        assert!(time_cutoff_split(&cat, d("2018-01-01"), QueryWindow::Unbounded).is_err());
    }

    #[test]
    fn cutoff_window_limits_query_to_one_year() {
        let cat = three_day_catalog();
        let s = time_cutoff_split(&cat, d("2015-03-01"), QueryWindow::OneYear).unwrap();
        // the window end is exclusive: 2016-03-01 falls outside
        assert_eq!(s.query, ids(&["a3"]));
        assert_eq!(s.excluded, ids(&["a4", "c2"]));
        let s = time_cutoff_split(&cat, d("2015-03-01"), QueryWindow::Unbounded).unwrap();
        assert_eq!(s.query, ids(&["a3", "a4", "c2"]));
    }

    #[test]
    fn twelve_year_catalog_gives_eleven_yearly_splits() {
        let records = (2010..2022)
            .flat_map(|y| {
                [
                    rec(&format!("a{y}"), "A", &format!("{y}-06-01")),
                    rec(&format!("n{y}"), &format!("N{y}"), &format!("{y}-07-01")),
                ]
            })
            .collect();
        let cat = Catalog::from_records(records).unwrap();
        let splits = yearly_cutoff_splits(&cat).unwrap();
        assert_eq!(splits.len(), 11);
        for s in &splits {
            let class = classify_problem(s, &cat);
            assert_eq!(class.kind, ProblemKind::OpenSet);
            assert_eq!(class.new_individual_ids.len(), 1);
        }
    }

    #[test]
    fn matched_random_keeps_counts_and_is_deterministic() {
        let records: Vec<_> = (0..7).map(|i| rec(&format!("a{i}"), "A", &format!("2015-01-0{}", i + 1))).collect();
        let cat = Catalog::from_records(records).unwrap();
        let template = Split {
            name: "t".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ids(&["a0", "a1", "a2", "a3"]),
            query: ids(&["a4", "a5", "a6"]),
            excluded: BTreeSet::new(),
        };
        let r1 = random_split_matched(&cat, &template, 42).unwrap();
        let r2 = random_split_matched(&cat, &template, 42).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.reference.len(), 4);
        assert_eq!(r1.query.len(), 3);
        let other = (0..20).map(|s| random_split_matched(&cat, &template, s).unwrap().reference);
        assert!(other.collect::<BTreeSet<_>>().len() > 1, "seed must matter");
    }

    #[test]
    fn matched_random_forced_full_reference() {
        let cat = three_day_catalog();
        let template = Split {
            name: "t".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ids(&["b1", "b2", "a1"]),
            query: ids(&["a2", "a3", "a4"]),
            excluded: ids(&["c1", "c2"]),
        };
        let r = random_split_matched(&cat, &template, 7).unwrap();
        assert!(r.reference.contains("b1") && r.reference.contains("b2"));
        assert_eq!(r.excluded, template.excluded);
        assert_eq!(r.reference_counts(&cat), template.reference_counts(&cat));
    }

    #[test]
    fn matched_random_rejects_foreign_template() {
        let cat = three_day_catalog();
        let template = Split {
            name: "t".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ids(&["zz"]),
            query: ids(&["a1"]),
            excluded: BTreeSet::new(),
        };
        assert!(matches!(random_split_matched(&cat, &template, 1), Err(Error::UnknownImage(id)) if id == "zz"));
    }

    #[test]
    fn validation_flags_leakage_and_overlap() {
        let cat = three_day_catalog();
        let mut s = Split {
            name: "hand".into(),
            policy: SplitPolicy::RandomMatched { seed: 0, template: "x".into() },
            reference: ids(&["a1", "b1", "c1"]),
            query: ids(&["a2", "a3", "a4", "c2"]),
            excluded: ids(&["b2"]),
        };
        let report = validate_split(&s, &cat);
        assert_eq!(report.leakage_count(), 1);
        assert!(report.is_usable());

        s.query.insert("a1".into());
        let report = validate_split(&s, &cat);
        assert!(report.findings.contains(&Finding::Overlap { image_id: "a1".into() }));
        assert!(!report.is_usable());
    }

    #[test]
    fn closed_set_when_no_new_identities() {
        let cat = three_day_catalog();
        let s = Split {
            name: "s".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference: ids(&["a1", "b1"]),
            query: ids(&["a3", "b2"]),
            excluded: BTreeSet::new(),
        };
        let c = classify_problem(&s, &cat);
        assert_eq!(c.kind, ProblemKind::ClosedSet);
        assert!(c.new_individual_ids.is_empty());
    }

    #[test]
    fn split_file_round_trip() {
        let cat = three_day_catalog();
        for s in [
            time_proportion_split(&cat, 0.5).unwrap(),
            time_cutoff_split(&cat, d("2015-03-01"), QueryWindow::OneYear).unwrap(),
        ] {
            let r = random_split_matched(&cat, &s, 3).unwrap();
            for split in [s, r] {
                let mut buf = Vec::new();
                split.write(&mut buf).unwrap();
                let text = String::from_utf8(buf.clone()).unwrap();
                assert!(text.starts_with("# name="));
                assert_eq!(Split::read(&buf[..]).unwrap(), split);
            }
        }
    }

    #[test]
    fn split_file_rejects_unknown_role() {
        let text = "# policy=time_proportion\n# proportion=0.5\nimage_id,role\nx,gallery\n";
        assert!(matches!(Split::read(text.as_bytes()), Err(Error::SplitFile { line: 4, .. })));
    }
}
