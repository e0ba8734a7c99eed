//! Dataset metadata: image records, encounters and summary statistics.
//!
//! A catalog is loaded from a flat CSV manifest with one row per image:
//!
//! ```text
//! image_id,individual_id,date,orientation,image_path,bbox_x,bbox_y,bbox_w,bbox_h
//! ```
//!
//! Empty cells mean "absent". The four bounding-box columns are optional as a
//! group. Dates are ISO-8601 calendar dates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 9] = [
    "image_id",
    "individual_id",
    "date",
    "orientation",
    "image_path",
    "bbox_x",
    "bbox_y",
    "bbox_w",
    "bbox_h",
];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Left,
    Right,
    Top,
    TopLeft,
    TopRight,
    Front,
    Bottom,
    #[default]
    Unknown,
}

impl Orientation {
    pub const ALL: [Orientation; 8] = [
        Orientation::Left,
        Orientation::Right,
        Orientation::Top,
        Orientation::TopLeft,
        Orientation::TopRight,
        Orientation::Front,
        Orientation::Bottom,
        Orientation::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Left => "left",
            Orientation::Right => "right",
            Orientation::Top => "top",
            Orientation::TopLeft => "top-left",
            Orientation::TopRight => "top-right",
            Orientation::Front => "front",
            Orientation::Bottom => "bottom",
            Orientation::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(Orientation::Unknown);
        }
        Orientation::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown orientation `{s}`"))
    }
}

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Ground-truth identity; `None` for pure query images.
    pub individual_id: Option<String>,
    pub date: Option<NaiveDate>,
    pub orientation: Orientation,
    pub image_path: PathBuf,
    pub bbox: Option<BBox>,
}

/// Images of one individual taken on one day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encounter {
    pub individual_id: String,
    pub date: NaiveDate,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncounterPartition {
    pub encounters: Vec<Encounter>,
    /// Images left out because they lack an identity or a date.
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_image: usize,
    pub n_indiv: usize,
    pub n_enc: usize,
    pub span_days: i64,
    pub timestamp_coverage: f64,
}

/// Immutable, validated set of image records with identity and date indices.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    by_individual: BTreeMap<String, Vec<usize>>,
    base_dir: PathBuf,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Catalog {
    /// Builds a catalog from records. Fails on duplicate ids or empty boxes.
    pub fn from_records(records: Vec<ImageRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_individual: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            let line = i as u64 + 2;
            if rec.image_id.is_empty() {
                return Err(Error::Manifest {
                    line,
                    message: "empty image_id".into(),
                });
            }
            if by_id.insert(rec.image_id.clone(), i).is_some() {
                return Err(Error::Manifest {
                    line,
                    message: format!("duplicate image_id `{}`", rec.image_id),
                });
            }
            if let Some(b) = rec.bbox {
                if b.w == 0 || b.h == 0 {
                    return Err(Error::Manifest {
                        line,
                        message: format!("bounding box of `{}` has nonpositive extent", rec.image_id),
                    });
                }
            }
            if let Some(ind) = &rec.individual_id {
                by_individual.entry(ind.clone()).or_default().push(i);
            }
        }
        Ok(Catalog {
            records,
            by_id,
            by_individual,
            base_dir: PathBuf::new(),
        })
    }

    /// Directory relative image paths are resolved against.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::read_manifest(file)?.with_base_dir(base))
    }

    pub fn read_manifest<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let mut required = [0usize; 5];
        for (slot, name) in required.iter_mut().zip(&MANIFEST_COLUMNS[..5]) {
            *slot = col(name).ok_or_else(|| Error::Manifest {
                line: 1,
                message: format!("missing required column `{name}`"),
            })?;
        }
        let bbox_cols: Vec<Option<usize>> = MANIFEST_COLUMNS[5..].iter().map(|c| col(c)).collect();
        let bbox_cols = match bbox_cols.iter().filter(|c| c.is_some()).count() {
            0 => None,
            4 => Some([
                bbox_cols[0].unwrap(),
                bbox_cols[1].unwrap(),
                bbox_cols[2].unwrap(),
                bbox_cols[3].unwrap(),
            ]),
            _ => {
                return Err(Error::Manifest {
                    line: 1,
                    message: "bounding-box columns must be present as a group".into(),
                })
            }
        };

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |message: String| Error::Manifest { line, message };
            let cell = |i: usize| row.get(i).unwrap_or("");
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());

            let [c_id, c_ind, c_date, c_orient, c_path] = required;
            let date = match cell(c_date) {
                "" => None,
                s => Some(
                    NaiveDate::parse_from_str(s, DATE_FORMAT)
                        .map_err(|e| err(format!("malformed date `{s}`: {e}")))?,
                ),
            };
            let orientation = cell(c_orient).parse().map_err(err)?;
            let bbox = match bbox_cols {
                None => None,
                Some(cols) => {
                    let cells = cols.map(cell);
                    match cells.iter().filter(|s| s.is_empty()).count() {
                        4 => None,
                        0 => {
                            let mut v = [0u32; 4];
                            for (slot, s) in v.iter_mut().zip(cells) {
                                *slot = s
                                    .parse()
                                    .map_err(|_| err(format!("bounding-box value `{s}` is not a pixel count")))?;
                            }
                            if v[2] == 0 || v[3] == 0 {
                                return Err(err("bounding box with nonpositive extent".into()));
                            }
                            Some(BBox {
                                x: v[0],
                                y: v[1],
                                w: v[2],
                                h: v[3],
                            })
                        }
                        _ => return Err(err("partially filled bounding box".into())),
                    }
                }
            };
            records.push(ImageRecord {
                image_id: cell(c_id).to_string(),
                individual_id: opt(cell(c_ind)),
                date,
                orientation,
                image_path: PathBuf::from(cell(c_path)),
                bbox,
            });
        }
        Self::from_records(records)
    }

    pub fn write_manifest<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_COLUMNS)?;
        for r in &self.records {
            let date = r.date.map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default();
            let bbox = r
                .bbox
                .map(|b| [b.x, b.y, b.w, b.h].map(|v| v.to_string()))
                .unwrap_or_default();
            w.write_record([
                r.image_id.as_str(),
                r.individual_id.as_deref().unwrap_or(""),
                &date,
                r.orientation.as_str(),
                &r.image_path.to_string_lossy(),
                &bbox[0],
                &bbox[1],
                &bbox[2],
                &bbox[3],
            ])?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_manifest(std::io::BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.by_id.contains_key(image_id)
    }

    /// Identity of an image, `None` when unknown or unlabelled.
    pub fn individual_of(&self, image_id: &str) -> Option<&str> {
        self.get(image_id).and_then(|r| r.individual_id.as_deref())
    }

    pub fn individuals(&self) -> impl Iterator<Item = &str> {
        self.by_individual.keys().map(String::as_str)
    }

    pub fn images_of<'a>(&'a self, individual_id: &str) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.by_individual
            .get(individual_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// Absolute (or base-relative) path to an image file.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        if record.image_path.is_absolute() {
            record.image_path.clone()
        } else {
            self.base_dir.join(&record.image_path)
        }
    }

    /// Sorted distinct observation dates of one individual.
    pub fn observation_days(&self, individual_id: &str) -> Vec<NaiveDate> {
        self.images_of(individual_id)
            .filter_map(|r| r.date)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let mut dates = self.records.iter().filter_map(|r| r.date);
        let first = dates.next()?;
        Some(dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    /// Groups identity-labelled, dated images by (individual, day).
    pub fn derive_encounters(&self) -> EncounterPartition {
        let mut groups: BTreeMap<(&str, NaiveDate), Vec<&str>> = BTreeMap::new();
        let mut excluded = 0;
        for r in &self.records {
            match (&r.individual_id, r.date) {
                (Some(ind), Some(date)) => groups.entry((ind, date)).or_default().push(&r.image_id),
                _ => excluded += 1,
            }
        }
        let encounters = groups
            .into_iter()
            .map(|((ind, date), mut ids)| {
                ids.sort_unstable();
                Encounter {
                    individual_id: ind.to_string(),
                    date,
                    image_ids: ids.into_iter().map(String::from).collect(),
                }
            })
            .collect();
        EncounterPartition { encounters, excluded }
    }

    pub fn compute_stats(&self) -> DatasetStats {
        let n_image = self.records.len();
        let dated = self.records.iter().filter(|r| r.date.is_some()).count();
        DatasetStats {
            n_image,
            n_indiv: self.by_individual.len(),
            n_enc: self.derive_encounters().encounters.len(),
            span_days: self.date_range().map_or(0, |(lo, hi)| (hi - lo).num_days()),
            timestamp_coverage: if n_image == 0 { 0.0 } else { dated as f64 / n_image as f64 },
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    pub(crate) fn rec(id: &str, ind: &str, date: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            individual_id: (!ind.is_empty()).then(|| ind.to_string()),
            date: (!date.is_empty()).then(|| d(date)),
            orientation: Orientation::Left,
            image_path: PathBuf::from(format!("{id}.png")),
            bbox: None,
        }
    }

    const FIVE_ROWS: &str = "\
image_id,individual_id,date,orientation,image_path,bbox_x,bbox_y,bbox_w,bbox_h
a1,A,2012-06-01,left,a1.jpg,10,20,300,200
a2,A,2012-06-01,right,a2.jpg,,,,
a3,A,2013-07-15,top,a3.jpg,0,0,50,50
b1,B,2012-06-01,front,b1.jpg,,,,
b2,B,2012-06-01,,b2.jpg,,,,
";

    #[test]
    fn five_row_manifest() {
        let cat = Catalog::read_manifest(FIVE_ROWS.as_bytes()).unwrap();
        let stats = cat.compute_stats();
        assert_eq!((stats.n_image, stats.n_indiv, stats.n_enc), (5, 2, 3));
        assert_eq!(stats.span_days, 409);
        assert_eq!(stats.timestamp_coverage, 1.0);
        assert_eq!(cat.get("b2").unwrap().orientation, Orientation::Unknown);
        assert_eq!(
            cat.get("a1").unwrap().bbox,
            Some(BBox { x: 10, y: 20, w: 300, h: 200 })
        );
        let enc = cat.derive_encounters();
        let sizes: Vec<_> = enc.encounters.iter().map(|e| e.image_ids.len()).collect();
        assert_eq!(sizes, vec![2, 1, 2]);
    }

    #[test]
    fn header_only_manifest_is_empty() {
        let cat = Catalog::read_manifest(&FIVE_ROWS.as_bytes()[..FIVE_ROWS.find('\n').unwrap() + 1]).unwrap();
        assert!(cat.is_empty());
        assert_eq!(cat.compute_stats(), DatasetStats::default());
    }

    #[test]
    fn bbox_columns_are_optional() {
        let text = "image_id,individual_id,date,orientation,image_path\nx,,,,x.png\n";
        let cat = Catalog::read_manifest(text.as_bytes()).unwrap();
        let r = cat.get("x").unwrap();
        assert_eq!((r.individual_id.as_deref(), r.date, r.bbox), (None, None, None));
        let stats = cat.compute_stats();
        assert_eq!((stats.n_indiv, stats.n_enc, stats.span_days), (0, 0, 0));
        assert_eq!(stats.timestamp_coverage, 0.0);
    }

    fn manifest_err(text: &str) -> (u64, String) {
        match Catalog::read_manifest(text.as_bytes()) {
            Err(Error::Manifest { line, message }) => (line, message),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let head = "image_id,individual_id,date,orientation,image_path,bbox_x,bbox_y,bbox_w,bbox_h\n";
        let (line, msg) = manifest_err(&format!("{head}a,A,2012-01-01,left,a,,,,\na,A,2012-01-02,left,a,,,,\n"));
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate"), "{msg}");

        let (line, msg) = manifest_err(&format!("{head}a,A,2012-13-01,left,a,,,,\n"));
        assert_eq!(line, 2);
        assert!(msg.contains("malformed date"), "{msg}");

        let (_, msg) = manifest_err(&format!("{head}a,A,2012-01-01,left,a,0,0,0,10\n"));
        assert!(msg.contains("nonpositive"), "{msg}");

        let (_, msg) = manifest_err(&format!("{head}a,A,2012-01-01,sideways,a,,,,\n"));
        assert!(msg.contains("orientation"), "{msg}");

        let (line, msg) = manifest_err("image_id,date,orientation,image_path\n");
        assert_eq!(line, 1);
        assert!(msg.contains("individual_id"), "{msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Catalog::ingest_manifest("/definitely/not/here.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn span_matches_calendar_arithmetic() {
        let cat = Catalog::from_records(vec![rec("x", "A", "2010-05-01"), rec("y", "A", "2021-07-15")]).unwrap();
        // 2010-05-01 .. 2021-05-01 is 11 years containing 3 leap days (2012, 2016, 2020),
        // then May 1 .. Jul 15 adds 31 + 30 + 14 days.
        assert_eq!(cat.compute_stats().span_days, 11 * 365 + 3 + 31 + 30 + 14);
        assert_eq!(cat.compute_stats().span_days, 4093);
    }

    #[test]
    fn single_image_stats() {
        let cat = Catalog::from_records(vec![rec("x", "A", "2015-01-01")]).unwrap();
        let s = cat.compute_stats();
        assert_eq!((s.span_days, s.timestamp_coverage), (0, 1.0));
    }

    #[test]
    fn encounters_group_by_individual_and_day() {
        let cat = Catalog::from_records(vec![
            rec("1", "A", "2015-01-01"),
            rec("2", "A", "2015-01-01"),
            rec("3", "A", "2015-01-01"),
            rec("4", "A", "2015-02-01"),
            rec("5", "A", "2015-02-01"),
            rec("6", "", "2015-02-01"),
        ])
        .unwrap();
        let p = cat.derive_encounters();
        assert_eq!(p.excluded, 1);
        assert_eq!(p.encounters.len(), 2);
        assert_eq!(p.encounters[0].image_ids, vec!["1", "2", "3"]);
        assert_eq!(p.encounters[1].image_ids.len(), 2);
    }

    #[test]
    fn distinct_keys_give_singleton_encounters() {
        let cat = Catalog::from_records(
            (0..6).map(|i| rec(&i.to_string(), &format!("I{}", i % 2), &format!("2015-01-0{}", i + 1))).collect(),
        )
        .unwrap();
        assert_eq!(cat.compute_stats().n_enc, cat.len());
    }
}
