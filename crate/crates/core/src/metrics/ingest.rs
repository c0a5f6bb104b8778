//! CSV inputs for the agreement and response analyses.
//!
//! * pairs: `subject_id,reader_a,reader_b[,timepoint]`
//! * scores: `subject_id,timepoint,vhi_count,sparcc_score[,clinical_response]`
//! * points: `x,y`

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::agreement::{AgreementPair, Timepoint};
use super::response::{classify_response_with, ResponseTable, SubjectResponse};
use crate::error::{Error, Result};

fn csv_error(what: &'static str, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
            Error::io(what, io)
        }
        _ => Error::format(what, e.to_string()),
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_rows<T: serde::de::DeserializeOwned, R: Read>(reader: R, what: &'static str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(what, e))).collect()
}

#[derive(Debug, Deserialize)]
struct PairRow {
    subject_id: String,
    reader_a: f64,
    reader_b: f64,
    #[serde(default)]
    timepoint: Option<String>,
}

/// `(subject_id, pair)` in file order.
pub fn parse_pairs<R: Read>(reader: R) -> Result<Vec<(String, AgreementPair)>> {
    let rows: Vec<PairRow> = parse_rows(reader, "pairs csv")?;
    rows.into_iter()
        .map(|r| {
            let label = match r.timepoint.as_deref() {
                None | Some("") => None,
                Some(t) => Some(t.parse::<Timepoint>()?),
            };
            Ok((
                r.subject_id,
                AgreementPair {
                    a: r.reader_a,
                    b: r.reader_b,
                    label,
                },
            ))
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, AgreementPair)>> {
    parse_pairs(open(path)?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoreRow {
    pub subject_id: String,
    pub timepoint: String,
    pub vhi_count: f64,
    /// Empty when the subject was not scored at this timepoint.
    #[serde(default)]
    pub sparcc_score: Option<f64>,
    #[serde(default)]
    pub clinical_response: Option<String>,
}

pub fn parse_scores<R: Read>(reader: R) -> Result<Vec<ScoreRow>> {
    parse_rows(reader, "scores csv")
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    parse_scores(open(path)?)
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "responder" => Ok(true),
        "0" | "false" | "no" | "n" | "non-responder" | "nonresponder" => Ok(false),
        other => Err(Error::invalid(format!("cannot read {other:?} as a response flag"))),
    }
}

/// Pre/post rows of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScores {
    pub subject_id: String,
    /// `(vhi_count, sparcc_score)`.
    pub pre: (f64, Option<f64>),
    pub post: (f64, Option<f64>),
    pub clinical_response: Option<bool>,
}

impl SubjectScores {
    pub fn delta_vhi(&self) -> f64 {
        self.post.0 - self.pre.0
    }

    /// None unless both timepoints were scored.
    pub fn delta_sparcc(&self) -> Option<f64> {
        Some(self.post.1? - self.pre.1?)
    }
}

/// Group score rows per subject. Each subject needs exactly one pre and
/// one post row; clinical labels, when given on both rows, must agree.
pub fn group_scores(rows: &[ScoreRow]) -> Result<Vec<SubjectScores>> {
    #[derive(Default)]
    struct Acc {
        pre: Option<(f64, Option<f64>)>,
        post: Option<(f64, Option<f64>)>,
        clinical: Option<bool>,
    }
    let mut by_subject: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in rows {
        let acc = by_subject.entry(r.subject_id.as_str()).or_default();
        let slot = match r.timepoint.parse::<Timepoint>()? {
            Timepoint::PreTreatment => &mut acc.pre,
            Timepoint::PostTreatment => &mut acc.post,
        };
        if slot.replace((r.vhi_count, r.sparcc_score)).is_some() {
            return Err(Error::invalid(format!(
                "subject {} has two {} rows",
                r.subject_id, r.timepoint
            )));
        }
        if let Some(flag) = r.clinical_response.as_deref().filter(|s| !s.trim().is_empty()) {
            let flag = parse_flag(flag)?;
            if acc.clinical.replace(flag).is_some_and(|prev| prev != flag) {
                return Err(Error::invalid(format!(
                    "subject {} has conflicting clinical_response values",
                    r.subject_id
                )));
            }
        }
    }
    by_subject
        .into_iter()
        .map(|(id, acc)| {
            let (Some(pre), Some(post)) = (acc.pre, acc.post) else {
                return Err(Error::invalid(format!("subject {id} is missing a pre or post row")));
            };
            Ok(SubjectScores {
                subject_id: id.to_owned(),
                pre,
                post,
                clinical_response: acc.clinical,
            })
        })
        .collect()
}

/// Responder table; every subject must carry a clinical label.
pub fn response_table(subjects: &[SubjectScores], threshold: f64) -> Result<ResponseTable> {
    let subjects = subjects
        .iter()
        .map(|s| {
            let clinical = s.clinical_response.ok_or_else(|| {
                Error::invalid(format!("subject {} has no clinical_response", s.subject_id))
            })?;
            Ok(SubjectResponse {
                subject_id: s.subject_id.clone(),
                clinical_response: clinical,
                vhi_response: classify_response_with(s.delta_vhi(), threshold),
                sparcc_response: s.delta_sparcc().map(|d| classify_response_with(d, threshold)),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ResponseTable { subjects })
}

#[derive(Debug, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
}

pub fn parse_points<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let rows: Vec<PointRow> = parse_rows(reader, "points csv")?;
    Ok(rows.into_iter().map(|r| (r.x, r.y)).collect())
}

pub fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    parse_points(open(path)?)
}
