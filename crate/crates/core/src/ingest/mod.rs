//! CSV parsing/serialization for challenge-style exports, plus a synthetic
//! generator with known 2-PL ground truth.
//!
//! Files are UTF-8, comma-separated, RFC-4180 quoted, first row header.
//! Dates are ISO-8601 (`YYYY-MM-DD`), timestamps integer epoch seconds,
//! skill paths pipe-separated integers. Missing optional fields serialize
//! as the empty string.

mod synth;

pub use synth::{generate_synthetic, sample_response, SynthConfig, SynthTruth};

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{Gender, Interaction, McqOption, QuestionMeta, SkillTree, Split, SplitLabel, StudentMeta};
use crate::{Error, Result};

/// Logical interaction fields that must be mapped to a source column.
pub const REQUIRED_INTERACTION_FIELDS: [&str; 9] = [
    "user_id",
    "question_id",
    "answer_id",
    "is_correct",
    "correct_option",
    "chosen_option",
    "timestamp",
    "group_id",
    "quiz_id",
];

/// Optional interaction fields.
pub const OPTIONAL_INTERACTION_FIELDS: [&str; 2] = ["scheme_id", "confidence"];

/// Maps logical field names to source column headers, per file kind.
/// The default maps every field to its canonical header (identity).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchemaMap {
    pub columns: BTreeMap<String, String>,
}

impl Default for CsvSchemaMap {
    fn default() -> Self {
        let mut columns = BTreeMap::new();
        for f in REQUIRED_INTERACTION_FIELDS
            .iter()
            .chain(OPTIONAL_INTERACTION_FIELDS.iter())
            .chain(["skill_path", "gender", "dob", "premium_pupil"].iter())
        {
            columns.insert(f.to_string(), f.to_string());
        }
        CsvSchemaMap { columns }
    }
}

impl CsvSchemaMap {
    fn source(&self, logical: &str) -> Result<&str> {
        self.columns
            .get(logical)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::MissingColumn(logical.to_string()))
    }
}

/// One skipped input row with its 1-based data-row number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowIssue {
    pub row: usize,
    pub reason: String,
}

/// Outcome of parsing one file: rows kept, rows skipped, and why.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub issues: Vec<RowIssue>,
    /// Rows whose correctness flag contradicted the option columns.
    pub inconsistent_rows: usize,
}

fn header_index(headers: &csv::StringRecord, schema: &CsvSchemaMap, logical: &str) -> Result<usize> {
    let source = schema.source(logical)?;
    headers
        .iter()
        .position(|h| h == source)
        .ok_or_else(|| Error::MissingColumn(source.to_string()))
}

fn optional_header_index(
    headers: &csv::StringRecord,
    schema: &CsvSchemaMap,
    logical: &str,
) -> Option<usize> {
    let source = schema.columns.get(logical)?;
    headers.iter().position(|h| h == source)
}

fn parse_i64(record: &csv::StringRecord, idx: usize, field: &str) -> std::result::Result<i64, String> {
    record
        .get(idx)
        .ok_or_else(|| format!("missing {field}"))?
        .trim()
        .parse::<i64>()
        .map_err(|e| format!("bad {field}: {e}"))
}

/// Parses interactions. Malformed rows are reported with row numbers and
/// skipped; rows whose `is_correct` contradicts the option columns are
/// flagged, dropped, and counted separately.
pub fn read_interactions(
    path: impl AsRef<Path>,
    schema: &CsvSchemaMap,
) -> Result<(Vec<Interaction>, ParseReport)> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();

    let i_user = header_index(&headers, schema, "user_id")?;
    let i_question = header_index(&headers, schema, "question_id")?;
    let i_answer = header_index(&headers, schema, "answer_id")?;
    let i_correct = header_index(&headers, schema, "is_correct")?;
    let i_copt = header_index(&headers, schema, "correct_option")?;
    let i_chosen = header_index(&headers, schema, "chosen_option")?;
    let i_ts = header_index(&headers, schema, "timestamp")?;
    let i_group = header_index(&headers, schema, "group_id")?;
    let i_quiz = header_index(&headers, schema, "quiz_id")?;
    let i_scheme = optional_header_index(&headers, schema, "scheme_id");
    let i_conf = optional_header_index(&headers, schema, "confidence");

    let mut out = Vec::new();
    let mut report = ParseReport::default();

    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 1;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(RowIssue { row, reason: e.to_string() });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<Interaction, String> {
            let chosen = McqOption::parse(record.get(i_chosen).unwrap_or(""))
                .ok_or("bad chosen_option")?;
            let correct = McqOption::parse(record.get(i_copt).unwrap_or(""))
                .ok_or("bad correct_option")?;
            let is_correct = match record.get(i_correct).map(str::trim) {
                Some("0") => 0u8,
                Some("1") => 1u8,
                other => return Err(format!("bad is_correct {other:?}")),
            };
            let scheme_id = match i_scheme.and_then(|i| record.get(i)).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<i64>().map_err(|e| format!("bad scheme_id: {e}"))?),
            };
            let confidence = match i_conf.and_then(|i| record.get(i)).map(str::trim) {
                None | Some("") => None,
                Some(s) => {
                    let c = s.parse::<f64>().map_err(|e| format!("bad confidence: {e}"))?;
                    if !(0.0..=100.0).contains(&c) {
                        return Err(format!("confidence {c} outside [0, 100]"));
                    }
                    Some(c)
                }
            };
            let ts = parse_i64(&record, i_ts, "timestamp")?;
            if ts <= 0 {
                return Err(format!("non-positive timestamp {ts}"));
            }
            Ok(Interaction {
                user_id: parse_i64(&record, i_user, "user_id")?,
                question_id: parse_i64(&record, i_question, "question_id")?,
                answer_id: parse_i64(&record, i_answer, "answer_id")?,
                is_correct,
                correct_option: correct,
                chosen_option: chosen,
                timestamp: ts,
                group_id: parse_i64(&record, i_group, "group_id")?,
                quiz_id: parse_i64(&record, i_quiz, "quiz_id")?,
                scheme_id,
                confidence,
            })
        })();
        match parsed {
            Ok(x) if !x.is_consistent() => {
                report.inconsistent_rows += 1;
                report.issues.push(RowIssue {
                    row,
                    reason: format!(
                        "is_correct={} contradicts chosen {}/correct {}",
                        x.is_correct,
                        x.chosen_option.as_str(),
                        x.correct_option.as_str()
                    ),
                });
            }
            Ok(x) => {
                report.rows_kept += 1;
                out.push(x);
            }
            Err(reason) => report.issues.push(RowIssue { row, reason }),
        }
    }
    Ok((out, report))
}

/// Writes interactions under the canonical headers.
pub fn write_interactions(path: impl AsRef<Path>, rows: &[Interaction]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record([
        "user_id",
        "question_id",
        "answer_id",
        "is_correct",
        "correct_option",
        "chosen_option",
        "timestamp",
        "group_id",
        "quiz_id",
        "scheme_id",
        "confidence",
    ])?;
    for x in rows {
        writer.write_record([
            x.user_id.to_string(),
            x.question_id.to_string(),
            x.answer_id.to_string(),
            x.is_correct.to_string(),
            x.correct_option.as_str().to_string(),
            x.chosen_option.as_str().to_string(),
            x.timestamp.to_string(),
            x.group_id.to_string(),
            x.quiz_id.to_string(),
            x.scheme_id.map(|v| v.to_string()).unwrap_or_default(),
            x.confidence.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses question metadata. Skill paths are pipe-separated ids, root first;
/// the skill tree is the union of all paths.
pub fn read_question_meta(
    path: impl AsRef<Path>,
    schema: &CsvSchemaMap,
) -> Result<(HashMap<i64, QuestionMeta>, SkillTree, ParseReport)> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let i_question = header_index(&headers, schema, "question_id")?;
    let i_path = header_index(&headers, schema, "skill_path")?;

    let mut questions = HashMap::new();
    let mut report = ParseReport::default();
    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 1;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(RowIssue { row, reason: e.to_string() });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<QuestionMeta, String> {
            let question_id = parse_i64(&record, i_question, "question_id")?;
            let raw = record.get(i_path).ok_or("missing skill_path")?;
            let skill_path: Vec<i64> = raw
                .split('|')
                .map(|s| s.trim().parse::<i64>().map_err(|e| format!("bad skill id: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if skill_path.is_empty() || raw.trim().is_empty() {
                return Err("empty skill_path".into());
            }
            Ok(QuestionMeta { question_id, skill_path })
        })();
        match parsed {
            Ok(meta) => {
                report.rows_kept += 1;
                questions.insert(meta.question_id, meta);
            }
            Err(reason) => report.issues.push(RowIssue { row, reason }),
        }
    }
    let mut ids: Vec<&i64> = questions.keys().collect();
    ids.sort();
    let tree = SkillTree::from_paths(ids.iter().map(|id| questions[id].skill_path.as_slice()))?;
    Ok((questions, tree, report))
}

pub fn write_question_meta(path: impl AsRef<Path>, questions: &HashMap<i64, QuestionMeta>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(["question_id", "skill_path"])?;
    let mut ids: Vec<&i64> = questions.keys().collect();
    ids.sort();
    for id in ids {
        let meta = &questions[id];
        let path_str = meta
            .skill_path
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("|");
        writer.write_record([meta.question_id.to_string(), path_str])?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses student metadata (gender, dob, free/reduced-lunch flag).
pub fn read_student_meta(
    path: impl AsRef<Path>,
    schema: &CsvSchemaMap,
) -> Result<(HashMap<i64, StudentMeta>, ParseReport)> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let i_user = header_index(&headers, schema, "user_id")?;
    let i_gender = optional_header_index(&headers, schema, "gender");
    let i_dob = optional_header_index(&headers, schema, "dob");
    let i_premium = optional_header_index(&headers, schema, "premium_pupil");

    let mut students = HashMap::new();
    let mut report = ParseReport::default();
    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 1;
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(RowIssue { row, reason: e.to_string() });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<StudentMeta, String> {
            let user_id = parse_i64(&record, i_user, "user_id")?;
            let gender = match i_gender.and_then(|i| record.get(i)).map(str::trim) {
                None | Some("") | Some("unspecified") | Some("0") => Gender::Unspecified,
                Some("female") | Some("1") => Gender::Female,
                Some("male") | Some("2") => Gender::Male,
                Some("other") | Some("3") => Gender::Other,
                Some(g) => return Err(format!("bad gender '{g}'")),
            };
            let dob = match i_dob.and_then(|i| record.get(i)).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(
                    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("bad dob: {e}"))?,
                ),
            };
            let premium_pupil = match i_premium.and_then(|i| record.get(i)).map(str::trim) {
                None | Some("") => None,
                Some("0") | Some("false") => Some(false),
                Some("1") | Some("true") => Some(true),
                Some(p) => return Err(format!("bad premium_pupil '{p}'")),
            };
            Ok(StudentMeta { user_id, gender, dob, premium_pupil })
        })();
        match parsed {
            Ok(meta) => {
                report.rows_kept += 1;
                students.insert(meta.user_id, meta);
            }
            Err(reason) => report.issues.push(RowIssue { row, reason }),
        }
    }
    Ok((students, report))
}

pub fn write_student_meta(path: impl AsRef<Path>, students: &HashMap<i64, StudentMeta>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(["user_id", "gender", "dob", "premium_pupil"])?;
    let mut ids: Vec<&i64> = students.keys().collect();
    ids.sort();
    for id in ids {
        let meta = &students[id];
        let gender = match meta.gender {
            Gender::Unspecified => "unspecified",
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        };
        writer.write_record([
            meta.user_id.to_string(),
            gender.to_string(),
            meta.dob.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default(),
            meta.premium_pupil.map(|p| (p as u8).to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a split assignment as `answer_id,split`.
pub fn write_split(path: impl AsRef<Path>, split: &SplitLabel) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "answer_id,split")?;
    for (answer_id, s) in &split.by_answer {
        writeln!(writer, "{},{}", answer_id, s.as_str())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitLabel> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut by_answer = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let answer_id: i64 = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::InvalidConfig("bad answer_id in split file".into()))?;
        let split = record
            .get(1)
            .and_then(Split::parse)
            .ok_or_else(|| Error::InvalidConfig("bad split label".into()))?;
        by_answer.insert(answer_id, split);
    }
    Ok(SplitLabel { by_answer })
}
