//! Tagged description collections: ingestion, filtering and cross-tabulation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Warning;

/// Kind of description a document holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourseType {
    Program,
    Core,
    Elective,
    CoreOrElective,
}

impl CourseType {
    pub const ALL: [CourseType; 4] = [
        CourseType::Program,
        CourseType::Core,
        CourseType::Elective,
        CourseType::CoreOrElective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CourseType::Program => "program",
            CourseType::Core => "core",
            CourseType::Elective => "elective",
            CourseType::CoreOrElective => "core_or_elective",
        }
    }

    /// Case-insensitive parse. Returns `None` for unrecognized strings.
    pub fn parse_loose(raw: &str) -> Option<CourseType> {
        let norm: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "program" | "programme" => Some(CourseType::Program),
            "core" | "core_course" => Some(CourseType::Core),
            "elective" | "elective_course" => Some(CourseType::Elective),
            "core_or_elective" | "coreorelective" => Some(CourseType::CoreOrElective),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CourseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CourseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CourseType::parse_loose(s).ok_or_else(|| Error::InvalidInput(format!("unknown course type {s:?}")))
    }
}

/// One raw description with its institutional metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub institution: String,
    pub program: String,
    pub course_type: CourseType,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl InputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            InputFormat::Csv => "csv",
            InputFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidInput(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub format: InputFormat,
}

/// Ordered, id-unique collection of documents. Order is the file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSet {
    documents: Vec<Document>,
    pub provenance: Provenance,
    pub warnings: Vec<Warning>,
}

impl DocumentSet {
    /// Builds a set from already-parsed documents, enforcing id uniqueness and non-empty text.
    pub fn new(documents: Vec<Document>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (index, doc) in documents.iter().enumerate() {
            if doc.id.trim().is_empty() {
                return Err(Error::MissingId { index });
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    index,
                    id: doc.id.clone(),
                });
            }
            if doc.text.trim().is_empty() {
                return Err(Error::EmptyText {
                    index,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(DocumentSet {
            documents,
            provenance,
            warnings: Vec::new(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    institution: String,
    program: String,
    course_type: String,
    text: String,
}

/// Reads a CSV (with header `id,institution,program,course_type,text`) or JSONL file.
pub fn read_documents(path: impl AsRef<Path>, format: InputFormat) -> Result<DocumentSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        InputFormat::Csv => parse_csv(path, &bytes)?,
        InputFormat::Jsonl => parse_jsonl(path, &bytes)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }

    let mut warnings = Vec::new();
    let mut documents = Vec::with_capacity(records.len());
    for (index, (line, raw)) in records.into_iter().enumerate() {
        let id = match raw.id {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => return Err(Error::MissingId { index }),
        };
        let course_type = match CourseType::parse_loose(&raw.course_type) {
            Some(ct) => ct,
            None => {
                let message = format!(
                    "line {line}: unknown course_type {:?}, using core_or_elective",
                    raw.course_type
                );
                log::warn!("{id}: {message}");
                warnings.push(Warning::new(&id, message));
                CourseType::CoreOrElective
            }
        };
        documents.push(Document {
            id,
            institution: raw.institution.trim().to_string(),
            program: raw.program.trim().to_string(),
            course_type,
            text: raw.text,
        });
    }

    let mut set = DocumentSet::new(
        documents,
        Provenance {
            path: path.to_path_buf(),
            format,
        },
    )?;
    set.warnings = warnings;
    Ok(set)
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Vec<(usize, RawRecord)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for field in ["id", "institution", "program", "course_type", "text"] {
        if !headers.iter().any(|h| h == field) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header is missing column {field:?}"),
            });
        }
    }
    let malformed = |line: usize, e: csv::Error| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let rec: RawRecord = row.deserialize(Some(&headers)).map_err(|e| malformed(line, e))?;
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<(usize, RawRecord)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Documents as JSONL in set order; [`read_documents`] reads it back unchanged.
pub fn to_jsonl(set: &DocumentSet) -> String {
    let mut buf = String::new();
    for doc in set.iter() {
        buf.push_str(&serde_json::to_string(doc).expect("document serializes"));
        buf.push('\n');
    }
    buf
}

pub fn write_jsonl(set: &DocumentSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(set)).map_err(|e| Error::io(path, e))
}

/// Selection criteria. `None` means "no restriction".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterCriteria {
    pub institutions: Option<Vec<String>>,
    pub course_types: Option<Vec<CourseType>>,
}

pub fn filter_documents(set: &DocumentSet, criteria: &FilterCriteria) -> Result<DocumentSet> {
    if matches!(&criteria.institutions, Some(v) if v.is_empty())
        || matches!(&criteria.course_types, Some(v) if v.is_empty())
    {
        return Err(Error::InvalidInput(
            "filter criteria must be non-empty when present".into(),
        ));
    }
    let keep = |doc: &Document| {
        criteria
            .institutions
            .as_ref()
            .is_none_or(|v| v.contains(&doc.institution))
            && criteria
                .course_types
                .as_ref()
                .is_none_or(|v| v.contains(&doc.course_type))
    };
    let documents: Vec<Document> = set.iter().filter(|d| keep(d)).cloned().collect();
    if documents.is_empty() {
        return Err(Error::EmptyFilter);
    }
    let kept: HashSet<&str> = documents.iter().map(|d| d.id.as_str()).collect();
    Ok(DocumentSet {
        warnings: set
            .warnings
            .iter()
            .filter(|w| kept.contains(w.subject.as_str()))
            .cloned()
            .collect(),
        documents,
        provenance: set.provenance.clone(),
    })
}

/// Institution × course-type cross-tabulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Per institution, counts indexed by [`CourseType`] declaration order.
    pub cells: BTreeMap<String, [usize; 4]>,
    pub total_documents: usize,
    pub distinct_programs: usize,
    pub distinct_institutions: usize,
}

impl CorpusStats {
    pub fn count(&self, institution: &str, course_type: CourseType) -> usize {
        self.cells.get(institution).map_or(0, |row| row[course_type.index()])
    }

    pub fn institution_total(&self, institution: &str) -> usize {
        self.cells.get(institution).map_or(0, |row| row.iter().sum())
    }

    pub fn cell_sum(&self) -> usize {
        self.cells.values().flat_map(|r| r.iter()).sum()
    }

    /// Tab-separated table with one row per institution plus a total row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("institution\tprogram\tcore\telective\tcore_or_elective\ttotal\n");
        for (inst, row) in &self.cells {
            out.push_str(&format!(
                "{inst}\t{}\t{}\t{}\t{}\t{}\n",
                row[0],
                row[1],
                row[2],
                row[3],
                row.iter().sum::<usize>()
            ));
        }
        let mut totals = [0usize; 4];
        for row in self.cells.values() {
            for (t, v) in totals.iter_mut().zip(row) {
                *t += v;
            }
        }
        out.push_str(&format!(
            "TOTAL\t{}\t{}\t{}\t{}\t{}\n",
            totals[0], totals[1], totals[2], totals[3], self.total_documents
        ));
        out
    }
}

pub fn corpus_stats(set: &DocumentSet) -> Result<CorpusStats> {
    if set.is_empty() {
        return Err(Error::InvalidInput("corpus_stats on empty set".into()));
    }
    let mut cells: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    let mut programs = BTreeSet::new();
    for doc in set.iter() {
        cells.entry(doc.institution.clone()).or_default()[doc.course_type.index()] += 1;
        programs.insert((doc.institution.as_str(), doc.program.as_str()));
    }
    Ok(CorpusStats {
        distinct_institutions: cells.len(),
        distinct_programs: programs.len(),
        total_documents: set.len(),
        cells,
    })
}
