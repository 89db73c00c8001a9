use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::CohortError;

/// Required manifest columns, in order.
pub const MANIFEST_COLUMNS: [&str; 10] = [
    "case_id",
    "image_path",
    "mask_manual_path",
    "mask_pred_path",
    "dose_path",
    "contrast",
    "position",
    "age",
    "sex",
    "bmi",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Contrast {
    Cect,
    Ncct,
}

impl Contrast {
    pub const ALL: [Contrast; 2] = [Contrast::Cect, Contrast::Ncct];

    pub fn as_str(self) -> &'static str {
        match self {
            Contrast::Cect => "CECT",
            Contrast::Ncct => "NCCT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Supine,
    Prone,
}

impl Position {
    pub const ALL: [Position; 2] = [Position::Supine, Position::Prone];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Supine => "supine",
            Position::Prone => "prone",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::M, Sex::F];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
        }
    }
}

macro_rules! text_enum {
    ($t:ty, $expected:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$t>::ALL
                    .into_iter()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| format!("`{s}` is not one of {}", $expected))
            }
        }
    };
}

text_enum!(Contrast, "CECT, NCCT");
text_enum!(Position, "supine, prone");
text_enum!(Sex, "M, F");

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub image_path: PathBuf,
    pub mask_manual_path: PathBuf,
    pub mask_pred_path: Option<PathBuf>,
    pub dose_path: Option<PathBuf>,
    pub contrast: Contrast,
    pub position: Position,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub bmi: Option<f64>,
    /// Values of columns beyond the fixed header, aligned with
    /// [`CohortManifest::extra_columns`].
    pub extra: Vec<String>,
}

/// Case list plus the directory relative paths are resolved against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub base_dir: PathBuf,
    pub records: Vec<CaseRecord>,
    pub extra_columns: Vec<String>,
}

impl CohortManifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<CaseRecord>) -> Self {
        Self {
            base_dir: base_dir.into(),
            records,
            extra_columns: Vec::new(),
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.records.iter().find(|r| r.case_id == case_id)
    }

    pub fn count(&self, contrast: Contrast) -> usize {
        self.records.iter().filter(|r| r.contrast == contrast).count()
    }

    /// Records sorted by case id.
    pub fn sorted_records(&self) -> Vec<&CaseRecord> {
        let mut v: Vec<&CaseRecord> = self.records.iter().collect();
        v.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        v
    }
}

fn invalid(line: u64, column: &str, value: &str, reason: impl Into<String>) -> CohortError {
    CohortError::InvalidValue {
        line,
        column: column.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_positive(line: u64, column: &str, value: &str) -> Result<Option<f64>, CohortError> {
    if value.trim().is_empty() {
        return Ok(None);
    }
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| invalid(line, column, value, "expected a number"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(line, column, value, "must be positive"));
    }
    Ok(Some(v))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.trim().is_empty()).then(|| PathBuf::from(value.trim()))
}

pub fn load_manifest(path: &Path) -> Result<CohortManifest, CohortError> {
    let file = std::fs::File::open(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(file, base_dir)
}

pub fn read_manifest(reader: impl std::io::Read, base_dir: PathBuf) -> Result<CohortManifest, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(CohortError::DuplicateColumn(h.clone()));
        }
    }
    let mut index = [0usize; 10];
    for (slot, name) in index.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CohortError::MissingColumn(name.to_string()))?;
    }
    let extra_idx: Vec<usize> = (0..headers.len()).filter(|i| !index.contains(i)).collect();
    let extra_columns = extra_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| row.get(index[c]).unwrap_or("");
        let case_id = field(0).trim().to_string();
        if case_id.is_empty() {
            return Err(invalid(line, "case_id", "", "must not be empty"));
        }
        if !ids.insert(case_id.clone()) {
            return Err(CohortError::DuplicateCaseId { case_id, line });
        }
        let required_path = |c: usize| -> Result<PathBuf, CohortError> {
            optional_path(field(c)).ok_or_else(|| invalid(line, MANIFEST_COLUMNS[c], "", "must not be empty"))
        };
        let contrast = field(5).parse().map_err(|e| invalid(line, "contrast", field(5), e))?;
        let position = field(6).parse().map_err(|e| invalid(line, "position", field(6), e))?;
        let sex = match field(8).trim() {
            "" => None,
            s => Some(s.parse().map_err(|e| invalid(line, "sex", s, e))?),
        };
        records.push(CaseRecord {
            image_path: required_path(1)?,
            mask_manual_path: required_path(2)?,
            mask_pred_path: optional_path(field(3)),
            dose_path: optional_path(field(4)),
            contrast,
            position,
            age: parse_positive(line, "age", field(7))?,
            sex,
            bmi: parse_positive(line, "bmi", field(9))?,
            extra: extra_idx
                .iter()
                .map(|&i| row.get(i).unwrap_or("").to_string())
                .collect(),
            case_id,
        });
    }
    Ok(CohortManifest {
        base_dir,
        records,
        extra_columns,
    })
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn num_text(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_manifest_to(manifest: &CohortManifest, writer: impl std::io::Write) -> Result<(), CohortError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = MANIFEST_COLUMNS.to_vec();
    header.extend(manifest.extra_columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &manifest.records {
        let mut row = vec![
            r.case_id.clone(),
            r.image_path.display().to_string(),
            r.mask_manual_path.display().to_string(),
            path_text(&r.mask_pred_path),
            path_text(&r.dose_path),
            r.contrast.to_string(),
            r.position.to_string(),
            num_text(r.age),
            r.sex.map(|s| s.to_string()).unwrap_or_default(),
            num_text(r.bmi),
        ];
        row.extend(
            manifest
                .extra_columns
                .iter()
                .enumerate()
                .map(|(i, _)| r.extra.get(i).cloned().unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CohortError::Io {
        path: PathBuf::from("manifest"),
        source,
    })?;
    Ok(())
}

pub fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<(), CohortError> {
    let file = std::fs::File::create(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_manifest_to(manifest, std::io::BufWriter::new(file))
}
