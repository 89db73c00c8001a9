use std::path::{Path, PathBuf};

use super::format::csv_opt;
use super::CohortError;
use crate::metrics::{ScoreStatus, StructureScore};
use crate::volume::Structure;

pub const SCORES_HEADER: [&str; 5] = ["case_id", "structure", "dsc", "hd95_mm", "status"];

/// One line of a per-case, per-structure scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub case_id: String,
    pub structure: Structure,
    pub dsc: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub status: ScoreStatus,
}

impl ScoreRow {
    pub fn from_score(case_id: &str, s: &StructureScore) -> Self {
        Self {
            case_id: case_id.to_string(),
            structure: s.structure,
            dsc: s.dsc,
            hd95_mm: s.hd95_mm,
            status: s.status,
        }
    }

    pub fn metric(&self, metric: SegMetric) -> Option<f64> {
        match metric {
            SegMetric::Dsc => self.dsc,
            SegMetric::Hd95 => self.hd95_mm,
        }
    }
}

/// The two segmentation accuracy metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegMetric {
    Dsc,
    Hd95,
}

impl SegMetric {
    pub const ALL: [SegMetric; 2] = [SegMetric::Dsc, SegMetric::Hd95];

    pub fn as_str(self) -> &'static str {
        match self {
            SegMetric::Dsc => "DSC",
            SegMetric::Hd95 => "HD95",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), CohortError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(SCORES_HEADER)?;
    for r in rows {
        w.write_record([
            r.case_id.as_str(),
            r.structure.code(),
            &csv_opt(r.dsc),
            &csv_opt(r.hd95_mm),
            r.status.as_str(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, CohortError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CohortError::MissingColumn(format!("{name} (in {})", path.display())))
    };
    let idx = [
        col("case_id")?,
        col("structure")?,
        col("dsc")?,
        col("hd95_mm")?,
        col("status")?,
    ];
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let bad = |column: &str, value: &str, reason: &str| CohortError::InvalidValue {
            line,
            column: column.into(),
            value: value.into(),
            reason: reason.into(),
        };
        let num = |i: usize, column: &str| -> Result<Option<f64>, CohortError> {
            match field(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(column, s, "expected a number")),
            }
        };
        rows.push(ScoreRow {
            case_id: field(0).to_string(),
            structure: field(1)
                .parse()
                .map_err(|_| bad("structure", field(1), "unknown structure"))?,
            dsc: num(2, "dsc")?,
            hd95_mm: num(3, "hd95_mm")?,
            status: ScoreStatus::parse(field(4)).ok_or_else(|| bad("status", field(4), "unknown status"))?,
        });
    }
    Ok(rows)
}

/// Path of the scores file inside an evaluation output directory.
pub fn scores_path(dir: &Path) -> PathBuf {
    dir.join("scores.csv")
}
