use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::format::{csv_num, csv_opt, markdown_table, mean_std_cell, p_value, sig};
use super::scores::{read_scores, scores_path, write_scores, ScoreRow, SegMetric};
use super::{write_manifest, CaseRecord, CohortError, CohortManifest, Contrast, Position, Sex};
use crate::dosimetry::{align_dose, dose_metrics, dvh, paired_dose_table, write_dvh_csv, DoseCase, DEFAULT_BIN_GY};
use crate::inference::{
    argmax_labels, plan_windows, run_sliding_window, Fusion, OraclePredictor, Predictor, SubprocessPredictor,
    DEFAULT_OVERLAP, DEFAULT_PATCH,
};
use crate::metrics::{score_structures, BinaryMask, GEOMETRY_TOL};
use crate::stats::{
    rank_sum_unpaired, significance_stars, spearman, summarize, wilcoxon_signed_rank, Covariate, StatsError, Summary,
    TestResult,
};
use crate::volume::{
    canonicalize_orientation, load_label_mask, load_nifti, normalize_hu, resample, resample_to_geometry, save_nifti,
    Geometry, Interpolation, LabelMask, OutsidePolicy, Structure, ValueKind,
};

/// Working resolution for inference, in mm.
pub const INFERENCE_SPACING: [f64; 3] = [1.0, 1.0, 3.0];
/// Default number of tests per structure for Bonferroni (DSC and HD95).
pub const DEFAULT_FAMILY_SIZE: usize = 2;

/// A case that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseFailure {
    pub case_id: String,
    pub message: String,
}

/// Files written by a command and the cases that failed along the way.
#[derive(Debug, Default, Clone)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub failures: Vec<CaseFailure>,
}

impl CommandOutput {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    fn write(&mut self, path: PathBuf, text: &str) -> Result<(), CohortError> {
        std::fs::write(&path, text).map_err(|source| CohortError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn finish_failures(&mut self, out_dir: &Path, name: &str) -> Result<(), CohortError> {
        if self.failures.is_empty() {
            return Ok(());
        }
        let mut text = String::from("case_id,error\n");
        for f in &self.failures {
            let msg = f.message.replace('"', "'");
            let _ = writeln!(text, "{},\"{}\"", f.case_id, msg);
        }
        self.write(out_dir.join(name), &text)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CohortError> {
    std::fs::create_dir_all(dir).map_err(|source| CohortError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(fields).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = csv_line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for r in rows {
        out.push_str(&csv_line(r));
    }
    out
}

fn non_empty(manifest: &CohortManifest) -> Result<(), CohortError> {
    if manifest.records.is_empty() {
        Err(CohortError::EmptyManifest)
    } else {
        Ok(())
    }
}

fn required<'a>(record: &'a CaseRecord, path: &'a Option<PathBuf>, field: &'static str) -> Result<&'a Path, String> {
    path.as_deref().ok_or_else(|| {
        CohortError::MissingField {
            case_id: record.case_id.clone(),
            field,
        }
        .to_string()
    })
}

/// Brings a label mask onto `target` by nearest-neighbour lookup of physical
/// positions; a no-op when the geometries already agree.
fn labels_on(mask: LabelMask, target: &Geometry) -> Result<LabelMask, String> {
    if mask.geometry().approx_eq(target, GEOMETRY_TOL) {
        return Ok(mask);
    }
    let r = resample_to_geometry(mask.grid(), target, Interpolation::Nearest, OutsidePolicy::Fill(0.0))
        .map_err(|e| e.to_string())?;
    LabelMask::new(r.grid).map_err(|e| e.to_string())
}

fn load_masks(manifest: &CohortManifest, record: &CaseRecord) -> Result<(LabelMask, LabelMask), String> {
    let manual = load_label_mask(manifest.resolve(&record.mask_manual_path)).map_err(|e| e.to_string())?;
    let pred_path = required(record, &record.mask_pred_path, "mask_pred_path")?;
    let pred = load_label_mask(manifest.resolve(pred_path)).map_err(|e| e.to_string())?;
    let pred = labels_on(pred, manual.geometry())?;
    Ok((manual, pred))
}

/// Splits per-case results into successes (in case-id order) and failures.
fn partition<T>(results: Vec<(String, Result<T, String>)>) -> (Vec<(String, T)>, Vec<CaseFailure>) {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (case_id, r) in results {
        match r {
            Ok(v) => ok.push((case_id, v)),
            Err(message) => failures.push(CaseFailure { case_id, message }),
        }
    }
    (ok, failures)
}

// ---------------------------------------------------------------- evaluate

/// Per-structure aggregate of a scores table.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSummary {
    pub structure: Structure,
    pub dsc: Option<Summary>,
    pub hd95: Option<Summary>,
    /// Cases without a value, with the reason.
    pub excluded: Vec<(String, String)>,
}

pub fn summarize_scores(rows: &[ScoreRow]) -> Vec<StructureSummary> {
    Structure::ALL
        .iter()
        .map(|&s| {
            let these: Vec<&ScoreRow> = rows.iter().filter(|r| r.structure == s).collect();
            let values = |m: SegMetric| -> Vec<f64> { these.iter().filter_map(|r| r.metric(m)).collect() };
            StructureSummary {
                structure: s,
                dsc: summarize(&values(SegMetric::Dsc)).ok(),
                hd95: summarize(&values(SegMetric::Hd95)).ok(),
                excluded: these
                    .iter()
                    .filter(|r| r.dsc.is_none())
                    .map(|r| (r.case_id.clone(), r.status.as_str().to_string()))
                    .collect(),
            }
        })
        .collect()
}

fn summary_markdown(summaries: &[StructureSummary], cases: usize, label: &str) -> String {
    let mut header = vec!["Model"];
    header.extend(Structure::ALL.iter().map(|s| s.code()));
    let row = |m: SegMetric| -> Vec<String> {
        let mut r = vec![label.to_string()];
        r.extend(summaries.iter().map(|s| {
            mean_std_cell(
                match m {
                    SegMetric::Dsc => s.dsc.as_ref(),
                    SegMetric::Hd95 => s.hd95.as_ref(),
                },
                2,
            )
        }));
        r
    };
    let mut out = format!("# Segmentation accuracy\n\nCases scored: {cases}\n\n## DSC\n\n");
    out.push_str(&markdown_table(&header, &[row(SegMetric::Dsc)]));
    out.push_str("\n## HD95 (mm)\n\n");
    out.push_str(&markdown_table(&header, &[row(SegMetric::Hd95)]));
    let notes: Vec<String> = summaries
        .iter()
        .filter(|s| !s.excluded.is_empty())
        .map(|s| {
            let list: Vec<String> = s.excluded.iter().map(|(c, why)| format!("{c} ({why})")).collect();
            format!(
                "- {}: n = {}, excluded {}: {}",
                s.structure.code(),
                s.dsc.map_or(0, |d| d.n),
                s.excluded.len(),
                list.join(", ")
            )
        })
        .collect();
    if !notes.is_empty() {
        out.push_str("\nStructures absent from a delineation are excluded, not scored as 0.\n\n");
        out.push_str(&notes.join("\n"));
        out.push('\n');
    }
    out
}

fn summary_csv(summaries: &[StructureSummary]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.structure.code().to_string(),
                s.dsc.map_or(0, |d| d.n).to_string(),
                csv_opt(s.dsc.map(|d| d.mean)),
                csv_opt(s.dsc.and_then(|d| d.std)),
                csv_opt(s.hd95.map(|d| d.mean)),
                csv_opt(s.hd95.and_then(|d| d.std)),
                s.excluded.len().to_string(),
            ]
        })
        .collect();
    csv_text(
        &[
            "structure",
            "n",
            "dsc_mean",
            "dsc_std",
            "hd95_mean_mm",
            "hd95_std_mm",
            "n_excluded",
        ],
        &rows,
    )
}

/// Scores every case's predicted mask against its manual mask, in the manual
/// mask's native geometry, and writes `scores.csv`, `summary.csv` and
/// `summary.md`.
pub fn cmd_evaluate(manifest: &CohortManifest, out_dir: &Path) -> Result<CommandOutput, CohortError> {
    non_empty(manifest)?;
    ensure_dir(out_dir)?;
    let records = manifest.sorted_records();
    let results: Vec<(String, Result<Vec<ScoreRow>, String>)> = records
        .par_iter()
        .map(|r| {
            let scored = load_masks(manifest, r).and_then(|(manual, pred)| {
                score_structures(&pred, &manual)
                    .map(|scores| scores.iter().map(|s| ScoreRow::from_score(&r.case_id, s)).collect())
                    .map_err(|e| e.to_string())
            });
            (r.case_id.clone(), scored)
        })
        .collect();
    let (ok, failures) = partition(results);
    let rows: Vec<ScoreRow> = ok.into_iter().flat_map(|(_, rows)| rows).collect();
    let cases = rows.iter().map(|r| r.case_id.as_str()).collect::<BTreeSet<_>>().len();

    let mut out = CommandOutput {
        failures,
        ..Default::default()
    };
    let scores_file = scores_path(out_dir);
    write_scores(&scores_file, &rows)?;
    out.files.push(scores_file);
    let summaries = summarize_scores(&rows);
    out.write(out_dir.join("summary.csv"), &summary_csv(&summaries))?;
    out.write(
        out_dir.join("summary.md"),
        &summary_markdown(&summaries, cases, "predicted"),
    )?;
    out.finish_failures(out_dir, "errors.csv")?;
    Ok(out)
}

// ---------------------------------------------------------------- stats

/// Patient attribute used to form two groups for an unpaired comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Contrast,
    Position,
    Sex,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Contrast, Grouping::Position, Grouping::Sex];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Contrast => "contrast",
            Grouping::Position => "position",
            Grouping::Sex => "sex",
        }
    }

    /// Group names in report order.
    pub fn groups(self) -> [&'static str; 2] {
        match self {
            Grouping::Contrast => [Contrast::Cect.as_str(), Contrast::Ncct.as_str()],
            Grouping::Position => [Position::Supine.as_str(), Position::Prone.as_str()],
            Grouping::Sex => [Sex::M.as_str(), Sex::F.as_str()],
        }
    }

    fn group_of(self, r: &CaseRecord) -> Option<&'static str> {
        match self {
            Grouping::Contrast => Some(r.contrast.as_str()),
            Grouping::Position => Some(r.position.as_str()),
            Grouping::Sex => r.sex.map(Sex::as_str),
        }
    }
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown grouping `{s}` (expected contrast, position or sex)"))
    }
}

/// One structure/metric test in a stats table.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub structure: Structure,
    pub metric: SegMetric,
    pub result: Option<TestResult>,
    /// Why no test was run.
    pub skipped: Option<String>,
}

fn test_or_skip(structure: Structure, metric: SegMetric, r: Result<TestResult, StatsError>, family: usize) -> StatsRow {
    match r {
        Ok(t) => StatsRow {
            structure,
            metric,
            result: Some(t.with_bonferroni(family)),
            skipped: None,
        },
        Err(e) => StatsRow {
            structure,
            metric,
            result: None,
            skipped: Some(e.to_string()),
        },
    }
}

fn stats_csv(rows: &[StatsRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| match &r.result {
            Some(t) => {
                let corrected = t.p_corrected.unwrap_or(t.p_value);
                let (na, nb) = t.group_sizes.unwrap_or((t.n_effective, t.n_effective));
                vec![
                    r.structure.code().into(),
                    r.metric.as_str().into(),
                    na.to_string(),
                    nb.to_string(),
                    csv_num(t.statistic),
                    csv_num(t.p_value),
                    csv_num(corrected),
                    significance_stars(corrected).into(),
                    t.method.as_str().into(),
                    String::new(),
                ]
            }
            None => vec![
                r.structure.code().into(),
                r.metric.as_str().into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                r.skipped.clone().unwrap_or_default(),
            ],
        })
        .collect();
    csv_text(
        &[
            "structure",
            "metric",
            "n_a",
            "n_b",
            "statistic",
            "p_value",
            "p_corrected",
            "stars",
            "method",
            "note",
        ],
        &body,
    )
}

/// Table with raw and corrected p-values per metric, structures as rows.
fn stats_markdown(title: &str, rows: &[StatsRow], family: usize) -> String {
    let header = [
        "Cardiac substructures",
        "DSC p-value",
        "DSC p-value*",
        "HD95 p-value",
        "HD95 p-value*",
    ];
    let cell = |s: Structure, m: SegMetric| -> [String; 2] {
        match rows
            .iter()
            .find(|r| r.structure == s && r.metric == m)
            .and_then(|r| r.result.as_ref())
        {
            Some(t) => {
                let c = t.p_corrected.unwrap_or(t.p_value);
                let stars = significance_stars(c);
                let corrected = if stars.is_empty() {
                    p_value(c)
                } else {
                    format!("{} {}", p_value(c), stars)
                };
                [p_value(t.p_value), corrected]
            }
            None => ["-".into(), "-".into()],
        }
    };
    let body: Vec<Vec<String>> = Structure::ALL
        .iter()
        .map(|&s| {
            let mut r = vec![s.name().to_string()];
            r.extend(cell(s, SegMetric::Dsc));
            r.extend(cell(s, SegMetric::Hd95));
            r
        })
        .collect();
    format!(
        "# {title}\n\n{}\n* Bonferroni-corrected (family size {family}); stars on corrected p: * < 0.05, ** < 0.01, *** < 0.001, **** < 0.0001.\n",
        markdown_table(&header, &body)
    )
}

/// Paired Wilcoxon signed-rank per structure and metric between two scores
/// files that cover the same case/structure keys.
pub fn cmd_stats_paired(
    scores_a: &Path,
    scores_b: &Path,
    family_size: usize,
    out_dir: &Path,
) -> Result<CommandOutput, CohortError> {
    let a = read_scores(scores_a)?;
    let b = read_scores(scores_b)?;
    let key = |r: &ScoreRow| (r.case_id.clone(), r.structure);
    let map_a: BTreeMap<_, _> = a.iter().map(|r| (key(r), r)).collect();
    let map_b: BTreeMap<_, _> = b.iter().map(|r| (key(r), r)).collect();
    let only_a: BTreeSet<&str> = map_a
        .keys()
        .filter(|k| !map_b.contains_key(*k))
        .map(|k| k.0.as_str())
        .collect();
    let only_b: BTreeSet<&str> = map_b
        .keys()
        .filter(|k| !map_a.contains_key(*k))
        .map(|k| k.0.as_str())
        .collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(CohortError::Invalid(format!(
            "score files do not pair up; only in {}: [{}]; only in {}: [{}]",
            scores_a.display(),
            only_a.into_iter().collect::<Vec<_>>().join(", "),
            scores_b.display(),
            only_b.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let rows = paired_rows(&map_a, &map_b, family_size);
    ensure_dir(out_dir)?;
    let mut out = CommandOutput::default();
    out.write(out_dir.join("stats_paired.csv"), &stats_csv(&rows))?;
    out.write(
        out_dir.join("stats_paired.md"),
        &stats_markdown("Paired Wilcoxon signed-rank tests", &rows, family_size),
    )?;
    Ok(out)
}

type ScoreMap<'a> = BTreeMap<(String, Structure), &'a ScoreRow>;

fn paired_rows(a: &ScoreMap<'_>, b: &ScoreMap<'_>, family: usize) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for s in Structure::ALL {
        for m in SegMetric::ALL {
            let pairs: Vec<(f64, f64)> = a
                .iter()
                .filter(|(k, _)| k.1 == s)
                .filter_map(|(k, ra)| Some((ra.metric(m)?, b[k].metric(m)?)))
                .collect();
            rows.push(test_or_skip(s, m, wilcoxon_signed_rank(&pairs), family));
        }
    }
    rows
}

/// Unpaired rank-sum per structure and metric between the two groups of a
/// patient attribute.
pub fn cmd_stats_grouped(
    scores: &Path,
    manifest: &CohortManifest,
    grouping: Grouping,
    family_size: usize,
    out_dir: &Path,
) -> Result<CommandOutput, CohortError> {
    let rows = read_scores(scores)?;
    let stats = grouped_rows(&rows, manifest, grouping, family_size)?;
    ensure_dir(out_dir)?;
    let mut out = CommandOutput::default();
    let name = grouping.as_str();
    out.write(out_dir.join(format!("stats_{name}.csv")), &stats_csv(&stats))?;
    let [ga, gb] = grouping.groups();
    out.write(
        out_dir.join(format!("stats_{name}.md")),
        &stats_markdown(&format!("Rank-sum tests by {name}: {ga} vs {gb}"), &stats, family_size),
    )?;
    Ok(out)
}

pub fn grouped_rows(
    rows: &[ScoreRow],
    manifest: &CohortManifest,
    grouping: Grouping,
    family: usize,
) -> Result<Vec<StatsRow>, CohortError> {
    let mut group_of: BTreeMap<&str, &'static str> = BTreeMap::new();
    for case in rows.iter().map(|r| r.case_id.as_str()).collect::<BTreeSet<_>>() {
        let record = manifest
            .get(case)
            .ok_or_else(|| CohortError::Invalid(format!("scored case `{case}` is not in the manifest")))?;
        let g = grouping.group_of(record).ok_or_else(|| CohortError::MissingField {
            case_id: case.to_string(),
            field: "sex",
        })?;
        group_of.insert(case, g);
    }
    let [ga, gb] = grouping.groups();
    for g in [ga, gb] {
        if !group_of.values().any(|v| *v == g) {
            return Err(CohortError::Invalid(format!(
                "grouping by {}: group `{g}` has no scored cases",
                grouping.as_str()
            )));
        }
    }
    let mut out = Vec::new();
    for s in Structure::ALL {
        for m in SegMetric::ALL {
            let values = |g: &str| -> Vec<f64> {
                rows.iter()
                    .filter(|r| r.structure == s && group_of[r.case_id.as_str()] == g)
                    .filter_map(|r| r.metric(m))
                    .collect()
            };
            out.push(test_or_skip(s, m, rank_sum_unpaired(&values(ga), &values(gb)), family));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- correlate

/// Spearman rho of per-case DSC against a covariate, per structure, plus a
/// scatter CSV per structure.
pub fn cmd_correlate(
    scores: &Path,
    manifest: &CohortManifest,
    covariate: Covariate,
    out_dir: &Path,
) -> Result<CommandOutput, CohortError> {
    let rows = read_scores(scores)?;
    let cov_of = |case: &str| -> Result<f64, CohortError> {
        let record = manifest
            .get(case)
            .ok_or_else(|| CohortError::Invalid(format!("scored case `{case}` is not in the manifest")))?;
        match covariate {
            Covariate::Age => record.age,
            Covariate::Bmi => record.bmi,
        }
        .ok_or_else(|| CohortError::MissingField {
            case_id: case.to_string(),
            field: covariate.as_str(),
        })
    };
    ensure_dir(out_dir)?;
    let mut out = CommandOutput::default();
    let mut table = Vec::new();
    for s in Structure::ALL {
        let mut points = Vec::new();
        for r in rows.iter().filter(|r| r.structure == s) {
            let x = cov_of(&r.case_id)?;
            if let Some(d) = r.dsc {
                points.push((r.case_id.clone(), x, d));
            }
        }
        let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
        let rho = match spearman(&xs, &ys) {
            Ok(c) => Some(c.rho),
            Err(StatsError::TooFew { .. }) => None,
            Err(e) => {
                return Err(CohortError::Invalid(format!(
                    "{} vs DSC for {}: {e}",
                    covariate.as_str(),
                    s.code()
                )))
            }
        };
        table.push((s, points.len(), rho));
        let scatter: Vec<Vec<String>> = points
            .iter()
            .map(|(c, x, d)| vec![c.clone(), csv_num(*x), csv_num(*d)])
            .collect();
        out.write(
            out_dir.join(format!("scatter_{}_{}.csv", covariate.as_str(), s.code())),
            &csv_text(&["case_id", covariate.as_str(), "dsc"], &scatter),
        )?;
    }
    let csv_rows: Vec<Vec<String>> = table
        .iter()
        .map(|(s, n, rho)| vec![s.code().into(), n.to_string(), csv_opt(*rho)])
        .collect();
    out.write(
        out_dir.join(format!("correlation_{}.csv", covariate.as_str())),
        &csv_text(&["structure", "n", "rho"], &csv_rows),
    )?;
    let md_rows: Vec<Vec<String>> = table
        .iter()
        .map(|(s, n, rho)| {
            vec![
                s.name().into(),
                n.to_string(),
                rho.map_or("-".into(), |r| format!("{r:.2}")),
            ]
        })
        .collect();
    out.write(
        out_dir.join(format!("correlation_{}.md", covariate.as_str())),
        &format!(
            "# Spearman correlation of DSC with {}\n\n{}",
            covariate.as_str(),
            markdown_table(&["Cardiac substructures", "n", "rho"], &md_rows)
        ),
    )?;
    Ok(out)
}

// ---------------------------------------------------------------- dose

struct DoseCaseData {
    case: DoseCase,
    outside_fraction: f64,
}

fn load_dose_case(manifest: &CohortManifest, record: &CaseRecord) -> Result<DoseCaseData, String> {
    let dose_path = required(record, &record.dose_path, "dose_path")?;
    let (manual, predicted) = load_masks(manifest, record)?;
    let dose = load_nifti(manifest.resolve(dose_path)).map_err(|e| e.to_string())?;
    let aligned = align_dose(&dose, manual.geometry()).map_err(|e| e.to_string())?;
    Ok(DoseCaseData {
        case: DoseCase {
            case_id: record.case_id.clone(),
            dose: aligned.dose,
            manual,
            predicted,
        },
        outside_fraction: aligned.outside_fraction,
    })
}

/// Dose comparison between manual and predicted delineations: the designated
/// metric per structure with a paired Wilcoxon p, per-case metrics for the
/// requested thresholds, DVH curves and a scatter file.
pub fn cmd_dose(manifest: &CohortManifest, thresholds: &[f64], out_dir: &Path) -> Result<CommandOutput, CohortError> {
    non_empty(manifest)?;
    if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(CohortError::Invalid(format!("invalid dose thresholds {thresholds:?}")));
    }
    ensure_dir(out_dir)?;
    let dvh_dir = out_dir.join("dvh");
    ensure_dir(&dvh_dir)?;
    let records = manifest.sorted_records();
    let loaded: Vec<(String, Result<DoseCaseData, String>)> = records
        .par_iter()
        .map(|r| (r.case_id.clone(), load_dose_case(manifest, r)))
        .collect();
    let (ok, failures) = partition(loaded);
    let mut out = CommandOutput {
        failures,
        ..Default::default()
    };
    let cases: Vec<DoseCase> = ok.iter().map(|(_, d)| d.case.clone()).collect();

    // per-case metrics and DVH curves
    let mut metric_rows = Vec::new();
    for (case_id, data) in &ok {
        for (which, mask) in [("manual", &data.case.manual), ("predicted", &data.case.predicted)] {
            let mut curves = Vec::new();
            for s in Structure::ALL {
                let bin = BinaryMask::from_labels(mask, s);
                if bin.is_empty() {
                    continue;
                }
                let m = dose_metrics(&data.case.dose, &bin, thresholds)?;
                let mut row = vec![
                    case_id.clone(),
                    which.to_string(),
                    s.code().to_string(),
                    csv_num(m.dmax_gy),
                    csv_num(m.dmean_gy),
                ];
                row.extend(m.vx.iter().map(|(_, v)| csv_num(*v)));
                row.push(csv_num(data.outside_fraction));
                metric_rows.push(row);
                curves.push(dvh(&data.case.dose, &bin, DEFAULT_BIN_GY)?);
            }
            let path = dvh_dir.join(format!("{case_id}_{which}.csv"));
            let mut buf = Vec::new();
            write_dvh_csv(&mut buf, &curves)?;
            out.write(path, &String::from_utf8(buf).expect("utf8 csv"))?;
        }
    }
    let threshold_cols: Vec<String> = thresholds.iter().map(|t| format!("v{}_pct", csv_num(*t))).collect();
    let mut header = vec!["case_id", "delineation", "structure", "dmax_gy", "dmean_gy"];
    header.extend(threshold_cols.iter().map(String::as_str));
    header.push("dose_outside_fraction");
    out.write(out_dir.join("dose_metrics.csv"), &csv_text(&header, &metric_rows))?;

    // designated metric table
    let table = paired_dose_table(&cases)?;
    let mut scatter = Vec::new();
    let mut csv_rows = Vec::new();
    let mut md_rows = Vec::new();
    for row in &table {
        for ((c, m), p) in row.case_ids.iter().zip(&row.manual).zip(&row.predicted) {
            scatter.push(vec![
                c.clone(),
                row.structure.code().into(),
                row.metric.label(),
                csv_num(*m),
                csv_num(*p),
            ]);
        }
        let sm = summarize(&row.manual).ok();
        let sp = summarize(&row.predicted).ok();
        let p = wilcoxon_signed_rank(&row.pairs()).ok().map(|t| t.p_value);
        csv_rows.push(vec![
            row.structure.code().into(),
            row.metric.label(),
            row.case_ids.len().to_string(),
            csv_opt(sm.map(|s| s.mean)),
            csv_opt(sm.and_then(|s| s.std)),
            csv_opt(sp.map(|s| s.mean)),
            csv_opt(sp.and_then(|s| s.std)),
            csv_opt(p),
            row.excluded.len().to_string(),
        ]);
        let cell = |s: Option<Summary>| match s {
            None => "-".to_string(),
            Some(s) => match s.std {
                Some(sd) => format!("{} ± {}", sig(s.mean, 4), sig(sd, 4)),
                None => format!("{} (1 scan)", sig(s.mean, 4)),
            },
        };
        md_rows.push(vec![
            row.structure.name().into(),
            row.metric.label(),
            cell(sm),
            cell(sp),
            p.map_or("-".into(), |p| format!("{p:.2}")),
        ]);
    }
    out.write(
        out_dir.join("dose_table.csv"),
        &csv_text(
            &[
                "structure",
                "metric",
                "n",
                "manual_mean",
                "manual_std",
                "predicted_mean",
                "predicted_std",
                "p_value",
                "n_excluded",
            ],
            &csv_rows,
        ),
    )?;
    out.write(
        out_dir.join("dose_table.md"),
        &format!(
            "# Dosimetric comparison\n\nCases: {}\n\n{}\nDMax and DMean in Gy; V40 in % of structure volume. p: two-sided paired Wilcoxon signed-rank.\n",
            cases.len(),
            markdown_table(
                &["Cardiac substructure", "Metric", "Manual", "Predicted", "p-value"],
                &md_rows
            )
        ),
    )?;
    out.write(
        out_dir.join("dose_scatter.csv"),
        &csv_text(&["case_id", "structure", "metric", "manual", "predicted"], &scatter),
    )?;
    out.finish_failures(out_dir, "dose_errors.csv")?;
    Ok(out)
}

// ---------------------------------------------------------------- infer

/// Where window predictions come from.
#[derive(Debug, Clone)]
pub enum PredictorSource {
    /// External command following the window protocol.
    Command(String),
    /// One-hot manual labels of each case; checks the plumbing end to end.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub predictor: PredictorSource,
    pub fusion: Fusion,
    pub patch: [usize; 3],
    pub overlap: f64,
}

impl InferOptions {
    pub fn new(predictor: PredictorSource) -> Self {
        Self {
            predictor,
            fusion: Fusion::Uniform,
            patch: DEFAULT_PATCH,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

/// Predicts one case: canonical orientation, HU normalization, resampling to
/// the working resolution, sliding-window prediction, argmax, and nearest
/// resampling back to the image's native geometry.
pub fn infer_case(manifest: &CohortManifest, record: &CaseRecord, opts: &InferOptions) -> Result<LabelMask, String> {
    let image = load_nifti(manifest.resolve(&record.image_path)).map_err(|e| e.to_string())?;
    if image.kind() != ValueKind::Hu {
        return Err(format!("image has kind {}, expected HU", image.kind().as_str()));
    }
    let native = *image.geometry();
    let canonical = canonicalize_orientation(&image);
    let work =
        resample(&normalize_hu(&canonical), INFERENCE_SPACING, Interpolation::Trilinear).map_err(|e| e.to_string())?;
    let plan = plan_windows(work.dims(), opts.patch, opts.overlap).map_err(|e| e.to_string())?;
    let predictor: Box<dyn Predictor> = match &opts.predictor {
        PredictorSource::Command(cmd) => Box::new(SubprocessPredictor::new(cmd.clone())),
        PredictorSource::Oracle => {
            let manual = load_label_mask(manifest.resolve(&record.mask_manual_path)).map_err(|e| e.to_string())?;
            Box::new(OraclePredictor::new(&labels_on(manual, work.geometry())?))
        }
    };
    let probs = run_sliding_window(&work, predictor.as_ref(), &plan, opts.fusion).map_err(|e| e.to_string())?;
    let labels = argmax_labels(&probs).map_err(|e| e.to_string())?;
    labels_on(labels, &native)
}

/// Runs [`infer_case`] for every case, writes `<case>_pred.nii.gz` files and
/// an updated `manifest.csv` into `out_dir`.
pub fn cmd_infer(
    manifest: &CohortManifest,
    opts: &InferOptions,
    out_dir: &Path,
) -> Result<(CohortManifest, CommandOutput), CohortError> {
    non_empty(manifest)?;
    ensure_dir(out_dir)?;
    let mut out = CommandOutput::default();
    let mut updated = CohortManifest {
        base_dir: out_dir.to_path_buf(),
        records: Vec::new(),
        extra_columns: manifest.extra_columns.clone(),
    };
    let absolute = |p: &Path| -> PathBuf {
        let p = manifest.resolve(p);
        std::path::absolute(&p).unwrap_or(p)
    };
    // cases run one at a time; windows within a case run in parallel
    for record in manifest.sorted_records() {
        let mut r = record.clone();
        r.image_path = absolute(&record.image_path);
        r.mask_manual_path = absolute(&record.mask_manual_path);
        r.dose_path = record.dose_path.as_deref().map(absolute);
        match infer_case(manifest, record, opts) {
            Ok(labels) => {
                let name = PathBuf::from(format!("{}_pred.nii.gz", record.case_id));
                let path = out_dir.join(&name);
                save_nifti(labels.grid(), &path)?;
                out.files.push(path);
                r.mask_pred_path = Some(name);
            }
            Err(message) => out.failures.push(CaseFailure {
                case_id: record.case_id.clone(),
                message,
            }),
        }
        updated.records.push(r);
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&updated, &manifest_path)?;
    out.files.push(manifest_path);
    out.finish_failures(out_dir, "infer_errors.csv")?;
    Ok((updated, out))
}

// ---------------------------------------------------------------- report

/// Full protocol on a manifest with predictions: evaluation, grouped tests for
/// every attribute that splits the cohort into two non-empty groups, DSC
/// correlations with age and BMI when available, and the dose comparison when
/// every case has a dose file. Writes `report.md` linking the pieces.
pub fn cmd_report(manifest: &CohortManifest, family_size: usize, out_dir: &Path) -> Result<CommandOutput, CohortError> {
    let mut out = cmd_evaluate(manifest, out_dir)?;
    let mut sections = vec![read_text(&out_dir.join("summary.md"))?];
    let scores = scores_path(out_dir);
    let rows = read_scores(&scores)?;

    for g in Grouping::ALL {
        match grouped_rows(&rows, manifest, g, family_size) {
            Ok(_) => {
                let o = cmd_stats_grouped(&scores, manifest, g, family_size, out_dir)?;
                sections.push(read_text(&out_dir.join(format!("stats_{}.md", g.as_str())))?);
                out.files.extend(o.files);
            }
            Err(e) => sections.push(format!("# Rank-sum tests by {}\n\nSkipped: {e}\n", g.as_str())),
        }
    }
    for c in [Covariate::Age, Covariate::Bmi] {
        match cmd_correlate(&scores, manifest, c, out_dir) {
            Ok(o) => {
                sections.push(read_text(&out_dir.join(format!("correlation_{}.md", c.as_str())))?);
                out.files.extend(o.files);
            }
            Err(e) => sections.push(format!("# Spearman correlation of DSC with {c}\n\nSkipped: {e}\n")),
        }
    }
    if manifest.records.iter().all(|r| r.dose_path.is_some()) {
        let o = cmd_dose(manifest, &[40.0], out_dir)?;
        sections.push(read_text(&out_dir.join("dose_table.md"))?);
        out.files.extend(o.files);
        out.failures.extend(o.failures);
    }
    let report = sections.join("\n");
    out.write(out_dir.join("report.md"), &report)?;
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, CohortError> {
    std::fs::read_to_string(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })
}
