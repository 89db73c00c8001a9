//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use cardioseg::cohort::{
    cmd_evaluate, cmd_infer, cmd_report, grouped_rows, kfold, stratified_split, Contrast, Grouping, InferOptions,
    PredictorSource, ScoreRow, SegMetric,
};
use cardioseg::dosimetry::{dose_metrics, dvh};
use cardioseg::inference::{plan_windows, run_sliding_window, ConstantPredictor, Fusion};
use cardioseg::metrics::{dsc, edt, hd95, ScoreStatus};
use cardioseg::phantom::{cohort_records, generate_cohort};
use cardioseg::rng::seeded;
use cardioseg::stats::{bonferroni, rank_sum_unpaired, signed_rank_differences, spearman, MethodChoice};
use cardioseg::volume::{Geometry, Structure, ValueKind, VoxelGrid};
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn edt_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101, 0);
    let mut worst = 0.0f64;
    let mut saw_133 = false;
    for case in 0..200 {
        let dims = random_dims(&mut rng, 32);
        let spacing = if case % 4 == 0 {
            [1.0, 1.0, 3.0]
        } else {
            random_spacing(&mut rng)
        };
        saw_133 |= spacing == [1.0, 1.0, 3.0];
        let n: usize = dims.iter().product();
        let k = rng.gen_range(1..=n.min(24));
        let seeds: Vec<[usize; 3]> = (0..k).map(|_| coords(dims, rng.gen_range(0..n))).collect();
        let fast = edt(&seeds, dims, spacing).map_err(|e| e.to_string())?;
        let slow = brute_edt(&seeds, dims, spacing);
        for (a, b) in fast.values().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    check(saw_133, || "no (1,1,3) spacing exercised".into())?;
    check(worst <= 1e-9, || format!("max deviation {worst:e} mm"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "200 grids, max |edt - brute| = {worst:e} mm, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn hd95_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(202, 0);
    let mut worst = 0.0f64;
    let mut computed = 0;
    for _ in 0..100 {
        let dims = random_dims(&mut rng, 24);
        let spacing = random_spacing(&mut rng);
        let a = random_blob(&mut rng, dims);
        let b = random_blob(&mut rng, dims);
        let expected = brute_hd95(&a, &b, dims, spacing);
        let got = hd95(&mask(dims, spacing, a), &mask(dims, spacing, b))
            .map_err(|e| e.to_string())?
            .value;
        match (got, expected) {
            (Some(g), Some(e)) => {
                worst = worst.max((g - e).abs());
                computed += 1;
            }
            (None, None) => {}
            other => return Err(format!("emptiness disagrees: {other:?}")),
        }
    }
    check(worst == 0.0, || format!("max deviation {worst:e} mm"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "100 pairs ({computed} non-empty), exact match, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn dsc_hand_cases() -> Outcome {
    let dims = [8, 4, 4];
    let cube = |x0: usize| -> Vec<bool> { (0..128).map(|i| (x0..x0 + 4).contains(&coords(dims, i)[0])).collect() };
    let m = |v: Vec<bool>| mask(dims, [1.0; 3], v);
    let value = |a: Vec<bool>, b: Vec<bool>| dsc(&m(a), &m(b)).unwrap().value.unwrap();
    let identity = value(cube(0), cube(0));
    let disjoint = value(cube(0), cube(4));
    let half = value(cube(0), cube(2));
    check(identity == 1.0, || format!("identity gave {identity}"))?;
    check(disjoint == 0.0, || format!("disjoint gave {disjoint}"))?;
    check(half == 0.5, || format!("half overlap gave {half}"))?;
    Ok("identity 1.0, disjoint 0.0, half-overlap 0.5".into())
}

fn signed_rank_exact() -> Outcome {
    let mut rng = seeded(303, 0);
    let mut worst = 0.0f64;
    for case in 0..600 {
        let n = rng.gen_range(1..=12);
        let d: Vec<f64> = if case < 500 {
            // continuous draws: ties have probability zero
            (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect()
        };
        let got = signed_rank_differences(&d, MethodChoice::Exact)
            .map_err(|e| e.to_string())?
            .p_value;
        worst = worst.max((got - enumerate_signed_rank_p(&d)).abs());
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let p5 = signed_rank_differences(&[1.0, 2.0, 3.0, 4.0, 5.0], MethodChoice::Auto)
        .map_err(|e| e.to_string())?
        .p_value;
    check(p5 == 0.0625, || format!("all-positive n=5 gave {p5}"))?;
    Ok(format!(
        "600 vectors vs 2^n enumeration (max dev {worst:e}); n=5 all positive p = 0.0625"
    ))
}

fn rank_sum_exact() -> Outcome {
    let mut rng = seeded(404, 0);
    let mut worst = 0.0f64;
    for case in 0..400 {
        let n = rng.gen_range(2..=12);
        let na = rng.gen_range(1..n);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            if case % 2 == 0 {
                rng.gen_range(0.0..10.0)
            } else {
                rng.gen_range(0..4) as f64
            }
        };
        let a: Vec<f64> = (0..na).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..n - na).map(|_| draw(&mut rng)).collect();
        let got = rank_sum_unpaired(&a, &b).map_err(|e| e.to_string())?.p_value;
        worst = worst.max((got - enumerate_rank_sum_p(&a, &b)).abs());
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let p = rank_sum_unpaired(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])
        .map_err(|e| e.to_string())?
        .p_value;
    check(p == 0.1, || format!("{{1,2,3}} vs {{4,5,6}} gave {p}"))?;
    Ok(format!(
        "400 samples vs C(n,k) enumeration (max dev {worst:e}); {{1,2,3}} vs {{4,5,6}} p = 0.1"
    ))
}

fn bonferroni_row() -> Outcome {
    let c = bonferroni(0.0424, 2);
    check(c == 0.0848, || format!("0.0424 corrected to {c}"))?;
    check(bonferroni(0.6, 2) == 1.0, || "no cap at 1".into())?;
    Ok("0.0424 -> 0.0848, capped at 1".into())
}

fn spearman_cases() -> Outcome {
    let rho = |x: &[f64], y: &[f64]| spearman(x, y).map(|c| c.rho).map_err(|e| e.to_string());
    let half = rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])?;
    check(half == 0.5, || format!("(1,2,3)/(1,3,2) gave {half}"))?;
    let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
    let up: Vec<f64> = x.iter().map(|v| v * v * v + 2.0).collect();
    let down: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
    check(rho(&x, &up)? == 1.0, || "increasing not +1".into())?;
    check(rho(&x, &down)? == -1.0, || "decreasing not -1".into())?;
    Ok("0.5 exact; monotone +1 / -1 exact".into())
}

fn dose_cases() -> Outcome {
    let geom = Geometry::new([4, 4, 2], [1.0, 1.0, 3.0]);
    let full = mask([4, 4, 2], [1.0, 1.0, 3.0], vec![true; 32]);
    let uniform = VoxelGrid::filled(geom, ValueKind::Gy, 50.0).unwrap();
    let m = dose_metrics(&uniform, &full, &[40.0]).map_err(|e| e.to_string())?;
    check(m.dmax_gy == 50.0 && m.dmean_gy == 50.0, || format!("uniform: {m:?}"))?;
    check(m.v(40.0) == Some(100.0), || format!("uniform V40 {:?}", m.v(40.0)))?;
    let split = VoxelGrid::from_fn(geom, ValueKind::Gy, |[_, _, k]| if k == 0 { 10.0 } else { 70.0 }).unwrap();
    let m = dose_metrics(&split, &full, &[40.0]).map_err(|e| e.to_string())?;
    check(m.dmean_gy == 40.0, || format!("half/half DMean {}", m.dmean_gy))?;
    check(m.v(40.0) == Some(50.0), || format!("half/half V40 {:?}", m.v(40.0)))?;

    let mut rng = seeded(505, 0);
    for _ in 0..100 {
        let dims = random_dims(&mut rng, 10);
        let g = Geometry::new(dims, [1.0, 1.0, 3.0]);
        let scale = rng.gen_range(0.1..80.0);
        let dose = VoxelGrid::from_fn(g, ValueKind::Gy, |_| rng.gen_range(0.0..scale)).unwrap();
        let voxels = vec![true; dose.len()];
        let curve = dvh(&dose, &mask(dims, [1.0, 1.0, 3.0], voxels), 0.1).map_err(|e| e.to_string())?;
        check(curve.volume_pct.windows(2).all(|w| w[1] <= w[0]), || {
            "DVH increased".into()
        })?;
        check(curve.volume_pct[0] == 100.0, || "DVH does not start at 100%".into())?;
    }
    Ok("uniform 50 Gy and half 10/70 Gy exact; 100 random DVHs non-increasing".into())
}

fn window_plan() -> Outcome {
    let p = plan_windows([200, 200, 200], [128; 3], 0.5).map_err(|e| e.to_string())?;
    for a in 0..3 {
        check(p.axis_starts[a] == vec![0, 64, 72], || {
            format!("axis {a}: {:?}", p.axis_starts[a])
        })?;
    }
    let mut rng = seeded(606, 0);
    for _ in 0..100 {
        let dims = random_dims(&mut rng, 300);
        let patch = [0; 3].map(|_| rng.gen_range(1..=160));
        let plan = plan_windows(dims, patch, 0.5).map_err(|e| e.to_string())?;
        let padded = plan.padded_dims();
        for a in 0..3 {
            let cov = plan.axis_coverage(a);
            check(cov.iter().all(|&c| c >= 1), || {
                format!("uncovered voxel, dims {dims:?} patch {patch:?}")
            })?;
            check(plan.axis_starts[a].iter().all(|&s| s + patch[a] <= padded[a]), || {
                format!("window leaves padded volume, dims {dims:?} patch {patch:?}")
            })?;
        }
    }
    let geom = Geometry::new([37, 20, 11], [1.0; 3]);
    let vol = VoxelGrid::from_fn(geom, ValueKind::Probability, |[i, j, k]| ((i + j + k) % 7) as f64 / 7.0).unwrap();
    let plan = plan_windows(vol.dims(), [16, 16, 16], 0.5).map_err(|e| e.to_string())?;
    let probs =
        run_sliding_window(&vol, &ConstantPredictor::one_hot(0), &plan, Fusion::Uniform).map_err(|e| e.to_string())?;
    let n = vol.len();
    check(probs.scores()[..n].iter().all(|&s| s == 1.0), || {
        "background not exactly 1".into()
    })?;
    check(probs.scores()[n..].iter().all(|&s| s == 0.0), || {
        "structures not exactly 0".into()
    })?;
    Ok(format!(
        "200/128 -> {{0,64,72}}; coverage on 100 random dims; constant fusion exact over {} windows",
        plan.len()
    ))
}

fn phantom_round(dir: &Path, cect: usize, ncct: usize, prone: usize, seed: u64) -> Result<(), String> {
    let cohort = dir.join("cohort");
    generate_cohort(cect, ncct, prone, seed, &cohort).map_err(|e| e.to_string())?;
    let manifest = cardioseg::cohort::load_manifest(&cohort.join("manifest.csv")).map_err(|e| e.to_string())?;
    let (predicted, out) = cmd_infer(
        &manifest,
        &InferOptions::new(PredictorSource::Oracle),
        &dir.join("infer"),
    )
    .map_err(|e| e.to_string())?;
    check(out.succeeded(), || format!("inference failures: {:?}", out.failures))?;
    let out = cmd_evaluate(&predicted, &dir.join("eval")).map_err(|e| e.to_string())?;
    check(out.succeeded(), || format!("evaluation failures: {:?}", out.failures))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    phantom_round(dir.path(), 8, 8, 4, 2024)?;
    let rows = cardioseg::cohort::read_scores(&dir.path().join("eval/scores.csv")).map_err(|e| e.to_string())?;
    check(rows.len() == 16 * 8, || format!("{} score rows", rows.len()))?;
    for r in &rows {
        check(
            r.status == ScoreStatus::Computed && r.dsc == Some(1.0) && r.hd95_mm == Some(0.0),
            || format!("{} {}: {:?}", r.case_id, r.structure, r),
        )?;
    }
    let md = std::fs::read_to_string(dir.path().join("eval/summary.md")).map_err(|e| e.to_string())?;
    check(md.matches("1.00 ±0.00").count() == 8, || {
        "summary lacks DSC 1.00 for all 8".into()
    })?;
    check(md.matches("0.00 ±0.00").count() == 8, || {
        "summary lacks HD95 0.0 for all 8".into()
    })?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "16 phantoms (4 prone), oracle inference: DSC 1.00 / HD95 0.0 for all 8 structures, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.insert(rel, std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn cohort_protocol() -> Outcome {
    let m = cohort_records(56, 124, 0, 1).map_err(|e| e.to_string())?;
    let request = BTreeMap::from([(Contrast::Cect, 32), (Contrast::Ncct, 32)]);
    let split = stratified_split(&m, &request, 11).map_err(|e| e.to_string())?;
    check(split.train.len() == 64 && split.holdout.len() == 116, || {
        format!("train {} holdout {}", split.train.len(), split.holdout.len())
    })?;
    check(split == stratified_split(&m, &request, 11).unwrap(), || {
        "split not deterministic".into()
    })?;
    let ids: Vec<String> = m.records.iter().map(|r| r.case_id.clone()).collect();
    let folds = kfold(&ids, 3, 11).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    check(sizes == vec![60, 60, 60], || format!("fold sizes {sizes:?}"))?;

    // two full runs with the same seed must produce byte-identical outputs
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for run in &runs {
        phantom_round(run.path(), 3, 3, 2, 77)?;
        let manifest =
            cardioseg::cohort::load_manifest(&run.path().join("infer/manifest.csv")).map_err(|e| e.to_string())?;
        cmd_report(&manifest, 2, &run.path().join("report")).map_err(|e| e.to_string())?;
    }
    let mut compared = 0;
    for sub in ["cohort", "infer", "eval", "report"] {
        let a = read_dir_bytes(&runs[0].path().join(sub));
        let b = read_dir_bytes(&runs[1].path().join(sub));
        check(a.keys().eq(b.keys()), || format!("{sub}: different file sets"))?;
        for (name, bytes) in &a {
            // the inference manifest records absolute input paths
            if sub == "infer" && name == "manifest.csv" {
                continue;
            }
            check(bytes == &b[name], || format!("{sub}/{name} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!("56/124 split -> 64 train; kfold(180,3) = 60/60/60; {compared} output files byte-identical across two seeded runs"))
}

fn robustness_harness() -> Outcome {
    let m = cohort_records(30, 30, 0, 5).map_err(|e| e.to_string())?;
    let mut rng = seeded(707, 0);
    let noise = Normal::new(0.85, 0.04).unwrap();
    let mut rows = Vec::new();
    let mut records: Vec<_> = m.records.iter().collect();
    records.shuffle(&mut rng);
    for r in records {
        for s in Structure::ALL {
            let mut d: f64 = noise.sample(&mut rng);
            if r.contrast == Contrast::Ncct {
                d -= 0.1;
            }
            rows.push(ScoreRow {
                case_id: r.case_id.clone(),
                structure: s,
                dsc: Some(d.clamp(0.0, 1.0)),
                hd95_mm: Some(rng.gen_range(2.0..8.0)),
                status: ScoreStatus::Computed,
            });
        }
    }
    let stats = grouped_rows(&rows, &m, Grouping::Contrast, 2).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for row in stats.iter().filter(|r| r.metric == SegMetric::Dsc) {
        let t = row.result.as_ref().ok_or("test skipped")?;
        check(t.group_sizes == Some((30, 30)), || {
            format!("group sizes {:?}", t.group_sizes)
        })?;
        worst = worst.max(t.p_value);
    }
    check(worst < 0.01, || format!("largest DSC p {worst}"))?;
    Ok(format!(
        "NCCT DSC - 0.1, n = 30 per group: largest p over 8 structures = {worst:.2e}"
    ))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("EDT matches brute force", edt_oracle),
        ("HD95 matches pairwise surface distances", hd95_oracle),
        ("DSC hand cases", dsc_hand_cases),
        ("Exact Wilcoxon signed-rank", signed_rank_exact),
        ("Exact rank-sum", rank_sum_exact),
        ("Bonferroni correction", bonferroni_row),
        ("Spearman correlation", spearman_cases),
        ("Dose metrics and DVH", dose_cases),
        ("Sliding-window plan and fusion", window_plan),
        ("End-to-end oracle inference", end_to_end),
        ("Cohort split, folds and determinism", cohort_protocol),
        ("Rank-sum robustness harness", robustness_harness),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
