//! Append-only results store and table/curve emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::Augmentation;
use crate::extraction::{CellKey, CellResult, CurvePoint, SweepReport};
use crate::metrics::mean_std;
use crate::{Error, Result};

/// Experiment A: victim output against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimRecord {
    pub task: String,
    pub test_set: String,
    pub seed: u64,
    #[serde(with = "crate::serde_float")]
    pub ssim_vs_truth: f64,
    #[serde(with = "crate::serde_float")]
    pub psnr_vs_truth: f64,
    #[serde(with = "crate::serde_float")]
    pub fid_vs_truth: f64,
}

/// One line of the results store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultRecord {
    Victim(VictimRecord),
    Cell {
        task: String,
        test_set: String,
        cell: CellResult,
    },
}

/// JSONL file with one [`ResultRecord`] per line; lines are only ever appended.
pub struct ResultsStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl ResultsStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &ResultRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = self.file.lock().expect("results store poisoned");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn load(&self) -> Result<Vec<ResultRecord>> {
        read_records(&self.path)
    }

    /// Keys of cells already finished without error for `task`.
    pub fn completed_cells(&self, task: &str) -> Result<Vec<CellKey>> {
        Ok(self
            .load()?
            .into_iter()
            .filter_map(|r| match r {
                ResultRecord::Cell { task: t, cell, .. } if t == task && cell.error.is_none() => Some(cell.key),
                _ => None,
            })
            .collect())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    A,
    B,
    C,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::A => "(A) victim-vs-truth",
            Experiment::B => "(B) surrogate-vs-victim",
            Experiment::C => "(C) surrogate-vs-truth",
        }
    }
}

/// Mean and sample standard deviation of one metric column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
}

fn summarize(values: &[f64]) -> Summary {
    let (mean, std) = mean_std(values).unwrap_or((f64::NAN, None));
    Summary { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: String,
    pub test_set: String,
    pub experiment: Experiment,
    /// Budget fraction of the surrogate cells; absent for experiment A.
    pub fraction: Option<f64>,
    pub n_runs: usize,
    pub ssim: Summary,
    pub psnr: Summary,
    pub fid: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub task: String,
    pub augmentations: BTreeSet<Augmentation>,
    pub points: Vec<CurvePoint>,
}

pub fn augmentation_label(augs: &BTreeSet<Augmentation>) -> String {
    if augs.is_empty() {
        "none".to_string()
    } else {
        augs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("+")
    }
}

/// Table rows ordered by task, test set, then experiment A, B, C. B and C use the
/// unaugmented cells at the largest budget fraction present.
pub fn table_rows(records: &[ResultRecord]) -> Vec<TableRow> {
    type Key = (String, String);
    let mut victims: BTreeMap<Key, Vec<&VictimRecord>> = BTreeMap::new();
    let mut cells: BTreeMap<Key, Vec<&CellResult>> = BTreeMap::new();
    for r in records {
        match r {
            ResultRecord::Victim(v) => victims.entry((v.task.clone(), v.test_set.clone())).or_default().push(v),
            ResultRecord::Cell { task, test_set, cell } => {
                if cell.metrics.is_some() && cell.key.augmentations.is_empty() {
                    cells.entry((task.clone(), test_set.clone())).or_default().push(cell);
                }
            }
        }
    }
    let keys: BTreeSet<Key> = victims.keys().chain(cells.keys()).cloned().collect();
    let mut rows = Vec::new();
    for key in keys {
        if let Some(vs) = victims.get(&key) {
            let col = |f: fn(&VictimRecord) -> f64| summarize(&vs.iter().map(|v| f(v)).collect::<Vec<_>>());
            rows.push(TableRow {
                task: key.0.clone(),
                test_set: key.1.clone(),
                experiment: Experiment::A,
                fraction: None,
                n_runs: vs.len(),
                ssim: col(|v| v.ssim_vs_truth),
                psnr: col(|v| v.psnr_vs_truth),
                fid: col(|v| v.fid_vs_truth),
            });
        }
        let Some(cs) = cells.get(&key) else { continue };
        let top = cs.iter().map(|c| c.key.fraction).fold(f64::NEG_INFINITY, f64::max);
        let ms: Vec<_> = cs
            .iter()
            .filter(|c| c.key.fraction == top)
            .filter_map(|c| c.metrics)
            .collect();
        let col = |f: &dyn Fn(&crate::extraction::CellMetrics) -> f64| {
            summarize(&ms.iter().map(f).collect::<Vec<_>>())
        };
        for (exp, ssim, psnr, fid) in [
            (
                Experiment::B,
                col(&|m| m.proxy_ssim),
                col(&|m| m.psnr_vs_victim),
                col(&|m| m.fid_vs_victim),
            ),
            (
                Experiment::C,
                col(&|m| m.ssim_vs_truth),
                col(&|m| m.psnr_vs_truth),
                col(&|m| m.fid_vs_truth),
            ),
        ] {
            rows.push(TableRow {
                task: key.0.clone(),
                test_set: key.1.clone(),
                experiment: exp,
                fraction: Some(top),
                n_runs: ms.len(),
                ssim,
                psnr,
                fid,
            });
        }
    }
    rows
}

/// Budget curves, one series per task and augmentation set.
pub fn curve_series(records: &[ResultRecord]) -> Vec<CurveSeries> {
    let mut by_task: BTreeMap<String, SweepReport> = BTreeMap::new();
    for r in records {
        if let ResultRecord::Cell { task, cell, .. } = r {
            by_task.entry(task.clone()).or_default().cells.push(cell.clone());
        }
    }
    let mut out = Vec::new();
    for (task, report) in by_task {
        let augs: BTreeSet<BTreeSet<Augmentation>> =
            report.cells.iter().map(|c| c.key.augmentations.clone()).collect();
        for a in augs {
            let points = report.curve(&a);
            if !points.is_empty() {
                out.push(CurveSeries {
                    task: task.clone(),
                    augmentations: a,
                    points,
                });
            }
        }
    }
    out
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const TABLE_COLUMNS: [&str; 12] = [
    "task",
    "test_set",
    "experiment",
    "comparison",
    "fraction",
    "n_runs",
    "ssim_mean",
    "ssim_std",
    "psnr_mean",
    "psnr_std",
    "fid_mean",
    "fid_std",
];

pub const CURVE_COLUMNS: [&str; 7] = ["task", "augmentations", "fraction", "n_runs", "mean", "std", "median"];

fn table_record(r: &TableRow) -> Vec<String> {
    vec![
        r.task.clone(),
        r.test_set.clone(),
        format!("{:?}", r.experiment),
        r.experiment.label().to_string(),
        opt(r.fraction),
        r.n_runs.to_string(),
        num(r.ssim.mean),
        opt(r.ssim.std),
        num(r.psnr.mean),
        opt(r.psnr.std),
        num(r.fid.mean),
        opt(r.fid.std),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| Error::Malformed(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pm(s: &Summary) -> String {
    match s.std {
        Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
        None if s.mean.is_nan() => "-".to_string(),
        None => format!("{:.4}", s.mean),
    }
}

fn markdown(rows: &[TableRow]) -> String {
    let mut s = String::from("| Task | Test set | Experiment | Fraction | Runs | SSIM | PSNR (dB) | FID |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.task,
            r.test_set,
            r.experiment.label(),
            r.fraction.map(|f| format!("{f:.2}")).unwrap_or_else(|| "-".into()),
            r.n_runs,
            pm(&r.ssim),
            pm(&r.psnr),
            pm(&r.fid),
        ));
    }
    s
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub table_csv: PathBuf,
    pub table_md: PathBuf,
    pub curve_csv: PathBuf,
    pub curve_png: PathBuf,
    pub reference_csv: PathBuf,
}

/// Writes tables, budget curves and the full-scale reference values into `out_dir`.
/// Output depends only on the records, so reruns are byte-identical.
pub fn emit_report(records: &[ResultRecord], out_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::InsufficientData("results store is empty".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        table_csv: dir.join("table.csv"),
        table_md: dir.join("table.md"),
        curve_csv: dir.join("curve.csv"),
        curve_png: dir.join("curve.png"),
        reference_csv: dir.join("reference.csv"),
    };
    let rows = table_rows(records);
    write_csv(&files.table_csv, &TABLE_COLUMNS, rows.iter().map(table_record))?;
    std::fs::write(&files.table_md, markdown(&rows)).map_err(|e| Error::io(&files.table_md, e))?;

    let series = curve_series(records);
    let curve_rows = series.iter().flat_map(|s| {
        s.points.iter().map(move |p| {
            vec![
                s.task.clone(),
                augmentation_label(&s.augmentations),
                num(p.fraction),
                p.n_runs.to_string(),
                num(p.mean),
                opt(p.std),
                num(p.median),
            ]
        })
    });
    write_csv(&files.curve_csv, &CURVE_COLUMNS, curve_rows)?;
    render_curves(&series, &files.curve_png)?;

    write_csv(
        &files.reference_csv,
        &["task", "test_set", "experiment", "metric", "mean", "std"],
        REFERENCE.iter().map(|r| {
            vec![
                r.task.to_string(),
                r.test_set.to_string(),
                format!("{:?}", r.experiment),
                r.metric.to_string(),
                format!("{:.2}", r.mean),
                format!("{:.2}", r.std),
            ]
        }),
    )?;
    Ok(files)
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

struct Canvas {
    img: ::image::RgbImage,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, ::image::Rgb(c));
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for i in 0..=n {
            let x = x0 + (x1 - x0) * i / n;
            let y = y0 + (y1 - y0) * i / n;
            self.put(x, y, c);
        }
    }

    fn dot(&mut self, (x, y): (i64, i64), c: [u8; 3]) {
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.put(x + dx, y + dy, c);
            }
        }
    }
}

/// Median proxy metric against budget fraction, with mean ± std bars.
fn render_curves(series: &[CurveSeries], path: &Path) -> Result<()> {
    const W: u32 = 480;
    const H: u32 = 320;
    const M: i64 = 36;
    let mut canvas = Canvas {
        img: ::image::RgbImage::from_pixel(W, H, ::image::Rgb([255, 255, 255])),
    };
    let values: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .flat_map(|p| {
            let sd = p.std.unwrap_or(0.0);
            [p.median, p.mean - sd, p.mean + sd]
        })
        .filter(|v| v.is_finite())
        .collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |f: f64| M + ((W as i64 - 2 * M) as f64 * f.clamp(0.0, 1.0)).round() as i64;
    let py = |v: f64| (H as i64 - M) - ((H as i64 - 2 * M) as f64 * (v - lo) / (hi - lo)).round() as i64;
    let grid = [225, 225, 225];
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        canvas.line((px(f), M), (px(f), H as i64 - M), grid);
        let y = py(lo + (hi - lo) * f);
        canvas.line((M, y), (W as i64 - M, y), grid);
    }
    let axis = [0, 0, 0];
    canvas.line((M, H as i64 - M), (W as i64 - M, H as i64 - M), axis);
    canvas.line((M, M), (M, H as i64 - M), axis);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s.points.iter().map(|p| (px(p.fraction), py(p.median))).collect();
        for w in pts.windows(2) {
            canvas.line(w[0], w[1], c);
        }
        for (p, &xy) in s.points.iter().zip(&pts) {
            if let Some(sd) = p.std {
                canvas.line((xy.0, py(p.mean - sd)), (xy.0, py(p.mean + sd)), c);
            }
            canvas.dot(xy, c);
        }
    }
    canvas
        .img
        .save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

/// One full-scale published value, kept for side-by-side comparison with toy runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub task: &'static str,
    pub test_set: &'static str,
    pub experiment: Experiment,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
}

const fn reference(
    task: &'static str,
    test_set: &'static str,
    experiment: Experiment,
    metric: &'static str,
    mean: f64,
    std: f64,
) -> ReferenceRow {
    ReferenceRow {
        task,
        test_set,
        experiment,
        metric,
        mean,
        std,
    }
}

pub const REFERENCE: [ReferenceRow; 24] = [
    reference("monet", "Monet2Photo Test", Experiment::A, "fid", 58.05, 0.74),
    reference("monet", "Landscape", Experiment::A, "fid", 49.59, 0.82),
    reference("monet", "Monet2Photo Test", Experiment::B, "fid", 42.86, 1.01),
    reference("monet", "Landscape", Experiment::B, "fid", 15.38, 0.54),
    reference("monet", "Monet2Photo Test", Experiment::C, "fid", 61.62, 1.05),
    reference("monet", "Landscape", Experiment::C, "fid", 53.99, 1.21),
    reference("anime", "Selfie2Anime", Experiment::A, "fid", 69.02, 1.91),
    reference("anime", "LFW Test", Experiment::A, "fid", 56.06, 2.47),
    reference("anime", "Selfie2Anime", Experiment::B, "fid", 106.63, 5.53),
    reference("anime", "LFW Test", Experiment::B, "fid", 19.67, 0.69),
    reference("anime", "Selfie2Anime", Experiment::C, "fid", 108.68, 3.19),
    reference("anime", "LFW Test", Experiment::C, "fid", 69.42, 2.04),
    reference("superres", "DIV2K Test", Experiment::A, "ssim", 0.74, 0.05),
    reference("superres", "SRBenchmark", Experiment::A, "ssim", 0.69, 0.12),
    reference("superres", "DIV2K Test", Experiment::B, "ssim", 0.75, 0.08),
    reference("superres", "SRBenchmark", Experiment::B, "ssim", 0.76, 0.09),
    reference("superres", "DIV2K Test", Experiment::C, "ssim", 0.80, 0.10),
    reference("superres", "SRBenchmark", Experiment::C, "ssim", 0.61, 0.06),
    reference("superres", "DIV2K Test", Experiment::A, "psnr", 24.67, 1.81),
    reference("superres", "SRBenchmark", Experiment::A, "psnr", 22.59, 4.51),
    reference("superres", "DIV2K Test", Experiment::B, "psnr", 24.74, 5.04),
    reference("superres", "SRBenchmark", Experiment::B, "psnr", 20.64, 3.33),
    reference("superres", "DIV2K Test", Experiment::C, "psnr", 23.24, 3.77),
    reference("superres", "SRBenchmark", Experiment::C, "psnr", 18.13, 3.61),
];
