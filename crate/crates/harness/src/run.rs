//! Executing sweep points and persisting their artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! out/
//!   records.jsonl            one RunRecord per completed run, append-only
//!   summary.csv              metrics of every record in records.jsonl
//!   scatter.svg              ACC against ASR per defense mode
//!   <hash16>-s<seed>/
//!     spec.toml              the resolved sweep point
//!     metrics.csv            final metrics, one row
//!     epochs.csv             per-epoch training trace
//!     report.json            record plus per-epoch trace
//!     losses.svg             loss box plots (when loss tracking is on)
//!     checkpoint.json        latest training checkpoint (removed on completion)
//!     record.json            written last; its presence marks the run complete
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use pgrl_core::metrics::MetricsReport;
use pgrl_core::train::{train_with_observer, Checkpoint, EpochRecord, Mode, TrainInputs, TrainReport};
use serde::{Deserialize, Serialize};

use crate::plot;
use crate::spec::{ExperimentSpec, RunSpec};

pub const RECORDS_FILE: &str = "records.jsonl";
const RECORD_FILE: &str = "record.json";
const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Short description of the training run that produced a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub estimations: usize,
    pub flagged: Option<usize>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub seed: u64,
    pub point: RunSpec,
    pub metrics: MetricsReport,
    pub summary: TrainSummary,
    pub started_unix: f64,
    pub finished_unix: f64,
}

impl RunRecord {
    pub fn dir_name(&self) -> String {
        format!("{}-s{}", &self.spec_hash[..16], self.seed)
    }
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Trains one sweep point from scratch (or from `resume`) and returns the report.
pub fn execute(
    point: &RunSpec,
    seed: u64,
    resume: Option<Checkpoint>,
    observer: &mut dyn FnMut(&Checkpoint) -> pgrl_core::Result<()>,
) -> pgrl_core::Result<TrainReport> {
    let splits = point.splits(seed)?;
    let poisoned = point.poison(&splits.train, seed)?;
    let cfg = pgrl_core::train::TrainConfig { seed, ..point.train.clone() };
    train_with_observer(&cfg, TrainInputs { train: &poisoned, val: &splits.val, test: &splits.test }, resume, observer)
}

pub fn metrics_of(report: &TrainReport) -> MetricsReport {
    MetricsReport {
        acc: report.acc,
        asr: report.asr,
        detection: report.detection,
        auc10: report.auc10,
        loss_groups: report.loss_groups.clone(),
    }
}

fn summary_of(report: &TrainReport) -> TrainSummary {
    TrainSummary {
        mode: report.mode,
        epochs: report.epochs.len(),
        final_loss: report.final_epoch().map(|e| e.loss),
        estimations: report.epochs.iter().filter(|e| e.estimation.is_some()).count(),
        flagged: report.suspects.as_ref().map(|s| s.iter().filter(|&&b| b).count()),
        wall_time_secs: report.wall_time_secs,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub const METRICS_HEADER: &str =
    "spec_hash,seed,mode,attack,alpha,keep_fraction,val_per_class,n_aug,use_ot,acc,asr,tpr,fpr,tpr_cover_excluded,fpr_cover_excluded,auc10";

pub fn metrics_row(r: &RunRecord) -> String {
    let d = r.metrics.detection;
    let p = &r.point;
    [
        r.spec_hash[..16].to_string(),
        r.seed.to_string(),
        p.train.mode.as_str().to_string(),
        p.attack.kind.as_str().to_string(),
        p.attack.alpha.to_string(),
        p.train.keep_fraction.to_string(),
        p.data.val_per_class.to_string(),
        p.train.n_aug.to_string(),
        p.train.use_ot.to_string(),
        r.metrics.acc.to_string(),
        r.metrics.asr.to_string(),
        fmt_opt(d.and_then(|d| d.cover_as_poisoned.tpr)),
        fmt_opt(d.and_then(|d| d.cover_as_poisoned.fpr)),
        fmt_opt(d.and_then(|d| d.cover_excluded.tpr)),
        fmt_opt(d.and_then(|d| d.cover_excluded.fpr)),
        fmt_opt(r.metrics.auc10),
    ]
    .join(",")
}

fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,phase,lr,loss,steps,skipped_steps,trusted_fraction,acc,asr,tau,flagged\n");
    for e in epochs {
        let phase = match e.phase {
            pgrl_core::train::Phase::Warmup => "warmup",
            pgrl_core::train::Phase::Train => "train",
        };
        let (tau, flagged) = e
            .estimation
            .as_ref()
            .map(|x| (x.tau.to_string(), x.flagged.to_string()))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{phase},{},{},{},{},{},{},{},{tau},{flagged}\n",
            e.epoch, e.lr, e.loss, e.steps, e.skipped_steps, e.trusted_fraction, e.acc, e.asr
        ));
    }
    s
}

/// Writes via a temporary file and a rename, so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Loads the record of a completed run, if any.
pub fn completed_record(run_dir: &Path) -> Result<Option<RunRecord>> {
    let path = run_dir.join(RECORD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

fn load_checkpoint(run_dir: &Path) -> Result<Option<Checkpoint>> {
    let path = run_dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

/// Result of asking for one run: either freshly computed or found on disk.
#[derive(Debug, Clone)]
pub enum Outcome {
    Computed(RunRecord),
    Skipped(RunRecord),
}

impl Outcome {
    pub fn record(&self) -> &RunRecord {
        match self {
            Outcome::Computed(r) | Outcome::Skipped(r) => r,
        }
    }
}

/// Runs one point into `out`, skipping it when its record already exists and continuing from a
/// checkpoint when one was left behind.
pub fn run_point(point: &RunSpec, seed: u64, out: &Path) -> Result<Outcome> {
    let dir = out.join(point.dir_name(seed));
    if let Some(r) = completed_record(&dir)? {
        log::info!("skipping {} (already complete)", dir.display());
        return Ok(Outcome::Skipped(r));
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("spec.toml"), point.to_toml().as_bytes())?;
    let resume = load_checkpoint(&dir)?;
    if let Some(c) = &resume {
        log::info!("resuming {} from epoch {}", dir.display(), c.epoch);
    }
    let started = now_unix();
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let mut observer = |c: &Checkpoint| -> pgrl_core::Result<()> {
        let text = serde_json::to_vec(c)?;
        let tmp = ckpt_path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &ckpt_path)?;
        Ok(())
    };
    let report = execute(point, seed, resume, &mut observer)?;
    let record = RunRecord {
        spec_hash: point.hash(),
        seed,
        point: point.clone(),
        metrics: metrics_of(&report),
        summary: summary_of(&report),
        started_unix: started,
        finished_unix: now_unix(),
    };

    write_atomic(&dir.join("metrics.csv"), format!("{METRICS_HEADER}\n{}\n", metrics_row(&record)).as_bytes())?;
    write_atomic(&dir.join("epochs.csv"), epochs_csv(&report.epochs).as_bytes())?;
    let full = serde_json::json!({ "record": &record, "epochs": &report.epochs });
    write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&full)?.as_bytes())?;
    if let Some(svg) = plot::loss_boxplot(&record.metrics.loss_groups) {
        write_atomic(&dir.join("losses.svg"), svg.as_bytes())?;
    }
    write_atomic(&dir.join(RECORD_FILE), serde_json::to_string_pretty(&record)?.as_bytes())?;
    if ckpt_path.exists() {
        fs::remove_file(&ckpt_path)?;
    }
    append_record(out, &record)?;
    Ok(Outcome::Computed(record))
}

fn append_record(out: &Path, record: &RunRecord) -> Result<()> {
    let path = out.join(RECORDS_FILE);
    let mut f = OpenOptions::new().create(true).append(true).open(&path).with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Reads every record from `records.jsonl`; the last entry wins for a repeated run.
pub fn read_records(out: &Path) -> Result<Vec<RunRecord>> {
    let path = out.join(RECORDS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)?;
    let mut records: Vec<RunRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: RunRecord = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        match records.iter_mut().find(|x| x.spec_hash == r.spec_hash && x.seed == r.seed) {
            Some(slot) => *slot = r,
            None => records.push(r),
        }
    }
    Ok(records)
}

/// What a sweep did.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub out: PathBuf,
    pub computed: usize,
    pub skipped: usize,
    pub records: Vec<RunRecord>,
}

/// Runs every (sweep point × seed) of `spec` sequentially into `out`, then writes the summary
/// table and the scatter plot.
pub fn run_sweep(spec: &ExperimentSpec, out: &Path) -> Result<SweepSummary> {
    spec.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let points = spec.points();
    let total = points.len() * spec.seeds.len();
    let (mut computed, mut skipped) = (0, 0);
    let mut records = Vec::with_capacity(total);
    for (i, point) in points.iter().enumerate() {
        for &seed in &spec.seeds {
            log::info!("run {}/{total}: mode {} seed {seed}", records.len() + 1, point.train.mode.as_str());
            let outcome = run_point(point, seed, out).with_context(|| format!("sweep point {i}, seed {seed}"))?;
            match outcome {
                Outcome::Computed(_) => computed += 1,
                Outcome::Skipped(_) => skipped += 1,
            }
            records.push(outcome.record().clone());
        }
    }
    write_summary(out, &records)?;
    Ok(SweepSummary { out: out.to_path_buf(), computed, skipped, records })
}

/// `summary.csv` and `scatter.svg` for a set of records.
pub fn write_summary(out: &Path, records: &[RunRecord]) -> Result<()> {
    let mut csv = format!("{METRICS_HEADER}\n");
    for r in records {
        csv.push_str(&metrics_row(r));
        csv.push('\n');
    }
    write_atomic(&out.join("summary.csv"), csv.as_bytes())?;
    if let Some(svg) = plot::acc_asr_scatter(records) {
        write_atomic(&out.join("scatter.svg"), svg.as_bytes())?;
    }
    Ok(())
}
