use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    generate_dataset, io_err, read_file, write_file, Checkpoint, HarnessError, ResolvedRun,
    SplitDataset,
};
use crate::bilevel::{BilevelTrainer, EpochMetrics};
use crate::magnitude_stop::{
    magnitude, selective_stop, CheckpointSource, MagnitudeTrace, OnlineStopper, StopCriterion,
    StopError,
};
use crate::search_space::{discretize, ArchParams, Genotype};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "lr_w",
    "lr_a",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
];

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn magnitudes(&self) -> PathBuf {
        self.root.join("magnitudes.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn early_stop(&self) -> PathBuf {
        self.root.join("early_stop.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch_{epoch}.json"))
    }

    pub fn genotype(&self, c: &StopCriterion) -> PathBuf {
        self.root.join(format!("genotype_{}.json", c.label()))
    }

    pub fn derive_summary(&self) -> PathBuf {
        self.root.join("derive_summary.csv")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub seed: u64,
    pub run: ResolvedRun,
}

impl Manifest {
    pub fn load(paths: &RunPaths) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&read_file(&paths.manifest())?)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub early_stop: Option<StopCriterion>,
    pub patience: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            early_stop: None,
            patience: crate::magnitude_stop::DEFAULT_PATIENCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopRecord {
    pub criterion: String,
    pub stopped_at: usize,
    pub selected_epoch: usize,
    pub genotype: Genotype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub trace: MagnitudeTrace,
    pub final_arch: ArchParams,
    pub early_stop: Option<EarlyStopRecord>,
}

fn fmt_metrics(m: &EpochMetrics) -> [String; 7] {
    [
        m.epoch.to_string(),
        m.lr_w.to_string(),
        m.lr_a.to_string(),
        m.train_loss.to_string(),
        m.train_acc.to_string(),
        m.val_loss.to_string(),
        m.val_acc.to_string(),
    ]
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec[i]
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad metrics value {:?}", &rec[i])))
        };
        out.push(EpochMetrics {
            epoch: rec[0]
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad epoch {:?}", &rec[0])))?,
            lr_w: f(1)?,
            lr_a: f(2)?,
            train_loss: f(3)?,
            train_acc: f(4)?,
            val_loss: f(5)?,
            val_acc: f(6)?,
        });
    }
    Ok(out)
}

pub fn read_trace(paths: &RunPaths) -> Result<MagnitudeTrace, HarnessError> {
    let path = paths.magnitudes();
    Ok(MagnitudeTrace::read_csv(
        File::open(&path).map_err(io_err(&path))?,
    )?)
}

/// Appends one row per epoch and flushes, so a crashed run keeps its log.
struct Logs {
    metrics: csv::Writer<BufWriter<File>>,
    magnitudes: csv::Writer<BufWriter<File>>,
}

impl Logs {
    fn create(
        paths: &RunPaths,
        op_names: &[String],
        keep: &[EpochMetrics],
        trace: &MagnitudeTrace,
    ) -> Result<Self, HarnessError> {
        let open = |p: PathBuf| -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
            Ok(csv::Writer::from_writer(BufWriter::new(
                File::create(&p).map_err(io_err(&p))?,
            )))
        };
        let mut logs = Self {
            metrics: open(paths.metrics())?,
            magnitudes: open(paths.magnitudes())?,
        };
        logs.metrics.write_record(METRICS_HEADER)?;
        logs.magnitudes
            .write_record(std::iter::once("epoch").chain(op_names.iter().map(String::as_str)))?;
        for (m, row) in keep.iter().zip(trace.rows()) {
            logs.append(m, row)?;
        }
        Ok(logs)
    }

    fn append(&mut self, m: &EpochMetrics, magnitudes: &[f64]) -> Result<(), HarnessError> {
        self.metrics.write_record(fmt_metrics(m))?;
        self.magnitudes.write_record(
            std::iter::once(m.epoch.to_string()).chain(magnitudes.iter().map(|v| v.to_string())),
        )?;
        self.metrics.flush().map_err(io_err("metrics.csv"))?;
        self.magnitudes.flush().map_err(io_err("magnitudes.csv"))?;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn drive(
    run: &ResolvedRun,
    paths: &RunPaths,
    data: &SplitDataset,
    mut trainer: BilevelTrainer,
    mut metrics: Vec<EpochMetrics>,
    mut trace: MagnitudeTrace,
    opts: &SearchOptions,
) -> Result<SearchOutcome, HarnessError> {
    let mut logs = Logs::create(paths, trace.op_names(), &metrics, &trace)?;
    let mut stopper = match &opts.early_stop {
        Some(c) => Some(OnlineStopper::new(
            c.clone(),
            run.supernet.op_set.clone(),
            opts.patience,
        )?),
        None => None,
    };
    let mut early_stop = None;
    while !trainer.is_finished() {
        let epoch = trainer.epoch() + 1;
        let m = trainer.run_epoch(&data.train, &data.val)?;
        let arch = &trainer.state().arch;
        let mag = magnitude(arch);
        logs.append(&m, &mag)?;
        trace.push(mag)?;
        metrics.push(m);

        let fired = match stopper.as_mut() {
            Some(s) => s.observe(epoch, arch)?,
            None => None,
        };
        let last = trainer.is_finished() || fired.is_some();
        if epoch.is_multiple_of(run.checkpoint_every) || last {
            Checkpoint::capture(trainer.state()).save(&paths.checkpoint(epoch))?;
        }
        if let Some((selected_epoch, arch)) = fired {
            let record = EarlyStopRecord {
                criterion: opts
                    .early_stop
                    .as_ref()
                    .expect("stopper implies criterion")
                    .to_string(),
                stopped_at: epoch,
                selected_epoch,
                genotype: discretize(&arch).genotype(&run.supernet)?,
            };
            write_file(
                &paths.early_stop(),
                serde_json::to_string_pretty(&record)?.as_bytes(),
            )?;
            early_stop = Some(record);
            break;
        }
    }
    Ok(SearchOutcome {
        metrics,
        trace,
        final_arch: trainer.state().arch.clone(),
        early_stop,
    })
}

fn prepare_dir(paths: &RunPaths) -> Result<(), HarnessError> {
    fs::create_dir_all(paths.checkpoints()).map_err(io_err(paths.checkpoints()))
}

/// Runs a full search into `out`, replacing any earlier outputs there.
pub fn run_search(
    run: &ResolvedRun,
    out: &Path,
    opts: &SearchOptions,
) -> Result<SearchOutcome, HarnessError> {
    let paths = RunPaths::new(out);
    if paths.checkpoints().exists() {
        fs::remove_dir_all(paths.checkpoints()).map_err(io_err(paths.checkpoints()))?;
    }
    let _ = fs::remove_file(paths.early_stop());
    prepare_dir(&paths)?;
    let manifest = Manifest {
        code_version: CODE_VERSION.into(),
        seed: run.train.seed,
        run: run.clone(),
    };
    write_file(
        &paths.manifest(),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    let data = generate_dataset(&run.dataset)?;
    let trainer = BilevelTrainer::new(run.supernet.clone(), run.train.clone())?;
    let names = run
        .supernet
        .op_set
        .names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    drive(
        run,
        &paths,
        &data,
        trainer,
        Vec::new(),
        MagnitudeTrace::new(names),
        opts,
    )
}

/// Continues the run in `out` from its epoch-`from` checkpoint, discarding
/// any logged epochs after it.
pub fn resume_search(
    out: &Path,
    from: usize,
    opts: &SearchOptions,
) -> Result<SearchOutcome, HarnessError> {
    let paths = RunPaths::new(out);
    let run = Manifest::load(&paths)?.run;
    let ckpt_path = paths.checkpoint(from);
    if !ckpt_path.exists() {
        return Err(HarnessError::MissingCheckpoint { epoch: from });
    }
    let state = Checkpoint::load(&ckpt_path)?.into_state(&run.supernet)?;
    let mut metrics = read_metrics(&paths.metrics())?;
    metrics.truncate(from);
    let full = read_trace(&paths)?;
    if metrics.len() != from || full.len() < from {
        return Err(HarnessError::Config(format!(
            "run logs hold fewer than {from} epochs"
        )));
    }
    let trace = MagnitudeTrace::from_rows(full.op_names().to_vec(), full.rows()[..from].to_vec())?;
    for t in from + 1.. {
        let p = paths.checkpoint(t);
        if !p.exists() {
            break;
        }
        fs::remove_file(&p).map_err(io_err(&p))?;
    }
    let _ = fs::remove_file(paths.early_stop());

    let data = generate_dataset(&run.dataset)?;
    let trainer = BilevelTrainer::from_state(run.supernet.clone(), run.train.clone(), state)?;
    drive(&run, &paths, &data, trainer, metrics, trace, opts)
}

/// Checkpoints read lazily from a run directory.
pub struct DirCheckpoints {
    paths: RunPaths,
}

impl DirCheckpoints {
    pub fn new(paths: RunPaths) -> Self {
        Self { paths }
    }
}

impl CheckpointSource for DirCheckpoints {
    fn has_epoch(&self, epoch: usize) -> bool {
        self.paths.checkpoint(epoch).is_file()
    }

    fn load_arch(&self, epoch: usize) -> Result<ArchParams, StopError> {
        if !self.has_epoch(epoch) {
            return Err(StopError::MissingCheckpoint { epoch });
        }
        let c = Checkpoint::load(&self.paths.checkpoint(epoch))
            .map_err(|e| StopError::Checkpoint(e.to_string()))?;
        if c.epoch != epoch {
            return Err(StopError::Checkpoint(format!(
                "file for epoch {epoch} holds epoch {}",
                c.epoch
            )));
        }
        c.arch_params()
            .map_err(|e| StopError::Checkpoint(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derived {
    pub criterion: StopCriterion,
    pub epoch: usize,
    pub genotype: Genotype,
}

/// Rolls a finished run back to each criterion's epoch, from disk alone.
/// Writes one genotype file per criterion and a summary table; nothing is
/// written for an empty list.
pub fn derive(run_dir: &Path, criteria: &[StopCriterion]) -> Result<Vec<Derived>, HarnessError> {
    if criteria.is_empty() {
        return Ok(Vec::new());
    }
    let paths = RunPaths::new(run_dir);
    let spec = Manifest::load(&paths)?.run.supernet;
    let trace = read_trace(&paths)?;
    let source = DirCheckpoints::new(paths.clone());
    let selections = selective_stop(&trace, &spec.op_set, &source, criteria)?;

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["criterion", "epoch", "genotype"])?;
    let mut out = Vec::new();
    for s in selections {
        let genotype = s.architecture.genotype(&spec)?;
        write_file(
            &paths.genotype(&s.criterion),
            serde_json::to_string_pretty(&genotype)?.as_bytes(),
        )?;
        summary.write_record([
            s.criterion.to_string(),
            s.epoch.to_string(),
            genotype.to_string(),
        ])?;
        out.push(Derived {
            criterion: s.criterion,
            epoch: s.epoch,
            genotype,
        });
    }
    let bytes = summary
        .into_inner()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    write_file(&paths.derive_summary(), &bytes)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_metrics: EpochMetrics,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One run per seed under `out/seed_<s>`, plus `seeds_summary.csv` with the
/// final-epoch metrics and their mean and sample standard deviation.
pub fn run_seeds(
    run: &ResolvedRun,
    out: &Path,
    seeds: &[u64],
    opts: &SearchOptions,
) -> Result<Vec<SeedResult>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("seed list is empty".into()));
    }
    let mut results = Vec::new();
    for &seed in seeds {
        let mut r = run.clone();
        r.train.seed = seed;
        let outcome = run_search(&r, &out.join(format!("seed_{seed}")), opts)?;
        let last = outcome.metrics.last().cloned().expect("at least one epoch");
        results.push(SeedResult {
            seed,
            final_metrics: last,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "epochs",
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
    ])?;
    for r in &results {
        let m = &r.final_metrics;
        w.write_record([
            r.seed.to_string(),
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_acc.to_string(),
            m.val_loss.to_string(),
            m.val_acc.to_string(),
        ])?;
    }
    let cols: [fn(&EpochMetrics) -> f64; 4] = [
        |m| m.train_loss,
        |m| m.train_acc,
        |m| m.val_loss,
        |m| m.val_acc,
    ];
    let stats: Vec<(f64, f64)> = cols
        .iter()
        .map(|f| {
            mean_std(
                &results
                    .iter()
                    .map(|r| f(&r.final_metrics))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    for (label, pick) in [("mean", 0usize), ("std", 1)] {
        let mut row = vec![label.to_string(), String::new()];
        row.extend(
            stats
                .iter()
                .map(|s| if pick == 0 { s.0 } else { s.1 }.to_string()),
        );
        w.write_record(&row)?;
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    write_file(&out.join("seeds_summary.csv"), &bytes)?;
    Ok(results)
}
