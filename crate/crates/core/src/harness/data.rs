//! Trace generation and the on-disk dataset layout.
//!
//! A dataset directory holds `train/` and `eval/` trace files plus
//! `manifest.csv` (split, index, file, seed, speed, config hash) and the
//! canonical `config.txt` it was generated from.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::info;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mobility::{channel_trace, gen_trajectory, load_trace, save_trace, ChannelTrace};
use crate::seeded_rng;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// One generated trace and where it came from.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub id: String,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub speed_mps: f64,
    pub trace: ChannelTrace,
}

/// Seed of trace `index` in `split`: train traces take `master + i`, eval
/// traces follow on from the last train seed.
pub fn trace_seed(cfg: &ExperimentConfig, split: Split, index: usize) -> u64 {
    let offset = match split {
        Split::Train => index,
        Split::Eval => cfg.train_traces + index,
    };
    cfg.seed.wrapping_add(offset as u64)
}

/// Synthesizes one trace at `speed_mps`. The same seed at two speeds gives
/// the same start point, heading and turn schedule.
pub fn synth_trace(cfg: &ExperimentConfig, split: Split, index: usize, speed_mps: f64) -> Result<TraceRecord> {
    let seed = trace_seed(cfg, split, index);
    let mut rng = seeded_rng(seed);
    let mobility = crate::mobility::MobilityConfig {
        speed_mps,
        ..cfg.mobility.clone()
    };
    let traj = gen_trajectory(&mobility, &mut rng)?;
    let trace = channel_trace(&traj, &cfg.scene, &cfg.array, &mut rng)?;
    Ok(TraceRecord {
        id: format!("{}-{index:04}", split.name()),
        split,
        index,
        seed,
        speed_mps,
        trace,
    })
}

pub fn synth_split(cfg: &ExperimentConfig, split: Split, speed_mps: f64) -> Result<Vec<TraceRecord>> {
    let count = match split {
        Split::Train => cfg.train_traces,
        Split::Eval => cfg.eval_traces,
    };
    (0..count).map(|i| synth_trace(cfg, split, i, speed_mps)).collect()
}

fn trace_file(split: Split, index: usize) -> PathBuf {
    Path::new(split.name()).join(format!("trace_{index:04}.btrc"))
}

/// Writes `train/` and `eval/` traces, the manifest and the config.
pub fn write_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.train_traces + cfg.eval_traces);
    for split in [Split::Train, Split::Eval] {
        fs::create_dir_all(out.join(split.name()))?;
        records.extend(synth_split(cfg, split, cfg.mobility.speed_mps)?);
    }
    let hash = cfg.hash();
    let mut manifest = csv::Writer::from_path(out.join(MANIFEST_FILE)).map_err(csv_error)?;
    manifest
        .write_record(["split", "index", "file", "seed", "speed_mps", "config_hash"])
        .map_err(csv_error)?;
    for r in &records {
        let file = trace_file(r.split, r.index);
        save_trace(&r.trace, File::create(out.join(&file))?)?;
        manifest
            .write_record([
                r.split.name().to_string(),
                r.index.to_string(),
                file.to_string_lossy().replace('\\', "/"),
                r.seed.to_string(),
                r.speed_mps.to_string(),
                hash.clone(),
            ])
            .map_err(csv_error)?;
    }
    manifest.flush()?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    info!("wrote {} traces to {}", records.len(), out.display());
    Ok(records)
}

/// Loads one split of a dataset written by [`write_dataset`], in manifest order.
pub fn read_split(dir: &Path, split: Split) -> Result<Vec<TraceRecord>> {
    let path = dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(csv_error)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        if row.len() != 6 {
            return Err(Error::Parse(format!("{}: expected 6 columns", path.display())));
        }
        if row[0] != *split.name() {
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad number {:?}", path.display(), &row[i])))
        };
        let index = num(1)? as usize;
        let seed: u64 = row[3]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad seed {:?}", path.display(), &row[3])))?;
        let trace = load_trace(BufReader::new(File::open(dir.join(&row[2]))?))?;
        records.push(TraceRecord {
            id: format!("{}-{index:04}", split.name()),
            split,
            index,
            seed,
            speed_mps: num(4)?,
            trace,
        });
    }
    if records.is_empty() {
        return Err(Error::Parse(format!("{}: no {} traces listed", path.display(), split.name())));
    }
    Ok(records)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse(msg),
    }
}
