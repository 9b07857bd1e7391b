//! Dataset directories: one `GPRV` file per volume plus `manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxinv_core::eval::SceneGroup;
use voxinv_core::forge::dataset::{generate_sample, ForgeConfig, Sample};
use voxinv_core::forge::preprocess::NormFrame;
use voxinv_core::forge::scene::Scene;
use voxinv_core::train::Pair;
use voxinv_core::Tensor;

use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::io::{read, write_atomic};
use crate::volume::{read_volume, write_volume, Volume};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub index: u64,
    pub seed: u64,
    pub split: Split,
    pub group: SceneGroup,
    pub scene: Scene,
    pub frame: NormFrame,
    /// Paths relative to the manifest directory.
    pub noisy: String,
    pub clean: String,
    pub permittivity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub fingerprint: String,
    pub forge: ForgeConfig,
    pub background_epsilon_r: f64,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let m: Manifest = serde_json::from_slice(&read(&path)?).map_err(|e| Error::Json {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Volumes of one record, read back as f64.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub record: Record,
    pub noisy: Tensor<f64>,
    pub clean: Tensor<f64>,
    pub permittivity: Tensor<f64>,
}

pub fn load_record(dir: &Path, r: &Record) -> Result<LoadedSample> {
    let load = |rel: &str| -> Result<Tensor<f64>> { Ok(read_volume(&dir.join(rel))?.to_f64()) };
    let s = LoadedSample {
        record: r.clone(),
        noisy: load(&r.noisy)?,
        clean: load(&r.clean)?,
        permittivity: load(&r.permittivity)?,
    };
    if s.noisy.shape() != s.clean.shape() || s.noisy.shape() != s.permittivity.shape() {
        return Err(Error::Manifest(format!("record {} has volumes of different shapes", r.id)));
    }
    Ok(s)
}

pub fn load_split(manifest: &Manifest, dir: &Path, split: Split) -> Result<Vec<LoadedSample>> {
    manifest.split(split).map(|r| load_record(dir, r)).collect()
}

/// Which volumes form the input and target of a training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Noisy → clean C-scan.
    Denoise,
    /// Clean C-scan → permittivity.
    Invert,
}

pub fn to_pairs(samples: &[LoadedSample], task: Task) -> Vec<Pair<f32>> {
    samples
        .iter()
        .map(|s| match task {
            Task::Denoise => Pair { input: s.noisy.cast(), target: s.clean.cast() },
            Task::Invert => Pair { input: s.clean.cast(), target: s.permittivity.cast() },
        })
        .collect()
}

fn split_of(cfg: &RunConfig, index: u64) -> Split {
    let (a, b) = (cfg.dataset.train as u64, (cfg.dataset.train + cfg.dataset.val) as u64);
    if index < a {
        Split::Train
    } else if index < b {
        Split::Val
    } else {
        Split::Test
    }
}

fn write_sample(out: &Path, s: &Sample, split: Split) -> Result<Record> {
    let id = format!("{:05}", s.index);
    let names = ["noisy", "clean", "permittivity"].map(|k| format!("volumes/{id}_{k}.gprv"));
    for (name, t) in names.iter().zip([&s.noisy, &s.clean, &s.permittivity]) {
        write_volume(&out.join(name), &Volume::F32(t.cast()))?;
    }
    let [noisy, clean, permittivity] = names;
    Ok(Record {
        id,
        index: s.index,
        seed: s.seed,
        split,
        group: s.group,
        scene: s.scene.clone(),
        frame: s.frame,
        noisy,
        clean,
        permittivity,
    })
}

/// Generates every scene of `cfg.dataset` under `out`, writing the
/// manifest last. Scenes are produced in parallel chunks; each depends
/// only on `(seed, index)`.
pub fn generate_dataset(cfg: &RunConfig, seed: u64, out: &Path, progress: &mut dyn FnMut(usize, usize)) -> Result<Manifest> {
    use rayon::prelude::*;
    cfg.validate()?;
    let forge = cfg.forge();
    let total = cfg.dataset.train + cfg.dataset.val + cfg.dataset.test;
    std::fs::create_dir_all(out.join("volumes")).map_err(io_err(out))?;
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut records = Vec::with_capacity(total);
    for start in (0..total).step_by(chunk) {
        let end = (start + chunk).min(total);
        let batch: Vec<Result<Record>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let s = generate_sample(&forge, seed, i as u64)?;
                write_sample(out, &s, split_of(cfg, i as u64))
            })
            .collect();
        for r in batch {
            records.push(r?);
        }
        progress(end, total);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        master_seed: seed,
        fingerprint: cfg.dataset_fingerprint(seed),
        forge,
        background_epsilon_r: cfg.background(),
        records,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        context: "manifest".into(),
        message: e.to_string(),
    })?;
    write_atomic(&out.join(MANIFEST_NAME), &json)?;
    Ok(manifest)
}
