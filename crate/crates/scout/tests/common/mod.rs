#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use scout::checkpoint;
use scout::dataset_dir::write_dataset;
use scout::explain::Engine;
use scout_core::dataset::Split;
use scout_core::micronet::{train, Architecture, ModelBundle, TrainConfig};
use scout_core::synthgen::{generate_dataset, DatasetConfig, GeneratedDataset};

pub struct Fixture {
    pub root: PathBuf,
    pub data_dir: PathBuf,
    pub model_path: PathBuf,
    pub weak_path: PathBuf,
    pub data: GeneratedDataset,
    pub model: ModelBundle,
    pub weak: ModelBundle,
}

impl Fixture {
    pub fn engine(&self, seed: u64) -> Engine {
        Engine {
            model: self.model.clone(),
            data: self.data.clone(),
            seed,
        }
    }
}

fn build(name: &str) -> Fixture {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("fixture-{name}"));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let data = generate_dataset(&DatasetConfig::planted(40), 3).unwrap();
    let set = data.labeled(Split::Train).unwrap();
    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let model = train(&set, &Architecture::standard(4), &config, 1).unwrap();
    let weak_config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let weak = train(&set, &Architecture::weak(4), &weak_config, 2).unwrap();
    let data_dir = root.join("data");
    write_dataset(&data_dir, &data).unwrap();
    let model_path = root.join("model.ckpt");
    let weak_path = root.join("weak.ckpt");
    checkpoint::save(&model, &model_path).unwrap();
    checkpoint::save(&weak, &weak_path).unwrap();
    Fixture {
        root,
        data_dir,
        model_path,
        weak_path,
        data,
        model,
        weak,
    }
}

/// Small dataset plus trained models, built once per test binary.
pub fn fixture(name: &'static str) -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| build(name))
}

pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn scout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scout"))
        .args(args)
        .env_remove("SCOUT_PORT")
        .output()
        .unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}
