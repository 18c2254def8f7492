use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Owner of one command's output directory. Refuses to replace existing
/// files unless `force` is set.
pub struct Outputs {
    pub dir: PathBuf,
    pub force: bool,
    pub config_hash: String,
    pub command: String,
    seeds: Value,
    written: Vec<PathBuf>,
}

pub fn commit_id() -> Option<&'static str> {
    option_env!("OPTIMUX_COMMIT")
}

impl Outputs {
    pub fn new(cfg: &ExperimentConfig, command: &str, force: bool) -> Result<Self> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self {
            dir,
            force,
            config_hash: cfg.hash(),
            command: command.to_string(),
            seeds: json!({
                "seed": cfg.seed,
                "train": cfg.train.seed,
                "train_data": cfg.data.train.seed,
                "test_data": cfg.data.test.seed,
                "finetune_data": cfg.data.finetune.seed,
                "model_init": cfg.model_seed(),
                "attack": cfg.harness.attack.seed,
                "baseline": cfg.harness.baseline.seed,
                "noise": cfg.noise_seed(),
                "eval_sampling": cfg.eval.sampling_seeds,
            }),
            written: Vec::new(),
        })
    }

    /// Claims `name` inside the output directory.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if p.exists() && !self.force {
            return Err(CliError::Exists { path: p });
        }
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        self.written.push(p.clone());
        Ok(p)
    }

    /// Writes `value` wrapped with the config hash and command name.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(name)?;
        let doc = json!({
            "config_hash": self.config_hash,
            "command": self.command,
            "data": value,
        });
        write_json(&p, &doc)?;
        Ok(p)
    }

    /// RFC-4180 table plus `<name>.meta.json` with the hash, seeds and columns.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let p = self.path(name)?;
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(CliError::io(&p))?;
        let meta = self.path(&format!("{name}.meta.json"))?;
        write_json(
            &meta,
            &json!({
                "config_hash": self.config_hash,
                "command": self.command,
                "seeds": self.seeds,
                "commit": commit_id(),
                "columns": header,
                "rows": rows.len(),
            }),
        )?;
        Ok(p)
    }

    /// Reproducibility record listing every file this command wrote.
    pub fn finish(mut self, cfg: &ExperimentConfig, threads: usize) -> Result<PathBuf> {
        let p = self.path(&format!("run_{}.json", self.command))?;
        let files: Vec<String> = self
            .written
            .iter()
            .map(|f| f.strip_prefix(&self.dir).unwrap_or(f).display().to_string())
            .collect();
        write_json(
            &p,
            &json!({
                "command": self.command,
                "config_hash": self.config_hash,
                "seeds": self.seeds,
                "versions": {
                    "optimux": optimux::VERSION,
                    "optimux-cli": env!("CARGO_PKG_VERSION"),
                },
                "commit": commit_id(),
                "threads": threads,
                "outputs": files,
                "config": cfg,
            }),
        )?;
        Ok(p)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
