//! Effective configuration of one invocation: config file, then flags,
//! then `--set` overrides.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use fgru_core::arch::{ArchitectureConfig, Task, Variant};
use fgru_core::config::Config;
use fgru_core::data::{Dataset, Split};
use fgru_core::train::TrainConfig;

use crate::Common;

pub const SNAPSHOT: &str = "run.cfg";

const KNOWN: &[(&str, &[&str])] = &[
    ("generate", &["data."]),
    ("train", &["data.path", "data.train_limit", "data.val_limit", "model.", "train."]),
    ("sweep", &["data.sets", "data.train_limit", "data.val_limit", "model.", "train."]),
    ("eval", &["model.checkpoint", "data.path", "data.split", "data.limit", "eval."]),
    ("trace", &["model.checkpoint", "data.path", "data.split", "trace."]),
    ("analyze", &["analyze."]),
];

pub struct RunSpec {
    pub command: &'static str,
    pub config: Config,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn build(command: &'static str, common: &Common, flags: &[(&str, Option<String>)]) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => Config::load(p)?,
            None => Config::new(),
        };
        for (k, v) in flags {
            if let Some(v) = v {
                config.set(k, v);
            }
        }
        if let Some(s) = common.seed {
            config.set("seed", s);
        }
        if let Some(w) = common.workers {
            config.set("workers", w);
        }
        for pair in &common.set {
            config.set_pair(pair)?;
        }
        let mut known = vec!["seed", "workers"];
        known.extend(KNOWN.iter().find(|(c, _)| *c == command).map(|(_, k)| *k).unwrap_or_default());
        config.check_known(&known)?;
        std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        Ok(RunSpec { command, config, out: common.out.clone() })
    }

    /// Value of `key`, recording `default` in the config when it is absent
    /// so the snapshot is complete.
    pub fn resolve<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        self.config.set_default(key, &default);
        Ok(self.config.get(key)?.expect("just set"))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match self.config.get(key)? {
            Some(v) => Ok(v),
            None => bail!("{}: missing `{key}` (flag or config key)", self.command),
        }
    }

    pub fn seed(&mut self) -> Result<u64> {
        self.resolve("seed", 0u64)
    }

    pub fn workers(&mut self) -> Result<usize> {
        Ok(self.resolve("workers", 1usize)?.max(1))
    }

    pub fn snapshot(&self) -> Result<()> {
        let mut text = format!("# fgru {}\n", self.command);
        text.push_str(&self.config.to_string());
        let p = self.out.join(SNAPSHOT);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }
}

fn fmt_list<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn architecture(spec: &mut RunSpec, image_size: usize, segmentation: bool) -> Result<ArchitectureConfig> {
    let d = ArchitectureConfig::default();
    let variant: Variant = spec.resolve::<String>("model.variant", d.variant.name().into())?.parse()?;
    let ds: Vec<usize> = {
        spec.config.set_default("model.ds_channels", fmt_list(&d.ds_channels));
        spec.config.get_list("model.ds_channels")?.expect("just set")
    };
    let [c2, c3] = ds[..] else { bail!("model.ds_channels needs exactly two values") };
    let cfg = ArchitectureConfig {
        variant,
        timesteps: spec.resolve("model.timesteps", d.timesteps)?,
        image_size,
        task: if segmentation { Task::Segmentation } else { Task::Classification },
        conv_channels: spec.resolve("model.conv_channels", d.conv_channels)?,
        conv_kernel: spec.resolve("model.conv_kernel", d.conv_kernel)?,
        horizontal_kernel: spec.resolve("model.horizontal_kernel", d.horizontal_kernel)?,
        ds_channels: [c2, c3],
        ds_layers: spec.resolve("model.ds_layers", d.ds_layers)?,
        ds_kernel: spec.resolve("model.ds_kernel", d.ds_kernel)?,
        us_kernel: d.us_kernel,
        seg_hidden: spec.resolve("model.seg_hidden", d.seg_hidden)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(spec: &mut RunSpec) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    spec.config.set_default("train.learning_rates", fmt_list(&d.learning_rates));
    let cfg = TrainConfig {
        batch_size: spec.resolve("train.batch_size", d.batch_size)?,
        learning_rates: spec.config.get_list("train.learning_rates")?.expect("just set"),
        seeds: spec.resolve("train.seeds", d.seeds)?,
        patience: spec.resolve("train.patience", d.patience)?,
        max_epochs: spec.resolve("train.max_epochs", d.max_epochs)?,
        seed: spec.seed()?,
        eval_batch: spec.resolve("train.eval_batch", d.eval_batch)?,
        adam: fgru_core::tensor::AdamConfig {
            lr: d.adam.lr,
            beta1: spec.resolve("train.beta1", d.adam.beta1)?,
            beta2: spec.resolve("train.beta2", d.adam.beta2)?,
            eps: spec.resolve("train.eps", d.adam.eps)?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_split(root: &Path, split: Split, limit: usize) -> Result<Dataset> {
    let ds = Dataset::load(root, split).with_context(|| format!("loading {} split of {}", split.dir(), root.display()))?;
    if ds.is_empty() {
        bail!("{} split of {} is empty", split.dir(), root.display());
    }
    Ok(if limit > 0 { ds.truncated(limit) } else { ds })
}

/// `name=path` or a bare path named after its last component.
pub fn named_path(s: &str) -> (String, PathBuf) {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() => (n.to_owned(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(s);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| s.to_owned());
            (name, p)
        }
    }
}
