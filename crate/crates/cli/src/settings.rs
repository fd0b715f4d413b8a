//! Merging of config files and flags, plus the dataset and coupling setup
//! shared by several commands.

use crate::commands::CmdError;
use flowfield::config::KvConfig;
use flowfield::datasets::{make_dataset, DatasetKind};
use flowfield::{Coupling, FlowSpec, Point, RngStream};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// RNG stream ids, one per purpose, all under the command's `--seed`.
pub mod streams {
    pub const TARGET_DATA: u64 = 1;
    pub const SOURCE_DATA: u64 = 2;
    pub const FRESH_A: u64 = 3;
    pub const FRESH_B: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const RUN: u64 = 6;
    pub const PROBES: u64 = 7;
}

pub struct Settings {
    pub cfg: KvConfig,
}

impl Settings {
    /// Loads `config`, then `extra` files in order, then applies `flags`
    /// (skipping unset ones).
    pub fn load(config: Option<&Path>, extra: &[Option<&PathBuf>], flags: &[(&str, Option<String>)]) -> Result<Self, CmdError> {
        let mut cfg = KvConfig::default();
        for path in std::iter::once(config).chain(extra.iter().map(|p| p.map(PathBuf::as_path))).flatten() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CmdError::usage(format!("cannot read {}: {e}", path.display())))?;
            for (k, v) in KvConfig::parse(&text)?.iter() {
                cfg.set(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v.clone());
            }
        }
        Ok(Settings { cfg })
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, CmdError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.cfg.parse_or(key, default)?)
    }

    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CmdError> {
        Ok(self.cfg.list(key)?.unwrap_or_else(|| default.to_vec()))
    }

    /// Flow from `kind`, `D`, `T`, `s`, `d`, `ve_variant`, falling back to `default_kind`.
    pub fn flow(&self, default_kind: &str, default_dim: usize) -> Result<FlowSpec, CmdError> {
        let mut c = self.cfg.clone();
        if !c.contains("kind") {
            c.set("kind", default_kind);
        }
        if !c.contains("D") {
            c.set("D", default_dim.to_string());
        }
        Ok(FlowSpec::from_kv(&c)?)
    }

    /// Target dataset from the `dataset` keys, `n_data` points on the target stream.
    pub fn target(&self, seed: u64, default_kind: &str, default_n: usize) -> Result<(DatasetKind, Vec<Point>), CmdError> {
        let mut c = self.cfg.clone();
        if !c.contains("dataset") {
            c.set("dataset", default_kind);
        }
        let kind = DatasetKind::from_kv(&c)?;
        let n = self.get_or("n_data", default_n)?;
        let data = make_dataset(&kind, n, &mut RngStream::new(seed, streams::TARGET_DATA))?;
        Ok((kind, data))
    }

    /// One-sided coupling on the target for one-sided kinds; otherwise the
    /// independent product with `n_source` standard-Gaussian source points.
    pub fn coupling(&self, flow: &FlowSpec, target: Vec<Point>, seed: u64) -> Result<Coupling, CmdError> {
        if !flow.kind().is_two_sided() {
            return Ok(Coupling::one_sided(target)?);
        }
        let n = self.get_or("n_source", 16usize)?;
        let source = make_dataset(
            &DatasetKind::StandardGaussian { dim: flow.dim() },
            n,
            &mut RngStream::new(seed, streams::SOURCE_DATA),
        )?;
        Ok(Coupling::independent(target, source)?)
    }
}

pub fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

/// Writes `bytes` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CmdError> {
    use std::io::Write;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CmdError::io(p, e))?;
            }
            std::fs::write(p, bytes).map_err(|e| CmdError::io(p, e))
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| CmdError::io(Path::new("<stdout>"), e)),
    }
}
