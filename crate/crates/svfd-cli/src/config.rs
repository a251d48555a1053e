//! Effective run configuration with provenance tracking.
//!
//! Every tunable has a default; a JSON config file with flat dotted keys
//! overrides defaults, and `--set key=value` flags override the file. The
//! effective configuration can be dumped with the provenance of each value.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use svfd::augment::AugmentConfig;
use svfd::distances::{Measure, SinkhornConfig};
use svfd::network::Arch;
use svfd::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        };
        f.write_str(s)
    }
}

/// The complete tunable table.
pub struct RunConfig {
    values: BTreeMap<&'static str, (Value, Provenance)>,
}

fn defaults() -> BTreeMap<&'static str, (Value, Provenance)> {
    let t = TrainConfig::default();
    let a = t.arch;
    let s = t.sinkhorn;
    let g = AugmentConfig::default();
    let mut m = BTreeMap::new();
    let mut put = |k: &'static str, v: Value| {
        m.insert(k, (v, Provenance::Default));
    };
    put("train.epochs", t.epochs.into());
    put("train.batch_size", t.batch_size.into());
    put("train.sample_points", t.sample_points.into());
    put("train.steps", t.steps.into());
    put("train.adaptive_fraction", t.adaptive_fraction.into());
    put("train.lr_theta", t.lr_theta.into());
    put("train.lr_code", t.lr_code.into());
    put("train.w_code", t.w_code.into());
    put("train.w_theta", t.w_theta.into());
    put("train.w_velocity", t.w_velocity.into());
    put("train.w_normals", t.w_normals.into());
    put("train.attachment", Value::String(t.attachment.to_string()));
    put("train.seed", t.seed.into());
    put("arch.w_fa", a.w_fa.into());
    put("arch.l_fa", a.l_fa.into());
    put("arch.w_df", a.w_df.into());
    put("arch.l_df", a.l_df.into());
    put("arch.n_e", a.n_e.into());
    put("arch.negative_slope", a.negative_slope.into());
    put("arch.g_z", a.g_z.into());
    put("arch.n_z", a.n_z.into());
    put("sinkhorn.epsilon", s.epsilon.into());
    put("sinkhorn.scaling", s.scaling.into());
    put("sinkhorn.max_iters", s.max_iters.into());
    put("sinkhorn.tolerance", s.tolerance.into());
    put("infer.adam_epochs", t.infer_adam_epochs.into());
    put("infer.lbfgs_epochs", t.infer_lbfgs_epochs.into());
    put("infer.lr_factor", t.infer_lr_factor.into());
    put("infer.lbfgs_history", t.lbfgs_history.into());
    put("augment.m_p", g.m_p.into());
    put("augment.m_c", g.m_c.into());
    put("augment.tau", g.tau.into());
    put("augment.w_h", g.w_h.into());
    put("augment.outlier_w", g.outlier_w.into());
    put("augment.attempt_factor", g.attempt_factor.into());
    put("augment.align_points", g.align_points.into());
    m
}

impl RunConfig {
    /// Defaults, overlaid by the optional config file, overlaid by
    /// `--set key=value` overrides and the ergonomic named flags.
    pub fn load(
        file: Option<&Path>,
        sets: &[String],
        named: &[(&'static str, Option<Value>)],
    ) -> Result<Self> {
        let mut values = defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
            let object = parsed.as_object().ok_or_else(|| {
                CliError::validation("config file must be a flat JSON object with dotted keys")
            })?;
            for (key, value) in object {
                let slot = values
                    .iter_mut()
                    .find(|(k, _)| **k == key.as_str())
                    .map(|(_, v)| v)
                    .ok_or_else(|| {
                        CliError::validation(format!("unknown config key '{key}' in file"))
                    })?;
                *slot = (value.clone(), Provenance::File);
            }
        }
        for item in sets {
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                CliError::validation(format!("--set expects key=value, got '{item}'"))
            })?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let slot = values
                .iter_mut()
                .find(|(k, _)| **k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| CliError::validation(format!("unknown config key '{key}'")))?;
            *slot = (value, Provenance::Flag);
        }
        for (key, value) in named {
            if let Some(v) = value {
                let slot = values
                    .get_mut(key)
                    .unwrap_or_else(|| panic!("named flag targets unknown key {key}"));
                *slot = (v.clone(), Provenance::Flag);
            }
        }
        Ok(Self { values })
    }

    fn usize_of(&self, key: &str) -> Result<usize> {
        self.values[key]
            .0
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| CliError::validation(format!("{key} must be a non-negative integer")))
    }

    fn f64_of(&self, key: &str) -> Result<f64> {
        self.values[key]
            .0
            .as_f64()
            .ok_or_else(|| CliError::validation(format!("{key} must be a number")))
    }

    fn u64_of(&self, key: &str) -> Result<u64> {
        self.values[key]
            .0
            .as_u64()
            .ok_or_else(|| CliError::validation(format!("{key} must be a non-negative integer")))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let measure: Measure = self.values["train.attachment"]
            .0
            .as_str()
            .ok_or_else(|| CliError::validation("train.attachment must be a string"))?
            .parse()
            .map_err(|e: svfd::Error| CliError::validation(e.to_string()))?;
        let cfg = TrainConfig {
            epochs: self.usize_of("train.epochs")?,
            batch_size: self.usize_of("train.batch_size")?,
            sample_points: self.usize_of("train.sample_points")?,
            steps: self.usize_of("train.steps")?,
            adaptive_fraction: self.f64_of("train.adaptive_fraction")?,
            lr_theta: self.f64_of("train.lr_theta")?,
            lr_code: self.f64_of("train.lr_code")?,
            w_code: self.f64_of("train.w_code")?,
            w_theta: self.f64_of("train.w_theta")?,
            w_velocity: self.f64_of("train.w_velocity")?,
            w_normals: self.f64_of("train.w_normals")?,
            attachment: measure,
            arch: Arch {
                w_fa: self.usize_of("arch.w_fa")?,
                l_fa: self.usize_of("arch.l_fa")?,
                w_df: self.usize_of("arch.w_df")?,
                l_df: self.usize_of("arch.l_df")?,
                n_e: self.usize_of("arch.n_e")?,
                negative_slope: self.f64_of("arch.negative_slope")?,
                g_z: self.usize_of("arch.g_z")?,
                n_z: self.usize_of("arch.n_z")?,
            },
            seed: self.u64_of("train.seed")?,
            sinkhorn: SinkhornConfig {
                epsilon: self.f64_of("sinkhorn.epsilon")?,
                scaling: self.f64_of("sinkhorn.scaling")?,
                max_iters: self.usize_of("sinkhorn.max_iters")?,
                tolerance: self.f64_of("sinkhorn.tolerance")?,
            },
            infer_adam_epochs: self.usize_of("infer.adam_epochs")?,
            infer_lbfgs_epochs: self.usize_of("infer.lbfgs_epochs")?,
            infer_lr_factor: self.f64_of("infer.lr_factor")?,
            lbfgs_history: self.usize_of("infer.lbfgs_history")?,
        };
        cfg.validate()
            .map_err(|e| CliError::validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        Ok(AugmentConfig {
            m_p: self.usize_of("augment.m_p")?,
            m_c: self.usize_of("augment.m_c")?,
            tau: self.f64_of("augment.tau")?,
            w_h: self.f64_of("augment.w_h")?,
            outlier_w: self.f64_of("augment.outlier_w")?,
            attempt_factor: self.usize_of("augment.attempt_factor")?,
            align_points: self.usize_of("augment.align_points")?,
        })
    }

    /// Dump every tunable with its value and provenance, as JSON.
    pub fn dump(&self) -> Value {
        let mut out = serde_json::Map::new();
        for (key, (value, provenance)) in &self.values {
            let mut entry = serde_json::Map::new();
            entry.insert("value".into(), value.clone());
            entry.insert("provenance".into(), Value::String(provenance.to_string()));
            out.insert((*key).to_string(), Value::Object(entry));
        }
        Value::Object(out)
    }
}
