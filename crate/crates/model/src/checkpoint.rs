//! Single-file checkpoints: every variable plus metadata tensors holding the
//! format version, the full configuration text and the input normalisation.

use std::collections::HashMap;
use std::path::Path;

use rfn_core::config::RunConfig;
use tch::{Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Normalization, Rfn};

pub const FORMAT_VERSION: i64 = 1;

const META_VERSION: &str = "meta.format_version";
const META_CONFIG: &str = "meta.config";
const META_MEAN: &str = "meta.norm_mean";
const META_STD: &str = "meta.norm_std";

pub fn save(model: &Rfn, config: &RunConfig, path: &Path) -> Result<()> {
    let mut named: Vec<(String, Tensor)> = model.vs.variables().into_iter().map(|(k, v)| (format!("var.{k}"), v)).collect();
    named.sort_by(|a, b| a.0.cmp(&b.0));
    let text = config.serialize();
    named.push((META_VERSION.into(), Tensor::from_slice(&[FORMAT_VERSION])));
    named.push((META_CONFIG.into(), Tensor::from_slice(text.as_bytes())));
    named.push((META_MEAN.into(), Tensor::from_slice(&model.norm.mean)));
    named.push((META_STD.into(), Tensor::from_slice(&model.norm.std)));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    Tensor::save_multi(&named, path)?;
    Ok(())
}

fn meta<'a>(map: &'a HashMap<String, Tensor>, key: &str, path: &Path) -> Result<&'a Tensor> {
    map.get(key).ok_or_else(|| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("missing `{key}`"),
    })
}

fn triple(t: &Tensor) -> Result<[f64; 3]> {
    let v = Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1))?;
    v.try_into().map_err(|v: Vec<f64>| Error::Shape(format!("expected 3 normalisation values, got {}", v.len())))
}

/// Loads a checkpoint. When `expected` is given, every architecture key must
/// agree with the stored configuration.
pub fn load(path: &Path, expected: Option<&RunConfig>, device: Device) -> Result<(Rfn, RunConfig)> {
    let bad = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    let map: HashMap<String, Tensor> = Tensor::load_multi(path)
        .map_err(|e| bad(e.to_string()))?
        .into_iter()
        .collect();
    let version = meta(&map, META_VERSION, path)?.int64_value(&[0]);
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let bytes = Vec::<u8>::try_from(meta(&map, META_CONFIG, path)?)?;
    let text = String::from_utf8(bytes).map_err(|e| bad(format!("config is not UTF-8: {e}")))?;
    let stored = RunConfig::parse(&text)?;
    if let Some(exp) = expected {
        if let Some(key) = stored.architecture_mismatch(exp) {
            return Err(Error::ConfigMismatch {
                key: key.to_string(),
                checkpoint: stored.get(key).unwrap_or_default(),
                config: exp.get(key).unwrap_or_default(),
            });
        }
    }
    let mut model = Rfn::new(ModelConfig::from_run(&stored), device)?;
    model.norm = Normalization {
        mean: triple(meta(&map, META_MEAN, path)?)?,
        std: triple(meta(&map, META_STD, path)?)?,
    };
    let vars = model.vs.variables();
    let stored_vars = map.keys().filter(|k| k.starts_with("var.")).count();
    if stored_vars != vars.len() {
        return Err(bad(format!("{stored_vars} stored variables, model has {}", vars.len())));
    }
    tch::no_grad(|| -> Result<()> {
        for (name, mut var) in vars {
            let src = map.get(&format!("var.{name}")).ok_or_else(|| bad(format!("missing variable `{name}`")))?;
            if src.size() != var.size() {
                return Err(bad(format!("variable `{name}` has shape {:?}, expected {:?}", src.size(), var.size())));
            }
            var.copy_(src);
        }
        Ok(())
    })?;
    Ok((model, stored))
}
