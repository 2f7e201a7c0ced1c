//! Checkpoint directory: `manifest.json`, `params/<name>.mrt1` and
//! `normstate/<name>.{running_mean,running_var}.mrt1`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, Topology};
use crate::error::{Error, Result};
use crate::io::{read_real, write_real};
use crate::norm::NormScheme;

pub const CHECKPOINT_FORMAT: &str = "kshift-model/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    topology: Topology,
    scheme: NormScheme,
    classes: usize,
    params: Vec<ParamEntry>,
    norm_layers: Vec<NormEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormEntry {
    name: String,
    channels: usize,
    batches_seen: u64,
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    mkdir(&dir.join("params"))?;
    mkdir(&dir.join("normstate"))?;
    let mut m = model.clone();
    let mut params = Vec::new();
    for (name, t) in m.params() {
        write_real(dir.join("params").join(format!("{name}.mrt1")), &t)?;
        params.push(ParamEntry {
            name,
            dims: t.dims().to_vec(),
        });
    }
    let mut norms = Vec::new();
    let mut err = None;
    m.visit_norms(&mut |name, layer| {
        let base = dir.join("normstate");
        let r = write_real(
            base.join(format!("{name}.running_mean.mrt1")),
            &layer.state.running_mean,
        )
        .and_then(|_| {
            write_real(
                base.join(format!("{name}.running_var.mrt1")),
                &layer.state.running_var,
            )
        });
        if let Err(e) = r {
            err.get_or_insert(e);
        }
        norms.push(NormEntry {
            name: name.to_string(),
            channels: layer.state.channels(),
            batches_seen: layer.state.batches_seen,
        });
    });
    if let Some(e) = err {
        return Err(e);
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        topology: model.topology,
        scheme: model.scheme,
        classes: model.classes,
        params,
        norm_layers: norms,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path)),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format {:?}",
            manifest.format
        )));
    }
    let mut model = Model::new(manifest.topology, manifest.scheme, manifest.classes, 0)?;

    let expected: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let listed: Vec<&str> = manifest.params.iter().map(|p| p.name.as_str()).collect();
    if expected != listed {
        return Err(Error::Format(format!(
            "checkpoint parameters {listed:?} do not match the topology"
        )));
    }
    let mut err = None;
    let pdir = dir.join("params");
    model.visit_params(&mut |name, p, _| {
        let r = read_real(pdir.join(format!("{name}.mrt1"))).and_then(|t| {
            t.expect_dims(p.dims())?;
            *p = t;
            Ok(())
        });
        if let Err(e) = r {
            err.get_or_insert(e);
        }
    });
    let ndir = dir.join("normstate");
    let mut k = 0;
    model.visit_norms(&mut |name, layer| {
        let r = (|| {
            let entry = manifest
                .norm_layers
                .get(k)
                .filter(|e| e.name == name)
                .ok_or_else(|| {
                    Error::Format(format!("normalization layer {name} missing from manifest"))
                })?;
            let mean = read_real(ndir.join(format!("{name}.running_mean.mrt1")))?;
            let var = read_real(ndir.join(format!("{name}.running_var.mrt1")))?;
            mean.expect_dims(&[layer.state.channels()])?;
            var.expect_dims(&[layer.state.channels()])?;
            layer.state.running_mean = mean;
            layer.state.running_var = var;
            layer.state.batches_seen = entry.batches_seen;
            Ok(())
        })();
        if let Err(e) = r {
            err.get_or_insert(e);
        }
        k += 1;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(model),
    }
}
