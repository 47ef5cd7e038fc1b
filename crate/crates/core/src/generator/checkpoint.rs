use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Generator, GeneratorSpec, Unit};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::tensor::io::{read_file, write_file, DType};

pub const MANIFEST_FILE: &str = "generator.json";
const FORMAT: &str = "cbnlab-generator";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    spec: GeneratorSpec,
    units: Vec<Unit>,
    params: Vec<ParamEntry>,
}

/// Write `generator.json` plus one tensor file per parameter into `dir`.
pub fn save_checkpoint(g: &Generator, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut params = Vec::new();
    for (i, (t, name)) in g.store.tensors().iter().zip(g.store.names()).enumerate() {
        let file = format!("p{i:03}.cbnt");
        write_file(dir.join(&file), t, DType::F64)?;
        params.push(ParamEntry {
            name: name.clone(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let m = Manifest {
        format: FORMAT.into(),
        version: 1,
        spec: g.spec.clone(),
        units: g.units.clone(),
        params,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Generator> {
    let dir = dir.as_ref();
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if m.format != FORMAT || m.version != 1 {
        return Err(Error::Format(format!("unsupported checkpoint {} v{}", m.format, m.version)));
    }
    m.spec.validate()?;
    let mut store = ParamStore::new();
    for p in &m.params {
        let t = read_file(dir.join(&p.file))?;
        if t.shape() != p.shape.as_slice() {
            return Err(Error::Format(format!("{} has shape {:?}, manifest says {:?}", p.file, t.shape(), p.shape)));
        }
        store.add(p.name.clone(), t);
    }
    Ok(Generator {
        spec: m.spec,
        store,
        units: m.units,
    })
}
