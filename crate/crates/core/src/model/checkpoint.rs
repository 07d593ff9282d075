//! Parameter checkpoints: one tensor file per named parameter plus a
//! `manifest.txt` listing `name<TAB>kind<TAB>shape`, one per line, in store
//! order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::nn::{ParamKind, ParamStore};

pub const MANIFEST: &str = "manifest.txt";

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Trainable => "param",
        ParamKind::Buffer => "buffer",
    }
}

/// Write every entry of `store` into `dir`, creating it if needed.
pub fn save_params(dir: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for id in store.ids() {
        let name = store.name(id);
        let t = store.get(id);
        write_tensor(dir.join(format!("{name}.podf")), t)?;
        writeln!(manifest, "{name}\t{}\t{}", kind_name(store.kind(id)), t.shape()).expect("string write");
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Overwrite every entry of `store` from `dir`. The checkpoint must list
/// exactly the store's names with matching kinds and shapes.
pub fn load_params(dir: impl AsRef<Path>, store: &mut ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bad = |detail: String| Error::Format {
        what: "checkpoint manifest",
        detail,
    };
    let mut seen = 0;
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, kind, shape] = fields[..] else {
            return Err(bad(format!("line {}: expected 3 fields", lineno + 1)));
        };
        let id = store
            .find(name)
            .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        if kind != kind_name(store.kind(id)) {
            return Err(bad(format!("{name}: kind {kind} does not match the model")));
        }
        let t = read_tensor(dir.join(format!("{name}.podf")))?;
        if t.shape().to_string() != shape {
            return Err(bad(format!("{name}: manifest shape {shape} but file holds {}", t.shape())));
        }
        store.set(id, t)?;
        seen += 1;
    }
    if seen != store.len() {
        return Err(bad(format!("{seen} entries listed, model has {}", store.len())));
    }
    Ok(())
}
