use crate::error::{Error, Result};
use crate::io::WeightArchive;
use crate::numerics::ParamStore;

/// Names under this prefix are fusion-block weights; they always start fresh.
pub const FUSION_PREFIX: &str = "ppfb";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Parameters with no entry in the archive.
    pub skipped_missing: Vec<String>,
    pub skipped_shape_mismatch: Vec<String>,
    /// Fusion-block parameters present in the archive but kept fresh.
    pub kept_fresh: Vec<String>,
    /// Archive entries with no matching parameter.
    pub unused: Vec<String>,
    pub frozen: Vec<String>,
}

/// Copies name-matched, equal-shape tensors from `archive` into `params`
/// and freezes every parameter under one of `freeze_prefixes`.
pub fn load_pretrained(params: &mut ParamStore, archive: &WeightArchive, freeze_prefixes: &[String]) -> LoadReport {
    let mut report = LoadReport::default();
    for (name, p) in params.iter_mut() {
        match archive.get(name) {
            None => report.skipped_missing.push(name.to_string()),
            Some(_) if name.starts_with(FUSION_PREFIX) => report.kept_fresh.push(name.to_string()),
            Some(t) if t.dims() != p.tensor.dims() => report.skipped_shape_mismatch.push(name.to_string()),
            Some(t) => {
                p.tensor = t.clone();
                report.loaded.push(name.to_string());
            }
        }
        if freeze_prefixes.iter().any(|f| name.starts_with(f.as_str())) {
            p.trainable = false;
            report.frozen.push(name.to_string());
        }
    }
    report.unused = archive
        .entries()
        .iter()
        .map(|(n, _)| n)
        .filter(|n| !params.contains(n))
        .cloned()
        .collect();
    report
}

/// Restores every parameter, fusion blocks included, from a checkpoint of
/// the same architecture. Any missing, extra or reshaped entry is an error
/// and leaves `params` untouched.
pub fn load_checkpoint(params: &mut ParamStore, archive: &WeightArchive) -> Result<()> {
    for (name, p) in params.iter() {
        let t = archive.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if t.dims() != p.tensor.dims() {
            return Err(Error::DimMismatch {
                context: "checkpoint",
                expected: p.tensor.dims().to_vec(),
                found: t.dims().to_vec(),
            });
        }
    }
    if let Some((extra, _)) = archive.entries().iter().find(|(n, _)| !params.contains(n)) {
        return Err(Error::Format {
            format: "PWA1",
            field: "name",
            detail: format!("checkpoint entry `{extra}` matches no parameter"),
        });
    }
    for (name, p) in params.iter_mut() {
        p.tensor = archive.get(name).expect("checked above").clone();
    }
    Ok(())
}
