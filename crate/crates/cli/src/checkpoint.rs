//! Checkpoint files. The byte layout is defined by
//! [`slime_core::PolicyModel::to_bytes`] and documented in the README.

use std::path::Path;

use anyhow::Context;
use slime_core::PolicyModel;

pub fn save(path: &Path, model: &PolicyModel) -> anyhow::Result<()> {
    std::fs::write(path, model.to_bytes())
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn load(path: &Path) -> anyhow::Result<PolicyModel> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    PolicyModel::from_bytes(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}
