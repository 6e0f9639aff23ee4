//! Versioned JSON container for trained models.
//!
//! Floats are written with shortest round-trip formatting, so a saved
//! model reloads bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ica::IcaModel;
use crate::subspace::SubspaceModel;

pub const FORMAT: &str = "facebench-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StoredModel {
    Subspace(SubspaceModel),
    Ica(IcaModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub format: String,
    pub version: u32,
    pub tag: String,
    pub model: StoredModel,
}

impl ModelContainer {
    pub fn new(tag: impl Into<String>, model: StoredModel) -> Self {
        ModelContainer {
            format: FORMAT.to_string(),
            version: VERSION,
            tag: tag.into(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ModelContainer =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if c.format != FORMAT {
            return Err(Error::Serialization(format!(
                "unknown container format `{}`",
                c.format
            )));
        }
        if c.version != VERSION {
            return Err(Error::Serialization(format!(
                "unsupported container version {} (expected {VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelContainer::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataMatrix;
    use crate::subspace::{train_pca, DimensionalityPolicy};
    use ndarray::array;

    #[test]
    fn roundtrip_is_lossless() {
        let x = DataMatrix::from_columns(
            array![[0.1, 0.7, 1.0 / 3.0, 2.0], [1e-17, 5.5, -0.3, 0.25]],
            vec![0, 0, 1, 1],
            true,
        )
        .unwrap();
        let m = train_pca(&x, &DimensionalityPolicy::Fixed { t: 2 }).unwrap();
        let c = ModelContainer::new("PCA", StoredModel::Subspace(m));
        let back = ModelContainer::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_foreign_versions() {
        let x = DataMatrix::from_columns(array![[0.0, 1.0, 3.0]], vec![0, 1, 1], true).unwrap();
        let m = train_pca(&x, &DimensionalityPolicy::Fixed { t: 1 }).unwrap();
        let mut c = ModelContainer::new("PCA", StoredModel::Subspace(m));
        c.version = 99;
        let text = serde_json::to_string(&c).unwrap();
        assert!(ModelContainer::from_json(&text).is_err());
    }
}
