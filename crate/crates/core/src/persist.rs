//! Versioned model files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::GenerativeModel;

pub const MAGIC: &str = "gendep-model";
pub const VERSION: u32 = 1;

/// A trained model with the inventories needed to read and write text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub magic: String,
    pub version: u32,
    pub vocab: Vocabulary,
    pub model: GenerativeModel,
}

#[derive(Deserialize)]
struct Header {
    magic: String,
    version: u32,
}

impl ModelFile {
    pub fn new(vocab: Vocabulary, model: GenerativeModel) -> Self {
        ModelFile {
            magic: MAGIC.to_string(),
            version: VERSION,
            vocab,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::ModelFile(format!("not a model file: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::ModelFile(format!("bad magic {:?}", header.magic)));
        }
        if header.version != VERSION {
            return Err(Error::ModelFile(format!(
                "version {} is not supported (expected {VERSION})",
                header.version
            )));
        }
        let file: ModelFile = serde_json::from_str(text)?;
        file.model.audit()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
