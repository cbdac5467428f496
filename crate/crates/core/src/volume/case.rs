use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mvol::{read_grid, read_mask, write_grid, write_mask};
use super::{CaseBundle, Role};
use crate::error::{Error, Result};

/// Contents of `case.json` inside a case directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub structures: Vec<StructureEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureEntry {
    pub name: String,
    pub role: Role,
}

/// Write `ct.mvol`, `dose.mvol`, `masks/<name>.mvol` and `case.json` under `dir`.
pub fn write_case(dir: impl AsRef<Path>, case: &CaseBundle) -> Result<()> {
    let dir = dir.as_ref();
    let masks = dir.join("masks");
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    write_grid(dir.join("ct.mvol"), &case.ct)?;
    write_grid(dir.join("dose.mvol"), &case.dose)?;
    for s in &case.structures {
        write_mask(masks.join(format!("{}.mvol", s.name)), s)?;
    }
    let manifest = CaseManifest {
        case_id: case.case_id.clone(),
        structures: case
            .structures
            .iter()
            .map(|s| StructureEntry {
                name: s.name.clone(),
                role: s.role,
            })
            .collect(),
    };
    let path = dir.join("case.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_case(dir: impl AsRef<Path>) -> Result<CaseBundle> {
    let dir = dir.as_ref();
    let path = dir.join("case.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CaseManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let structures = manifest
        .structures
        .iter()
        .map(|s| read_mask(dir.join("masks").join(format!("{}.mvol", s.name)), &s.name, s.role))
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseBundle {
        case_id: manifest.case_id,
        ct: read_grid(dir.join("ct.mvol"))?,
        dose: read_grid(dir.join("dose.mvol"))?,
        structures,
    })
}
