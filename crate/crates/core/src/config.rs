//! Strict, versioned JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elements::ReferenceCell;
use crate::error::{config, Result};
use crate::geometry::Form;
use crate::kernels::{Engine, KernelConfig, Mode, Precisions};
use crate::mesh::{epsilon_tet, structured_box_mesh, structured_tet_mesh, Jitter, Mesh};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellName {
    Hex,
    Tet,
}

impl CellName {
    pub fn cell(self) -> ReferenceCell {
        match self {
            CellName::Hex => ReferenceCell::hex(),
            CellName::Tet => ReferenceCell::tet(),
        }
    }
}

fn default_extent() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    /// The reference cell itself.
    Reference,
    /// Structured grid of hexes, or of cubes split into 6 tets.
    Structured {
        n: [usize; 3],
        #[serde(default = "default_extent")]
        extent: [f64; 3],
        /// Vertex displacement as a fraction of the spacing.
        #[serde(default)]
        jitter: Option<f64>,
        #[serde(default)]
        jitter_seed: Option<u64>,
    },
    EpsilonTet {
        eps: f64,
        #[serde(default)]
        scaled: bool,
    },
    File {
        path: PathBuf,
    },
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec::Reference
    }
}

impl MeshSpec {
    pub fn build(&self, cell: CellName, seed: u64, base: Option<&Path>) -> Result<Mesh> {
        let mesh = match self {
            MeshSpec::Reference => Mesh::reference(cell.cell()),
            MeshSpec::Structured {
                n,
                extent,
                jitter,
                jitter_seed,
            } => {
                let j = jitter.map(|fraction| Jitter {
                    fraction,
                    seed: jitter_seed.unwrap_or(seed),
                });
                match cell {
                    CellName::Hex => structured_box_mesh(*n, *extent, j)?,
                    CellName::Tet => structured_tet_mesh(*n, *extent, j)?,
                }
            }
            MeshSpec::EpsilonTet { eps, scaled } => {
                if cell != CellName::Tet {
                    return config("an epsilon_tet mesh requires cell = \"tet\"");
                }
                epsilon_tet(*eps, *scaled)?
            }
            MeshSpec::File { path } => {
                let full = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                Mesh::load(&full)?
            }
        };
        if mesh.cell != cell.cell() {
            return config(format!("mesh cells do not match cell = {:?}", cell));
        }
        Ok(mesh)
    }
}

fn default_batch() -> usize {
    KernelConfig::DEFAULT_BATCH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub form: Form,
    pub mode: Mode,
    pub cell: CellName,
    pub p: usize,
    pub precisions: Precisions,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "default_batch")]
    pub n_batch: usize,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<RunConfig> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| crate::Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.p == 0 {
            return config("p must be at least 1");
        }
        self.kernel()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelConfig> {
        Ok(KernelConfig::new(self.form, self.mode, self.precisions, self.engine)?.with_batch(self.n_batch)?)
    }
}
