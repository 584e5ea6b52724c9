//! Versioned JSON checkpoints and ensemble files.
//!
//! Documents carry the graph descriptor and the shapes of every array, and
//! are validated completely on load. Output is deterministic: saving a loaded
//! document reproduces the original bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CouplingSet;
use crate::io::emit::write_atomic;
use crate::lattice::{GraphDescriptor, LatticeGraph};
use crate::rbm::RbmParams;
use crate::sampler::Ensemble;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingShape {
    pub edges: usize,
    pub vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Params {
    Couplings {
        shape: CouplingShape,
        couplings: CouplingSet,
    },
    Rbm(RbmParams),
}

impl Params {
    pub fn couplings(theta: CouplingSet) -> Self {
        Params::Couplings {
            shape: CouplingShape {
                edges: theta.w.len(),
                vertices: theta.a.len(),
            },
            couplings: theta,
        }
    }
}

/// Where training stopped. Every epoch reseeds its generators from
/// `(seed, epoch)`, so the epoch count doubles as the generator counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epochs_completed: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub graph: GraphDescriptor,
    pub params: Params,
    pub trainer: TrainerState,
    /// Free-form provenance (command, configuration digest). No timestamps,
    /// so identical runs produce identical files.
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(graph: GraphDescriptor, params: Params, trainer: TrainerState) -> Self {
        Self {
            version: FORMAT_VERSION,
            graph,
            params,
            trainer,
            metadata: BTreeMap::new(),
        }
    }

    /// Checks version, graph, shapes and parameter invariants.
    pub fn validate(&self) -> Result<LatticeGraph> {
        if self.version != FORMAT_VERSION {
            return Err(invalid(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        let graph = LatticeGraph::from_descriptor(self.graph)?;
        match &self.params {
            Params::Couplings { shape, couplings } => {
                let expected = CouplingShape {
                    edges: graph.nn_edges().len(),
                    vertices: graph.vertex_count(),
                };
                if *shape != expected {
                    return Err(Error::SizeMismatch {
                        what: "checkpoint coupling shape",
                        expected: expected.edges + 3 * expected.vertices,
                        got: shape.edges + 3 * shape.vertices,
                    });
                }
                couplings.validate(&graph)?;
            }
            Params::Rbm(p) => {
                if self.graph != (GraphDescriptor::Bipartite { visible: p.visible, hidden: p.hidden }) {
                    return Err(invalid("network layers disagree with the graph descriptor".into()));
                }
                p.validate()?;
            }
        }
        Ok(graph)
    }

    /// Fails unless the checkpoint was made for `expected`.
    pub fn check_graph(&self, expected: &GraphDescriptor) -> Result<()> {
        if &self.graph != expected {
            let size = |g: &GraphDescriptor| match *g {
                GraphDescriptor::Square { width, .. } => width * width,
                GraphDescriptor::Bipartite { visible, hidden } => visible + hidden,
            };
            return Err(Error::SizeMismatch {
                what: "checkpoint graph",
                expected: size(expected),
                got: size(&self.graph),
            });
        }
        Ok(())
    }

    pub fn couplings(&self) -> Result<&CouplingSet> {
        match &self.params {
            Params::Couplings { couplings, .. } => Ok(couplings),
            Params::Rbm(_) => Err(invalid("holds network parameters, not couplings".into())),
        }
    }

    pub fn rbm(&self) -> Result<&RbmParams> {
        match &self.params {
            Params::Rbm(p) => Ok(p),
            Params::Couplings { .. } => Err(invalid("holds couplings, not network parameters".into())),
        }
    }
}

fn invalid(reason: String) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        reason,
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Checkpoint { reason, .. } => Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(format!("serialization: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("corrupted: {e}"),
    })
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    checkpoint.validate().map_err(|e| with_path(e, path))?;
    write_atomic(path, &to_json(checkpoint)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let cp: Checkpoint = read_json(path)?;
    cp.validate().map_err(|e| with_path(e, path))?;
    Ok(cp)
}

/// An ensemble together with the graph it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub version: u32,
    pub graph: GraphDescriptor,
    pub vertices: usize,
    pub records: usize,
    pub ensemble: Ensemble,
}

impl EnsembleFile {
    pub fn new(graph: &LatticeGraph, ensemble: Ensemble) -> Self {
        Self {
            version: FORMAT_VERSION,
            graph: graph.descriptor(),
            vertices: graph.vertex_count(),
            records: ensemble.len(),
            ensemble,
        }
    }

    fn validate(&self) -> Result<LatticeGraph> {
        if self.version != FORMAT_VERSION {
            return Err(invalid(format!("format version {} is not supported", self.version)));
        }
        let graph = LatticeGraph::from_descriptor(self.graph)?;
        let ens = &self.ensemble;
        if self.vertices != graph.vertex_count() || self.records != ens.len() || ens.is_empty() {
            return Err(invalid("declared shape disagrees with the contents".into()));
        }
        let n = ens.len();
        if ens.actions.len() != n
            || ens.magnetizations.len() != n
            || ens.target_terms.as_ref().is_some_and(|t| t.len() != n)
            || ens.configs.iter().any(|c| c.len() != self.vertices)
        {
            return Err(invalid("ragged ensemble arrays".into()));
        }
        if !(0.0..=1.0).contains(&ens.meta.acceptance) {
            return Err(invalid("acceptance outside [0, 1]".into()));
        }
        Ok(graph)
    }
}

pub fn save_ensemble(path: &Path, file: &EnsembleFile) -> Result<()> {
    file.validate().map_err(|e| with_path(e, path))?;
    write_atomic(path, &to_json(file)?)
}

pub fn load_ensemble(path: &Path) -> Result<(EnsembleFile, LatticeGraph)> {
    let file: EnsembleFile = read_json(path)?;
    let graph = file.validate().map_err(|e| with_path(e, path))?;
    Ok((file, graph))
}
