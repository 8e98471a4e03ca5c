//! The pyramidal graph convolutional network: local, mesoscopic, and global
//! stages composed over the autodiff tape, with per-stage traces.

mod gradcheck;
mod net;
#[cfg(test)]
mod tests;

pub use gradcheck::{check_stage, stage_names, StageCheck};
pub use net::{BoundParams, Forwarded, PgcnModel};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::DiffError;
use crate::geometry::GeometryError;
use crate::graph::GraphError;
use crate::mat::{Mat, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Compute precision selector for training and checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F64
    }
}

/// Which stages of the pyramid are active. `backbone` and `local` are
/// alternative first stages and exactly one must be enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageFlags {
    pub backbone: bool,
    pub local: bool,
    pub meso: bool,
    pub global: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        StageFlags { backbone: false, local: true, meso: true, global: true }
    }
}

/// Model hyperparameters. The defaults reproduce the full-size network:
/// 62 electrodes × 5 band features in, 30-wide local output, 71 nodes after
/// virtual-center imputation, 70-wide global output, and a 3-layer classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgcnConfig {
    pub n_electrodes: usize,
    pub in_features: usize,
    /// Hidden widths (d1, d2) of the two local graph convolutions; the local
    /// output concatenates input and both layers, so
    /// `in_features + d1 + d2 = embed_dim`.
    pub local_dims: (usize, usize),
    /// Node feature width after the first stage (and of meso centers).
    pub embed_dim: usize,
    pub n_heads: usize,
    /// Output width of the global graph convolution.
    pub global_out: usize,
    /// Number of stacked global convolutions sharing one adjacency.
    pub global_layers: usize,
    /// Classifier hidden sizes.
    pub hidden: (usize, usize),
    pub n_classes: usize,
    /// Fraction of off-diagonal attention connections kept by sparsification.
    pub sparsify_fraction: f64,
    /// Sparsity factor of the inverse-square-distance adjacency.
    pub delta: f64,
    pub stages: StageFlags,
}

impl Default for PgcnConfig {
    fn default() -> Self {
        PgcnConfig {
            n_electrodes: 62,
            in_features: 5,
            local_dims: (10, 15),
            embed_dim: 30,
            n_heads: 6,
            global_out: 40,
            global_layers: 1,
            hidden: (512, 64),
            n_classes: 3,
            sparsify_fraction: 0.2,
            delta: 9.0,
            stages: StageFlags::default(),
        }
    }
}

impl PgcnConfig {
    /// Checks internal consistency of dimensions and stage flags.
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |msg: String| Err(ModelError::ConfigError(msg));
        let s = self.stages;
        if s.backbone == s.local {
            return err(alloc::format!(
                "exactly one of the backbone and local stages must be enabled \
                 (backbone={}, local={})",
                s.backbone,
                s.local
            ));
        }
        if self.n_electrodes == 0 || self.in_features == 0 {
            return err("electrode and feature counts must be positive".into());
        }
        if s.local && self.in_features + self.local_dims.0 + self.local_dims.1 != self.embed_dim {
            return err(alloc::format!(
                "local stage concatenates input and both hidden layers: \
                 {} + {} + {} must equal embed_dim {}",
                self.in_features,
                self.local_dims.0,
                self.local_dims.1,
                self.embed_dim
            ));
        }
        if self.local_dims.0 == 0 || self.local_dims.1 == 0 {
            return err("local hidden widths must be positive".into());
        }
        if s.global {
            if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
                return err(alloc::format!(
                    "head count {} must divide embed_dim {}",
                    self.n_heads,
                    self.embed_dim
                ));
            }
            if self.global_out == 0 {
                return err("global output width must be positive".into());
            }
            if self.global_layers == 0 {
                return err("at least one global layer is required".into());
            }
            if !(self.sparsify_fraction > 0.0 && self.sparsify_fraction <= 1.0) {
                return err(alloc::format!(
                    "sparsify fraction {} must lie in (0, 1]",
                    self.sparsify_fraction
                ));
            }
        }
        if self.delta <= 0.0 {
            return err(alloc::format!("delta {} must be positive", self.delta));
        }
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return err("classifier hidden sizes must be positive".into());
        }
        if self.n_classes < 2 {
            return err(alloc::format!("{} classes cannot be classified", self.n_classes));
        }
        Ok(())
    }
}

/// A mesoscopic region center: softmax-attention pooled features and the
/// matching pooled 3-D location.
#[derive(Clone, PartialEq)]
pub struct VirtualCenter<F> {
    /// `1×embed_dim` pooled feature row.
    pub feature: Mat<F>,
    /// `1×3` pooled position; a convex combination of the region's
    /// electrode positions.
    pub location: Mat<F>,
}

impl<F: Scalar> core::fmt::Debug for VirtualCenter<F> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "VirtualCenter {{ feature: {:?}, location: {:?} }}", self.feature, self.location)
    }
}

/// Attention internals for one region of one partition.
#[derive(Clone)]
pub struct RegionTrace<F> {
    pub partition: String,
    pub region: String,
    /// `N×N` pairwise attention energies.
    pub e: Mat<F>,
    /// `1×N` row sums of `e`.
    pub lambda: Mat<F>,
    pub center: VirtualCenter<F>,
}

/// Every intermediate the forward pass produces, for diagnostics and tests.
/// Stages disabled by the ablation flags leave their fields `None`/empty.
#[derive(Clone)]
pub struct LayerTrace<F> {
    /// `n_electrodes × in_features` input.
    pub input: Mat<F>,
    pub h1: Option<Mat<F>>,
    pub h2: Option<Mat<F>>,
    /// First-stage output (local concat or backbone), `n_electrodes × embed_dim`.
    pub x_local: Mat<F>,
    /// Region traces in partition order (all regions of the first partition,
    /// then the second).
    pub regions: Vec<RegionTrace<F>>,
    pub x_meso: Option<Mat<F>>,
    pub p_meso: Option<Mat<F>>,
    pub x_enhanced: Option<Mat<F>>,
    /// Per-head attention matrices, each row-stochastic.
    pub heads: Vec<Mat<F>>,
    /// Mixed and sparsified global adjacency.
    pub a_global: Option<Mat<F>>,
    /// Output of the final global convolution.
    pub o1: Option<Mat<F>>,
    pub x_global: Option<Mat<F>>,
    /// `1 × n_classes` class scores.
    pub logits: Mat<F>,
}

impl<F: Scalar> LayerTrace<F> {
    /// Node-feature matrices in forward order, labelled, for smoothness
    /// profiles. Only stages that ran are listed.
    pub fn stages(&self) -> Vec<(&'static str, &Mat<F>)> {
        let mut out = Vec::new();
        out.push(("input", &self.input));
        if let Some(h1) = &self.h1 {
            out.push(("h1", h1));
        }
        if let Some(h2) = &self.h2 {
            out.push(("h2", h2));
        }
        out.push(("first_stage", &self.x_local));
        if let Some(m) = &self.x_meso {
            out.push(("meso", m));
        }
        if let Some(m) = &self.x_enhanced {
            out.push(("enhanced", m));
        }
        if let Some(m) = &self.x_global {
            out.push(("global", m));
        }
        out
    }
}
