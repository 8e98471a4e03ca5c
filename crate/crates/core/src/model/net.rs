//! Model assembly: parameter layout, initialization, and the staged forward
//! pass over the autodiff tape.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerTrace, ModelError, PgcnConfig, RegionTrace, VirtualCenter};
use crate::diff::{ParamId, ParamSet, Tape, TensorId};
use crate::geometry::{DistanceMatrix, Montage, RegionPartition};
use crate::graph::{self, Adjacency};
use crate::mat::{Mat, Scalar};

#[derive(Clone, Copy)]
enum Init {
    /// Fan-based uniform range `±sqrt(6 / (rows + cols))`.
    Glorot,
    /// The inverse-square-distance adjacency of the montage.
    DistanceAdjacency,
    Const(f64),
    Zero,
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

/// The network: geometry, configuration, and parameter layout. Parameter
/// values live outside the model (in a [`ParamSet`]) so training, checking,
/// and checkpointing can swap them freely.
pub struct PgcnModel<F: Scalar> {
    cfg: PgcnConfig,
    montage: Montage,
    partitions: Vec<RegionPartition>,
    positions: Mat<F>,
    distances: DistanceMatrix,
    /// Normalized binary-adjacency propagation matrix, present when the
    /// backbone stage is active.
    backbone_l: Option<Mat<F>>,
    layout: Vec<ParamSpec>,
}

/// Tape handles for one binding of the parameters (plus geometry constants),
/// reusable across every sample sharing a tape.
pub struct BoundParams {
    positions: TensorId,
    backbone_l: Option<TensorId>,
    local: Option<(TensorId, TensorId, TensorId)>,
    backbone: Option<(TensorId, TensorId)>,
    meso_w: Vec<TensorId>,
    global: Option<GlobalBound>,
    clf: (TensorId, TensorId, TensorId, TensorId, TensorId, TensorId),
}

struct GlobalBound {
    pos_w: TensorId,
    pos_b: TensorId,
    q: Vec<TensorId>,
    k: Vec<TensorId>,
    mix: TensorId,
    w: Vec<TensorId>,
}

/// Result of one forward pass.
pub struct Forwarded<F: Scalar> {
    /// `1 × n_classes` logits on the tape.
    pub logits: TensorId,
    /// Captured intermediates, when tracing was requested.
    pub trace: Option<LayerTrace<F>>,
}

impl<F: Scalar> PgcnModel<F> {
    /// Builds a model over the given montage and partition pair
    /// (fine-grained regions first, hemispheres second).
    pub fn new(
        cfg: PgcnConfig,
        montage: Montage,
        partitions: Vec<RegionPartition>,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if montage.len() != cfg.n_electrodes {
            return Err(ModelError::ConfigError(format!(
                "montage has {} electrodes but the configuration expects {}",
                montage.len(),
                cfg.n_electrodes
            )));
        }
        if cfg.stages.meso {
            if partitions.len() != 2 {
                return Err(ModelError::ConfigError(format!(
                    "the mesoscopic stage needs exactly two partitions, got {}",
                    partitions.len()
                )));
            }
            for p in &partitions {
                if p.n_electrodes() != montage.len() {
                    return Err(ModelError::ConfigError(format!(
                        "partition `{}` covers {} electrodes but the montage has {}",
                        p.name(),
                        p.n_electrodes(),
                        montage.len()
                    )));
                }
            }
        }
        let distances = montage.pairwise_distances();
        let positions = montage.positions_mat().cast::<F>();
        let backbone_l = if cfg.stages.backbone {
            let radius = graph::default_neighbor_radius(&distances);
            let neighbors = graph::neighbors_within(&distances, radius);
            let adj: Adjacency<F> = graph::binary_adjacency(&neighbors, montage.len())?;
            let lap = graph::sym_normalize(&adj, adj.needs_self_loops())?;
            Some(lap.into_mat())
        } else {
            None
        };
        let layout = build_layout(&cfg, &partitions);
        Ok(PgcnModel { cfg, montage, partitions, positions, distances, backbone_l, layout })
    }

    /// Model over the bundled 62-electrode montage and its default
    /// seven-region and hemisphere partitions.
    pub fn bundled(cfg: PgcnConfig) -> Result<Self, ModelError> {
        let montage = Montage::default_seed62();
        let partitions = alloc::vec![
            RegionPartition::default_seven(&montage)?,
            RegionPartition::default_hemispheres(&montage)?,
        ];
        PgcnModel::new(cfg, montage, partitions)
    }

    pub fn cfg(&self) -> &PgcnConfig {
        &self.cfg
    }

    pub fn montage(&self) -> &Montage {
        &self.montage
    }

    pub fn partitions(&self) -> &[RegionPartition] {
        &self.partitions
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Node count entering the classifier (electrodes plus virtual centers).
    pub fn n_nodes(&self) -> usize {
        let virtuals: usize = if self.cfg.stages.meso {
            self.partitions.iter().map(|p| p.n_regions()).sum()
        } else {
            0
        };
        self.cfg.n_electrodes + virtuals
    }

    /// Feature width entering the classifier.
    pub fn node_width(&self) -> usize {
        self.cfg.embed_dim + if self.cfg.stages.global { self.cfg.global_out } else { 0 }
    }

    /// Draws a fresh parameter set. Values are sampled in 64-bit precision
    /// from a seeded generator (so every precision of the same seed holds the
    /// same numbers), in fixed layout order.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet<F>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in &self.layout {
            let value: Mat<f64> = match spec.init {
                Init::Glorot => {
                    let limit = Float::sqrt(6.0 / (spec.rows + spec.cols) as f64);
                    Mat::from_fn(spec.rows, spec.cols, |_, _| rng.gen_range(-limit..limit))
                }
                Init::DistanceAdjacency => {
                    graph::init_distance_adjacency::<f64>(&self.distances, self.cfg.delta)?
                        .into_mat()
                }
                Init::Const(v) => Mat::from_fn(spec.rows, spec.cols, |_, _| v),
                Init::Zero => Mat::zeros(spec.rows, spec.cols),
            };
            params.add(spec.name.clone(), value.cast::<F>())?;
        }
        Ok(params)
    }

    /// Parameter values as `(name, rows, cols, row-major 64-bit values)`
    /// tuples in layout order, the in-memory form of a checkpoint.
    pub fn export_params(&self, params: &ParamSet<F>) -> Vec<(String, usize, usize, Vec<f64>)> {
        params
            .entries()
            .iter()
            .map(|e| {
                let wide: Mat<f64> = e.value.cast();
                (e.name.clone(), e.value.rows(), e.value.cols(), wide.into_vec())
            })
            .collect()
    }

    /// Rebuilds a parameter set from named tensors, validating that they
    /// exactly match this model's layout.
    pub fn params_from_named(
        &self,
        named: &[(String, usize, usize, Vec<f64>)],
    ) -> Result<ParamSet<F>, ModelError> {
        if named.len() != self.layout.len() {
            return Err(ModelError::ConfigError(format!(
                "checkpoint has {} tensors but the model expects {}",
                named.len(),
                self.layout.len()
            )));
        }
        let mut params = ParamSet::new();
        for spec in &self.layout {
            let (_, rows, cols, values) = named
                .iter()
                .find(|(name, ..)| *name == spec.name)
                .ok_or_else(|| {
                    ModelError::ConfigError(format!("checkpoint is missing tensor `{}`", spec.name))
                })?;
            if (*rows, *cols) != (spec.rows, spec.cols) || values.len() != spec.rows * spec.cols {
                return Err(ModelError::ConfigError(format!(
                    "tensor `{}` has shape {}x{} but the model expects {}x{}",
                    spec.name, rows, cols, spec.rows, spec.cols
                )));
            }
            let wide = Mat::from_vec(*rows, *cols, values.clone());
            params.add(spec.name.clone(), wide.cast::<F>())?;
        }
        Ok(params)
    }

    /// Records every parameter (and the geometry constants) on the tape once;
    /// all samples of a batch share the binding.
    pub fn bind(
        &self,
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
    ) -> Result<BoundParams, ModelError> {
        let id = |name: &str| -> Result<ParamId, ModelError> {
            params.id_of(name).ok_or_else(|| {
                ModelError::ConfigError(format!("parameter set is missing `{name}`"))
            })
        };
        let positions = tape.constant(self.positions.clone())?;
        let backbone_l = match &self.backbone_l {
            Some(l) => Some(tape.constant(l.clone())?),
            None => None,
        };
        let local = if self.cfg.stages.local {
            Some((
                tape.param(params, id("local.adjacency")?)?,
                tape.param(params, id("local.w1")?)?,
                tape.param(params, id("local.w2")?)?,
            ))
        } else {
            None
        };
        let backbone = if self.cfg.stages.backbone {
            Some((
                tape.param(params, id("backbone.w1")?)?,
                tape.param(params, id("backbone.w2")?)?,
            ))
        } else {
            None
        };
        let mut meso_w = Vec::new();
        if self.cfg.stages.meso {
            for k in 0..self.partitions.len() {
                meso_w.push(tape.param(params, id(&format!("meso.w{k}"))?)?);
            }
        }
        let global = if self.cfg.stages.global {
            let mut q = Vec::new();
            let mut kk = Vec::new();
            for h in 0..self.cfg.n_heads {
                q.push(tape.param(params, id(&format!("global.q{h}"))?)?);
                kk.push(tape.param(params, id(&format!("global.k{h}"))?)?);
            }
            let mut w = Vec::new();
            for l in 0..self.cfg.global_layers {
                w.push(tape.param(params, id(&format!("global.w{l}"))?)?);
            }
            Some(GlobalBound {
                pos_w: tape.param(params, id("global.pos_w")?)?,
                pos_b: tape.param(params, id("global.pos_b")?)?,
                q,
                k: kk,
                mix: tape.param(params, id("global.mix")?)?,
                w,
            })
        } else {
            None
        };
        let clf = (
            tape.param(params, id("clf.w1")?)?,
            tape.param(params, id("clf.b1")?)?,
            tape.param(params, id("clf.w2")?)?,
            tape.param(params, id("clf.b2")?)?,
            tape.param(params, id("clf.w3")?)?,
            tape.param(params, id("clf.b3")?)?,
        );
        Ok(BoundParams { positions, backbone_l, local, backbone, meso_w, global, clf })
    }

    /// Runs the staged forward pass for one sample
    /// (`n_electrodes × in_features`), returning the logits handle and, on
    /// request, the full trace.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        x: &Mat<F>,
        trace: bool,
    ) -> Result<Forwarded<F>, ModelError> {
        if x.shape() != (self.cfg.n_electrodes, self.cfg.in_features) {
            return Err(ModelError::ConfigError(format!(
                "input shape {:?} does not match ({}, {})",
                x.shape(),
                self.cfg.n_electrodes,
                self.cfg.in_features
            )));
        }
        let x_id = tape.constant(x.clone())?;
        let mut tr = trace.then(|| LayerTrace {
            input: x.clone(),
            h1: None,
            h2: None,
            x_local: Mat::zeros(0, 0),
            regions: Vec::new(),
            x_meso: None,
            p_meso: None,
            x_enhanced: None,
            heads: Vec::new(),
            a_global: None,
            o1: None,
            x_global: None,
            logits: Mat::zeros(0, 0),
        });

        let x_first = self.first_stage(tape, bound, x_id, tr.as_mut())?;
        if let Some(t) = tr.as_mut() {
            t.x_local = tape.value(x_first).clone();
        }

        let (x_nodes, p_nodes) = if self.cfg.stages.meso {
            self.meso_stage(tape, bound, x_first, tr.as_mut())?
        } else {
            (x_first, bound.positions)
        };
        if let Some(t) = tr.as_mut() {
            if self.cfg.stages.meso {
                t.x_meso = Some(tape.value(x_nodes).clone());
                t.p_meso = Some(tape.value(p_nodes).clone());
            }
        }

        let x_feat = if self.cfg.stages.global {
            self.global_stage(tape, bound, x_nodes, p_nodes, tr.as_mut())?
        } else {
            x_nodes
        };

        let logits = self.classify(tape, bound, x_feat)?;
        if let Some(t) = tr.as_mut() {
            t.logits = tape.value(logits).clone();
        }
        Ok(Forwarded { logits, trace: tr })
    }

    /// Local aggregation (learnable adjacency, two convolutions, skip
    /// concatenation) or the fixed-graph backbone, per the stage flags.
    fn first_stage(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        x: TensorId,
        mut tr: Option<&mut LayerTrace<F>>,
    ) -> Result<TensorId, ModelError> {
        if let Some((adj, w1, w2)) = bound.local {
            let sym = tape.symmetrize(adj)?;
            let lap = tape.sym_normalize(sym, false)?;
            let lx = tape.matmul(lap, x)?;
            let h1 = tape.relu(tape_matmul(tape, lx, w1)?)?;
            let lh = tape.matmul(lap, h1)?;
            let h2 = tape.relu(tape_matmul(tape, lh, w2)?)?;
            if let Some(t) = tr.as_mut() {
                t.h1 = Some(tape.value(h1).clone());
                t.h2 = Some(tape.value(h2).clone());
            }
            Ok(tape.concat_cols(&[x, h1, h2])?)
        } else {
            let (w1, w2) = bound.backbone.expect("validated: backbone xor local");
            let lap = bound.backbone_l.expect("backbone laplacian precomputed");
            let lx = tape.matmul(lap, x)?;
            let h1 = tape.relu(tape_matmul(tape, lx, w1)?)?;
            let lh = tape.matmul(lap, h1)?;
            let h2 = tape.relu(tape_matmul(tape, lh, w2)?)?;
            if let Some(t) = tr.as_mut() {
                t.h1 = Some(tape.value(h1).clone());
                t.h2 = Some(tape.value(h2).clone());
            }
            Ok(h2)
        }
    }

    /// Builds virtual centers for every region of both partitions and
    /// appends them as extra node rows (features and positions).
    fn meso_stage(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        x_local: TensorId,
        mut tr: Option<&mut LayerTrace<F>>,
    ) -> Result<(TensorId, TensorId), ModelError> {
        let slope = F::from_f64(0.2);
        let mut feature_rows = alloc::vec![x_local];
        let mut position_rows = alloc::vec![bound.positions];
        for (p_idx, partition) in self.partitions.iter().enumerate() {
            let w = bound.meso_w[p_idx];
            for region in partition.regions() {
                let h = tape.gather_rows(x_local, &region.electrodes)?;
                let hw = tape.matmul(h, w)?;
                let e_pre = tape.matmul_nt(hw, hw)?;
                let e = tape.leaky_relu(e_pre, slope)?;
                let lambda = tape.row_sums(e)?;
                let alpha = tape.softmax_row(lambda)?;
                let feature = tape.matmul(alpha, h)?;
                let region_pos = tape.gather_rows(bound.positions, &region.electrodes)?;
                let location = tape.matmul(alpha, region_pos)?;
                feature_rows.push(feature);
                position_rows.push(location);
                if let Some(t) = tr.as_mut() {
                    t.regions.push(RegionTrace {
                        partition: partition.name().to_string(),
                        region: region.name.clone(),
                        e: tape.value(e).clone(),
                        lambda: tape.value(lambda).clone(),
                        center: VirtualCenter {
                            feature: tape.value(feature).clone(),
                            location: tape.value(location).clone(),
                        },
                    });
                }
            }
        }
        let x_meso = tape.concat_rows(&feature_rows)?;
        let p_meso = tape.concat_rows(&position_rows)?;
        Ok((x_meso, p_meso))
    }

    /// Position-enhanced multi-head attention adjacency, sparsified, then
    /// graph convolution(s) over the meso features, with skip concatenation.
    fn global_stage(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        x_nodes: TensorId,
        p_nodes: TensorId,
        mut tr: Option<&mut LayerTrace<F>>,
    ) -> Result<TensorId, ModelError> {
        let g = bound.global.as_ref().expect("global stage bound");
        let head_dim = self.cfg.embed_dim / self.cfg.n_heads;

        let embedded = tape.matmul(p_nodes, g.pos_w)?;
        let embedded = tape.add_bias_row(embedded, g.pos_b)?;
        let x_enh = tape.add(x_nodes, embedded)?;
        if let Some(t) = tr.as_mut() {
            t.x_enhanced = Some(tape.value(x_enh).clone());
        }

        let inv_sqrt_d = F::from_f64(1.0 / Float::sqrt(head_dim as f64));
        let mut mixed: Option<TensorId> = None;
        for h in 0..self.cfg.n_heads {
            let q = tape.matmul(x_enh, g.q[h])?;
            let k = tape.matmul(x_enh, g.k[h])?;
            let scores = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(scores, inv_sqrt_d)?;
            let head = tape.softmax_row(scaled)?;
            if let Some(t) = tr.as_mut() {
                t.heads.push(tape.value(head).clone());
            }
            let weighted = tape.scale_by_entry(head, g.mix, 0, h)?;
            mixed = Some(match mixed {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        let mixed = mixed.expect("at least one head");

        // The retained-connection mask is recomputed from forward values each
        // pass but is a constant to the backward pass; its entries are noted
        // as branches so gradient checks skip perturbations that change it.
        let mask = graph::topk_mask(tape.value(mixed), self.cfg.sparsify_fraction);
        for &m in mask.as_slice() {
            tape.note_branch(m == F::one());
        }
        let a_global = tape.mul_mask(mixed, mask)?;
        if let Some(t) = tr.as_mut() {
            t.a_global = Some(tape.value(a_global).clone());
        }

        let n = tape.value(a_global).rows();
        let diag_zero =
            (0..n).all(|i| tape.value(a_global)[(i, i)] == F::zero());
        tape.note_branch(diag_zero);
        let lap = tape.sym_normalize(a_global, diag_zero)?;

        let mut o = x_nodes;
        for w in &g.w {
            let lo = tape.matmul(lap, o)?;
            o = tape.relu(tape_matmul(tape, lo, *w)?)?;
        }
        if let Some(t) = tr.as_mut() {
            t.o1 = Some(tape.value(o).clone());
        }
        let x_global = tape.concat_cols(&[x_nodes, o])?;
        if let Some(t) = tr.as_mut() {
            t.x_global = Some(tape.value(x_global).clone());
        }
        Ok(x_global)
    }

    /// Flattens node features and applies the three-layer classifier.
    fn classify(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundParams,
        x_feat: TensorId,
    ) -> Result<TensorId, ModelError> {
        let (rows, cols) = tape.value(x_feat).shape();
        let flat = tape.reshape(x_feat, 1, rows * cols)?;
        let (w1, b1, w2, b2, w3, b3) = bound.clf;
        let z1 = tape.matmul(flat, w1)?;
        let z1 = tape.add_bias_row(z1, b1)?;
        let z1 = tape.relu(z1)?;
        let z2 = tape.matmul(z1, w2)?;
        let z2 = tape.add_bias_row(z2, b2)?;
        let z2 = tape.relu(z2)?;
        let z3 = tape.matmul(z2, w3)?;
        Ok(tape.add_bias_row(z3, b3)?)
    }
}

/// Two-step helper: `matmul` where the first operand was just produced.
fn tape_matmul<F: Scalar>(
    tape: &mut Tape<F>,
    a: TensorId,
    b: TensorId,
) -> Result<TensorId, crate::diff::DiffError> {
    tape.matmul(a, b)
}

fn build_layout(cfg: &PgcnConfig, partitions: &[RegionPartition]) -> Vec<ParamSpec> {
    let mut layout = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, init: Init| {
        layout.push(ParamSpec { name, rows, cols, init });
    };
    let n = cfg.n_electrodes;
    let (d1, d2) = cfg.local_dims;
    if cfg.stages.local {
        push("local.adjacency".to_string(), n, n, Init::DistanceAdjacency);
        push("local.w1".to_string(), cfg.in_features, d1, Init::Glorot);
        push("local.w2".to_string(), d1, d2, Init::Glorot);
    }
    if cfg.stages.backbone {
        push("backbone.w1".to_string(), cfg.in_features, d1, Init::Glorot);
        push("backbone.w2".to_string(), d1, cfg.embed_dim, Init::Glorot);
    }
    if cfg.stages.meso {
        for k in 0..partitions.len() {
            push(format!("meso.w{k}"), cfg.embed_dim, cfg.embed_dim, Init::Glorot);
        }
    }
    let mut nodes = n;
    if cfg.stages.meso {
        nodes += partitions.iter().map(|p| p.n_regions()).sum::<usize>();
    }
    let mut width = cfg.embed_dim;
    if cfg.stages.global {
        let head_dim = cfg.embed_dim / cfg.n_heads;
        push("global.pos_w".to_string(), 3, cfg.embed_dim, Init::Glorot);
        push("global.pos_b".to_string(), 1, cfg.embed_dim, Init::Zero);
        for h in 0..cfg.n_heads {
            push(format!("global.q{h}"), cfg.embed_dim, head_dim, Init::Glorot);
            push(format!("global.k{h}"), cfg.embed_dim, head_dim, Init::Glorot);
        }
        push(
            "global.mix".to_string(),
            1,
            cfg.n_heads,
            Init::Const(1.0 / cfg.n_heads as f64),
        );
        for l in 0..cfg.global_layers {
            let in_w = if l == 0 { cfg.embed_dim } else { cfg.global_out };
            push(format!("global.w{l}"), in_w, cfg.global_out, Init::Glorot);
        }
        width += cfg.global_out;
    }
    let flat = nodes * width;
    push("clf.w1".to_string(), flat, cfg.hidden.0, Init::Glorot);
    push("clf.b1".to_string(), 1, cfg.hidden.0, Init::Zero);
    push("clf.w2".to_string(), cfg.hidden.0, cfg.hidden.1, Init::Glorot);
    push("clf.b2".to_string(), 1, cfg.hidden.1, Init::Zero);
    push("clf.w3".to_string(), cfg.hidden.1, cfg.n_classes, Init::Glorot);
    push("clf.b3".to_string(), 1, cfg.n_classes, Init::Zero);
    layout
}
