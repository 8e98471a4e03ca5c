//! Electrode geometry: montages, pairwise distances, and region partitions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;

use crate::mat::Mat;

/// Text of the bundled 62-electrode montage (10-10 names on a spherical head
/// model, coordinates in centimetres, scaled so neighbouring electrodes sit
/// about three units apart).
pub const DEFAULT_MONTAGE_CSV: &str = include_str!("../assets/seed62_montage.csv");

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("montage has no electrodes")]
    EmptyMontage,
    #[error("duplicate electrode name `{0}`")]
    DuplicateElectrode(String),
    #[error("montage line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("non-finite coordinate for electrode `{0}`")]
    NonFiniteCoordinate(String),
    #[error("unknown electrode `{0}`")]
    UnknownElectrode(String),
    #[error("invalid partition `{name}`: {msg}")]
    InvalidPartition { name: String, msg: String },
}

/// Named electrodes with 3-D scalp positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    names: Vec<String>,
    positions: Vec<[f64; 3]>,
}

impl Montage {
    /// Builds a montage from `(name, position)` pairs, rejecting duplicates,
    /// non-finite coordinates, and the empty list.
    pub fn new(entries: Vec<(String, [f64; 3])>) -> Result<Self, GeometryError> {
        if entries.is_empty() {
            return Err(GeometryError::EmptyMontage);
        }
        let mut names = Vec::with_capacity(entries.len());
        let mut positions = Vec::with_capacity(entries.len());
        for (name, pos) in entries {
            if names.iter().any(|n| *n == name) {
                return Err(GeometryError::DuplicateElectrode(name));
            }
            if !pos.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFiniteCoordinate(name));
            }
            names.push(name);
            positions.push(pos);
        }
        Ok(Montage { names, positions })
    }

    /// Parses `name,x,y,z` CSV text. A first line reading `name,x,y,z`
    /// (any capitalisation) is treated as a header; blank lines are skipped.
    pub fn parse_csv(text: &str) -> Result<Self, GeometryError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let lowered = line.to_lowercase();
            if idx == 0 && lowered.replace(' ', "") == "name,x,y,z" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(GeometryError::ParseError {
                    line: idx + 1,
                    msg: format!("expected 4 comma-separated fields, found {}", fields.len()),
                });
            }
            if fields[0].is_empty() {
                return Err(GeometryError::ParseError {
                    line: idx + 1,
                    msg: "empty electrode name".to_string(),
                });
            }
            let mut pos = [0.0f64; 3];
            for (k, field) in fields[1..].iter().enumerate() {
                pos[k] = field.parse::<f64>().map_err(|_| GeometryError::ParseError {
                    line: idx + 1,
                    msg: format!("`{field}` is not a number"),
                })?;
            }
            entries.push((fields[0].to_string(), pos));
        }
        Montage::new(entries)
    }

    /// The bundled 62-electrode montage.
    pub fn default_seed62() -> Montage {
        Montage::parse_csv(DEFAULT_MONTAGE_CSV).expect("bundled montage is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    /// Index of the electrode with this exact name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Positions as an `n x 3` matrix, row `i` = electrode `i`.
    pub fn positions_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.len(), 3, |i, j| self.positions[i][j])
    }

    /// Euclidean distance between every electrode pair.
    pub fn pairwise_distances(&self) -> DistanceMatrix {
        let n = self.len();
        let mut d = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.positions[i];
                let b = self.positions[j];
                let mut sq = 0.0;
                for k in 0..3 {
                    let diff = a[k] - b[k];
                    sq += diff * diff;
                }
                let dist = Float::sqrt(sq);
                d[(i, j)] = dist;
                d[(j, i)] = dist;
            }
        }
        DistanceMatrix(d)
    }
}

/// Symmetric matrix of pairwise electrode distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Mat<f64>);

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.0
    }
}

/// One named group of electrodes inside a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    /// Electrode indices into the montage, in declaration order.
    pub electrodes: Vec<usize>,
}

/// A division of all electrodes into named, non-overlapping regions that
/// together cover the montage exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    name: String,
    regions: Vec<Region>,
    n_electrodes: usize,
}

impl RegionPartition {
    /// Validates that the regions are non-empty, in range, disjoint, and
    /// jointly cover all `n_electrodes` indices.
    pub fn new(
        name: impl Into<String>,
        regions: Vec<Region>,
        n_electrodes: usize,
    ) -> Result<Self, GeometryError> {
        let name = name.into();
        let invalid = |msg: String| GeometryError::InvalidPartition { name: name.clone(), msg };
        if regions.is_empty() {
            return Err(invalid("partition has no regions".to_string()));
        }
        let mut seen = alloc::vec![false; n_electrodes];
        for region in &regions {
            if region.electrodes.is_empty() {
                return Err(invalid(format!("region `{}` is empty", region.name)));
            }
            for &e in &region.electrodes {
                if e >= n_electrodes {
                    return Err(invalid(format!(
                        "region `{}` refers to electrode {e}, but the montage has {n_electrodes}",
                        region.name
                    )));
                }
                if seen[e] {
                    return Err(invalid(format!(
                        "electrode {e} appears in more than one region"
                    )));
                }
                seen[e] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|covered| !covered) {
            return Err(invalid(format!("electrode {missing} is not covered by any region")));
        }
        Ok(RegionPartition { name, regions, n_electrodes })
    }

    /// Builds a partition from electrode names, resolving them through the
    /// montage.
    pub fn from_names(
        name: impl Into<String>,
        groups: &[(&str, &[&str])],
        montage: &Montage,
    ) -> Result<Self, GeometryError> {
        let mut regions = Vec::with_capacity(groups.len());
        for (region_name, electrode_names) in groups {
            let mut electrodes = Vec::with_capacity(electrode_names.len());
            for en in *electrode_names {
                let idx = montage
                    .index_of(en)
                    .ok_or_else(|| GeometryError::UnknownElectrode((*en).to_string()))?;
                electrodes.push(idx);
            }
            regions.push(Region { name: (*region_name).to_string(), electrodes });
        }
        RegionPartition::new(name, regions, montage.len())
    }

    /// The standard seven anatomical regions of the bundled montage.
    pub fn default_seven(montage: &Montage) -> Result<Self, GeometryError> {
        RegionPartition::from_names("regions7", DEFAULT_SEVEN_REGIONS, montage)
    }

    /// Left/right hemispheres of the bundled montage. Midline electrodes are
    /// split between the halves so both contain 31 electrodes.
    pub fn default_hemispheres(montage: &Montage) -> Result<Self, GeometryError> {
        RegionPartition::from_names("hemispheres", DEFAULT_HEMISPHERES, montage)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn region(&self, k: usize) -> &Region {
        &self.regions[k]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }
}

/// Region table backing [`RegionPartition::default_seven`].
pub const DEFAULT_SEVEN_REGIONS: &[(&str, &[&str])] = &[
    ("prefrontal", &["FP1", "FPZ", "FP2", "AF3", "AF4"]),
    (
        "frontal",
        &["F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8", "FC3", "FC1", "FCZ", "FC2", "FC4"],
    ),
    ("temporal_left", &["FT7", "FC5", "T7", "C5", "TP7", "CP5"]),
    ("temporal_right", &["FT8", "FC6", "T8", "C6", "TP8", "CP6"]),
    ("central", &["C3", "C1", "CZ", "C2", "C4", "CP3", "CP1", "CPZ", "CP2", "CP4"]),
    ("parietal", &["P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8"]),
    (
        "occipital",
        &["PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2"],
    ),
];

/// Region table backing [`RegionPartition::default_hemispheres`].
pub const DEFAULT_HEMISPHERES: &[(&str, &[&str])] = &[
    (
        "left",
        &[
            "FP1", "AF3", "F7", "F5", "F3", "F1", "FT7", "FC5", "FC3", "FC1", "T7", "C5", "C3",
            "C1", "TP7", "CP5", "CP3", "CP1", "P7", "P5", "P3", "P1", "PO7", "PO5", "PO3", "CB1",
            "O1", "FPZ", "FZ", "FCZ", "CZ",
        ],
    ),
    (
        "right",
        &[
            "FP2", "AF4", "F2", "F4", "F6", "F8", "FC2", "FC4", "FC6", "FT8", "C2", "C4", "C6",
            "T8", "CP2", "CP4", "CP6", "TP8", "P2", "P4", "P6", "P8", "PO4", "PO6", "PO8", "O2",
            "CB2", "CPZ", "PZ", "POZ", "OZ",
        ],
    ),
];
