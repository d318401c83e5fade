//! Distances between finite metric measure spaces: Hausdorff distance of
//! embedded clouds, spectral distances over spectral datas, the
//! Kasue-Kumura heat-kernel distance, approximation qualities of maps and
//! exact `L²`-Wasserstein transport.

mod approx;
mod hausdorff;
mod kk;
mod spec;
mod transport;

use std::collections::BTreeMap;

use serde::Serialize;

pub use approx::{
    chart_map, gh_family_estimate, mgh_approx_eps, pushforward_w2, spectral_approx_eps,
    SpectralApprox,
};
pub use hausdorff::{hausdorff_coords, hausdorff_l2, NearestPairs};
pub use kk::{
    kk_distance, kk_distance_data, kk_grid, kk_weight, MapSource, KK_GRID_LEN, KK_T_MAX, KK_T_MIN,
};
pub use spec::{
    align_data, d_spec, d_spec_directed, d_spec_lower, family_member, space_key, spec_distances,
    spec_distances_with, spec_value, Alignment, SpecDistances, SpecInput, COARSE_TAIL_REL,
    ICP_MAX_ITER, ICP_TOL,
};
pub use transport::{transport_plan, wasserstein2, TransportPlan, MASS_TOL};

use crate::spectral::BlockTransform;
use crate::util::fmt17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Exact,
    UpperEstimate,
    LowerEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Hausdorff,
    SpecLower,
    SpecForward,
    SpecBackward,
    Spec,
    KasueKumura,
    MghApprox,
    GhFamily,
    Wasserstein2,
}

/// Per-space candidate counts: `inner` alignment starts, `outer` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Budget {
    pub inner: usize,
    pub outer: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            inner: 8,
            outer: 32,
        }
    }
}

/// Spectral data of one side, as a change of basis from its canonical data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataWitness {
    /// Which space the data belongs to: `"X"` or `"Y"`.
    pub space: String,
    /// Candidate-family index for sampled data, `None` for aligned data.
    pub sample: Option<usize>,
    pub transform: BlockTransform,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Witnesses {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_x: Option<DataWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_y: Option<DataWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_xy: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_yx: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub value: f64,
    pub kind: DistanceKind,
    pub direction: Direction,
    pub witnesses: Witnesses,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_budget: Option<Budget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Radius of the truncation interval around `value`.
    pub tail_radius: f64,
    pub components: BTreeMap<String, f64>,
}

impl DistanceReport {
    pub(crate) fn new(value: f64, kind: DistanceKind, direction: Direction) -> Self {
        DistanceReport {
            value,
            kind,
            direction,
            witnesses: Witnesses::default(),
            sample_budget: None,
            seed: None,
            tail_radius: 0.0,
            components: BTreeMap::new(),
        }
    }

    pub fn summary(&self) -> String {
        let kind = serde_json::to_value(self.kind).expect("enum serializes");
        let dir = serde_json::to_value(self.direction).expect("enum serializes");
        format!(
            "{} = {} ({}, tail radius {})",
            kind.as_str().unwrap_or_default(),
            fmt17(self.value),
            dir.as_str().unwrap_or_default(),
            fmt17(self.tail_radius)
        )
    }
}
