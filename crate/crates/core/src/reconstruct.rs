//! Reconstruction of maps, measures and metrics from eigenfunction
//! embeddings, ending in an isomorphism verdict with its evidence.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::distances::{hausdorff_coords, pushforward_w2, spec_distances_with, Budget, SpecInput};
use crate::embed::embed_i_full;
use crate::error::{Error, Result};
use crate::mmspace::FiniteMMS;
use crate::spectral::{spectral_data, SpectralData};
use crate::util::fmt17;

/// Number of nontrivial eigenfunctions tested against the pushforward.
pub const ORTHOGONALITY_CHECKS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveredMap {
    pub table: Vec<usize>,
    pub residuals: Vec<f64>,
    pub t: f64,
    pub data_x: String,
    pub data_y: String,
}

impl RecoveredMap {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_bijection(&self, ny: usize) -> bool {
        let mut seen = vec![false; ny];
        self.table.len() == ny
            && self
                .table
                .iter()
                .all(|&y| !std::mem::replace(&mut seen[y], true))
    }

    /// `x_index,y_index,residual` per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_index,y_index,residual\n");
        for (x, (y, r)) in self.table.iter().zip(&self.residuals).enumerate() {
            let _ = writeln!(out, "{x},{y},{}", fmt17(*r));
        }
        out
    }
}

/// `f(x) = argmin_y ‖I_t^a(x) − I_t^b(y)‖`, lowest index on ties.
pub fn recover_map(a: &SpectralData, b: &SpectralData, t: f64) -> Result<RecoveredMap> {
    let dim = a.n().max(b.n());
    let ca = embed_i_full(a, t)?.padded(dim);
    let cb = embed_i_full(b, t)?.padded(dim);
    let nn = hausdorff_coords(&ca, &cb).nn_ab;
    let residuals = nn
        .iter()
        .enumerate()
        .map(|(x, &y)| (ca.column(x) - cb.column(y)).norm())
        .collect();
    Ok(RecoveredMap {
        table: nn,
        residuals,
        t,
        data_x: a.tag().into(),
        data_y: b.tag().into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PushforwardCheck {
    /// `m_X(X) / m_Y(Y)`.
    pub c: f64,
    /// `W₂` between the normalized pushforward and target measures.
    pub deviation: f64,
    /// `|Σ_y φ_i^b(y) p(y)|` for the normalized pushforward `p`, `i = 1..`.
    pub orthogonality: Vec<f64>,
}

pub fn pushforward_check(
    f: &RecoveredMap,
    x: &FiniteMMS,
    y: &FiniteMMS,
    b: &SpectralData,
) -> Result<PushforwardCheck> {
    if f.table.len() != x.n() || b.n() != y.n() {
        return Err(Error::Contract("map and spaces disagree in size".into()));
    }
    let (deviation, push) = pushforward_w2(&f.table, x, y)?;
    let k = ORTHOGONALITY_CHECKS.min(y.n() - 1);
    let orthogonality = (1..=k)
        .map(|i| {
            push.iter()
                .enumerate()
                .map(|(v, p)| b.phis()[(v, i)] * p)
                .sum::<f64>()
                .abs()
        })
        .collect();
    Ok(PushforwardCheck {
        c: x.total_mass() / y.total_mass(),
        deviation,
        orthogonality,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// Relative eigenvalue gap.
    pub eigengap_tol: f64,
    /// `None` means `1e-3 · scale`, scale the larger diameter.
    pub distortion_tol: Option<f64>,
    pub measure_tol: Option<f64>,
    /// Number of leading eigenvalues compared.
    pub window: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eigengap_tol: 1e-3,
            distortion_tol: None,
            measure_tol: None,
            window: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    IsomorphicUpToMeasureScale,
    NotIsomorphic,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub eigen_gap: f64,
    pub eigen_gap_index: usize,
    pub distortion: f64,
    pub covering: f64,
    pub c: f64,
    pub deviation: f64,
    pub orthogonality_max: f64,
    pub residual_max: f64,
    pub residual_mean: f64,
    pub spec_lower: f64,
    pub spec_upper: f64,
    pub eigengap_tol: f64,
    pub distortion_tol: f64,
    pub measure_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsomorphismVerdict {
    pub verdict: Verdict,
    pub evidence: Evidence,
    pub map: RecoveredMap,
}

/// Largest relative gap `|λ_i − μ_i| / max(λ_i, μ_i)` over the window, and
/// the first index attaining it up to roundoff.
pub fn eigen_gap(a: &SpectralData, b: &SpectralData, window: usize) -> (f64, usize) {
    let k = window.min(a.n()).min(b.n());
    let gaps: Vec<f64> = (0..k)
        .map(|i| {
            let (la, lb) = (a.lambdas()[i], b.lambdas()[i]);
            let scale = la.abs().max(lb.abs());
            if scale > 0.0 {
                (la - lb).abs() / scale
            } else {
                0.0
            }
        })
        .collect();
    let max = gaps.iter().copied().fold(0.0, f64::max);
    let index = gaps
        .iter()
        .position(|&g| g >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    (max, index)
}

pub fn isomorphism_verdict(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t: f64,
    thresholds: Thresholds,
    budget: Budget,
    seed: u64,
) -> Result<IsomorphismVerdict> {
    let (sx, sy) = (spectral_data(x)?, spectral_data(y)?);
    let (eig, eig_index) = eigen_gap(&sx, &sy, thresholds.window);
    let d = spec_distances_with(
        SpecInput::new(x, &sx),
        SpecInput::new(y, &sy),
        t,
        budget,
        seed,
    )?;
    let wa = d
        .lower
        .witnesses
        .data_x
        .as_ref()
        .expect("lower report carries data");
    let wb = d
        .lower
        .witnesses
        .data_y
        .as_ref()
        .expect("lower report carries data");
    let a = wa
        .transform
        .apply(&sx)
        .with_tag(format!("{}|aligned", sx.tag()));
    let b = wb
        .transform
        .apply(&sy)
        .with_tag(format!("{}|aligned", sy.tag()));
    let map = recover_map(&a, &b, t)?;
    let (dx, dy) = (x.dist(), y.dist());
    let f = &map.table;
    let mut distortion: f64 = 0.0;
    for j in 0..x.n() {
        for i in 0..x.n() {
            distortion = distortion.max((dy[(f[i], f[j])] - dx[(i, j)]).abs());
        }
    }
    let covering = (0..y.n())
        .map(|v| {
            f.iter()
                .map(|&fx| dy[(v, fx)])
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let push = pushforward_check(&map, x, y, &b)?;
    let scale = x.diameter().max(y.diameter()).max(f64::MIN_POSITIVE);
    let distortion_tol = thresholds.distortion_tol.unwrap_or(1e-3 * scale);
    let measure_tol = thresholds.measure_tol.unwrap_or(1e-3 * scale);
    let spec_upper = d.forward.value.max(d.backward.value);
    let verdict = if eig > thresholds.eigengap_tol {
        Verdict::NotIsomorphic
    } else if distortion <= distortion_tol
        && covering <= distortion_tol
        && push.deviation <= measure_tol
    {
        Verdict::IsomorphicUpToMeasureScale
    } else if spec_upper - d.lower.value > 10.0 * distortion_tol {
        // The aligning data may simply have been missed.
        Verdict::Inconclusive
    } else {
        Verdict::NotIsomorphic
    };
    let n = map.residuals.len() as f64;
    let evidence = Evidence {
        eigen_gap: eig,
        eigen_gap_index: eig_index,
        distortion,
        covering,
        c: push.c,
        deviation: push.deviation,
        orthogonality_max: push.orthogonality.iter().copied().fold(0.0, f64::max),
        residual_max: map.max_residual(),
        residual_mean: map.residuals.iter().sum::<f64>() / n,
        spec_lower: d.lower.value,
        spec_upper,
        eigengap_tol: thresholds.eigengap_tol,
        distortion_tol,
        measure_tol,
    };
    Ok(IsomorphismVerdict {
        verdict,
        evidence,
        map,
    })
}
