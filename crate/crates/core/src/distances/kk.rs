use nalgebra::DMatrix;
use rayon::prelude::*;

use super::spec::{align_data, SpecInput};
use super::{Direction, DistanceKind, DistanceReport};
use crate::error::{Error, Result};
use crate::heat::heat_kernel;
use crate::mmspace::FiniteMMS;
use crate::spectral::{
    cluster_multiplicities, spectral_data, BlockTransform, SpectralData, EXACT_CLUSTER_TOL,
};

pub const KK_T_MIN: f64 = 0.05;
pub const KK_T_MAX: f64 = 20.0;
pub const KK_GRID_LEN: usize = 65;

/// `e^{-(t + 1/t)}`, maximal at `t = 1`.
pub fn kk_weight(t: f64) -> f64 {
    (-(t + 1.0 / t)).exp()
}

/// Log-spaced grid on `[0.05, 20]`, symmetric in `log t` so that the middle
/// point is exactly `t = 1`.
pub fn kk_grid() -> Vec<f64> {
    let half = (KK_GRID_LEN - 1) as f64 / 2.0;
    let span = KK_T_MAX.ln();
    (0..KK_GRID_LEN)
        .map(|k| (span * (k as f64 - half) / half).exp())
        .collect()
}

/// Where the maps `f: X → Y` and `g: Y → X` come from.
#[derive(Clone, Debug)]
pub enum MapSource {
    Given {
        f: Vec<usize>,
        g: Vec<usize>,
    },
    /// Nearest points in the shared parametrization of both spaces.
    Chart,
    /// Nearest neighbours between `I_t` clouds after aligning `Y`'s data.
    FromEmbedding {
        t: f64,
        inner: usize,
        seed: u64,
    },
}

fn check_map(map: &[usize], from: usize, to: usize, name: &str) -> Result<()> {
    if map.len() != from || map.iter().any(|&v| v >= to) {
        return Err(Error::Contract(format!(
            "{name} is not a total map between {from} and {to} points"
        )));
    }
    Ok(())
}

/// `max_{x,x'} |p_Y(f x, f x') − p_X(x, x')|` and its maximizing pair.
fn pullback_gap(px: &DMatrix<f64>, py: &DMatrix<f64>, f: &[usize]) -> (f64, [usize; 2]) {
    let n = px.nrows();
    let mut best = (-1.0, [0, 0]);
    for j in 0..n {
        for i in 0..n {
            let d = (py[(f[i], f[j])] - px[(i, j)]).abs();
            if d > best.0 {
                best = (d, [i, j]);
            }
        }
    }
    best
}

/// Kasue-Kumura estimate for the specific maps `f` and `g`.
pub fn kk_distance_data(
    sx: &SpectralData,
    sy: &SpectralData,
    t_grid: &[f64],
    f: &[usize],
    g: &[usize],
) -> Result<DistanceReport> {
    if t_grid.is_empty() {
        return Err(Error::Contract("empty time grid".into()));
    }
    if let Some(bad) = t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("time must be positive, got {bad}")));
    }
    check_map(f, sx.n(), sy.n(), "f")?;
    check_map(g, sy.n(), sx.n(), "g")?;
    let per_t: Vec<Result<(f64, bool, [usize; 2])>> = t_grid
        .par_iter()
        .map(|&t| {
            let px = heat_kernel(sx, t)?;
            let py = heat_kernel(sy, t)?;
            let (df, pf) = pullback_gap(&px, &py, f);
            let (dg, pg) = pullback_gap(&py, &px, g);
            let w = kk_weight(t);
            Ok(if df >= dg {
                (w * df, true, pf)
            } else {
                (w * dg, false, pg)
            })
        })
        .collect();
    let mut best = (-1.0, 0usize, true, [0, 0]);
    for (k, r) in per_t.into_iter().enumerate() {
        let (v, forward, pair) = r?;
        if v > best.0 {
            best = (v, k, forward, pair);
        }
    }
    let mut report =
        DistanceReport::new(best.0, DistanceKind::KasueKumura, Direction::UpperEstimate);
    report.witnesses.map_xy = Some(f.to_vec());
    report.witnesses.map_yx = Some(g.to_vec());
    report.witnesses.t = Some(t_grid[best.1]);
    report.witnesses.pair = Some(best.3);
    report
        .components
        .insert("forward_map".into(), if best.2 { 1.0 } else { 0.0 });
    let edge = kk_weight(t_grid.iter().copied().fold(f64::INFINITY, f64::min))
        .max(kk_weight(t_grid.iter().copied().fold(0.0, f64::max)));
    report.components.insert("edge_weight".into(), edge);
    Ok(report)
}

pub fn kk_distance(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t_grid: &[f64],
    maps: MapSource,
) -> Result<DistanceReport> {
    let (sx, sy) = (spectral_data(x)?, spectral_data(y)?);
    let (f, g) = match maps {
        MapSource::Given { f, g } => (f, g),
        MapSource::Chart => {
            let (cx, cy) = x
                .chart()
                .zip(y.chart())
                .ok_or_else(|| Error::Contract("both spaces need a parametrization".into()))?;
            let f = cx
                .nearest_map(cy)
                .ok_or_else(|| Error::Contract("incompatible parametrizations".into()))?;
            let g = cy
                .nearest_map(cx)
                .ok_or_else(|| Error::Contract("incompatible parametrizations".into()))?;
            (f, g)
        }
        MapSource::FromEmbedding { t, inner, seed } => {
            let (ix, iy) = (SpecInput::new(x, &sx), SpecInput::new(y, &sy));
            let table = cluster_multiplicities(&sx, EXACT_CLUSTER_TOL);
            let a = BlockTransform::identity(&table);
            let al = align_data(ix, iy, t, &a, inner, seed)?;
            (al.pairs.nn_ab, al.pairs.nn_ba)
        }
    };
    kk_distance_data(&sx, &sy, t_grid, &f, &g)
}
