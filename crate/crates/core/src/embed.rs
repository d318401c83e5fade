//! Eigenfunction embeddings `I_t` and heat-kernel embeddings `Φ_t` as finite
//! point clouds in a truncated `ℓ²`.
//!
//! `I_t(x) = (√m(X) e^{-λ_i t/2} φ_i(x))_{i≥1}` and
//! `Φ_t(x) = (e^{-λ_i t} φ_i(x))_{i≥0}`. Since the spectrum is finite the
//! omitted tail is known exactly, and truncation is chosen from it.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::SpectralData;
use crate::util::fmt17;

/// Relative default for the truncation tolerance (times a diameter bound).
pub const DEFAULT_TAIL_REL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "Phi")]
    Phi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedCloud {
    /// `M × n`; column `x` is the embedded point.
    pub coords: DMatrix<f64>,
    pub t: f64,
    pub tail_sup: f64,
    pub variant: Variant,
    pub data_tag: String,
}

impl EmbeddedCloud {
    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.ncols() == 0
    }

    /// Coordinates zero-padded to `dim` rows.
    pub fn padded(&self, dim: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dim.max(self.dim()), self.len());
        out.rows_mut(0, self.dim()).copy_from(&self.coords);
        out
    }

    /// Pairwise `ℓ²` distances between embedded points.
    pub fn pairwise(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            (self.coords.column(i) - self.coords.column(j)).norm()
        })
    }

    /// One row per coordinate index: `index,p0,p1,…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index");
        for x in 0..self.len() {
            let _ = write!(out, ",p{x}");
        }
        out.push('\n');
        let first = if self.variant == Variant::I { 1 } else { 0 };
        for (r, row) in self.coords.row_iter().enumerate() {
            let _ = write!(out, "{}", r + first);
            for v in row.iter() {
                let _ = write!(out, ",{}", fmt17(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Sidecar `{ "t", "M", "tail_sup", "variant" }`.
    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            t: f64,
            #[serde(rename = "M")]
            m: usize,
            tail_sup: f64,
            variant: Variant,
            data: &'a str,
        }
        serde_json::to_string_pretty(&Sidecar {
            t: self.t,
            m: self.dim(),
            tail_sup: self.tail_sup,
            variant: self.variant,
            data: &self.data_tag,
        })
        .expect("sidecar serializes")
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be positive, got {t}")))
    }
}

/// Squared coordinate weight of eigen-index `i` for `variant`.
fn weight_sq(sd: &SpectralData, variant: Variant, t: f64, i: usize) -> f64 {
    match variant {
        Variant::I => sd.total_mass() * (-sd.lambdas()[i] * t).exp(),
        Variant::Phi => (-2.0 * sd.lambdas()[i] * t).exp(),
    }
}

fn first_index(variant: Variant) -> usize {
    match variant {
        Variant::I => 1,
        Variant::Phi => 0,
    }
}

/// `tail[M]` for every truncation level `M` (number of kept coordinates).
pub fn tail_profile(sd: &SpectralData, variant: Variant, t: f64) -> Vec<f64> {
    let n = sd.n();
    let first = first_index(variant);
    let levels = n - first;
    let mut acc = DVector::<f64>::zeros(n);
    let mut tails = vec![0.0; levels + 1];
    for level in (0..levels).rev() {
        let i = first + level;
        let w = weight_sq(sd, variant, t, i);
        for x in 0..n {
            acc[x] += w * sd.phis()[(x, i)].powi(2);
        }
        tails[level] = acc.max().max(0.0).sqrt();
    }
    tails
}

/// Exact sup-norm of the coordinates beyond the first `m` of `I_t`.
pub fn tail_bound(sd: &SpectralData, t: f64, m: usize) -> Result<f64> {
    check_time(t)?;
    let tails = tail_profile(sd, Variant::I, t);
    tails
        .get(m)
        .copied()
        .ok_or_else(|| Error::Domain(format!("truncation level {m} exceeds {}", tails.len() - 1)))
}

/// Like [`tail_bound`] for the `Φ_t` coordinates.
pub fn tail_bound_phi(sd: &SpectralData, t: f64, m: usize) -> Result<f64> {
    check_time(t)?;
    let tails = tail_profile(sd, Variant::Phi, t);
    tails
        .get(m)
        .copied()
        .ok_or_else(|| Error::Domain(format!("truncation level {m} exceeds {}", tails.len() - 1)))
}

/// Embedding at a fixed truncation level `m`.
pub fn embed_at(sd: &SpectralData, variant: Variant, t: f64, m: usize) -> Result<EmbeddedCloud> {
    check_time(t)?;
    let n = sd.n();
    let first = first_index(variant);
    if m + first > n {
        return Err(Error::Domain(format!(
            "truncation level {m} exceeds {}",
            n - first
        )));
    }
    let mut coords = DMatrix::zeros(m, n);
    for r in 0..m {
        let i = first + r;
        let w = weight_sq(sd, variant, t, i).sqrt();
        for x in 0..n {
            coords[(r, x)] = w * sd.phis()[(x, i)];
        }
    }
    let tail_sup = tail_profile(sd, variant, t)[m];
    Ok(EmbeddedCloud {
        coords,
        t,
        tail_sup,
        variant,
        data_tag: sd.tag().to_string(),
    })
}

/// Smallest truncation level whose tail is at most `tail_tol`.
pub fn truncation_level(sd: &SpectralData, variant: Variant, t: f64, tail_tol: f64) -> usize {
    let tails = tail_profile(sd, variant, t);
    tails
        .iter()
        .position(|&v| v <= tail_tol)
        .unwrap_or(tails.len() - 1)
}

/// Default tolerance: `1e-9` times the diameter bound `2 · max_x ‖I_t(x)‖`.
pub fn default_tail_tol(sd: &SpectralData, t: f64) -> f64 {
    DEFAULT_TAIL_REL * 2.0 * tail_profile(sd, Variant::I, t)[0]
}

pub fn embed_i(sd: &SpectralData, t: f64, tail_tol: f64) -> Result<EmbeddedCloud> {
    check_time(t)?;
    if !(tail_tol > 0.0) {
        return Err(Error::Domain(format!(
            "tail tolerance must be positive, got {tail_tol}"
        )));
    }
    embed_at(
        sd,
        Variant::I,
        t,
        truncation_level(sd, Variant::I, t, tail_tol),
    )
}

/// `I_t` with every coordinate kept (`tail_sup = 0`).
pub fn embed_i_full(sd: &SpectralData, t: f64) -> Result<EmbeddedCloud> {
    embed_at(sd, Variant::I, t, sd.n() - 1)
}

/// Heat-kernel rows in the eigenbasis, all `n` coordinates.
pub fn embed_phi(sd: &SpectralData, t: f64) -> Result<EmbeddedCloud> {
    embed_at(sd, Variant::Phi, t, sd.n())
}
