//! Heat kernels, heat semigroup and dual heat flow.
//!
//! The kernel is the full finite eigen-sum `p(x, y, t) = Σ_i e^{-λ_i t} φ_i(x) φ_i(y)`.
//! For small-time asymptotics, where `p` falls far below the cancellation
//! noise of that signed sum, [`log_heat_kernel`] evaluates `log p` from the
//! generator directly with nonnegative arithmetic only.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{LaplacianOp, SpectralData};

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be positive, got {t}")))
    }
}

/// `Φ · diag(e^{-λ t / 2})`, the square root of the kernel in the eigenbasis.
fn half_weighted(sd: &SpectralData, t: f64) -> DMatrix<f64> {
    let mut w = sd.phis().clone();
    for (i, mut col) in w.column_iter_mut().enumerate() {
        col *= (-sd.lambdas()[i] * t / 2.0).exp();
    }
    w
}

/// Heat kernel matrix at time `t` (units 1/mass), symmetric by construction.
pub fn heat_kernel(sd: &SpectralData, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let w = half_weighted(sd, t);
    let p = &w * w.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

/// Spectral coefficients `⟨f, φ_i⟩_{L²(m)}`.
pub fn coefficients(sd: &SpectralData, f: &DVector<f64>) -> DVector<f64> {
    sd.phis().tr_mul(&f.component_mul(sd.measure()))
}

/// `(h_t f)(x) = Σ_y f(y) p(x, y, t) m(y)`.
pub fn heat_flow(sd: &SpectralData, f: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    if f.len() != sd.n() {
        return Err(Error::Domain(format!(
            "function has {} values, space has {}",
            f.len(),
            sd.n()
        )));
    }
    let mut c = coefficients(sd, f);
    for (i, ci) in c.iter_mut().enumerate() {
        *ci *= (-sd.lambdas()[i] * t).exp();
    }
    Ok(sd.phis() * c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualFlow {
    /// Probability vector `(h̃_t ν)(y)`.
    pub mass: DVector<f64>,
    /// Density with respect to the reference measure.
    pub density: DVector<f64>,
}

/// Dual heat flow on a probability vector: `(h̃_t ν)(y) = Σ_x p(x, y, t) m(y) ν(x)`.
pub fn dual_heat_flow(sd: &SpectralData, nu: &DVector<f64>, t: f64) -> Result<DualFlow> {
    check_time(t)?;
    check_probability(nu, sd.n())?;
    let mut c = sd.phis().tr_mul(nu);
    for (i, ci) in c.iter_mut().enumerate() {
        *ci *= (-sd.lambdas()[i] * t).exp();
    }
    let density = sd.phis() * c;
    let mass = density.component_mul(sd.measure());
    Ok(DualFlow { mass, density })
}

pub(crate) fn check_probability(nu: &DVector<f64>, n: usize) -> Result<()> {
    if nu.len() != n {
        return Err(Error::Domain(format!(
            "measure has {} entries, space has {n}",
            nu.len()
        )));
    }
    if let Some((i, v)) = nu
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::Domain(format!(
            "entry {i} = {v} is not a nonnegative real"
        )));
    }
    let total = nu.sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("entries sum to {total}, expected 1")));
    }
    Ok(())
}

/// `log p(x, y, t)` evaluated without cancellation.
///
/// With `c = max |L_ii|`, `A = L + cI` is entrywise nonnegative and
/// `e^{tL} = e^{-ct} e^{tA}`. The exponential of `A` is taken by Taylor
/// expansion at a small base step followed by repeated squaring; every
/// intermediate matrix is nonnegative, so tiny entries keep their relative
/// accuracy. A running log-scale absorbs over- and underflow.
pub fn log_heat_kernel(op: &LaplacianOp, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let n = op.n();
    let l = op.matrix();
    let c = (0..n).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
    let a = l + DMatrix::identity(n, n) * c;
    let a_norm = a
        .row_iter()
        .map(|r| r.iter().sum::<f64>())
        .fold(0.0, f64::max);

    let mut squarings = 0u32;
    let mut tau = t;
    while tau * a_norm > 0.5 {
        tau /= 2.0;
        squarings += 1;
    }
    let step = &a * tau;
    let mut term = DMatrix::identity(n, n);
    let mut base = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &step / k as f64;
        base += &term;
        if term.max() <= 1e-18 * base.max() {
            break;
        }
    }
    let mut log_scale = 0.0;
    for _ in 0..squarings {
        base = &base * &base;
        let top = base.max();
        base /= top;
        log_scale = 2.0 * log_scale + top.ln();
    }
    let log_m = op.measure().map(f64::ln);
    Ok(DMatrix::from_fn(n, n, |x, y| {
        base[(x, y)].ln() + log_scale - c * t - log_m[y]
    }))
}

/// Small-time estimates of `d²` from `-4t log p`.
#[derive(Clone, Debug)]
pub struct VaradhanEstimate {
    /// Times actually used, decreasing; times below the floor are dropped.
    pub times: Vec<f64>,
    /// Times rejected by the discretization floor `√t ≥ 3 h`.
    pub below_floor: Vec<f64>,
    /// `-4t log p` per used time.
    pub raw: Vec<DMatrix<f64>>,
    /// Estimate at the smallest used time.
    pub estimate: DMatrix<f64>,
    /// Two-point extrapolate with the model `-4t log p = d² + a t`.
    pub richardson: Option<DMatrix<f64>>,
    /// Entries whose kernel underflowed (NaN in the estimates).
    pub flagged: usize,
    /// Fraction of off-diagonal entries with a finite estimate.
    pub coverage: f64,
}

pub const VARADHAN_FLOOR: f64 = 3.0;

pub fn varadhan_distance(
    op: &LaplacianOp,
    mesh_scale: f64,
    t_list: &[f64],
) -> Result<VaradhanEstimate> {
    if t_list.is_empty() {
        return Err(Error::Domain("time list is empty".into()));
    }
    for w in t_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Domain(
                "time list must be strictly decreasing".into(),
            ));
        }
    }
    for &t in t_list {
        check_time(t)?;
    }
    let (times, below_floor): (Vec<f64>, Vec<f64>) = t_list
        .iter()
        .partition(|&&t| t.sqrt() >= VARADHAN_FLOOR * mesh_scale);
    if times.is_empty() {
        return Err(Error::Domain(format!(
            "every time is below the discretization floor (3 x mesh {mesh_scale})²"
        )));
    }
    let n = op.n();
    let raw = times
        .iter()
        .map(|&t| {
            let lp = log_heat_kernel(op, t)?;
            Ok(DMatrix::from_fn(n, n, |x, y| {
                if x == y {
                    0.0
                } else if lp[(x, y)].is_finite() {
                    -4.0 * t * lp[(x, y)]
                } else {
                    f64::NAN
                }
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let estimate = raw.last().cloned().expect("nonempty");
    let richardson = (times.len() >= 2).then(|| {
        let k = times.len();
        let (t1, t2) = (times[k - 2], times[k - 1]);
        let (e1, e2) = (&raw[k - 2], &raw[k - 1]);
        DMatrix::from_fn(n, n, |x, y| (t1 * e2[(x, y)] - t2 * e1[(x, y)]) / (t1 - t2))
    });
    let flagged = estimate.iter().filter(|v| v.is_nan()).count();
    let off = (n * n - n).max(1) as f64;
    let coverage = if n <= 1 {
        1.0
    } else {
        1.0 - flagged as f64 / off
    };
    Ok(VaradhanEstimate {
        times,
        below_floor,
        raw,
        estimate,
        richardson,
        flagged,
        coverage,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatDiagnostic {
    pub t: f64,
    pub sym_defect: f64,
    pub mass_defect: f64,
    pub semigroup_defect: f64,
    pub positivity_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatDiagnostics {
    pub per_t: Vec<HeatDiagnostic>,
    /// Spearman correlation between `-log p` and distance at the smallest time.
    pub rank_correlation: Option<f64>,
}

impl HeatDiagnostics {
    pub fn worst(&self) -> HeatDiagnostic {
        self.per_t.iter().fold(
            HeatDiagnostic {
                t: f64::NAN,
                sym_defect: 0.0,
                mass_defect: 0.0,
                semigroup_defect: 0.0,
                positivity_min: f64::INFINITY,
            },
            |acc, d| HeatDiagnostic {
                t: f64::NAN,
                sym_defect: acc.sym_defect.max(d.sym_defect),
                mass_defect: acc.mass_defect.max(d.mass_defect),
                semigroup_defect: acc.semigroup_defect.max(d.semigroup_defect),
                positivity_min: acc.positivity_min.min(d.positivity_min),
            },
        )
    }
}

/// `max |Σ_z p(x,z,s) p(z,y,t) m(z) - p(x,y,s+t)|`.
pub fn semigroup_defect(sd: &SpectralData, s: f64, t: f64) -> Result<f64> {
    let ps = heat_kernel(sd, s)?;
    let pt = heat_kernel(sd, t)?;
    let pst = heat_kernel(sd, s + t)?;
    let mut weighted = pt;
    for (z, mut row) in weighted.row_iter_mut().enumerate() {
        row *= sd.measure()[z];
    }
    Ok((ps * weighted - pst).amax())
}

/// Symmetry, stochastic completeness, semigroup and positivity checks on
/// each time of `t_grid` (the semigroup check pairs `t` with itself).
pub fn heat_diagnostics(
    sd: &SpectralData,
    dist: Option<&DMatrix<f64>>,
    t_grid: &[f64],
) -> Result<HeatDiagnostics> {
    let per_t = t_grid
        .iter()
        .map(|&t| {
            let p = heat_kernel(sd, t)?;
            let sym_defect = (&p - p.transpose()).amax();
            let row_mass = &p * sd.measure();
            let mass_defect = row_mass.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            Ok(HeatDiagnostic {
                t,
                sym_defect,
                mass_defect,
                semigroup_defect: semigroup_defect(sd, t, t)?,
                positivity_min: p.min(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rank_correlation = match (dist, t_grid.iter().copied().reduce(f64::min)) {
        (Some(d), Some(t)) if sd.n() > 2 => {
            let p = heat_kernel(sd, t)?;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for x in 0..sd.n() {
                for y in (x + 1)..sd.n() {
                    if p[(x, y)] > 0.0 {
                        xs.push(-p[(x, y)].ln());
                        ys.push(d[(x, y)]);
                    }
                }
            }
            Some(spearman(&xs, &ys))
        }
        _ => None,
    };
    Ok(HeatDiagnostics {
        per_t,
        rank_correlation,
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        // ties up to a relative 1e-12 share their mean rank
        while j < idx.len() && (v[idx[j]] - v[idx[i]]).abs() <= 1e-12 * v[idx[i]].abs().max(1e-300)
        {
            j += 1;
        }
        let r = (i + j - 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
