use serde::Serialize;

use super::spec::{align_data, SpecInput};
use super::transport::wasserstein2;
use super::{Direction, DistanceKind, DistanceReport};
use crate::embed::embed_i_full;
use crate::error::{Error, Result};
use crate::mmspace::FiniteMMS;
use crate::spectral::{
    cluster_multiplicities, spectral_data, BlockTransform, SpectralData, EXACT_CLUSTER_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralApprox {
    pub eps_weak: f64,
    pub eps_full: f64,
}

fn check_total(f: &[usize], from: usize, to: usize) -> Result<()> {
    if f.len() != from || f.iter().any(|&v| v >= to) {
        return Err(Error::Contract(format!(
            "map is not total from {from} into {to} points"
        )));
    }
    Ok(())
}

/// How well `f` carries `I_t^a(X)` onto `I_t^b(Y)`, without truncation.
pub fn spectral_approx_eps(
    f: &[usize],
    a: &SpectralData,
    b: &SpectralData,
    t: f64,
) -> Result<SpectralApprox> {
    check_total(f, a.n(), b.n())?;
    let ca = embed_i_full(a, t)?.padded(a.n().max(b.n()));
    let cb = embed_i_full(b, t)?.padded(a.n().max(b.n()));
    let eps_weak = (0..a.n())
        .map(|x| (ca.column(x) - cb.column(f[x])).norm())
        .fold(0.0, f64::max);
    let cover = (0..b.n())
        .map(|y| {
            f.iter()
                .map(|&fx| (cb.column(fx) - cb.column(y)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(SpectralApprox {
        eps_weak,
        eps_full: eps_weak.max(cover),
    })
}

/// Measured Gromov-Hausdorff approximation quality of `f: X → Y`.
///
/// Components: metric distortion, covering defect of the image, `W₂` between
/// the normalized pushforward and target measures, and the total-mass gap.
pub fn mgh_approx_eps(f: &[usize], x: &FiniteMMS, y: &FiniteMMS) -> Result<DistanceReport> {
    check_total(f, x.n(), y.n())?;
    let (dx, dy) = (x.dist(), y.dist());
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
    let (mx, my) = (x.total_mass(), y.total_mass());
    let (w2, _) = pushforward_w2(f, x, y)?;
    let mass = (mx - my).abs();
    let mut r = DistanceReport::new(
        distortion.max(covering).max(w2 + mass),
        DistanceKind::MghApprox,
        Direction::Exact,
    );
    r.witnesses.map_xy = Some(f.to_vec());
    r.components.insert("distortion".into(), distortion);
    r.components.insert("covering".into(), covering);
    r.components.insert("w2".into(), w2);
    r.components.insert("mass_defect".into(), mass);
    Ok(r)
}

/// `W₂(f♯m_X / m_X(X), m_Y / m_Y(Y))` on `Y`, with the normalized pushforward.
pub fn pushforward_w2(f: &[usize], x: &FiniteMMS, y: &FiniteMMS) -> Result<(f64, Vec<f64>)> {
    check_total(f, x.n(), y.n())?;
    let (mx, my) = (x.total_mass(), y.total_mass());
    let mut push = vec![0.0; y.n()];
    for (i, &fi) in f.iter().enumerate() {
        push[fi] += x.measure()[i] / mx;
    }
    let target: Vec<f64> = y.measure().iter().map(|m| m / my).collect();
    // W₂ is only ½-Hölder in the masses: ulp-level disagreement between two
    // normalizations of the same weights would surface as ~1e-8 transport.
    for (p, q) in push.iter_mut().zip(&target) {
        if (*p - q).abs() <= 8.0 * f64::EPSILON * q {
            *p = *q;
        }
    }
    Ok((wasserstein2(&push, &target, y.dist())?, push))
}

/// Nearest-parameter map between two spaces of a shared family.
pub fn chart_map(x: &FiniteMMS, y: &FiniteMMS) -> Option<Vec<usize>> {
    x.chart()?.nearest_map(y.chart()?)
}

/// Upper estimate of the measured GH distance: the better of the two
/// family maps (or of the embedding-recovered maps for unrelated spaces).
pub fn gh_family_estimate(x: &FiniteMMS, y: &FiniteMMS) -> Result<DistanceReport> {
    let (f, g) = match (chart_map(x, y), chart_map(y, x)) {
        (Some(f), Some(g)) => (f, g),
        _ => {
            let (sx, sy) = (spectral_data(x)?, spectral_data(y)?);
            let a = BlockTransform::identity(&cluster_multiplicities(&sx, EXACT_CLUSTER_TOL));
            let al = align_data(
                SpecInput::new(x, &sx),
                SpecInput::new(y, &sy),
                1.0,
                &a,
                8,
                0,
            )?;
            (al.pairs.nn_ab, al.pairs.nn_ba)
        }
    };
    let fwd = mgh_approx_eps(&f, x, y)?;
    let bwd = mgh_approx_eps(&g, y, x)?;
    let mut best = if fwd.value <= bwd.value {
        fwd
    } else {
        let mut r = bwd;
        r.witnesses.map_yx = r.witnesses.map_xy.take();
        r
    };
    best.kind = DistanceKind::GhFamily;
    best.direction = Direction::UpperEstimate;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::{make_cycle, make_point};
    use crate::spectral::spectral_data;
    use std::f64::consts::PI;

    #[test]
    fn identity_is_exact() {
        let x = make_cycle(1.0, 12).unwrap();
        let id: Vec<usize> = (0..12).collect();
        let r = mgh_approx_eps(&id, &x, &x).unwrap();
        assert_eq!(r.value, 0.0);
        let sd = spectral_data(&x).unwrap();
        let s = spectral_approx_eps(&id, &sd, &sd, 1.0).unwrap();
        assert_eq!((s.eps_weak, s.eps_full), (0.0, 0.0));
    }

    #[test]
    fn collapse_to_point() {
        let eps = 0.1;
        let x = make_cycle(eps, 16).unwrap();
        let p = make_point(2.0 * PI * eps).unwrap();
        let r = mgh_approx_eps(&[0; 16], &x, &p).unwrap();
        assert!((r.components["distortion"] - PI * eps).abs() < 1e-15);
        assert_eq!(r.components["w2"], 0.0);
        assert!(r.components["mass_defect"] < 1e-15);
    }

    #[test]
    fn nearest_angle_halving() {
        let fine = make_cycle(1.0, 32).unwrap();
        let coarse = make_cycle(1.0, 16).unwrap();
        let f = chart_map(&fine, &coarse).unwrap();
        let r = mgh_approx_eps(&f, &fine, &coarse).unwrap();
        assert!(r.components["distortion"] <= PI / 16.0 + 1e-12);
        assert!(r.components["w2"] <= PI / 16.0);
        assert!(mgh_approx_eps(&f[..3], &fine, &coarse).is_err());
    }
}
