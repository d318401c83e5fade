use nalgebra::DMatrix;

use crate::embed::EmbeddedCloud;
use crate::error::{Error, Result};

/// Hausdorff distance between two column clouds together with the
/// nearest-neighbour tables that realize it.
#[derive(Clone, Debug)]
pub struct NearestPairs {
    pub value: f64,
    /// `sup_a inf_b`.
    pub directed_ab: f64,
    /// `sup_b inf_a`.
    pub directed_ba: f64,
    pub nn_ab: Vec<usize>,
    pub nn_ba: Vec<usize>,
}

fn exact_sq(a: &DMatrix<f64>, x: usize, b: &DMatrix<f64>, y: usize) -> f64 {
    let (ra, rb) = (a.nrows(), b.nrows());
    let r = ra.min(rb);
    let ca = a.column(x);
    let cb = b.column(y);
    let mut s = 0.0;
    for i in 0..r {
        let d = ca[i] - cb[i];
        s += d * d;
    }
    for i in r..ra {
        s += ca[i] * ca[i];
    }
    for i in r..rb {
        s += cb[i] * cb[i];
    }
    s
}

/// Nearest neighbours in both directions between the columns of `a` and `b`.
///
/// Rows missing from the shorter matrix count as zeros. Candidates are
/// ranked through the Gram matrix and the winners recomputed from explicit
/// differences, so near-coincident points are resolved to full precision.
/// Ties go to the lowest index.
pub fn hausdorff_coords(a: &DMatrix<f64>, b: &DMatrix<f64>) -> NearestPairs {
    let (na, nb) = (a.ncols(), b.ncols());
    assert!(na > 0 && nb > 0, "clouds must be nonempty");
    let r = a.nrows().min(b.nrows());
    let norm_a: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let norm_b: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    let gram = a.rows(0, r).transpose() * b.rows(0, r);
    let max_a = norm_a.iter().copied().fold(0.0, f64::max);
    let max_b = norm_b.iter().copied().fold(0.0, f64::max);
    let approx = |x: usize, y: usize| norm_a[x] + norm_b[y] - 2.0 * gram[(x, y)];

    let mut min_ab = vec![f64::INFINITY; na];
    let mut min_ba = vec![f64::INFINITY; nb];
    for y in 0..nb {
        for x in 0..na {
            let v = approx(x, y);
            if v < min_ab[x] {
                min_ab[x] = v;
            }
            if v < min_ba[y] {
                min_ba[y] = v;
            }
        }
    }
    let margin_a: Vec<f64> = norm_a
        .iter()
        .map(|v| 1e-10 * (v + max_b) + f64::MIN_POSITIVE)
        .collect();
    let margin_b: Vec<f64> = norm_b
        .iter()
        .map(|v| 1e-10 * (v + max_a) + f64::MIN_POSITIVE)
        .collect();

    let mut best_ab = vec![(f64::INFINITY, 0usize); na];
    let mut best_ba = vec![(f64::INFINITY, 0usize); nb];
    for y in 0..nb {
        for x in 0..na {
            let v = approx(x, y);
            let near_a = v <= min_ab[x] + margin_a[x];
            let near_b = v <= min_ba[y] + margin_b[y];
            if near_a || near_b {
                let e = exact_sq(a, x, b, y);
                if near_a && e < best_ab[x].0 {
                    best_ab[x] = (e, y);
                }
                if near_b && e < best_ba[y].0 {
                    best_ba[y] = (e, x);
                }
            }
        }
    }
    let directed_ab = best_ab.iter().map(|p| p.0).fold(0.0, f64::max).sqrt();
    let directed_ba = best_ba.iter().map(|p| p.0).fold(0.0, f64::max).sqrt();
    NearestPairs {
        value: directed_ab.max(directed_ba),
        directed_ab,
        directed_ba,
        nn_ab: best_ab.into_iter().map(|p| p.1).collect(),
        nn_ba: best_ba.into_iter().map(|p| p.1).collect(),
    }
}

/// Hausdorff distance in `ℓ²` between two embedded clouds of the same time.
pub fn hausdorff_l2(a: &EmbeddedCloud, b: &EmbeddedCloud) -> Result<f64> {
    if a.t != b.t {
        return Err(Error::Contract(format!(
            "clouds embedded at different times {} and {}; rescale first",
            a.t, b.t
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("empty cloud".into()));
    }
    Ok(hausdorff_coords(&a.coords, &b.coords).value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Variant;

    fn cloud(rows: usize, cols: usize, data: &[f64]) -> EmbeddedCloud {
        EmbeddedCloud {
            coords: DMatrix::from_column_slice(rows, cols, data),
            t: 1.0,
            tail_sup: 0.0,
            variant: Variant::I,
            data_tag: String::new(),
        }
    }

    #[test]
    fn small_examples() {
        let a = cloud(2, 1, &[0.0, 0.0]);
        let b = cloud(2, 1, &[0.3, 0.0]);
        assert_eq!(hausdorff_l2(&a, &a).unwrap(), 0.0);
        assert!((hausdorff_l2(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        let two = cloud(1, 2, &[0.0, 1.0]);
        let origin = cloud(1, 1, &[0.0]);
        let h = hausdorff_coords(&two.coords, &origin.coords);
        assert_eq!(h.value, 1.0);
        assert_eq!((h.directed_ab, h.directed_ba), (1.0, 0.0));
    }

    #[test]
    fn mismatched_time_is_contract_error() {
        let a = cloud(1, 1, &[0.0]);
        let mut b = a.clone();
        b.t = 2.0;
        assert!(matches!(hausdorff_l2(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn padding_counts_missing_rows_as_zero() {
        let a = DMatrix::from_column_slice(1, 1, &[3.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 4.0]);
        assert_eq!(hausdorff_coords(&a, &b).value, 5.0);
    }

    #[test]
    fn near_coincident_points_resolve_exactly() {
        let big = DMatrix::from_fn(40, 30, |i, j| {
            ((i * 7 + j * 13) % 17) as f64 * 1e3 + 0.25 * j as f64
        });
        let mut other = big.clone();
        other[(0, 5)] += 1e-11;
        let gap = other[(0, 5)] - big[(0, 5)];
        let h = hausdorff_coords(&big, &other);
        assert_eq!(h.value, gap);
        assert_eq!(h.nn_ab, (0..30).collect::<Vec<_>>());
    }
}
