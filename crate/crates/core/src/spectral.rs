//! Measure-weighted Laplacians and their spectral data.
//!
//! The eigenproblem `-L φ = λ φ` is solved through the similarity transform
//! `S = Λ^{1/2} L Λ^{-1/2}` with `Λ = diag(m)`, which is symmetric whenever
//! `L` is self-adjoint in `L²(m)`. Eigenvectors of `S` map back to
//! eigenfunctions that are orthonormal in `L²(m)` to working precision.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mmspace::FiniteMMS;
use crate::util::fmt17;

/// Clustering tolerance for spaces with exact symmetries.
pub const EXACT_CLUSTER_TOL: f64 = 1e-6;
/// Clustering tolerance for near-degenerate families.
pub const NEAR_CLUSTER_TOL: f64 = 1e-2;

/// Eigenvectors whose residual exceeds this (relative) are reported as a failure.
const RESIDUAL_FAIL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianOp {
    matrix: DMatrix<f64>,
    measure: DVector<f64>,
}

impl LaplacianOp {
    /// Wraps a matrix after checking the generator invariants against `measure`.
    pub fn new(matrix: DMatrix<f64>, measure: DVector<f64>) -> Result<Self> {
        let n = measure.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidOperator(format!(
                "operator is {}x{} but measure has {n} entries",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("non-finite entries".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let tol = 1e-10 * scale;
        for i in 0..n {
            let row_sum: f64 = matrix.row(i).iter().sum();
            if row_sum.abs() > tol * (n as f64).sqrt().max(1.0) {
                return Err(Error::InvalidOperator(format!(
                    "row {i} sums to {row_sum:e}, expected 0"
                )));
            }
            for j in 0..n {
                if i != j && matrix[(i, j)] < 0.0 {
                    return Err(Error::InvalidOperator(format!(
                        "off-diagonal entry ({i}, {j}) = {:e} is negative",
                        matrix[(i, j)]
                    )));
                }
                if j > i {
                    let a = measure[i] * matrix[(i, j)];
                    let b = measure[j] * matrix[(j, i)];
                    if (a - b).abs() > 1e-10 * a.abs().max(b.abs()).max(tol * measure.max()) {
                        return Err(Error::InvalidOperator(format!(
                            "not self-adjoint for the measure at ({i}, {j}): {a:e} vs {b:e}"
                        )));
                    }
                }
            }
        }
        Ok(LaplacianOp { matrix, measure })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn measure(&self) -> &DVector<f64> {
        &self.measure
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.matrix * f
    }
}

pub fn build_laplacian(x: &FiniteMMS) -> Result<LaplacianOp> {
    let stencil = x.stencil().ok_or_else(|| {
        Error::InvalidOperator("space carries no Laplacian; supply one for custom spaces".into())
    })?;
    if stencil.len() != x.n() {
        return Err(Error::InvalidOperator(format!(
            "stencil has {} points, space has {}",
            stencil.len(),
            x.n()
        )));
    }
    LaplacianOp::new(stencil.assemble(), x.measure().clone())
}

/// Eigenvalues of `-L` in nondecreasing order with `L²(m)`-orthonormal
/// eigenfunctions stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralData {
    lambdas: DVector<f64>,
    phis: DMatrix<f64>,
    measure: DVector<f64>,
    tag: String,
}

impl SpectralData {
    /// Assembles spectral data from parts without checking the invariants;
    /// see [`SpectralData::check`].
    pub fn from_parts(
        lambdas: DVector<f64>,
        phis: DMatrix<f64>,
        measure: DVector<f64>,
        tag: impl Into<String>,
    ) -> Self {
        SpectralData {
            lambdas,
            phis,
            measure,
            tag: tag.into(),
        }
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &DVector<f64> {
        &self.lambdas
    }

    pub fn phis(&self) -> &DMatrix<f64> {
        &self.phis
    }

    pub fn measure(&self) -> &DVector<f64> {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        crate::util::stable_sum(self.measure.iter())
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// The data carried over to `rescale(X, alpha, beta)`: eigenvalues divide
    /// by `alpha²`, eigenfunctions by `√beta`.
    pub fn transported(&self, alpha: f64, beta: f64) -> SpectralData {
        SpectralData {
            lambdas: &self.lambdas / (alpha * alpha),
            phis: &self.phis / beta.sqrt(),
            measure: &self.measure * beta,
            tag: format!("{}|transport({alpha},{beta})", self.tag),
        }
    }

    /// Worst orthonormality defect `|Σ_x φ_i φ_j m - δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let weighted = DMatrix::from_fn(self.n(), self.n(), |x, i| {
            self.phis[(x, i)] * self.measure[x]
        });
        let gram = self.phis.transpose() * weighted;
        (gram - DMatrix::identity(self.n(), self.n())).amax()
    }

    /// Worst eigen-equation residual `‖Lφ_i + λ_i φ_i‖_∞ / (1 + λ_i)`.
    pub fn residual(&self, op: &LaplacianOp) -> f64 {
        let lphi = op.matrix() * &self.phis;
        (0..self.n())
            .map(|i| {
                let r = (lphi.column(i) + self.phis.column(i) * self.lambdas[i]).amax();
                r / (1.0 + self.lambdas[i].abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Full eigendecomposition of `-L` with a deterministic basis convention.
///
/// Within every numerically degenerate cluster the basis is rebuilt by
/// Gram-Schmidt on the projections of the coordinate vectors `e_0, e_1, …`
/// onto the eigenspace, so it depends on the eigenspace only. Each
/// eigenfunction is then signed so that its first nonzero entry is positive.
pub fn eigensolve(op: &LaplacianOp) -> Result<SpectralData> {
    let n = op.n();
    let m = op.measure();
    let sqrt_m = m.map(f64::sqrt);
    let mut s = DMatrix::from_fn(n, n, |i, j| -sqrt_m[i] * op.matrix()[(i, j)] / sqrt_m[j]);
    s = (&s + s.transpose()) * 0.5;
    let norm = s.amax();
    let eig = s.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let mut lambdas = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
    let mut vecs = DMatrix::from_fn(n, n, |x, k| eig.eigenvectors[(x, order[k])]);

    let noise = 64.0 * f64::EPSILON * norm.max(1.0) * (n as f64).sqrt();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && lambdas[end] - lambdas[end - 1] <= noise.max(1e-12 * lambdas[end].abs()) {
            end += 1;
        }
        if end - start > 1 {
            canonicalize_block(&mut vecs, start, end - start);
        }
        start = end;
    }

    // the constant eigenfunction is known exactly for connected spaces
    if n >= 1 && lambdas[0].abs() <= noise && (n == 1 || lambdas[1] > noise) {
        lambdas[0] = 0.0;
        let total = m.sum();
        for x in 0..n {
            vecs[(x, 0)] = sqrt_m[x] / total.sqrt();
        }
    }

    for k in 0..n {
        let col = vecs.column(k);
        let cutoff = 1e-8 * col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > cutoff) {
            if *first < 0.0 {
                vecs.column_mut(k).neg_mut();
            }
        }
    }

    let phis = DMatrix::from_fn(n, n, |x, k| vecs[(x, k)] / sqrt_m[x]);
    let sd = SpectralData {
        lambdas,
        phis,
        measure: m.clone(),
        tag: "base".into(),
    };
    let residual = sd.residual(op);
    let scale = op.matrix().amax().max(1.0) * sd.phis.amax().max(1.0);
    if !residual.is_finite() || residual > RESIDUAL_FAIL * scale {
        return Err(Error::Numeric { residual });
    }
    Ok(sd)
}

fn canonicalize_block(vecs: &mut DMatrix<f64>, start: usize, len: usize) {
    let n = vecs.nrows();
    let block = vecs.columns(start, len).into_owned();
    let max_row = (0..n).map(|x| block.row(x).norm()).fold(0.0, f64::max);
    let mut threshold = 0.5 * max_row;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(len);
    while basis.len() < len && threshold > 1e-10 * max_row {
        basis.clear();
        for x in 0..n {
            let mut c = block.row(x).transpose();
            for q in &basis {
                let p = q.dot(&c);
                c.axpy(-p, q, 1.0);
            }
            let r = c.norm();
            if r >= threshold {
                basis.push(c / r);
                if basis.len() == len {
                    break;
                }
            }
        }
        threshold *= 0.5;
    }
    if basis.len() < len {
        return;
    }
    let q = DMatrix::from_columns(&basis);
    vecs.columns_mut(start, len).copy_from(&(block * q));
}

pub fn spectral_data(x: &FiniteMMS) -> Result<SpectralData> {
    eigensolve(&build_laplacian(x)?)
}

/// Distinct eigenvalues with multiplicities.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicityTable {
    pub mus: Vec<f64>,
    pub nus: Vec<usize>,
    pub cluster_tol: f64,
}

impl MultiplicityTable {
    /// Index ranges `start..start + len` of the clusters.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.nus
            .iter()
            .map(|&len| {
                let b = (start, len);
                start += len;
                b
            })
            .collect()
    }

    /// Cluster id of every eigenvalue index.
    pub fn cluster_ids(&self) -> Vec<usize> {
        self.nus
            .iter()
            .enumerate()
            .flat_map(|(j, &len)| std::iter::repeat_n(j, len))
            .collect()
    }

    pub fn total(&self) -> usize {
        self.nus.iter().sum()
    }
}

/// Greedy left-to-right gap clustering: a new cluster starts when
/// `λ_{i+1} - λ_i > tol · max(1, λ_{i+1})`.
pub fn cluster_multiplicities(sd: &SpectralData, cluster_tol: f64) -> MultiplicityTable {
    cluster_values(sd.lambdas().as_slice(), cluster_tol)
}

pub fn cluster_values(lambdas: &[f64], cluster_tol: f64) -> MultiplicityTable {
    let mut mus = Vec::new();
    let mut nus = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &l) in lambdas.iter().enumerate() {
        if i > 0 && l - lambdas[i - 1] > cluster_tol * l.max(1.0) {
            mus.push(sum / count as f64);
            nus.push(count);
            sum = 0.0;
            count = 0;
        }
        sum += l;
        count += 1;
    }
    if count > 0 {
        mus.push(sum / count as f64);
        nus.push(count);
    }
    MultiplicityTable {
        mus,
        nus,
        cluster_tol,
    }
}

/// One orthogonal block acting on eigenfunction columns `start..start + len`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRotation {
    pub start: usize,
    pub rotation: DMatrix<f64>,
}

impl Serialize for BlockRotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self
            .rotation
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let mut st = s.serialize_struct("BlockRotation", 2)?;
        st.serialize_field("start", &self.start)?;
        st.serialize_field("rotation", &rows)?;
        st.end()
    }
}

/// A change of spectral data: an orthogonal transform per eigenspace cluster.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct BlockTransform {
    pub blocks: Vec<BlockRotation>,
}

impl BlockTransform {
    pub fn identity(table: &MultiplicityTable) -> Self {
        BlockTransform {
            blocks: table
                .blocks()
                .into_iter()
                .map(|(start, len)| BlockRotation {
                    start,
                    rotation: DMatrix::identity(len, len),
                })
                .collect(),
        }
    }

    /// Haar-random orthogonal blocks on clusters of dimension ≥ 2 and random
    /// signs on simple eigenvalues. The constant eigenfunction is left alone.
    pub fn random(table: &MultiplicityTable, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = table
            .blocks()
            .into_iter()
            .map(|(start, len)| {
                let rotation = if start == 0 && len == 1 {
                    DMatrix::identity(1, 1)
                } else if len == 1 {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    DMatrix::from_element(1, 1, s)
                } else {
                    haar_orthogonal(len, &mut rng)
                };
                BlockRotation { start, rotation }
            })
            .collect();
        BlockTransform { blocks }
    }

    pub fn apply(&self, sd: &SpectralData) -> SpectralData {
        let mut phis = sd.phis.clone();
        for b in &self.blocks {
            let len = b.rotation.nrows();
            let rotated = sd.phis.columns(b.start, len) * &b.rotation;
            phis.columns_mut(b.start, len).copy_from(&rotated);
        }
        SpectralData {
            lambdas: sd.lambdas.clone(),
            phis,
            measure: sd.measure.clone(),
            tag: sd.tag.clone(),
        }
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &BlockTransform) -> BlockTransform {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                debug_assert_eq!(a.start, b.start);
                BlockRotation {
                    start: a.start,
                    rotation: &a.rotation * &b.rotation,
                }
            })
            .collect();
        BlockTransform { blocks }
    }
}

/// Haar-distributed element of `O(k)` from the QR factorization of a Gaussian
/// matrix, with the signs of `R`'s diagonal folded into `Q`.
pub fn haar_orthogonal(k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Applies an independent random orthogonal change of basis inside every
/// eigenspace cluster of `table`.
pub fn random_spectral_data(
    sd: &SpectralData,
    table: &MultiplicityTable,
    seed: u64,
) -> SpectralData {
    BlockTransform::random(table, seed)
        .apply(sd)
        .with_tag(format!("{}|seed({seed})", sd.tag()))
}

/// CSV with columns `index,lambda,cluster_id`.
pub fn spectrum_csv(sd: &SpectralData, table: &MultiplicityTable) -> String {
    let ids = table.cluster_ids();
    let mut out = String::from("index,lambda,cluster_id\n");
    for (i, l) in sd.lambdas().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{}",
            fmt17(*l),
            ids.get(i).copied().unwrap_or(usize::MAX)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::{make_cycle, make_point, make_product, rescale, FiniteMMS};
    use std::f64::consts::PI;

    #[test]
    fn cycle_stencil_rows() {
        let op = build_laplacian(&make_cycle(1.0, 8).unwrap()).unwrap();
        let h = PI / 4.0;
        let w = 1.0 / (h * h);
        assert!((op.matrix()[(0, 0)] + 2.0 * w).abs() < 1e-12);
        assert!((op.matrix()[(0, 1)] - w).abs() < 1e-12);
        assert!((op.matrix()[(0, 7)] - w).abs() < 1e-12);
        assert_eq!(op.matrix()[(0, 3)], 0.0);
        for i in 0..8 {
            assert!(op.matrix().row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn product_laplacian_lifts_factor() {
        let a = make_cycle(1.0, 6).unwrap();
        let b = make_cycle(1.5, 5).unwrap();
        let p = make_product(&a, &b).unwrap();
        let la = build_laplacian(&a).unwrap();
        let lp = build_laplacian(&p).unwrap();
        let g = DVector::from_fn(6, |i, _| (i as f64 * 0.7).sin() + 0.1 * i as f64);
        let f = DVector::from_fn(30, |p, _| g[p / 5]);
        let lg = la.apply(&g);
        let lf = lp.apply(&f);
        for p in 0..30 {
            assert!((lf[p] - lg[p / 5]).abs() < 1e-12);
        }
    }

    #[test]
    fn point_operator_and_spectrum() {
        let p = make_point(5.0).unwrap();
        let op = build_laplacian(&p).unwrap();
        assert_eq!(op.matrix(), &DMatrix::zeros(1, 1));
        let sd = eigensolve(&op).unwrap();
        assert_eq!(sd.lambdas().as_slice(), &[0.0]);
        assert!((sd.phis()[(0, 0)] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        let sd2 = spectral_data(&make_point(2.0).unwrap()).unwrap();
        assert!((sd2.phis()[(0, 0)] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn custom_operator_checks() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let x = FiniteMMS::custom(d, DVector::from_vec(vec![1.0, 2.0]), 0.0).unwrap();
        assert!(matches!(
            build_laplacian(&x),
            Err(Error::InvalidOperator(_))
        ));
        // symmetric but not self-adjoint for the weights (1, 2)
        let bad = x
            .clone()
            .with_laplacian(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]))
            .unwrap();
        assert!(matches!(
            build_laplacian(&bad),
            Err(Error::InvalidOperator(_))
        ));
        let good = x
            .with_laplacian(DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]))
            .unwrap();
        let sd = eigensolve(&build_laplacian(&good).unwrap()).unwrap();
        assert!((sd.lambdas()[1] - 3.0).abs() < 1e-12);
        assert!(sd.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn cycle_256_closed_form() {
        let x = make_cycle(1.0, 256).unwrap();
        let op = build_laplacian(&x).unwrap();
        let sd = eigensolve(&op).unwrap();
        let h = x.mesh_scale();
        let expected = 4.0 / (h * h) * (PI / 256.0).sin().powi(2);
        assert_eq!(sd.lambdas()[0], 0.0);
        assert!((sd.lambdas()[1] - expected).abs() < 1e-9 * expected);
        assert!((sd.lambdas()[2] - expected).abs() < 1e-9 * expected);
        assert!((sd.lambdas()[1] - 0.99995).abs() < 1e-5);
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!(sd.phis().column(0).iter().all(|v| (v - phi0).abs() < 1e-12));
        assert!((phi0 - 0.398942).abs() < 1e-6);
        assert!(sd.orthonormality_defect() < 1e-10);
        assert!(sd.residual(&op) < 1e-9);
    }

    #[test]
    fn eigensolve_is_deterministic_and_signed() {
        let x = make_product(&make_cycle(1.0, 6).unwrap(), &make_cycle(1.0, 6).unwrap()).unwrap();
        let a = spectral_data(&x).unwrap();
        let b = spectral_data(&x).unwrap();
        assert_eq!(a, b);
        for k in 0..a.n() {
            let col = a.phis().column(k);
            let cut = 1e-8 * col.amax();
            assert!(*col.iter().find(|v| v.abs() > cut).unwrap() > 0.0);
        }
    }

    #[test]
    fn rescale_divides_eigenvalues() {
        let x = make_cycle(1.0, 64).unwrap();
        let a = spectral_data(&x).unwrap();
        let b = spectral_data(&rescale(&x, 2.0, 1.0).unwrap()).unwrap();
        assert!((b.lambdas()[1] - a.lambdas()[1] / 4.0).abs() < 1e-12 * a.lambdas()[1]);
    }

    #[test]
    fn gap_clustering() {
        let t = cluster_values(&[0.0, 0.9999, 1.0001, 3.99, 4.01], 0.01);
        assert_eq!(t.nus, vec![1, 2, 2]);
        assert!((t.mus[0]).abs() < 1e-15);
        assert!((t.mus[1] - 1.0).abs() < 1e-12);
        assert!((t.mus[2] - 4.0).abs() < 1e-12);
        assert_eq!(t.cluster_ids(), vec![0, 1, 1, 2, 2]);
        assert_eq!(t.blocks(), vec![(0, 1), (1, 2), (3, 2)]);
    }

    #[test]
    fn identity_when_all_signs_positive() {
        let x = make_cycle(1.0, 5).unwrap();
        let sd = spectral_data(&x).unwrap();
        let table = MultiplicityTable {
            mus: sd.lambdas().iter().copied().collect(),
            nus: vec![1; 5],
            cluster_tol: 1e-6,
        };
        let id = BlockTransform::identity(&table);
        assert_eq!(id.apply(&sd), sd);
        // some seed yields all-positive signs on the four non-constant simple blocks
        let seed = (0..64u64)
            .find(|&s| {
                BlockTransform::random(&table, s)
                    .blocks
                    .iter()
                    .all(|b| b.rotation[(0, 0)] > 0.0)
            })
            .unwrap();
        assert_eq!(random_spectral_data(&sd, &table, seed).phis(), sd.phis());
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..6 {
            let q = haar_orthogonal(k, &mut rng);
            assert!((q.transpose() * &q - DMatrix::identity(k, k)).amax() < 1e-13);
        }
    }

    #[test]
    fn spectrum_csv_layout() {
        let sd = spectral_data(&make_cycle(1.0, 4).unwrap()).unwrap();
        let table = cluster_multiplicities(&sd, EXACT_CLUSTER_TOL);
        let csv = spectrum_csv(&sd, &table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,lambda,cluster_id");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].ends_with(",1") && lines[3].ends_with(",1") && lines[4].ends_with(",2"));
    }
}
