//! Finite metric measure spaces.
//!
//! A [`FiniteMMS`] is a dense distance matrix together with a strictly
//! positive weight per point. Generated spaces additionally remember how
//! their Laplacian is assembled (the [`Stencil`]) and where each point sits
//! in the generator's parameter domain (the [`Chart`]), so that spaces from
//! the same family can be compared point-by-point.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of points in a generated space.
pub const DEFAULT_SIZE_CAP: usize = 4096;

/// Relative tolerance (times the diameter) for the triangle inequality.
const TRIANGLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorTag {
    Cycle,
    Product,
    Point,
    Custom,
}

impl GeneratorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorTag::Cycle => "cycle",
            GeneratorTag::Product => "product",
            GeneratorTag::Point => "point",
            GeneratorTag::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(GeneratorTag::Cycle),
            "product" => Ok(GeneratorTag::Product),
            "point" => Ok(GeneratorTag::Point),
            "custom" => Ok(GeneratorTag::Custom),
            other => Err(Error::InvalidGenerator(format!(
                "unknown generator tag `{other}`"
            ))),
        }
    }
}

impl fmt::Display for GeneratorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recipe for the Laplacian of a space.
#[derive(Clone, Debug, PartialEq)]
pub enum Stencil {
    /// Periodic second difference with the given spacing.
    Cycle { count: usize, spacing: f64 },
    /// The 1×1 zero operator.
    Point,
    /// Kronecker sum of the factor operators; point `(a, b)` has index `a * n_b + b`.
    Product(Box<Stencil>, Box<Stencil>),
    /// Explicit matrix supplied by the user.
    Matrix(DMatrix<f64>),
}

impl Stencil {
    pub fn len(&self) -> usize {
        match self {
            Stencil::Cycle { count, .. } => *count,
            Stencil::Point => 1,
            Stencil::Product(a, b) => a.len() * b.len(),
            Stencil::Matrix(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rescaled(&self, alpha: f64) -> Stencil {
        match self {
            Stencil::Cycle { count, spacing } => Stencil::Cycle {
                count: *count,
                spacing: alpha * spacing,
            },
            Stencil::Point => Stencil::Point,
            Stencil::Product(a, b) => {
                Stencil::Product(Box::new(a.rescaled(alpha)), Box::new(b.rescaled(alpha)))
            }
            Stencil::Matrix(m) => Stencil::Matrix(m / (alpha * alpha)),
        }
    }

    /// Dense matrix of the operator.
    pub fn assemble(&self) -> DMatrix<f64> {
        match self {
            Stencil::Cycle { count, spacing } => {
                let n = *count;
                let w = 1.0 / (spacing * spacing);
                let mut l = DMatrix::zeros(n, n);
                for j in 0..n {
                    l[(j, j)] -= 2.0 * w;
                    l[(j, (j + 1) % n)] += w;
                    l[(j, (j + n - 1) % n)] += w;
                }
                l
            }
            Stencil::Point => DMatrix::zeros(1, 1),
            Stencil::Product(a, b) => {
                let la = a.assemble();
                let lb = b.assemble();
                let (na, nb) = (la.nrows(), lb.nrows());
                let mut l = DMatrix::zeros(na * nb, na * nb);
                for i in 0..na {
                    for k in 0..na {
                        let v = la[(i, k)];
                        if v != 0.0 {
                            for j in 0..nb {
                                l[(i * nb + j, k * nb + j)] += v;
                            }
                        }
                    }
                    for j in 0..nb {
                        for k in 0..nb {
                            let v = lb[(j, k)];
                            if v != 0.0 {
                                l[(i * nb + j, i * nb + k)] += v;
                            }
                        }
                    }
                }
                l
            }
            Stencil::Matrix(m) => m.clone(),
        }
    }
}

/// Position of every point in the generator's parameter domain.
///
/// Each coordinate is a fraction of a full turn in `[0, 1)`; a point space has
/// zero coordinates. Charts are invariant under rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    coords: Vec<Vec<f64>>,
}

impl Chart {
    pub fn new(coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords.first().map_or(0, Vec::len);
        if coords.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidGenerator(
                "chart coordinates have ragged dimensions".into(),
            ));
        }
        if coords.iter().flatten().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::InvalidGenerator(
                "chart coordinates must lie in [0, 1)".into(),
            ));
        }
        Ok(Chart { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    /// Nearest-parameter map from `self` to `target`.
    ///
    /// Offsets are measured on the circle in turn units; exact ties go to the
    /// target at the lower angle, so every point is pushed the same way.
    /// Returns `None` when the charts have different dimensions, except that
    /// a zero-dimensional target receives every point.
    pub fn nearest_map(&self, target: &Chart) -> Option<Vec<usize>> {
        if target.dim() == 0 {
            return Some(vec![0; self.len()]);
        }
        if self.dim() != target.dim() {
            return None;
        }
        const BIAS: f64 = 1e-9;
        let map = self
            .coords
            .iter()
            .map(|src| {
                let mut best = (f64::INFINITY, 0usize);
                for (j, tgt) in target.coords.iter().enumerate() {
                    let cost: f64 = src
                        .iter()
                        .zip(tgt)
                        .map(|(s, t)| {
                            let mut off = s - t - BIAS;
                            off -= off.round();
                            off * off
                        })
                        .sum();
                    if cost < best.0 {
                        best = (cost, j);
                    }
                }
                best.1
            })
            .collect();
        Some(map)
    }
}

/// Parameters of a generated space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Cycle {
        radius: f64,
        count: usize,
    },
    Product {
        a: Box<GeneratorSpec>,
        b: Box<GeneratorSpec>,
    },
    Point {
        mass: f64,
    },
    Custom {
        path: String,
    },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<FiniteMMS> {
        self.build_capped(DEFAULT_SIZE_CAP)
    }

    pub fn build_capped(&self, cap: usize) -> Result<FiniteMMS> {
        match self {
            GeneratorSpec::Cycle { radius, count } => make_cycle(*radius, *count),
            GeneratorSpec::Product { a, b } => {
                make_product_capped(&a.build_capped(cap)?, &b.build_capped(cap)?, cap)
            }
            GeneratorSpec::Point { mass } => make_point(*mass),
            GeneratorSpec::Custom { path } => FiniteMMS::load_json(path),
        }
    }
}

/// A finite metric measure space with full support.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMMS {
    dist: DMatrix<f64>,
    measure: DVector<f64>,
    mesh_scale: f64,
    tag: GeneratorTag,
    stencil: Option<Stencil>,
    chart: Option<Chart>,
}

impl FiniteMMS {
    /// Builds a custom space and validates it.
    pub fn custom(dist: DMatrix<f64>, measure: DVector<f64>, mesh_scale: f64) -> Result<Self> {
        let space = FiniteMMS {
            dist,
            measure,
            mesh_scale,
            tag: GeneratorTag::Custom,
            stencil: None,
            chart: None,
        };
        space.ensure_valid()?;
        Ok(space)
    }

    /// Attaches an explicit Laplacian. Its invariants are checked when the
    /// operator is built.
    pub fn with_laplacian(mut self, laplacian: DMatrix<f64>) -> Result<Self> {
        if laplacian.nrows() != self.n() || laplacian.ncols() != self.n() {
            return Err(Error::InvalidOperator(format!(
                "laplacian is {}x{}, space has {} points",
                laplacian.nrows(),
                laplacian.ncols(),
                self.n()
            )));
        }
        self.stencil = Some(Stencil::Matrix(laplacian));
        Ok(self)
    }

    pub fn with_chart(mut self, chart: Chart) -> Result<Self> {
        if chart.len() != self.n() {
            return Err(Error::InvalidGenerator(format!(
                "chart has {} points, space has {}",
                chart.len(),
                self.n()
            )));
        }
        self.chart = Some(chart);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    pub fn dist(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn measure(&self) -> &DVector<f64> {
        &self.measure
    }

    pub fn mesh_scale(&self) -> f64 {
        self.mesh_scale
    }

    pub fn tag(&self) -> GeneratorTag {
        self.tag
    }

    pub fn stencil(&self) -> Option<&Stencil> {
        self.stencil.as_ref()
    }

    pub fn chart(&self) -> Option<&Chart> {
        self.chart.as_ref()
    }

    pub fn total_mass(&self) -> f64 {
        crate::util::stable_sum(self.measure.iter())
    }

    pub fn diameter(&self) -> f64 {
        self.dist.max()
    }

    pub fn is_point(&self) -> bool {
        self.n() == 1
    }

    fn ensure_valid(&self) -> Result<()> {
        let report = validate(self);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidSpace(
                report.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SpaceFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(text)?;
        file.into_space()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `n` equally spaced points on the circle of radius `r` with geodesic distance.
pub fn make_cycle(r: f64, n: usize) -> Result<FiniteMMS> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidGenerator(format!(
            "cycle radius must be positive, got {r}"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidGenerator(format!(
            "cycle needs at least 3 points, got {n}"
        )));
    }
    if n > DEFAULT_SIZE_CAP {
        return Err(Error::SizeCap {
            requested: n,
            cap: DEFAULT_SIZE_CAP,
        });
    }
    let h = 2.0 * PI * r / n as f64;
    let dist = DMatrix::from_fn(n, n, |i, j| {
        let k = i.abs_diff(j);
        let steps = k.min(n - k);
        // 2πr·steps/n; half-turn is exactly πr
        if 2 * steps == n {
            PI * r
        } else {
            h * steps as f64
        }
    });
    let measure = DVector::from_element(n, h);
    let chart = Chart {
        coords: (0..n).map(|i| vec![i as f64 / n as f64]).collect(),
    };
    Ok(FiniteMMS {
        dist,
        measure,
        mesh_scale: h,
        tag: GeneratorTag::Cycle,
        stencil: Some(Stencil::Cycle {
            count: n,
            spacing: h,
        }),
        chart: Some(chart),
    })
}

pub fn make_point(c: f64) -> Result<FiniteMMS> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidGenerator(format!(
            "point mass must be positive, got {c}"
        )));
    }
    Ok(FiniteMMS {
        dist: DMatrix::zeros(1, 1),
        measure: DVector::from_element(1, c),
        mesh_scale: 0.0,
        tag: GeneratorTag::Point,
        stencil: Some(Stencil::Point),
        chart: Some(Chart {
            coords: vec![Vec::new()],
        }),
    })
}

pub fn make_product(a: &FiniteMMS, b: &FiniteMMS) -> Result<FiniteMMS> {
    make_product_capped(a, b, DEFAULT_SIZE_CAP)
}

/// Cartesian product with the Pythagorean metric and the product measure.
pub fn make_product_capped(a: &FiniteMMS, b: &FiniteMMS, cap: usize) -> Result<FiniteMMS> {
    let (na, nb) = (a.n(), b.n());
    let n = na.saturating_mul(nb);
    if n > cap {
        return Err(Error::SizeCap { requested: n, cap });
    }
    let dist = DMatrix::from_fn(n, n, |p, q| {
        let (da, db) = (a.dist[(p / nb, q / nb)], b.dist[(p % nb, q % nb)]);
        da.hypot(db)
    });
    let measure = DVector::from_fn(n, |p, _| a.measure[p / nb] * b.measure[p % nb]);
    let stencil = match (&a.stencil, &b.stencil) {
        (Some(sa), Some(sb)) => Some(Stencil::Product(Box::new(sa.clone()), Box::new(sb.clone()))),
        _ => None,
    };
    let chart = match (&a.chart, &b.chart) {
        (Some(ca), Some(cb)) => Some(Chart {
            coords: (0..n)
                .map(|p| {
                    ca.coords[p / nb]
                        .iter()
                        .chain(&cb.coords[p % nb])
                        .copied()
                        .collect()
                })
                .collect(),
        }),
        _ => None,
    };
    Ok(FiniteMMS {
        dist,
        measure,
        mesh_scale: a.mesh_scale.max(b.mesh_scale),
        tag: GeneratorTag::Product,
        stencil,
        chart,
    })
}

/// Scales distances by `alpha` and the measure by `beta`.
pub fn rescale(x: &FiniteMMS, alpha: f64, beta: f64) -> Result<FiniteMMS> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!(
            "rescale factors must be positive, got ({alpha}, {beta})"
        )));
    }
    Ok(FiniteMMS {
        dist: &x.dist * alpha,
        measure: &x.measure * beta,
        mesh_scale: alpha * x.mesh_scale,
        tag: x.tag,
        stencil: x.stencil.as_ref().map(|s| s.rescaled(alpha)),
        chart: x.chart.clone(),
    })
}

/// Reorders the points: point `j` of the result is point `perm[j]` of `x`.
///
/// The result is tagged custom and carries the permuted Laplacian.
pub fn relabel(x: &FiniteMMS, perm: &[usize]) -> Result<FiniteMMS> {
    let n = x.n();
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Domain(format!(
            "relabel needs a permutation of 0..{n}"
        )));
    }
    let stencil = x.stencil.as_ref().map(|s| {
        let l = s.assemble();
        Stencil::Matrix(DMatrix::from_fn(n, n, |i, j| l[(perm[i], perm[j])]))
    });
    Ok(FiniteMMS {
        dist: DMatrix::from_fn(n, n, |i, j| x.dist[(perm[i], perm[j])]),
        measure: DVector::from_fn(n, |i, _| x.measure[perm[i]]),
        mesh_scale: x.mesh_scale,
        tag: GeneratorTag::Custom,
        stencil,
        chart: x.chart.as_ref().map(|c| Chart {
            coords: perm.iter().map(|&p| c.coords[p].clone()).collect(),
        }),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape {
        rows: usize,
        cols: usize,
        measure_len: usize,
    },
    Empty,
    NonFinite,
    Asymmetric {
        i: usize,
        j: usize,
        diff: f64,
    },
    NonzeroDiagonal {
        i: usize,
        value: f64,
    },
    NonPositiveDistance {
        i: usize,
        j: usize,
        value: f64,
    },
    Triangle {
        i: usize,
        j: usize,
        k: usize,
        defect: f64,
    },
    NonPositiveMeasure {
        i: usize,
        value: f64,
    },
    SinglePointTag {
        tag: GeneratorTag,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape {
                rows,
                cols,
                measure_len,
            } => {
                write!(
                    f,
                    "distance matrix is {rows}x{cols} but measure has {measure_len} entries"
                )
            }
            Violation::Empty => write!(f, "space has no points"),
            Violation::NonFinite => write!(f, "non-finite entries present"),
            Violation::Asymmetric { i, j, diff } => {
                write!(f, "dist[{i}][{j}] != dist[{j}][{i}] (diff {diff:e})")
            }
            Violation::NonzeroDiagonal { i, value } => {
                write!(f, "dist[{i}][{i}] = {value:e}, expected 0")
            }
            Violation::NonPositiveDistance { i, j, value } => {
                write!(f, "dist[{i}][{j}] = {value:e} for distinct points")
            }
            Violation::Triangle { i, j, k, defect } => {
                write!(
                    f,
                    "triangle inequality fails on ({i}, {j}, {k}) by {defect:e}"
                )
            }
            Violation::NonPositiveMeasure { i, value } => {
                write!(f, "measure[{i}] = {value:e} is not positive")
            }
            Violation::SinglePointTag { tag } => {
                write!(f, "single-point space must be tagged point, got {tag}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Largest `dist[i][k] - dist[i][j] - dist[j][k]`, clamped at zero.
    pub worst_triangle_defect: f64,
    pub min_measure: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(x: &FiniteMMS) -> ValidationReport {
    check_parts(&x.dist, &x.measure, x.tag)
}

fn check_parts(dist: &DMatrix<f64>, measure: &DVector<f64>, tag: GeneratorTag) -> ValidationReport {
    let n = measure.len();
    let mut violations = Vec::new();
    let min_measure = measure.iter().copied().fold(f64::INFINITY, f64::min);
    if dist.nrows() != n || dist.ncols() != n {
        violations.push(Violation::Shape {
            rows: dist.nrows(),
            cols: dist.ncols(),
            measure_len: n,
        });
        return ValidationReport {
            violations,
            worst_triangle_defect: 0.0,
            min_measure,
        };
    }
    if n == 0 {
        violations.push(Violation::Empty);
        return ValidationReport {
            violations,
            worst_triangle_defect: 0.0,
            min_measure,
        };
    }
    if dist.iter().chain(measure.iter()).any(|v| !v.is_finite()) {
        violations.push(Violation::NonFinite);
        return ValidationReport {
            violations,
            worst_triangle_defect: 0.0,
            min_measure,
        };
    }
    for (i, &m) in measure.iter().enumerate() {
        if m <= 0.0 {
            violations.push(Violation::NonPositiveMeasure { i, value: m });
        }
    }
    if n == 1 && tag != GeneratorTag::Point {
        violations.push(Violation::SinglePointTag { tag });
    }
    for i in 0..n {
        if dist[(i, i)] != 0.0 {
            violations.push(Violation::NonzeroDiagonal {
                i,
                value: dist[(i, i)],
            });
        }
        for j in (i + 1)..n {
            let (a, b) = (dist[(i, j)], dist[(j, i)]);
            if a != b {
                violations.push(Violation::Asymmetric {
                    i,
                    j,
                    diff: (a - b).abs(),
                });
            }
            if a <= 0.0 || b <= 0.0 {
                violations.push(Violation::NonPositiveDistance {
                    i,
                    j,
                    value: a.min(b),
                });
            }
        }
    }
    let tol = TRIANGLE_TOL * dist.max();
    let mut worst = (0.0, None);
    for i in 0..n {
        for j in 0..n {
            let dij = dist[(i, j)];
            for k in 0..n {
                let defect = dist[(i, k)] - dij - dist[(j, k)];
                if defect > worst.0 {
                    worst = (defect, Some((i, j, k)));
                }
            }
        }
    }
    if let (defect, Some((i, j, k))) = worst {
        if defect > tol {
            violations.push(Violation::Triangle { i, j, k, defect });
        }
    }
    ValidationReport {
        violations,
        worst_triangle_defect: worst.0,
        min_measure,
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    n: usize,
    dist: Vec<Vec<f64>>,
    measure: Vec<f64>,
    mesh_scale: f64,
    generator_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    laplacian: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chart: Option<Vec<Vec<f64>>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidSpace(vec![format!("{what} has ragged rows")]));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl From<&FiniteMMS> for SpaceFile {
    fn from(x: &FiniteMMS) -> Self {
        // cycles and points are rebuilt from their tag; everything else ships its operator
        let laplacian = match &x.stencil {
            Some(Stencil::Cycle { .. }) | Some(Stencil::Point) | None => None,
            Some(s) => Some(rows(&s.assemble())),
        };
        SpaceFile {
            n: x.n(),
            dist: rows(&x.dist),
            measure: x.measure.iter().copied().collect(),
            mesh_scale: x.mesh_scale,
            generator_tag: x.tag.as_str().to_string(),
            laplacian,
            chart: x.chart.as_ref().map(|c| c.coords.clone()),
        }
    }
}

impl SpaceFile {
    fn into_space(self) -> Result<FiniteMMS> {
        let tag = GeneratorTag::parse(&self.generator_tag)?;
        let dist = from_rows(&self.dist, "dist")?;
        let measure = DVector::from_vec(self.measure);
        if self.n != measure.len() {
            return Err(Error::InvalidSpace(vec![format!(
                "n = {} but measure has {} entries",
                self.n,
                measure.len()
            )]));
        }
        if !(self.mesh_scale >= 0.0 && self.mesh_scale.is_finite()) {
            return Err(Error::InvalidSpace(vec![format!(
                "mesh_scale {} is not a nonnegative real",
                self.mesh_scale
            )]));
        }
        let report = check_parts(&dist, &measure, tag);
        if !report.is_valid() {
            return Err(Error::InvalidSpace(
                report.violations.iter().map(ToString::to_string).collect(),
            ));
        }
        let stencil = match (tag, self.laplacian) {
            (_, Some(l)) => Some(Stencil::Matrix(from_rows(&l, "laplacian")?)),
            (GeneratorTag::Cycle, None) => Some(Stencil::Cycle {
                count: self.n,
                spacing: self.mesh_scale,
            }),
            (GeneratorTag::Point, None) => Some(Stencil::Point),
            _ => None,
        };
        if let Some(s) = &stencil {
            if s.len() != self.n {
                return Err(Error::InvalidOperator(format!(
                    "laplacian has {} rows, space has {}",
                    s.len(),
                    self.n
                )));
            }
        }
        let chart = self.chart.map(Chart::new).transpose()?;
        if chart.as_ref().is_some_and(|c| c.len() != self.n) {
            return Err(Error::InvalidSpace(vec![
                "chart length does not match n".into()
            ]));
        }
        Ok(FiniteMMS {
            dist,
            measure,
            mesh_scale: self.mesh_scale,
            tag,
            stencil,
            chart,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn cycle_basics() {
        let c = make_cycle(1.0, 8).unwrap();
        assert_eq!(c.dist()[(0, 4)], PI);
        assert!(close(c.total_mass(), 2.0 * PI, 1e-15));
        assert!(validate(&c).is_valid());
        let c2 = make_cycle(2.0, 100).unwrap();
        assert!(close(c2.diameter(), 2.0 * PI, 1e-15));
    }

    #[test]
    fn cycle_rejects_bad_parameters() {
        assert!(matches!(
            make_cycle(1.0, 2),
            Err(Error::InvalidGenerator(_))
        ));
        assert!(matches!(
            make_cycle(0.0, 8),
            Err(Error::InvalidGenerator(_))
        ));
        assert!(matches!(
            make_cycle(-1.0, 8),
            Err(Error::InvalidGenerator(_))
        ));
        assert!(matches!(make_point(0.0), Err(Error::InvalidGenerator(_))));
    }

    #[test]
    fn product_of_cycles() {
        let c = make_cycle(1.0, 16).unwrap();
        let t = make_product(&c, &c).unwrap();
        assert_eq!(t.n(), 256);
        assert!(close(t.diameter(), PI * 2f64.sqrt(), 1e-14));
        assert!(close(t.total_mass(), 4.0 * PI * PI, 1e-13));
        assert!(validate(&t).is_valid());
    }

    #[test]
    fn product_with_unit_point_is_identity() {
        let c = make_cycle(1.0, 16).unwrap();
        let p = make_product(&c, &make_point(1.0).unwrap()).unwrap();
        assert_eq!(p.dist(), c.dist());
        assert_eq!(p.measure(), c.measure());
    }

    #[test]
    fn product_respects_cap() {
        let c = make_cycle(1.0, 100).unwrap();
        assert!(matches!(
            make_product_capped(&c, &c, 5000),
            Err(Error::SizeCap {
                requested: 10000,
                ..
            })
        ));
    }

    #[test]
    fn point_space() {
        let p = make_point(3.0).unwrap();
        assert_eq!(p.total_mass(), 3.0);
        assert_eq!(p.diameter(), 0.0);
        assert!(validate(&p).is_valid());
    }

    #[test]
    fn rescale_identity_is_exact() {
        let c = make_cycle(1.3, 12).unwrap();
        assert_eq!(rescale(&c, 1.0, 1.0).unwrap(), c);
    }

    #[test]
    fn validate_reports_asymmetry_and_triangle() {
        let mut d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let m = DVector::from_element(3, 1.0);
        d[(0, 1)] = 1.5;
        let r = check_parts(&d, &m, GeneratorTag::Custom);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Asymmetric { i: 0, j: 1, .. })));

        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0]);
        let r = check_parts(&d, &m, GeneratorTag::Custom);
        let tri = r.violations.iter().find_map(|v| match v {
            Violation::Triangle { defect, .. } => Some(*defect),
            _ => None,
        });
        assert_eq!(tri, Some(1.0));
        assert_eq!(r.worst_triangle_defect, 1.0);
    }

    #[test]
    fn custom_rejects_bad_measure_and_single_point_tag() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = FiniteMMS::custom(d, DVector::from_vec(vec![1.0, 0.0]), 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidSpace(_)));
        let err = FiniteMMS::custom(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0), 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("tagged point"));
    }

    #[test]
    fn json_roundtrip_and_rejection() {
        let t = make_product(&make_cycle(1.0, 4).unwrap(), &make_cycle(2.0, 3).unwrap()).unwrap();
        let back = FiniteMMS::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.dist(), t.dist());
        assert_eq!(back.measure(), t.measure());
        assert_eq!(back.tag(), GeneratorTag::Product);
        assert_eq!(
            back.stencil().unwrap().assemble(),
            t.stencil().unwrap().assemble()
        );

        let bad = r#"{"n":3,"dist":[[0,1,3],[1,0,1],[3,1,0]],"measure":[1,1,1],"mesh_scale":0,"generator_tag":"custom"}"#;
        let err = FiniteMMS::from_json(bad).unwrap_err();
        assert!(err.to_string().contains("triangle"), "{err}");
    }

    #[test]
    fn relabel_permutes_everything() {
        let c = make_cycle(1.0, 6).unwrap();
        let perm = [3, 4, 5, 0, 1, 2];
        let r = relabel(&c, &perm).unwrap();
        assert_eq!(r.tag(), GeneratorTag::Custom);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(r.dist()[(i, j)], c.dist()[(perm[i], perm[j])]);
            }
        }
        assert!(relabel(&c, &[0, 0, 1, 2, 3, 4]).is_err());
    }

    #[test]
    fn nearest_angle_map_halving() {
        let fine = make_cycle(1.0, 8).unwrap();
        let coarse = make_cycle(1.0, 4).unwrap();
        let map = fine
            .chart()
            .unwrap()
            .nearest_map(coarse.chart().unwrap())
            .unwrap();
        // odd points sit midway and are all sent to the lower angle
        assert_eq!(map, vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }
}
