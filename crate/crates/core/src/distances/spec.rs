//! Spectral distances `d̲`, `d→`, `d←` and `d_Spec` at a fixed time.
//!
//! The supremum and infimum over spectral datas range over products of
//! orthogonal groups, one per eigenspace. Outer suprema are sampled from a
//! per-space candidate family (canonical data plus seeded random block
//! rotations); inner infima are local optima of an ICP loop that alternates
//! nearest-neighbour pairing with per-block orthogonal Procrustes.
//! Candidate families and alignment starts are keyed by a fingerprint of the
//! space, so `d_spec(X, Y)` and `d_spec(Y, X)` run identical computations.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::hausdorff::{hausdorff_coords, NearestPairs};
use super::{Budget, DataWitness, Direction, DistanceKind, DistanceReport};
use crate::embed::{tail_profile, Variant};
use crate::error::{Error, Result};
use crate::mmspace::{Chart, FiniteMMS};
use crate::spectral::{
    cluster_multiplicities, spectral_data, BlockRotation, BlockTransform, MultiplicityTable,
    SpectralData, EXACT_CLUSTER_TOL,
};
use crate::util::derive_seed;

/// Convergence tolerance on the change of block rotations between sweeps.
pub const ICP_TOL: f64 = 1e-10;
pub const ICP_MAX_ITER: usize = 100;
/// Relative tail tolerance of the coarse alignment phase.
pub const COARSE_TAIL_REL: f64 = 1e-3;
/// Relative tail tolerance of the reported evaluation.
const FINE_TAIL_REL: f64 = 1e-9;

const STREAM_FAMILY: u64 = 1;
const STREAM_START: u64 = 2;

/// One side of a spectral comparison.
#[derive(Clone, Copy)]
pub struct SpecInput<'a> {
    pub sd: &'a SpectralData,
    pub chart: Option<&'a Chart>,
    /// Content fingerprint; see [`space_key`].
    pub key: u64,
}

impl<'a> SpecInput<'a> {
    pub fn new(x: &'a FiniteMMS, sd: &'a SpectralData) -> Self {
        SpecInput {
            sd,
            chart: x.chart(),
            key: space_key(x),
        }
    }
}

/// Fingerprint of a space's distances and weights.
pub fn space_key(x: &FiniteMMS) -> u64 {
    let mut h = derive_seed(x.n() as u64, &[]);
    for v in x.measure().iter().chain(x.dist().iter()) {
        h = (h ^ v.to_bits())
            .wrapping_mul(0x0100_0000_01b3)
            .rotate_left(29);
    }
    derive_seed(h, &[])
}

/// Member `k` of a space's candidate family: the canonical data for `k = 0`,
/// seeded random block rotations otherwise.
pub fn family_member(table: &MultiplicityTable, key: u64, seed: u64, k: usize) -> BlockTransform {
    if k == 0 {
        BlockTransform::identity(table)
    } else {
        BlockTransform::random(table, derive_seed(seed, &[STREAM_FAMILY, key, k as u64]))
    }
}

struct Side<'a> {
    input: SpecInput<'a>,
    table: MultiplicityTable,
    /// Rows of `φᵀ` for eigen-indices `1..=level`.
    phit: DMatrix<f64>,
    weights: Vec<f64>,
    level: usize,
    coarse: usize,
    /// `(table block, first row, length)` of the clusters inside `level`.
    blocks: Vec<(usize, usize, usize)>,
    tail: f64,
    tail_coarse: f64,
}

/// Smallest coordinate count `≥ m` that ends on a cluster boundary.
fn aligned_level(table: &MultiplicityTable, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    table
        .blocks()
        .into_iter()
        .filter(|&(s, _)| s >= 1)
        .map(|(s, len)| s + len - 1)
        .find(|&end| end >= m)
        .unwrap_or(table.total() - 1)
}

impl<'a> Side<'a> {
    fn new(input: SpecInput<'a>, t: f64) -> Self {
        let sd = input.sd;
        let table = cluster_multiplicities(sd, EXACT_CLUSTER_TOL);
        let tails = tail_profile(sd, Variant::I, t);
        let scale = 2.0 * tails[0];
        let pick = |rel: f64| {
            let m = tails
                .iter()
                .position(|&v| v <= rel * scale)
                .unwrap_or(tails.len() - 1);
            aligned_level(&table, m)
        };
        let level = pick(FINE_TAIL_REL);
        let coarse = pick(COARSE_TAIL_REL).min(level);
        let n = sd.n();
        let phit = DMatrix::from_fn(level, n, |r, x| sd.phis()[(x, r + 1)]);
        let weights = (0..level)
            .map(|r| (sd.total_mass() * (-sd.lambdas()[r + 1] * t).exp()).sqrt())
            .collect();
        let blocks = table
            .blocks()
            .into_iter()
            .enumerate()
            .filter(|&(_, (s, len))| s >= 1 && s + len - 1 <= level)
            .map(|(b, (s, len))| (b, s - 1, len))
            .collect();
        Side {
            input,
            table,
            phit,
            weights,
            level,
            coarse,
            blocks,
            tail: tails[level],
            tail_coarse: tails[coarse],
        }
    }

    fn n(&self) -> usize {
        self.phit.ncols()
    }

    /// Block rotations of `transform` restricted to the clusters in `level`.
    fn restrict(&self, transform: &BlockTransform) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|&(b, _, _)| transform.blocks[b].rotation.clone())
            .collect()
    }

    /// Full transform with `rots` on the kept clusters and `rest` elsewhere.
    fn extend(&self, rots: &[DMatrix<f64>], rest: &BlockTransform) -> BlockTransform {
        let mut out = rest.clone();
        for (&(b, _, _), r) in self.blocks.iter().zip(rots) {
            out.blocks[b] = BlockRotation {
                start: out.blocks[b].start,
                rotation: r.clone(),
            };
        }
        out
    }

    /// Weighted coordinates of the rotated data, first `rows` rows.
    fn coords(&self, rots: &[DMatrix<f64>], rows: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, self.n());
        for (&(_, rs, len), r) in self.blocks.iter().zip(rots) {
            if rs >= rows {
                break;
            }
            let blk = r.transpose() * self.phit.rows(rs, len);
            out.rows_mut(rs, len).copy_from(&blk);
        }
        for (r, mut row) in out.row_iter_mut().enumerate() {
            row *= self.weights[r];
        }
        out
    }

    fn unrotated(&self, rows: usize) -> DMatrix<f64> {
        let mut out = self.phit.rows(0, rows).into_owned();
        for (r, mut row) in out.row_iter_mut().enumerate() {
            row *= self.weights[r];
        }
        out
    }
}

/// Per-block orthogonal Procrustes: rotations of `y`'s data whose coordinates
/// best match `a` over the index pairs `(x, y)`.
fn procrustes(
    a: &DMatrix<f64>,
    y: &Side,
    rows: usize,
    pairs: &[(usize, usize)],
    current: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let u = y.unrotated(rows);
    let p = pairs.len();
    let ag = DMatrix::from_fn(a.nrows().min(rows), p, |i, k| a[(i, pairs[k].0)]);
    let ug = DMatrix::from_fn(rows, p, |i, k| u[(i, pairs[k].1)]);
    y.blocks
        .iter()
        .zip(current)
        .map(|(&(_, rs, len), cur)| {
            if rs >= rows || rs >= ag.nrows() {
                return cur.clone();
            }
            let avail = len.min(ag.nrows() - rs);
            let mut h = DMatrix::zeros(len, len);
            h.rows_mut(0, avail)
                .copy_from(&(ag.rows(rs, avail) * ug.rows(rs, len).transpose()));
            if h.iter().all(|v| *v == 0.0) {
                return cur.clone();
            }
            let svd = h.svd(true, true);
            let r = svd.u.expect("u requested") * svd.v_t.expect("v requested");
            // Coordinates transform as Rᵀ of the eigenfunction change.
            r.transpose()
        })
        .collect()
}

fn pairs_of(h: &NearestPairs) -> Vec<(usize, usize)> {
    h.nn_ab
        .iter()
        .enumerate()
        .map(|(x, &y)| (x, y))
        .chain(h.nn_ba.iter().enumerate().map(|(y, &x)| (x, y)))
        .collect()
}

fn rotation_change(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).amax())
        .fold(0.0, f64::max)
}

/// Stopping rule of one ICP phase.
#[derive(Clone, Copy)]
struct Stop {
    tol: f64,
    /// Sweeps without improvement of the best value before giving up.
    patience: usize,
}

const FINE_STOP: Stop = Stop {
    tol: ICP_TOL,
    patience: 8,
};
const COARSE_STOP: Stop = Stop {
    tol: 1e-6,
    patience: 4,
};

/// ICP at a fixed row count; returns the best iterate.
fn icp(
    a: &DMatrix<f64>,
    y: &Side,
    rows: usize,
    start: Vec<DMatrix<f64>>,
    stop: Stop,
) -> (f64, Vec<DMatrix<f64>>, NearestPairs) {
    let mut rots = start;
    let mut best: Option<(f64, Vec<DMatrix<f64>>, NearestPairs)> = None;
    let mut stale = 0;
    for _ in 0..ICP_MAX_ITER {
        let h = hausdorff_coords(a, &y.coords(&rots, rows));
        let next = procrustes(a, y, rows, &pairs_of(&h), &rots);
        let change = rotation_change(&next, &rots);
        if best.as_ref().is_none_or(|b| h.value < b.0) {
            best = Some((h.value, rots, h));
            stale = 0;
        } else {
            stale += 1;
        }
        if change <= stop.tol || stale >= stop.patience {
            break;
        }
        rots = next;
    }
    best.expect("at least one sweep")
}

/// Result of aligning one side's data to a fixed cloud of the other.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub value: f64,
    /// Full change of data of the aligned side.
    pub transform: BlockTransform,
    pub pairs: NearestPairs,
    /// Index of the alignment start that won.
    pub start: usize,
}

/// Inner infimum over `y`'s datas against the fixed cloud `a` (fine rows)
/// whose coarse prefix has `a_coarse` rows.
fn align(
    a: &DMatrix<f64>,
    a_coarse: usize,
    x: &Side,
    y: &Side,
    inner: usize,
    seed: u64,
) -> Alignment {
    let identity = BlockTransform::identity(&y.table);
    if y.blocks.is_empty() {
        let pairs = hausdorff_coords(a, &y.coords(&[], y.level));
        return Alignment {
            value: pairs.value,
            transform: identity,
            pairs,
            start: 0,
        };
    }
    let base = y.restrict(&identity);
    let a_c = a.rows(0, a_coarse.min(a.nrows())).into_owned();
    let two_phase = y.coarse < y.level || a_coarse < a.nrows();
    let starts: Vec<(Vec<DMatrix<f64>>, BlockTransform)> = (0..inner)
        .map(|k| {
            if k == 0 {
                let map = match (x.input.chart, y.input.chart) {
                    (Some(cx), Some(cy)) => cx.nearest_map(cy),
                    _ => None,
                }
                .unwrap_or_else(|| hausdorff_coords(a, &y.coords(&base, y.level)).nn_ab);
                let pairs: Vec<(usize, usize)> = map.into_iter().enumerate().collect();
                (procrustes(a, y, y.level, &pairs, &base), identity.clone())
            } else {
                let tr = BlockTransform::random(
                    &y.table,
                    derive_seed(seed, &[STREAM_START, y.input.key, k as u64]),
                );
                (y.restrict(&tr), tr)
            }
        })
        .collect();
    let coarse: Vec<(f64, Vec<DMatrix<f64>>)> = starts
        .iter()
        .map(|(rots, _)| {
            if two_phase {
                let (v, r, _) = icp(&a_c, y, y.coarse, rots.clone(), COARSE_STOP);
                (v, r)
            } else {
                (f64::NEG_INFINITY, rots.clone())
            }
        })
        .collect();
    // Only coarse-competitive starts are polished at full precision.
    let slack = 2.0 * (x.tail_coarse + y.tail_coarse);
    let best_coarse = coarse.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let mut best: Option<Alignment> = None;
    for (k, ((_, rest), (cv, rots))) in starts.iter().zip(coarse).enumerate() {
        if two_phase && cv > best_coarse + slack {
            continue;
        }
        let (v, r, pairs) = icp(a, y, y.level, rots, FINE_STOP);
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(Alignment {
                value: v,
                transform: y.extend(&r, rest),
                pairs,
                start: k,
            });
        }
    }
    best.expect("first start is always polished")
}

/// All four spectral estimates on shared candidate families.
#[derive(Clone, Debug)]
pub struct SpecDistances {
    pub lower: DistanceReport,
    pub forward: DistanceReport,
    pub backward: DistanceReport,
    pub spec: DistanceReport,
}

struct Sample {
    k: usize,
    outer: BlockTransform,
    aligned: Alignment,
}

fn directed(x: &Side, y: &Side, budget: Budget, seed: u64) -> Vec<Sample> {
    (0..budget.outer)
        .into_par_iter()
        .map(|k| {
            let outer = family_member(&x.table, x.input.key, seed, k);
            let a = x.coords(&x.restrict(&outer), x.level);
            let aligned = align(&a, x.coarse, x, y, budget.inner, seed);
            Sample { k, outer, aligned }
        })
        .collect()
}

/// First sample with the largest inner value.
fn argmax(v: &[Sample]) -> &Sample {
    v.iter().fold(&v[0], |best, s| {
        if s.aligned.value > best.aligned.value {
            s
        } else {
            best
        }
    })
}

/// First sample with the smallest inner value.
fn argmin(v: &[Sample]) -> &Sample {
    v.iter().fold(&v[0], |best, s| {
        if s.aligned.value < best.aligned.value {
            s
        } else {
            best
        }
    })
}

fn check(t: f64, budget: Budget) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if budget.inner == 0 || budget.outer == 0 {
        return Err(Error::Contract("budgets must be at least 1".into()));
    }
    Ok(())
}

fn witness(space: &str, sample: Option<usize>, transform: BlockTransform) -> DataWitness {
    DataWitness {
        space: space.into(),
        sample,
        transform,
    }
}

pub fn spec_distances_with(
    x: SpecInput,
    y: SpecInput,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<SpecDistances> {
    check(t, budget)?;
    let sx = Side::new(x, t);
    let sy = Side::new(y, t);
    let fwd = directed(&sx, &sy, budget, seed);
    let bwd = directed(&sy, &sx, budget, seed);
    let radius = sx.tail + sy.tail;
    let base = |value: f64, kind, direction| {
        let mut r = DistanceReport::new(value, kind, direction);
        r.sample_budget = Some(budget);
        r.seed = Some(seed);
        r.tail_radius = radius;
        r.witnesses.t = Some(t);
        r.components.insert("levels_x".into(), sx.level as f64);
        r.components.insert("levels_y".into(), sy.level as f64);
        r
    };
    let f = argmax(&fwd);
    let mut forward = base(
        f.aligned.value,
        DistanceKind::SpecForward,
        Direction::LowerEstimate,
    );
    forward.witnesses.data_x = Some(witness("X", Some(f.k), f.outer.clone()));
    forward.witnesses.data_y = Some(witness("Y", None, f.aligned.transform.clone()));

    let b = argmax(&bwd);
    let mut backward = base(
        b.aligned.value,
        DistanceKind::SpecBackward,
        Direction::LowerEstimate,
    );
    backward.witnesses.data_y = Some(witness("Y", Some(b.k), b.outer.clone()));
    backward.witnesses.data_x = Some(witness("X", None, b.aligned.transform.clone()));

    let (lf, lb) = (argmin(&fwd), argmin(&bwd));
    let mut lower;
    if lf.aligned.value <= lb.aligned.value {
        lower = base(
            lf.aligned.value,
            DistanceKind::SpecLower,
            Direction::UpperEstimate,
        );
        lower.witnesses.data_x = Some(witness("X", Some(lf.k), lf.outer.clone()));
        lower.witnesses.data_y = Some(witness("Y", None, lf.aligned.transform.clone()));
    } else {
        lower = base(
            lb.aligned.value,
            DistanceKind::SpecLower,
            Direction::UpperEstimate,
        );
        lower.witnesses.data_y = Some(witness("Y", Some(lb.k), lb.outer.clone()));
        lower.witnesses.data_x = Some(witness("X", None, lb.aligned.transform.clone()));
    }

    let mut spec = if forward.value >= backward.value {
        forward.clone()
    } else {
        backward.clone()
    };
    spec.kind = DistanceKind::Spec;
    spec.components.insert("forward".into(), forward.value);
    spec.components.insert("backward".into(), backward.value);
    spec.components.insert("lower".into(), lower.value);
    Ok(SpecDistances {
        lower,
        forward,
        backward,
        spec,
    })
}

pub fn spec_distances(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<SpecDistances> {
    let (sx, sy) = (spectral_data(x)?, spectral_data(y)?);
    spec_distances_with(
        SpecInput::new(x, &sx),
        SpecInput::new(y, &sy),
        t,
        budget,
        seed,
    )
}

pub fn d_spec_lower(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<DistanceReport> {
    Ok(spec_distances(x, y, t, budget, seed)?.lower)
}

/// `d→(X, Y) = sup_a inf_b`, sampled over X's candidate family.
pub fn d_spec_directed(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<DistanceReport> {
    check(t, budget)?;
    let (dx, dy) = (spectral_data(x)?, spectral_data(y)?);
    let sx = Side::new(SpecInput::new(x, &dx), t);
    let sy = Side::new(SpecInput::new(y, &dy), t);
    let fwd = directed(&sx, &sy, budget, seed);
    let f = argmax(&fwd);
    let mut r = DistanceReport::new(
        f.aligned.value,
        DistanceKind::SpecForward,
        Direction::LowerEstimate,
    );
    r.sample_budget = Some(budget);
    r.seed = Some(seed);
    r.tail_radius = sx.tail + sy.tail;
    r.witnesses.t = Some(t);
    r.witnesses.data_x = Some(witness("X", Some(f.k), f.outer.clone()));
    r.witnesses.data_y = Some(witness("Y", None, f.aligned.transform.clone()));
    Ok(r)
}

pub fn d_spec(
    x: &FiniteMMS,
    y: &FiniteMMS,
    t: f64,
    budget: Budget,
    seed: u64,
) -> Result<DistanceReport> {
    Ok(spec_distances(x, y, t, budget, seed)?.spec)
}

/// Hausdorff distance of the truncated clouds `I_t^a(X)` and `I_t^b(Y)` for
/// the given changes of data; re-evaluates a report's witnesses.
pub fn spec_value(
    x: SpecInput,
    y: SpecInput,
    t: f64,
    a: &BlockTransform,
    b: &BlockTransform,
) -> Result<f64> {
    check(t, Budget::default())?;
    let sx = Side::new(x, t);
    let sy = Side::new(y, t);
    let ca = sx.coords(&sx.restrict(a), sx.level);
    let cb = sy.coords(&sy.restrict(b), sy.level);
    Ok(hausdorff_coords(&ca, &cb).value)
}

/// Aligns `y`'s data to the cloud of `x` under the change of data `a`.
pub fn align_data(
    x: SpecInput,
    y: SpecInput,
    t: f64,
    a: &BlockTransform,
    inner: usize,
    seed: u64,
) -> Result<Alignment> {
    check(t, Budget { inner, outer: 1 })?;
    let sx = Side::new(x, t);
    let sy = Side::new(y, t);
    let ca = sx.coords(&sx.restrict(a), sx.level);
    Ok(align(&ca, sx.coarse, &sx, &sy, inner, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::{make_cycle, make_point, rescale};

    fn small() -> Budget {
        Budget { inner: 3, outer: 4 }
    }

    #[test]
    fn self_distance_vanishes() {
        let x = make_cycle(1.0, 32).unwrap();
        let d = spec_distances(&x, &x, 1.0, small(), 5).unwrap();
        assert!(d.spec.value < 1e-9, "{}", d.spec.value);
        assert!(d.lower.value < 1e-12);
    }

    #[test]
    fn ordering_chain_and_symmetry() {
        let x = make_cycle(1.0, 16).unwrap();
        let y = make_cycle(1.05, 16).unwrap();
        let xy = spec_distances(&x, &y, 1.0, small(), 3).unwrap();
        let yx = spec_distances(&y, &x, 1.0, small(), 3).unwrap();
        assert_eq!(xy.spec.value, yx.spec.value);
        assert_eq!(xy.forward.value, yx.backward.value);
        let (f, b) = (xy.forward.value, xy.backward.value);
        assert!(xy.spec.value >= f.max(b));
        assert!(f.min(b) >= xy.lower.value);
        assert!(xy.lower.value > 0.0);
    }

    #[test]
    fn witnesses_reproduce_values() {
        let x = make_cycle(1.0, 16).unwrap();
        let y = make_cycle(1.1, 16).unwrap();
        let (dx, dy) = (spectral_data(&x).unwrap(), spectral_data(&y).unwrap());
        let (ix, iy) = (SpecInput::new(&x, &dx), SpecInput::new(&y, &dy));
        let d = spec_distances_with(ix, iy, 0.5, small(), 9).unwrap();
        for r in [&d.lower, &d.forward, &d.backward, &d.spec] {
            let a = &r.witnesses.data_x.as_ref().unwrap().transform;
            let b = &r.witnesses.data_y.as_ref().unwrap().transform;
            let v = spec_value(ix, iy, 0.5, a, b).unwrap();
            assert!(
                (v - r.value).abs() < 1e-12,
                "{:?}: {v} vs {}",
                r.kind,
                r.value
            );
        }
    }

    #[test]
    fn measure_scaling_is_invisible() {
        let x = make_cycle(1.0, 16).unwrap();
        for beta in [0.25, 4.0] {
            let y = rescale(&x, 1.0, beta).unwrap();
            let d = d_spec_lower(&x, &y, 1.0, small(), 1).unwrap();
            assert!(d.value < 1e-9, "{beta}: {}", d.value);
        }
    }

    #[test]
    fn point_side_has_no_alignment() {
        let x = make_cycle(0.1, 16).unwrap();
        let p = make_point(2.0 * std::f64::consts::PI * 0.1).unwrap();
        let d = spec_distances(&x, &p, 1.0, small(), 1).unwrap();
        assert!(d.spec.value > 0.0 && d.spec.value < 0.1);
        assert!((d.forward.value - d.backward.value).abs() <= 1e-12 * d.spec.value);
    }

    #[test]
    fn budget_and_time_are_checked() {
        let x = make_point(1.0).unwrap();
        assert!(spec_distances(&x, &x, 0.0, small(), 1).is_err());
        assert!(spec_distances(&x, &x, 1.0, Budget { inner: 0, outer: 1 }, 1).is_err());
    }
}
