//! Measure-induced traces, the dimension functions they define, and the
//! comparison-radius experiments built on them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cuntz::{decide_subequivalence, ComparisonVerdict, Mode};
use crate::error::{Error, Result};
use crate::linalg::{self, Eigh};
use crate::matfield::{cutdown_field, Field, MatrixField};
use crate::simplicial::{BarycentricPoint, Complex, Mesh};

/// Extra subdivisions used by the quadrature of non-PL integrands.
pub const QUADRATURE_DEPTH: usize = 4;
/// Exponents `m = 2^4 .. 2^16` of the trace limit.
const POWERS: std::ops::RangeInclusive<i32> = 4..=16;
const AGREEMENT: f64 = 1e-2;

/// Probability measure on a complex, uniform inside each top simplex.
#[derive(Clone, Debug)]
pub struct TraceSpec {
    pub root: Arc<Complex>,
    /// Mass of each simplex of `root`; zero off the top simplices.
    pub weights: Vec<f64>,
}

#[derive(Deserialize)]
struct TraceJson {
    #[serde(default)]
    weights: BTreeMap<String, f64>,
}

impl TraceSpec {
    /// Listed masses are kept; the remainder is spread over the unlisted top
    /// simplices in proportion to volume.
    pub fn new(root: Arc<Complex>, listed: &BTreeMap<usize, f64>) -> Result<Self> {
        let tops: Vec<usize> = root.top_simplices().collect();
        let mut weights = vec![0.0; root.num_simplices()];
        let mut used = 0.0;
        for (&s, &w) in listed {
            if !tops.contains(&s) {
                return Err(Error::InvalidField(format!("simplex {s} is not a top simplex")));
            }
            if !(w >= 0.0) {
                return Err(Error::InvalidField(format!("negative weight on simplex {s}")));
            }
            weights[s] = w;
            used += w;
        }
        let rest: Vec<usize> = tops.iter().copied().filter(|s| !listed.contains_key(s)).collect();
        let left = 1.0 - used;
        if left < -1e-12 || (rest.is_empty() && left.abs() > 1e-12) {
            return Err(Error::InvalidField(format!("weights sum to {used}, not 1")));
        }
        let vol: f64 = rest.iter().map(|&s| root.volume(s)).sum();
        for &s in &rest {
            weights[s] = left.max(0.0) * root.volume(s) / vol;
        }
        Ok(TraceSpec { root, weights })
    }

    /// Normalised volume.
    pub fn lebesgue(root: Arc<Complex>) -> Self {
        Self::new(root, &BTreeMap::new()).expect("empty weight list")
    }

    pub fn from_json(text: &str, root: Arc<Complex>) -> Result<Self> {
        let raw: TraceJson = serde_json::from_str(text).map_err(|e| Error::InvalidField(format!("trace: {e}")))?;
        let mut listed = BTreeMap::new();
        for (k, w) in raw.weights {
            let s = k.parse::<usize>().map_err(|_| Error::InvalidField(format!("bad simplex index {k:?}")))?;
            listed.insert(s, w);
        }
        Self::new(root, &listed)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(point, mass)` at the barycenters of the top simplices of `mesh`.
    pub fn quadrature(&self, mesh: &Mesh) -> Vec<(BarycentricPoint, f64)> {
        let top = mesh.top();
        let cells: Vec<(usize, BarycentricPoint, f64)> = top
            .top_simplices()
            .map(|s| {
                let p = mesh.to_root(&BarycentricPoint::barycenter(top, s));
                (p.simplex, p, top.volume(s))
            })
            .collect();
        let mut per_carrier = vec![0.0; self.root.num_simplices()];
        for (c, _, v) in &cells {
            per_carrier[*c] += v;
        }
        cells
            .into_iter()
            .filter(|(c, _, _)| self.weights[*c] > 0.0)
            .map(|(c, p, v)| (p, self.weights[c] * v / per_carrier[c]))
            .collect()
    }
}

/// The two estimates of `s_tau(a)`.
#[derive(Clone, Debug, Serialize)]
pub struct LdfValue {
    /// Rank integral, the reported value.
    pub value: f64,
    /// Richardson limit of `tau(a^{1/m})`.
    pub trace_limit: f64,
}

/// `int rank(a) dmu / n` by the barycenter rule on `mesh`.
pub fn rank_integral(tau: &TraceSpec, a: &dyn Field, tol: f64, mesh: &Mesh) -> Result<f64> {
    let n = a.shape().0.max(1) as f64;
    let parts: Vec<f64> = tau
        .quadrature(mesh)
        .par_iter()
        .map(|(p, w)| Eigh::new(&a.eval(p)).map(|e| w * e.rank(tol) as f64))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / n)
}

/// `tau(a^{1/m})` with eigenvalues up to `tol` treated as zero.
fn trace_power(spectra: &[(Vec<f64>, f64)], n: usize, m: f64) -> f64 {
    let s: f64 = spectra
        .iter()
        .map(|(vals, w)| w * vals.iter().map(|&l| l.powf(1.0 / m)).sum::<f64>())
        .sum();
    s / n as f64
}

/// `s_tau(a)`: the rank integral on the field's own mesh (exact for PL
/// fields, whose rank is constant on open simplices), cross-checked against
/// the extrapolated `tau(a^{1/m})` on a finer quadrature.
pub fn ldf_value(tau: &TraceSpec, a: &MatrixField, tol: f64) -> Result<LdfValue> {
    if !crate::matfield::same_root(&tau.root, &a.mesh().root) {
        return Err(Error::ShapeMismatch("trace and field live on different complexes".into()));
    }
    let value = rank_integral(tau, a, tol, a.mesh())?;
    let fine = a.mesh().refined_to(a.mesh().depth() + QUADRATURE_DEPTH);
    let spectra: Vec<(Vec<f64>, f64)> = tau
        .quadrature(&fine)
        .par_iter()
        .map(|(p, w)| {
            Eigh::new(&a.eval(p)).map(|e| (e.values.into_iter().filter(|&l| l > tol).collect(), *w))
        })
        .collect::<Result<_>>()?;
    let n = a.n().max(1);
    let f: Vec<f64> = POWERS.map(|k| trace_power(&spectra, n, 2f64.powi(k))).collect();
    // leading error is c/m; eliminate it from the last two terms
    let trace_limit = 2.0 * f[f.len() - 1] - f[f.len() - 2];
    if (value - trace_limit).abs() > AGREEMENT {
        return Err(Error::EstimatorDisagreement(value, trace_limit));
    }
    Ok(LdfValue { value, trace_limit })
}

/// Outcome of the dimension-function property checks.
#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    /// `Some(ok)` when `a ≾ b` was witnessed.
    pub monotone: Option<bool>,
    pub additivity_error: f64,
    /// `(eps, s((a - eps)_+))` for decreasing `eps`.
    pub cutdown: Vec<(f64, f64)>,
    pub cutdown_limit_error: f64,
    pub violations: Vec<String>,
}

fn embed(a: &MatrixField, n: usize, offset: usize) -> MatrixField {
    let samples = a
        .samples()
        .iter()
        .map(|m| {
            let mut out = linalg::zeros(n, n);
            out.view_mut((offset, offset), (m.nrows(), m.ncols())).copy_from(m);
            out
        })
        .collect();
    MatrixField::new(a.mesh().clone(), samples).expect("square embedding")
}

/// Monotonicity along a witnessed `a ≾ b`, additivity of the orthogonal sum
/// `a ⊕ b`, and the increasing limit `s((a - eps)_+) -> s(a)`.
pub fn ldf_properties_check(tau: &TraceSpec, a: &MatrixField, b: &MatrixField, eps: f64, tol: f64) -> Result<PropertyReport> {
    let mut violations = Vec::new();
    let sa = ldf_value(tau, a, tol)?.value;
    let sb = ldf_value(tau, b, tol)?.value;

    let monotone = match decide_subequivalence(a, b, eps, Mode::Oracle, tol, 0)? {
        ComparisonVerdict::Witnessed(_) => {
            let ok = sa <= sb + 1e-6;
            if !ok {
                violations.push(format!("monotonicity: s(a) = {sa} > s(b) = {sb}"));
            }
            Some(ok)
        }
        _ => None,
    };

    let (na, nb) = (a.n(), b.n());
    let n = na + nb;
    let (a2, b2) = (embed(a, n, 0), embed(b, n, na));
    let sum = MatrixField::new(
        a.mesh().clone(),
        a2.samples().iter().zip(b2.samples()).map(|(x, y)| x + y).collect(),
    )?;
    let additivity_error = (ldf_value(tau, &sum, tol)?.value - ldf_value(tau, &a2, tol)?.value - ldf_value(tau, &b2, tol)?.value).abs();
    if additivity_error > 1e-6 {
        violations.push(format!("additivity off by {additivity_error:e}"));
    }

    let top = a.samples().iter().map(linalg::op_norm).fold(0.0, f64::max);
    let fine = a.mesh().refined_to(a.mesh().depth() + QUADRATURE_DEPTH);
    let aa: Arc<dyn Field> = Arc::new(a.clone());
    let mut cutdown = Vec::new();
    for j in 1..=30 {
        let e = top * 0.5f64.powi(j);
        let s = rank_integral(tau, &cutdown_field(aa.clone(), e), tol, &fine)?;
        if let Some(&(_, prev)) = cutdown.last() {
            if s + 1e-12 < prev {
                violations.push(format!("cutdown decreased at eps = {e:e}"));
            }
        }
        cutdown.push((e, s));
    }
    let sa_fine = rank_integral(tau, a, tol, &fine)?;
    let cutdown_limit_error = (cutdown.last().map_or(0.0, |c| c.1) - sa_fine).abs();
    if cutdown_limit_error > 1e-4 {
        violations.push(format!("cutdown limit off by {cutdown_limit_error:e}"));
    }
    Ok(PropertyReport { monotone, additivity_error, cutdown, cutdown_limit_error, violations })
}

/// Whether `s_tau(a) + margin < s_tau(b)` for every supplied trace.
pub fn strict_comparison_check(a: &MatrixField, b: &MatrixField, traces: &[TraceSpec], margin: f64, tol: f64) -> Result<bool> {
    for tau in traces {
        if ldf_value(tau, a, tol)?.value + margin >= ldf_value(tau, b, tol)?.value {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One summand `p (C(X) ⊗ K) p` with `rank p = rank`.
#[derive(Clone, Debug)]
pub struct StageBlock {
    pub complex: Arc<Complex>,
    pub n: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, Default)]
pub struct StageAlgebra {
    pub blocks: Vec<StageBlock>,
}

impl StageAlgebra {
    pub fn new(blocks: Vec<StageBlock>) -> Result<Self> {
        if let Some(b) = blocks.iter().find(|b| b.rank == 0 || b.rank > b.n) {
            return Err(Error::InvalidField(format!("block rank {} outside 1..={}", b.rank, b.n)));
        }
        Ok(StageAlgebra { blocks })
    }
}

/// Dimension-rank ratio: max of `dim X_l / rank p_l`.
pub fn drr(stage: &StageAlgebra) -> f64 {
    stage
        .blocks
        .iter()
        .map(|b| b.complex.dim() as f64 / b.rank as f64)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RcConfig {
    /// Pairs sampled per candidate gap.
    pub samples: usize,
    pub eps: f64,
    pub tol: f64,
    /// Cap on calls to the decision procedure.
    pub budget: usize,
}

impl Default for RcConfig {
    fn default() -> Self {
        RcConfig { samples: 3, eps: 1e-3, tol: 1e-8, budget: 400 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RcEstimate {
    /// Largest per-block value.
    pub value: f64,
    /// Least successful integer gap of each block, over its rank.
    pub blocks: Vec<(usize, f64)>,
    pub calls: usize,
}

/// Random PL pair on `mesh` in `M_r` with `rank b = rank a + gap` at every
/// point, so every trace sees the same dimension gap `gap / r`. The range of
/// `a` at a vertex is `0`, `S1` or `S`, for fixed `S1 ⊂ S`, and `b` lives on
/// that range plus a fixed `gap`-dimensional complement.
pub fn gap_sample(mesh: &Mesh, r: usize, gap: usize, rng: &mut impl Rng) -> (MatrixField, MatrixField) {
    assert!(gap <= r);
    let u = linalg::random_unitary(r, rng);
    let room = r - gap;
    let low = if room == 0 { 0 } else { rng.gen_range(0..room) };
    let q = u.columns(room, gap).clone_owned();
    let nv = mesh.top().num_vertices();
    let mut a = Vec::with_capacity(nv);
    let mut b = Vec::with_capacity(nv);
    for _ in 0..nv {
        let k = [0, low, room][rng.gen_range(0..3)];
        let basis = u.columns(0, k).clone_owned();
        a.push(if k == 0 { linalg::zeros(r, r) } else { linalg::random_psd_on(&basis, 0.5, 2.0, rng) });
        let mut both = linalg::zeros(r, k + gap);
        both.columns_mut(0, k).copy_from(&basis);
        both.columns_mut(k, gap).copy_from(&q);
        b.push(if k + gap == 0 { linalg::zeros(r, r) } else { linalg::random_psd_on(&both, 0.5, 2.0, rng) });
    }
    (MatrixField::new(mesh.clone(), a).expect("square"), MatrixField::new(mesh.clone(), b).expect("square"))
}

/// Upper estimate of the comparison radius reachable by the constructive
/// decision procedure: per block, the least integer gap `g` (binary search)
/// at which every sampled pair with `rank b = rank a + g` is witnessed in
/// strict mode, divided by the block rank; the stage value is the maximum.
pub fn rc_estimate(stage: &StageAlgebra, config: &RcConfig, seed: u64) -> Result<RcEstimate> {
    let mut calls = 0;
    let mut blocks = Vec::new();
    for (l, blk) in stage.blocks.iter().enumerate() {
        let mesh = Mesh::from_arc(blk.complex.clone());
        let r = blk.rank;
        let works = |g: usize, calls: &mut usize| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((l as u64) << 32) ^ g as u64);
            for _ in 0..config.samples {
                if *calls >= config.budget {
                    return Err(Error::SampleBudgetExceeded);
                }
                *calls += 1;
                let (a, b) = gap_sample(&mesh, r, g, &mut rng);
                if !decide_subequivalence(&a, &b, config.eps, Mode::Strict, config.tol, seed)?.is_witnessed() {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let (mut lo, mut hi) = (0usize, r);
        if works(0, &mut calls)? {
            hi = 0;
        } else {
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if works(mid, &mut calls)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        blocks.push((hi, hi as f64 / r as f64));
    }
    let value = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    Ok(RcEstimate { value, blocks, calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag;

    fn unit() -> Arc<Complex> {
        Arc::new(Complex::interval(1))
    }

    #[test]
    fn trace_spec_fill_and_json() {
        let root = Arc::new(Complex::interval(4));
        let tau = TraceSpec::lebesgue(root.clone());
        assert!((tau.total() - 1.0).abs() < 1e-12);
        let first = root.simplex_index(&[0, 1]).unwrap();
        let t = TraceSpec::from_json(&format!("{{\"weights\": {{\"{first}\": 0.7}}}}"), root.clone()).unwrap();
        assert!((t.weights[first] - 0.7).abs() < 1e-15);
        assert!((t.total() - 1.0).abs() < 1e-12);
        let other = root.simplex_index(&[2, 3]).unwrap();
        assert!((t.weights[other] - 0.1).abs() < 1e-12);
        assert!(TraceSpec::from_json(&format!("{{\"weights\": {{\"{first}\": 1.5}}}}"), root.clone()).is_err());
        assert!(TraceSpec::from_json("{\"weights\": {\"0\": 0.5}}", root).is_err());
    }

    #[test]
    fn ldf_examples() {
        let mesh = Mesh::from_arc(unit());
        let tau = TraceSpec::lebesgue(unit());
        let id = MatrixField::constant(mesh.clone(), linalg::identity(3));
        assert!((ldf_value(&tau, &id, 1e-8).unwrap().value - 1.0).abs() < 1e-12);

        let dx = MatrixField::from_coords(mesh.clone(), |x| diag(&[x[0], 1.0]));
        let v = ldf_value(&tau, &dx, 1e-8).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
        assert!((v.trace_limit - 1.0).abs() < 1e-2);

        // rank 1 on [0, 1/2], rank 2 on (1/2, 1]
        let m2 = Mesh::new(Complex::interval(2));
        let half = MatrixField::new(m2.clone(), vec![diag(&[1.0, 0.0]), diag(&[1.0, 0.0]), diag(&[1.0, 1.0])]).unwrap();
        let tau2 = TraceSpec::lebesgue(m2.root.clone());
        let v = ldf_value(&tau2, &half, 1e-8).unwrap();
        assert!((v.value - 0.75).abs() < 1e-12);
        assert!((v.trace_limit - 0.75).abs() < 1e-2);
    }

    #[test]
    fn property_examples() {
        let m = Mesh::new(Complex::interval(4));
        let tau = TraceSpec::lebesgue(m.root.clone());
        let a = MatrixField::new(m.clone(), (0..5).map(|i| diag(&[1.0 + i as f64 / 4.0, 0.0])).collect()).unwrap();
        let b = MatrixField::constant(m.clone(), diag(&[1.0, 1.0, 0.5]));
        let r = ldf_properties_check(&tau, &a, &b, 1e-3, 1e-8).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert_eq!(r.monotone, Some(true));
        assert!(r.additivity_error < 1e-6);
        assert!(r.cutdown_limit_error < 1e-4);
    }

    #[test]
    fn strict_comparison_examples() {
        let m = Mesh::new(Complex::interval(10));
        let tau = vec![TraceSpec::lebesgue(m.root.clone())];
        let on = |lo: usize, hi: usize| {
            MatrixField::new(m.clone(), (0..=10).map(|i| if (lo..=hi).contains(&i) { diag(&[1.0, 0.0]) } else { linalg::zeros(2, 2) }).collect()).unwrap()
        };
        let zero = MatrixField::constant(m.clone(), linalg::zeros(2, 2));
        let full = MatrixField::constant(m.clone(), linalg::identity(2));
        assert!(strict_comparison_check(&zero, &full, &tau, 0.99, 1e-8).unwrap());
        assert!(!strict_comparison_check(&full, &full, &tau, 1e-9, 1e-8).unwrap());
        // rank 1 on (0.3, 0.7) and (0.1, 0.9): values 0.2 and 0.4
        let (a, b) = (on(4, 6), on(2, 8));
        assert!(strict_comparison_check(&a, &b, &tau, 0.2 - 1e-6, 1e-8).unwrap());
        assert!(!strict_comparison_check(&a, &b, &tau, 0.2 + 1e-6, 1e-8).unwrap());
    }

    #[test]
    fn drr_examples() {
        let blk = |k: Complex, rank| StageBlock { complex: Arc::new(k), n: rank, rank };
        assert_eq!(drr(&StageAlgebra::new(vec![blk(Complex::octahedron(), 4)]).unwrap()), 0.5);
        let two = StageAlgebra::new(vec![blk(Complex::interval(1), 10), blk(Complex::standard_simplex(3), 6)]).unwrap();
        assert_eq!(drr(&two), 0.5);
        assert_eq!(drr(&StageAlgebra::new(vec![blk(Complex::points(3), 2)]).unwrap()), 0.0);
        assert!(StageAlgebra::new(vec![StageBlock { complex: unit(), n: 2, rank: 0 }]).is_err());
    }

    #[test]
    fn gap_sample_has_exact_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = Mesh::new(Complex::circle(4));
        let (a, b) = gap_sample(&mesh, 6, 2, &mut rng);
        let grid = crate::cuntz::check_grid(&[&mesh]);
        for x in &grid.points {
            let ra = Eigh::new(&a.eval(x)).unwrap().rank(1e-8);
            let rb = Eigh::new(&b.eval(x)).unwrap().rank(1e-8);
            assert_eq!(ra + 2, rb);
        }
    }

    #[test]
    fn rc_of_matrix_algebra_is_zero() {
        let stage = StageAlgebra::new(vec![StageBlock { complex: Arc::new(Complex::points(2)), n: 4, rank: 4 }]).unwrap();
        let e = rc_estimate(&stage, &RcConfig::default(), 0).unwrap();
        assert_eq!(e.value, 0.0);
    }
}
