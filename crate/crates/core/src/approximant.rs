//! Well-supported approximants: a field `f <= a` close to `a` with the same
//! rank values and coherent support projections on its strata.

use rayon::prelude::*;
use serde::Serialize;

use crate::bundles::{align_frames, alignment_residual, FrameField};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Eigh};
use crate::matfield::{Field, MatrixField, RankProfile};
use crate::simplicial::{BarycentricPoint, Complex, Mesh, Subcomplex};

/// Fraction of the sampled gap actually used.
pub const MARGIN: f64 = 0.95;
const RETRIES: usize = 3;
/// Lattice resolution used to sample stratum boundaries.
const LATTICE: usize = 4;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Thresholds {
    pub eta: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl Thresholds {
    pub fn from_eta(eta: Vec<f64>, eps: f64) -> Thresholds {
        let mut upper = Vec::with_capacity(eta.len());
        let mut lower: Vec<f64> = Vec::with_capacity(eta.len());
        for (i, &e) in eta.iter().enumerate() {
            upper.push((2.0 * e / 3.0).max(e - eps));
            let prev = if i == 0 { eps } else { lower[i - 1] };
            lower.push((e / 3.0).min(prev));
        }
        Thresholds { eta, upper, lower }
    }
}

/// Points of a simplex with barycentric coordinates in `(1/m) Z`.
pub fn lattice(k: &Complex, s: usize, m: usize) -> Vec<BarycentricPoint> {
    let len = k.simplex(s).len();
    let mut out = Vec::new();
    let mut cur = vec![0usize; len];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for t in 0..=left {
            cur[i] = t;
            rec(i + 1, left - t, cur, out);
        }
    }
    let mut parts = Vec::new();
    rec(0, m, &mut cur, &mut parts);
    for p in parts {
        out.push(BarycentricPoint {
            simplex: s,
            coords: p.iter().map(|&t| t as f64 / m as f64).collect(),
        });
    }
    out
}

fn sample_points(k: &Complex, sub: &Subcomplex) -> Vec<BarycentricPoint> {
    sub.maximal(k).into_iter().flat_map(|s| lattice(k, s, LATTICE)).collect()
}

/// Thresholds from the smallest eigenvalue above the profile tolerance on the
/// boundary of each `H_i` (falling back to `H_i` itself when the boundary is
/// empty). A stratum of rank zero has no gap to protect: `eta = inf`.
pub fn compute_thresholds(a: &dyn Field, profile: &RankProfile, eps: f64) -> Result<Thresholds> {
    let k = profile.complex();
    let mesh = &profile.mesh;
    let mut eta = Vec::new();
    for i in 0..profile.k().saturating_sub(1) {
        let h = profile.h(i);
        let mut region = h.boundary(k);
        if region.is_empty() {
            region = h;
        }
        if region.is_empty() {
            return Err(Error::EmptyBoundary(i));
        }
        let pts = sample_points(k, &region);
        let e = pts
            .par_iter()
            .map(|q| {
                let e = Eigh::new(&a.eval(&mesh.to_root(q)))?;
                Ok(e.values.iter().copied().filter(|&l| l > profile.tol).fold(f64::INFINITY, f64::min))
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        eta.push(e);
    }
    Ok(Thresholds::from_eta(eta, eps))
}

/// One blending level. The blend is
/// `s_j = max(g_j, ramp(next; lower/2, lower), ramp_down(top; upper, release))`
/// where `top`/`next` are the `n_j`-th and `(n_j+1)`-th largest eigenvalues of
/// `a(x)` and `g_j` is a PL cutoff vanishing on a hop-one neighbourhood of
/// `H_j = {rank a <= n_j}`. Wherever `s_j < 1` the spectrum splits at the
/// gap `(lower, upper)`.
#[derive(Clone, Debug)]
pub struct Level {
    pub n: usize,
    pub mesh: Mesh,
    pub h: Subcomplex,
    /// Vertex values of `g_j` on `mesh.top()`, each 0 or 1.
    pub g: Vec<f64>,
    pub eta: f64,
    pub upper: f64,
    pub release: f64,
    pub lower: f64,
    pub skipped: bool,
}

fn ramp(t: f64, a: f64, b: f64) -> f64 {
    ((t - a) / (b - a)).clamp(0.0, 1.0)
}

impl Level {
    pub fn g_at(&self, x: &BarycentricPoint) -> f64 {
        let q = self.mesh.locate(x);
        q.weights(self.mesh.top()).map(|(v, w)| w * self.g[v]).sum()
    }

    /// `(top, next)` eigenvalues from an ascending spectrum.
    fn top_next(&self, vals: &[f64]) -> (f64, f64) {
        let n = vals.len();
        let top = if self.n == 0 { f64::INFINITY } else { vals[n - self.n] };
        let next = if self.n >= n { 0.0 } else { vals[n - self.n - 1].max(0.0) };
        (top, next)
    }

    /// Blend value at `x` given the ascending spectrum of `a(x)`.
    pub fn s(&self, x: &BarycentricPoint, vals: &[f64]) -> f64 {
        if self.skipped {
            return 1.0;
        }
        let (top, next) = self.top_next(vals);
        let spec = ramp(next, self.lower / 2.0, self.lower).max(if top.is_finite() {
            1.0 - ramp(top, self.upper, self.release)
        } else {
            0.0
        });
        if spec >= 1.0 {
            return 1.0;
        }
        spec.max(self.g_at(x))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub thresholds: Thresholds,
    /// Sampled gaps before the safety margin.
    pub eta_sampled: Vec<f64>,
    /// Subdivision depth (relative to the input mesh) of the cutoffs `g_j`.
    pub cutoff_depth: usize,
    pub retries: usize,
    pub skipped: Vec<usize>,
}

/// `f = sum_k omega_k lambda_k P_k` over the eigenpairs of `a(x)`, with
/// `omega_{k-1} = 1` and `omega_j = w_j + s_j (omega_{j+1} - w_j)`, `w_j` the
/// indicator of the top `n_j` eigenvalues above the tolerance.
#[derive(Clone, Debug)]
pub struct WellSupportedElement {
    pub a: MatrixField,
    pub values: Vec<usize>,
    pub levels: Vec<Level>,
    pub tol: f64,
    pub eps: f64,
    pub certificate: Certificate,
}

/// Pointwise data of a well-supported element.
#[derive(Clone, Debug)]
pub struct Local {
    pub eig: Eigh,
    pub omega: Vec<f64>,
    pub blends: Vec<f64>,
}

impl Local {
    pub fn rank(&self, tol: f64) -> usize {
        self.eig
            .values
            .iter()
            .zip(&self.omega)
            .filter(|(&l, &o)| l > tol && o > 0.0)
            .count()
    }

    pub fn f(&self) -> CMat {
        self.eig.apply_indexed(|k, l| self.omega[k] * l.max(0.0))
    }
}

impl WellSupportedElement {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn local(&self, x: &BarycentricPoint) -> Result<Local> {
        let eig = Eigh::new(&self.a.eval(x))?;
        let n = eig.n();
        let mut omega = vec![1.0; n];
        let mut blends = vec![1.0; self.levels.len()];
        for (j, lev) in self.levels.iter().enumerate().rev() {
            if lev.skipped {
                continue;
            }
            let s = lev.s(x, &eig.values);
            blends[j] = s;
            for (k, o) in omega.iter_mut().enumerate() {
                let w = (k + lev.n >= n && eig.values[k] > self.tol) as u8 as f64;
                *o = w + s * (*o - w);
            }
        }
        Ok(Local { eig, omega, blends })
    }

    pub fn rank_at(&self, x: &BarycentricPoint) -> Result<usize> {
        Ok(self.local(x)?.rank(self.tol))
    }

    /// Index `i` with `rank f(x) = n_i`.
    pub fn stratum_at(&self, x: &BarycentricPoint) -> Result<usize> {
        let r = self.rank_at(x)?;
        self.values
            .binary_search(&r)
            .map_err(|_| Error::ConstructionFailed(format!("rank {r} of f is not a rank value of a")))
    }

    /// Frame of `p_i(x)`: the top `n_i` eigenvectors of `a(x)` (equivalently
    /// of `f(x)`, whose eigenvalues are ordered the same way).
    pub fn support_frame(&self, i: usize, x: &BarycentricPoint) -> Result<CMat> {
        Ok(Eigh::new(&self.a.eval(x))?.top(self.values[i]))
    }

    pub fn projection(&self, i: usize, x: &BarycentricPoint) -> Result<CMat> {
        Ok(linalg::frame_projection(&self.support_frame(i, x)?))
    }

    /// `||supp f(x) - p_i(x)||` for the stratum `i` of `x`.
    pub fn support_defect(&self, x: &BarycentricPoint) -> Result<f64> {
        let loc = self.local(x)?;
        let i = self.stratum_at(x)?;
        let supp = loc.eig.select_indexed(|k, l| l > self.tol && loc.omega[k] > 0.0);
        let p = self.projection(i, x)?;
        Ok(linalg::herm_norm(&(linalg::frame_projection(&supp) - p)))
    }

    /// Max of `||(1 - p_j) p_i||` over `i < j` in `strata`.
    pub fn coherence_defect(&self, x: &BarycentricPoint, strata: &[usize]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (ai, &i) in strata.iter().enumerate() {
            let pi = self.projection(i, x)?;
            for &j in &strata[ai + 1..] {
                let pj = self.projection(j, x)?;
                let (lo, hi) = if i < j { (&pi, &pj) } else { (&pj, &pi) };
                worst = worst.max(linalg::containment_defect(lo, hi));
            }
        }
        Ok(worst)
    }

    /// `p_i` as a frame field on the vertices of `mesh` where `f` has rank at
    /// least `n_i`.
    pub fn projection_field(&self, i: usize, mesh: &Mesh) -> Result<FrameField> {
        let k = mesh.top();
        let ni = self.values[i];
        let mut frames: Vec<Option<CMat>> = (0..k.num_vertices())
            .into_par_iter()
            .map(|v| {
                let x = mesh.root_point(v);
                if self.rank_at(&x)? < ni {
                    return Ok(None);
                }
                self.support_frame(i, &x).map(Some)
            })
            .collect::<Result<_>>()?;
        align_frames(k, &mut frames);
        FrameField::new(mesh.clone(), self.n(), ni, frames)
    }
}

impl Field for WellSupportedElement {
    fn root(&self) -> &std::sync::Arc<Complex> {
        self.a.root()
    }

    fn shape(&self) -> (usize, usize) {
        (self.n(), self.n())
    }

    fn eval(&self, x: &BarycentricPoint) -> CMat {
        if self.levels.iter().all(|l| l.skipped) {
            return self.a.eval(x);
        }
        match self.local(x) {
            Ok(loc) => loc.f(),
            Err(_) => self.a.eval(x),
        }
    }
}

/// Simplex data carried to a finer level: the open simplex of level `l + 1`
/// lies in the open simplex of level `l` named by its largest vertex.
pub fn prolong_simplex<T: Copy>(mesh: &Mesh, from: usize, to: usize, mut data: Vec<T>) -> Vec<T> {
    for l in from..to {
        let k = mesh.level(l + 1);
        data = (0..k.num_simplices())
            .map(|t| data[*k.simplex(t).iter().max().expect("nonempty simplex")])
            .collect();
    }
    data
}

/// Points where rank values are checked: a lattice on every simplex of the
/// input mesh.
fn probe_points(a: &MatrixField) -> Vec<BarycentricPoint> {
    let k = a.mesh().top();
    (0..k.num_simplices())
        .flat_map(|s| lattice(k, s, LATTICE))
        .map(|q| a.mesh().to_root(&q))
        .collect()
}

fn build_levels(a: &MatrixField, profile: &RankProfile, eps: f64, tol: f64, depth: usize) -> Result<(Vec<Level>, Vec<f64>)> {
    let a_depth = a.mesh().depth();
    let mesh = a.mesh().refined_to(a_depth + depth);
    let top = mesh.top();
    let ranks = prolong_simplex(&mesh, a_depth, a_depth + depth, profile.ranks.clone());
    let k0 = a.mesh().top();
    let mut levels: Vec<Level> = Vec::new();
    let mut sampled = Vec::new();
    for j in 0..profile.k().saturating_sub(1) {
        let nj = profile.values[j];
        let h = Subcomplex::from_mask(top, ranks.iter().map(|&r| r <= nj).collect())
            .map_err(|_| Error::ConstructionFailed("rank sets are not closed".into()))?;
        let hop = h.hop_distance(top);
        let g: Vec<f64> = hop.iter().map(|&d| if d <= 1 { 0.0 } else { 1.0 }).collect();
        // gap on the boundary of H_j, away from where earlier blends vanish
        let h0 = profile.h(j);
        let mut eta = f64::NAN;
        if nj == 0 {
            eta = f64::INFINITY;
        } else {
            for region in [h0.boundary(k0), h0.clone()] {
                let pts: Vec<BarycentricPoint> = sample_points(k0, &region)
                    .into_iter()
                    .map(|q| a.mesh().to_root(&q))
                    .collect();
                let vals = pts
                    .par_iter()
                    .map(|x| {
                        let e = Eigh::new(&a.eval(x))?;
                        if levels.iter().any(|l| l.s(x, &e.values) < 1e-12) {
                            return Ok(f64::INFINITY);
                        }
                        let n = e.n();
                        let t = e.values[n - nj];
                        Ok(if t > tol { t } else { f64::INFINITY })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let m = vals.into_iter().fold(f64::INFINITY, f64::min);
                if m.is_finite() {
                    eta = m;
                    break;
                }
            }
        }
        sampled.push(eta);
        if eta.is_nan() {
            levels.push(Level {
                n: nj,
                mesh: mesh.clone(),
                h,
                g,
                eta,
                upper: f64::INFINITY,
                release: f64::INFINITY,
                lower: 0.0,
                skipped: true,
            });
            continue;
        }
        if eta < 10.0 * tol {
            return Err(Error::GapTooSmall { stratum: j, eta });
        }
        let e = MARGIN * eta;
        let th = Thresholds::from_eta(vec![e], eps);
        let prev = levels.iter().rev().find(|l| !l.skipped).map(|l| l.lower).unwrap_or(eps);
        let upper = th.upper[0];
        levels.push(Level {
            n: nj,
            mesh: mesh.clone(),
            h,
            g,
            eta: e,
            upper,
            release: (upper + e) / 2.0,
            lower: th.lower[0].min(prev),
            skipped: false,
        });
    }
    Ok((levels, sampled))
}

/// Builds a well-supported `f <= a` with `||f - a|| < eps` and the same rank
/// values. The cutoffs start on the input mesh and are refined (at most
/// three times) when a rank value is swallowed near a lower stratum.
pub fn well_supported_approximant(a: &MatrixField, eps: f64, tol: f64) -> Result<WellSupportedElement> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidField("eps must be positive".into()));
    }
    let profile = a.rank_profile(tol)?;
    let values = profile.values.clone();
    let probes = probe_points(a);
    let mut found = Vec::new();
    for depth in 0..=RETRIES {
        let (levels, sampled) = build_levels(a, &profile, eps, tol, depth)?;
        let ws = WellSupportedElement {
            a: a.clone(),
            values: values.clone(),
            certificate: Certificate {
                thresholds: Thresholds {
                    eta: levels.iter().map(|l| l.eta).collect(),
                    upper: levels.iter().map(|l| l.upper).collect(),
                    lower: levels.iter().map(|l| l.lower).collect(),
                },
                eta_sampled: sampled,
                cutoff_depth: depth,
                retries: depth,
                skipped: (0..levels.len()).filter(|&j| levels[j].skipped).collect(),
            },
            levels,
            tol,
            eps,
        };
        found = probes
            .par_iter()
            .map(|x| ws.rank_at(x))
            .collect::<Result<Vec<usize>>>()?;
        found.sort_unstable();
        found.dedup();
        if found == values {
            return Ok(ws);
        }
    }
    Err(Error::ConstructionFailed(format!(
        "rank values {found:?} differ from {values:?} after {RETRIES} retries"
    )))
}


/// Frame field of the eigenvectors of `a` with eigenvalue at least `cut`
/// (ties count as above) on a subcomplex of `a`'s mesh. Refines (up to six
/// times) until neighbouring frames differ by less than 0.1.
pub fn support_projection_field(a: &MatrixField, region: &Subcomplex, cut: f64) -> Result<FrameField> {
    let base = a.mesh().depth();
    let k0 = a.mesh().top();
    let pick = |m: &CMat| -> Result<CMat> { Ok(Eigh::new(m)?.select(|l| l >= cut - 1e-12)) };
    // count must be constant on the region, vertices and barycenters alike
    let mut count = None;
    for t in region.members() {
        let x = a.mesh().to_root(&BarycentricPoint::barycenter(k0, t));
        let r = pick(&a.eval(&x))?.ncols();
        match count {
            None => count = Some(r),
            Some(c0) if c0 != r => return Err(Error::RankJump(t)),
            _ => {}
        }
    }
    let rank = count.unwrap_or(0);
    let mut mesh = a.mesh().clone();
    loop {
        let top = mesh.top();
        let reg = mesh.tower.map_subcomplex_to(base, mesh.depth(), region);
        let mut frames: Vec<Option<CMat>> = (0..top.num_vertices())
            .into_par_iter()
            .map(|v| {
                if !reg.has_vertex(v) {
                    return Ok(None);
                }
                pick(&a.eval(&mesh.root_point(v))).map(Some)
            })
            .collect::<Result<_>>()?;
        align_frames(top, &mut frames);
        if alignment_residual(top, &frames) < 0.1 || mesh.depth() >= base + 6 {
            return FrameField::new(mesh, a.n(), rank, frames);
        }
        mesh = mesh.refined();
    }
}
