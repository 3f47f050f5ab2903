//! Cuntz comparison: pointwise necessity, explicit witnesses, trivial
//! majorants and minorants, the gap theorem pipeline, and a numerical
//! witness search.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approximant::{well_supported_approximant, WellSupportedElement};
use crate::bundles::{self, nested_frame, sampled_min_singular, BlockReq, TrivialBlock, TrivialElement};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, Eigh};
use crate::matfield::{approximate_in_subdivision, cutdown_field, Field, FnField, Grid, MatrixField};
use crate::simplicial::{BarycentricPoint, Mesh};

/// Refinement budget for frame meshes: stop before this many top simplices.
const MAX_CELLS: usize = 60_000;
/// Refinements of the majorant frame mesh; the compression error decays only
/// to first order in the mesh size, so deeper levels rarely pay off.
const MAJORANT_REFINE: usize = 5;

/// `v` with `v b v* ≈ target` on a grid.
#[derive(Clone)]
pub struct Witness {
    pub v: Arc<dyn Field>,
    pub b: Arc<dyn Field>,
    pub target: Arc<dyn Field>,
    pub eps: f64,
    pub residual: f64,
    pub grid: Grid,
    pub trace: Vec<String>,
}

impl fmt::Debug for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Witness")
            .field("eps", &self.eps)
            .field("residual", &self.residual)
            .field("trace", &self.trace)
            .finish()
    }
}

/// `sup_x ||v b v* - target||` over the grid.
pub fn residual(v: &dyn Field, b: &dyn Field, target: &dyn Field, grid: &Grid) -> f64 {
    grid.points
        .par_iter()
        .map(|x| {
            let vx = v.eval(x);
            let bx = b.eval(x);
            let r = &vx * bx * vx.adjoint() - target.eval(x);
            linalg::herm_norm(&linalg::hermitian_part(&r)).max(linalg::op_norm(&(&r - r.adjoint())) / 2.0)
        })
        .reduce(|| 0.0, f64::max)
}

impl Witness {
    pub fn new(
        v: Arc<dyn Field>,
        b: Arc<dyn Field>,
        target: Arc<dyn Field>,
        eps: f64,
        grid: Grid,
        trace: Vec<String>,
    ) -> Witness {
        let residual = residual(v.as_ref(), b.as_ref(), target.as_ref(), &grid);
        Witness { v, b, target, eps, residual, grid, trace }
    }

    pub fn recompute(&self) -> f64 {
        residual(self.v.as_ref(), self.b.as_ref(), self.target.as_ref(), &self.grid)
    }

    pub fn holds(&self) -> bool {
        self.residual < self.eps
    }

    /// From `target ≈ v1 m v1*` and `m ≈ v2 b v2*`, the witness `v1 v2` for
    /// `target` against `b`.
    pub fn compose(&self, next: &Witness, eps: f64) -> Witness {
        let (v1, v2) = (self.v.clone(), next.v.clone());
        let (rows, _) = v1.shape();
        let (_, cols) = v2.shape();
        let v = FnField::new(v1.root().clone(), rows, cols, move |x| v1.eval(x) * v2.eval(x));
        let mut trace = self.trace.clone();
        trace.extend(next.trace.iter().cloned());
        let grid = self.grid.clone().extend(next.grid.clone());
        Witness::new(Arc::new(v), next.b.clone(), self.target.clone(), eps, grid, trace)
    }
}

#[derive(Clone, Debug)]
pub enum ComparisonVerdict {
    Witnessed(Witness),
    Refuted { point: BarycentricPoint, rank_a: usize, rank_b: usize },
    Unknown(String),
}

impl ComparisonVerdict {
    pub fn is_witnessed(&self) -> bool {
        matches!(self, ComparisonVerdict::Witnessed(_))
    }

    pub fn is_refuted(&self) -> bool {
        matches!(self, ComparisonVerdict::Refuted { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ComparisonVerdict::Witnessed(_) => "witnessed",
            ComparisonVerdict::Refuted { .. } => "refuted",
            ComparisonVerdict::Unknown(_) => "unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strict,
    Oracle,
}

fn rank(m: &CMat, tol: f64) -> Result<usize> {
    Ok(Eigh::new(m)?.rank(tol))
}

fn jacobi_rank(m: &CMat, tol: f64) -> usize {
    linalg::jacobi_eigenvalues(m).into_iter().filter(|&l| l > tol).count()
}

/// Grid used for rank checks: the standard grid plus the vertices and
/// barycenters of any PL mesh involved.
pub fn check_grid(meshes: &[&Mesh]) -> Grid {
    let mut g = Grid::standard(&meshes[0].root);
    for m in meshes {
        let top = m.top();
        g.points.extend((0..top.num_simplices()).map(|s| m.to_root(&BarycentricPoint::barycenter(top, s))));
    }
    g
}

/// First grid point where `rank a > rank b`, confirmed by the Jacobi solver
/// with `b`'s rank counted at a ten times smaller tolerance.
pub fn pointwise_rank_necessary(a: &dyn Field, b: &dyn Field, tol: f64, grid: &Grid) -> Result<Option<(BarycentricPoint, usize, usize)>> {
    let hits: Vec<Option<(BarycentricPoint, usize, usize)>> = grid
        .points
        .par_iter()
        .map(|x| {
            let (ax, bx) = (a.eval(x), b.eval(x));
            let (ra, rb) = (rank(&ax, tol)?, rank(&bx, tol)?);
            if ra <= rb {
                return Ok(None);
            }
            let (ja, jb) = (jacobi_rank(&ax, tol), jacobi_rank(&bx, tol / 10.0));
            Ok((ja > jb).then(|| (x.clone(), ja, jb)))
        })
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().flatten().next())
}

/// `v = sum_i sqrt(alpha_i / beta_i) a_i b_i*` pairing the top eigenvectors
/// of `a` and `b`; eigenvalues of `a` below `eps / 2` beyond `rank b` are
/// dropped.
pub fn point_witness(a: &CMat, b: &CMat, eps: f64) -> Result<CMat> {
    let (ea, eb) = (Eigh::new(a)?, Eigh::new(b)?);
    let scale = |e: &Eigh| 1e-12 * e.values.last().copied().unwrap_or(0.0).abs().max(1.0);
    let ka = ea.rank(scale(&ea));
    let kb = eb.rank(scale(&eb));
    let (na, nb) = (ea.n(), eb.n());
    let mut v = linalg::zeros(na, nb);
    for i in 0..ka {
        let alpha = ea.values[na - 1 - i];
        if i >= kb {
            if alpha >= eps / 2.0 {
                return Err(Error::RankViolation(ka, kb));
            }
            continue;
        }
        let beta = eb.values[nb - 1 - i];
        let ai = ea.vectors.column(na - 1 - i);
        let bi = eb.vectors.column(nb - 1 - i);
        v += ai * bi.adjoint() * c((alpha / beta).sqrt());
    }
    Ok(v)
}

/// Witness `psi(a)`, `psi(t) = sqrt((t - eps)_+ / t)`, for `(a - eps)_+ ≾ a`;
/// exact up to rounding.
pub fn cutdown_witness(a: Arc<dyn Field>, eps: f64, grid: Grid) -> Witness {
    let aa = a.clone();
    let (n, _) = a.shape();
    let v = FnField::new(a.root().clone(), n, n, move |x| {
        linalg::funcalc(&aa.eval(x), |t| if t > eps { ((t - eps) / t).sqrt() } else { 0.0 })
            .unwrap_or_else(|_| linalg::zeros(n, n))
    });
    let target = Arc::new(cutdown_field(a.clone(), eps));
    Witness::new(Arc::new(v), a, target, eps, grid, vec!["cutdown".into()])
}

/// `v = t^{1/2} (b + delta)^{-1/2}`.
pub fn support_witness(target: Arc<dyn Field>, b: Arc<dyn Field>, delta: f64) -> FnField {
    let (n, _) = target.shape();
    let (m, _) = b.shape();
    FnField::new(target.root().clone(), n, m, move |x| {
        let t = linalg::funcalc(&target.eval(x), |s| s.max(0.0).sqrt()).unwrap_or_else(|_| linalg::zeros(n, n));
        let bi = linalg::funcalc(&b.eval(x), |s| 1.0 / (s.max(0.0) + delta).sqrt()).unwrap_or_else(|_| linalg::zeros(m, m));
        t * bi
    })
}

/// Best `delta = 2^{-j}`, `j = 0..=40`, for the support witness; stops at the
/// first `delta` meeting `eps` scanning from large to small.
pub fn delta_witness(target: Arc<dyn Field>, b: Arc<dyn Field>, eps: f64, grid: Grid, stage: &str) -> Result<Witness> {
    let mut best = f64::INFINITY;
    for j in 0..=40 {
        let delta = 0.5f64.powi(j);
        let v = support_witness(target.clone(), b.clone(), delta);
        let w = Witness::new(Arc::new(v), b.clone(), target.clone(), eps, grid.clone(), vec![format!("{stage}: delta=2^-{j}")]);
        if w.holds() {
            return Ok(w);
        }
        best = best.min(w.residual);
    }
    Err(Error::DeltaSearchFailed(best))
}

/// Witnesses for the chain `(a - eps)_+ ≾ a~ ≾ (a - eps/2)_+` of the dense
/// approximation `a~`.
pub fn chain_witnesses(a: Arc<dyn Field>, eps: f64, tolerance: f64, max_subdivisions: usize) -> Result<(Witness, Witness)> {
    let dense = approximate_in_subdivision(a.clone(), eps, max_subdivisions)?;
    let grid = Grid::for_mesh(dense.b.mesh());
    let low: Arc<dyn Field> = Arc::new(cutdown_field(a.clone(), eps));
    let mid: Arc<dyn Field> = Arc::new(dense.a_tilde);
    let high: Arc<dyn Field> = Arc::new(cutdown_field(a, eps / 2.0));
    let w1 = delta_witness(low, mid.clone(), tolerance, grid.clone(), "chain lower")?;
    let w2 = delta_witness(mid, high, tolerance, grid, "chain upper")?;
    Ok((w1, w2))
}

fn pad_field(f: Arc<dyn Field>, n: usize) -> Arc<dyn Field> {
    let (r, _) = f.shape();
    if r == n {
        return f;
    }
    Arc::new(FnField::new(f.root().clone(), n, n, move |x| linalg::pad(&f.eval(x), n)))
}

/// Necessity check for trivial elements line by line: a line of `a` that is
/// switched on must be switched on in `b`.
fn trivial_refutation(a: &TrivialElement, b: &TrivialElement, grid: &Grid) -> Option<(BarycentricPoint, usize, usize)> {
    grid.points.iter().find_map(|x| {
        let (ca, cb) = (a.coefficients(x), b.coefficients(x));
        let ra = ca.iter().filter(|&&t| t > 0.0).count();
        let rb = cb.iter().filter(|&&t| t > 0.0).count();
        let bad = ca.iter().enumerate().any(|(j, &t)| t > 0.0 && cb.get(j).map_or(true, |&s| s <= 0.0));
        bad.then(|| (x.clone(), ra, rb))
    })
}

/// `v = sum_j sqrt(c^a_j) (c^b_j + delta)^{-1/2} q^a_j (q^b_j)*`, pairing the
/// lines of `a` and `b` in order.
pub fn compare_trivial(a: &TrivialElement, b: &TrivialElement, eps: f64, grid: &Grid) -> Result<ComparisonVerdict> {
    if let Some((point, rank_a, rank_b)) = trivial_refutation(a, b, grid) {
        return Ok(ComparisonVerdict::Refuted { point, rank_a, rank_b });
    }
    let (aa, bb) = (Arc::new(a.clone()), Arc::new(b.clone()));
    let mut best = f64::INFINITY;
    for j in 0..=40 {
        let delta = 0.5f64.powi(j);
        let (a1, b1) = (aa.clone(), bb.clone());
        let (na, nb) = (a.n(), b.n());
        let v = FnField::new(a.lines.mesh.root.clone(), na, nb, move |x| {
            let (qa, qb) = (a1.frame(x), b1.frame(x));
            let (ca, cb) = (a1.coefficients(x), b1.coefficients(x));
            let mut v = linalg::zeros(na, nb);
            for (k, &t) in ca.iter().enumerate() {
                if t > 0.0 {
                    let s = t.sqrt() / (cb[k] + delta).sqrt();
                    v += qa.column(k) * qb.column(k).adjoint() * c(s);
                }
            }
            v
        });
        let w = Witness::new(Arc::new(v), bb.clone(), aa.clone(), eps, grid.clone(), vec![format!("trivial: delta=2^-{j}")]);
        if w.holds() {
            return Ok(ComparisonVerdict::Witnessed(w));
        }
        best = best.min(w.residual);
    }
    Err(Error::DeltaSearchFailed(best))
}

/// Output of [`trivial_majorant`].
#[derive(Clone)]
pub struct Majorant {
    pub f: Arc<WellSupportedElement>,
    /// `R~ f R~`, whose range lies in the support of `R~`.
    pub compressed: Arc<dyn Field>,
    pub r: TrivialElement,
    /// Witness of `compressed ≾ R~`.
    pub witness: Witness,
    /// Grid estimate of `||compressed - a||`.
    pub error: f64,
    /// Frame-mesh depth above the input mesh.
    pub depth: usize,
}

/// k-th largest eigenvalue (1-based) of an ascending spectrum, 0 past the end.
fn kth_largest(vals: &[f64], k: usize) -> f64 {
    if k == 0 || k > vals.len() {
        return if k == 0 { f64::INFINITY } else { 0.0 };
    }
    vals[vals.len() - k]
}

fn cells(mesh: &Mesh) -> usize {
    mesh.top().num_simplices()
}

/// Trivial element `R~` with `rank R~ - rank a <= 4d + 3` and an element
/// `f'` within `eps` of `a` lying in the hereditary subalgebra of `R~`.
///
/// Lines: one global frame whose first `m_l` columns contain the top
/// `min(n_{M_l}, rank a(v))` eigenvectors of `a(v)` at each vertex of the
/// frame mesh, `m_l` the staircase block ranks. Bumps:
/// `g_l = min(1, (lambda_{p_l + 1}(f) - tol)_+ / tau)`, `p_l` the rank value
/// just below block `l`, so `g_l > 0` exactly where `rank f` reaches block `l`.
pub fn trivial_majorant(a: &MatrixField, eps: f64, tol: f64) -> Result<Majorant> {
    let f = Arc::new(well_supported_approximant(a, eps / 2.0, tol).map_err(|e| e.at("approximant"))?);
    let d = a.mesh().root.dim();
    let n = a.n();
    let values = f.values.clone();
    let blocks = bundles::staircase_blocks(&values, d);
    let m_top = blocks.last().map_or(0, |b| b.1);
    let big_n = n.max(m_top);
    let tau = eps / 8.0;
    let base_grid = check_grid(&[a.mesh()]);
    let f_pad = pad_field(f.clone(), big_n);

    let mut widths = Vec::new();
    let mut prev = 0;
    for (_, r) in &blocks {
        widths.push(r - prev);
        prev = *r;
    }
    let reach: Vec<usize> = blocks.iter().map(|(m, _)| values[*m.last().unwrap()]).collect();
    let below: Vec<usize> = blocks.iter().map(|(m, _)| if m[0] == 0 { 0 } else { values[m[0] - 1] }).collect();

    let mut mesh = a.mesh().clone();
    loop {
        let lines = if blocks.is_empty() {
            bundles::FrameField::zero(mesh.clone(), big_n)
        } else {
            nested_frame(&mesh, big_n, &widths, &[], |v| {
                // only the significant part of f, and only for blocks whose
                // successor is not fully on here
                let e = Eigh::new(&f.eval(&mesh.root_point(v)))?;
                let sig = e.values.iter().filter(|&&l| l > tau / 4.0).count();
                Ok(reach
                    .iter()
                    .map(|&top| {
                        let next = kth_largest(&e.values, top + 1);
                        let k = if next >= 4.0 * tau { 0 } else { top.min(sig) };
                        BlockReq { contain: linalg::pad_rows(&e.top(k), big_n), within: None }
                    })
                    .collect())
            })
            .map_err(|e| e.at("lines"))?
        };
        let conditioned = sampled_min_singular(&lines, None) > bundles::MIN_SINGULAR;
        let mut tblocks = Vec::new();
        let mut start = 0;
        for (l, (_, r)) in blocks.iter().enumerate() {
            let (ff, p) = (f.clone(), below[l]);
            let bump = FnField::new(a.mesh().root.clone(), 1, 1, move |x| {
                let vals = ff.local(x).map(|loc| {
                    let mut s: Vec<f64> = loc.eig.values.iter().zip(&loc.omega).map(|(l, o)| l.max(0.0) * o).collect();
                    s.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    s
                });
                let lam = vals.map(|s| kth_largest(&s, p + 1)).unwrap_or(0.0);
                linalg::diag(&[((lam - tol).max(0.0) / tau).min(1.0)])
            });
            tblocks.push(TrivialBlock { bump: Arc::new(bump), cols: start..*r });
            start = *r;
        }
        let r = TrivialElement { lines, blocks: tblocks };
        let rr = Arc::new(r.clone());
        let (fp, r2) = (f_pad.clone(), rr.clone());
        let compressed: Arc<dyn Field> = Arc::new(FnField::new(a.mesh().root.clone(), big_n, big_n, move |x| {
            let rx = r2.eval(x);
            &rx * fp.eval(x) * &rx
        }));
        let grid = base_grid.clone().extend(Grid::for_mesh(&mesh));
        let a_pad = pad_field(Arc::new(a.clone()), big_n);
        let error = crate::matfield::sup_distance(compressed.as_ref(), a_pad.as_ref(), &grid)?;
        if conditioned && error < eps {
            let witness = delta_witness(compressed.clone(), rr.clone(), eps / 4.0, grid, "majorant containment")
                .map_err(|e| e.at("majorant witness"))?;
            return Ok(Majorant { f, compressed, r, witness, error, depth: mesh.depth() - a.mesh().depth() });
        }
        if mesh.depth() - a.mesh().depth() >= MAJORANT_REFINE || cells(&mesh.refined()) > MAX_CELLS {
            return Err(Error::BudgetExceeded(mesh.depth()).at("majorant lines"));
        }
        mesh = mesh.refined();
    }
}

/// Witness `target ≾ b` for a trivial target with
/// `rank target <= max(rank b - d - 1, 0)`.
///
/// The lines of the target are matched with a global frame `U` whose active
/// columns lie in the spectral subspace `b > beta` at each frame-mesh
/// vertex; `v = Q C'^{1/2} (G + delta I + diag kappa)^{-1/2} U*` with
/// `G = U* b U`, `C'` the cut-off bump coefficients and `kappa` switching
/// off inactive columns.
pub fn trivial_minorant(b: &MatrixField, target: &TrivialElement, eps: f64, tol: f64) -> Result<ComparisonVerdict> {
    let d = b.mesh().root.dim();
    let grid = check_grid(&[b.mesh(), &target.lines.mesh]);
    let tgt: Arc<dyn Field> = Arc::new(target.clone());
    for x in &grid.points {
        let rt = target.rank_at(x);
        let rb = rank(&b.eval(x), tol)?;
        if rt > rb.saturating_sub(d + 1) {
            return Err(Error::GapViolation(rt));
        }
    }
    let m = target.lines.rank;
    let nt = target.n();
    if m == 0 || target.blocks.is_empty() {
        let nb = b.n();
        let zero_v = FnField::new(b.mesh().root.clone(), nt, nb, move |_| linalg::zeros(nt, nb));
        let w = Witness::new(Arc::new(zero_v), Arc::new(b.clone()), tgt, eps, grid, vec!["zero target".into()]);
        return Ok(ComparisonVerdict::Witnessed(w));
    }
    let tau = eps / 16.0;
    let cut = move |t: f64| t * ((t - tau) / tau).clamp(0.0, 1.0);
    let nb = b.n();
    let big_n = nb.max(m + d + 2);

    // beta: largest 2^-j keeping enough of b above it wherever a line is on
    let mut beta = None;
    for j in 1..=40 {
        let bt = 0.5f64.powi(j);
        let ok = grid.points.par_iter().all(|x| {
            let active = target.coefficients(x).iter().filter(|&&t| cut(t) > 0.0).count();
            let e = Eigh::new(&b.eval(x)).map(|e| e.values.iter().filter(|&&l| l > bt).count()).unwrap_or(0);
            active + d + 1 <= e || active == 0
        });
        if ok {
            beta = Some(bt);
            break;
        }
    }
    let beta = beta.ok_or(Error::NoDeltaFound)?;
    let mut widths = Vec::new();
    for blk in &target.blocks {
        widths.push(blk.cols.len());
    }
    let covered: usize = widths.iter().sum();
    if covered < m {
        widths.push(m - covered);
    }

    let bb: Arc<dyn Field> = Arc::new(b.clone());
    let mut mesh = b.mesh().clone();
    let mut best = f64::INFINITY;
    loop {
        let k = mesh.top();
        // blocks switched on anywhere in the closed star of each vertex
        let mut star_active = vec![0usize; k.num_vertices()];
        let per_simplex: Vec<(usize, CMat)> = (0..k.num_simplices())
            .into_par_iter()
            .map(|s| {
                let x = mesh.to_root(&BarycentricPoint::barycenter(k, s));
                let cs = target.coefficients(&x);
                let mut on = 0;
                for blk in &target.blocks {
                    if cs[blk.cols.start] > tau * 0.5 {
                        on += 1;
                    }
                }
                (on, b.eval(&x))
            })
            .collect();
        // b summed over the closed star, so `within` sees the whole star
        let mut star_b: Vec<CMat> = (0..k.num_vertices()).map(|v| b.eval(&mesh.root_point(v))).collect();
        for s in 0..k.num_simplices() {
            for &v in k.simplex(s) {
                star_active[v] = star_active[v].max(per_simplex[s].0);
                star_b[v] += &per_simplex[s].1;
            }
        }
        let built = nested_frame(&mesh, big_n, &widths, &[], |v| {
            let e = Eigh::new(&star_b[v])?;
            let need: usize = widths[..star_active[v].min(widths.len())].iter().sum();
            let strong = e.select(|l| l > beta);
            let strong = if strong.ncols() < need { e.top(need) } else { strong };
            let strong = linalg::pad_rows(&strong, big_n);
            Ok((0..widths.len())
                .map(|l| BlockReq {
                    contain: linalg::zeros(big_n, 0),
                    within: (l < star_active[v]).then(|| strong.clone()),
                })
                .collect())
        });
        if let Ok(u) = built {
            if sampled_min_singular(&u, None) > bundles::MIN_SINGULAR {
                let u = Arc::new(u);
                let tt = Arc::new(target.clone());
                for j in 0..=30 {
                    let delta = beta * 0.5f64.powi(j);
                    let (u1, t1, b1) = (u.clone(), tt.clone(), bb.clone());
                    let v = FnField::new(b.mesh().root.clone(), nt, nb, move |x| {
                        let ux = u1.eval(x).expect("global frame");
                        let ux = ux.rows(0, nb).clone_owned();
                        let g = ux.adjoint() * b1.eval(x) * &ux;
                        let cs = t1.coefficients(x);
                        let mut reg = g.clone();
                        for (i, &t) in cs.iter().enumerate() {
                            let on = (cut(t) / tau).min(1.0);
                            reg[(i, i)] += c(delta + 1e6 * (1.0 - on));
                        }
                        let inv = linalg::funcalc(&linalg::hermitian_part(&reg), |s| 1.0 / s.max(1e-300).sqrt())
                            .unwrap_or_else(|_| linalg::zeros(m, m));
                        let cc: Vec<f64> = cs.iter().map(|&t| cut(t).sqrt()).collect();
                        let q = t1.frame(x);
                        q * linalg::diag(&cc) * inv * ux.adjoint()
                    });
                    let w = Witness::new(Arc::new(v), bb.clone(), tgt.clone(), eps, grid.clone(), vec![format!(
                        "minorant: depth={}, beta={beta:e}, delta={delta:e}",
                        mesh.depth()
                    )]);
                    best = best.min(w.residual);
                    if w.holds() {
                        return Ok(ComparisonVerdict::Witnessed(w));
                    }
                }
            }
        }
        if cells(&mesh.refined()) > MAX_CELLS {
            return Ok(ComparisonVerdict::Unknown(format!("minorant residual {best:e} above {eps:e}")));
        }
        mesh = mesh.refined();
    }
}

/// Largest `delta = 2^{-j}`, `j <= 40`, with
/// `rank (a - eps)_+ + gap <= rank (b - delta)_+` on the grid.
pub fn find_delta(a: &dyn Field, b: &dyn Field, eps: f64, gap: usize, grid: &Grid) -> Result<f64> {
    let ra: Vec<usize> = grid
        .points
        .par_iter()
        .map(|x| Eigh::new(&a.eval(x)).map(|e| e.values.iter().filter(|&&l| l > eps).count()))
        .collect::<Result<_>>()?;
    let eb: Vec<Vec<f64>> = grid
        .points
        .par_iter()
        .map(|x| Eigh::new(&b.eval(x)).map(|e| e.values))
        .collect::<Result<_>>()?;
    for j in 0..=40 {
        let delta = 0.5f64.powi(j);
        if ra.iter().zip(&eb).all(|(&r, vals)| r + gap <= vals.iter().filter(|&&l| l > delta).count()) {
            return Ok(delta);
        }
    }
    Err(Error::NoDeltaFound)
}

/// Decides `a ≾ b` up to `eps`: refutation by pointwise rank, the trivial
/// majorant/minorant pipeline when `rank a + 5d + 4 <= rank b` (any gap for
/// `d = 0`), otherwise the numerical oracle (mode `Oracle`) or `Unknown`.
pub fn decide_subequivalence(a: &MatrixField, b: &MatrixField, eps: f64, mode: Mode, tol: f64, seed: u64) -> Result<ComparisonVerdict> {
    if !crate::matfield::same_root(&a.mesh().root, &b.mesh().root) {
        return Err(Error::ShapeMismatch("fields live on different complexes".into()));
    }
    let grid = check_grid(&[a.mesh(), b.mesh()]);
    if let Some((point, rank_a, rank_b)) = pointwise_rank_necessary(a, b, tol, &grid)? {
        return Ok(ComparisonVerdict::Refuted { point, rank_a, rank_b });
    }
    let d = a.mesh().root.dim();
    let (aa, bb): (Arc<dyn Field>, Arc<dyn Field>) = (Arc::new(a.clone()), Arc::new(b.clone()));
    if d == 0 {
        let (a1, b1) = (aa.clone(), bb.clone());
        let (na, nb) = (a.n(), b.n());
        let v = FnField::new(a.mesh().root.clone(), na, nb, move |x| {
            point_witness(&a1.eval(x), &b1.eval(x), eps).unwrap_or_else(|_| linalg::zeros(na, nb))
        });
        let w = Witness::new(Arc::new(v), bb, aa, eps, grid, vec!["point witnesses".into()]);
        return Ok(if w.holds() { ComparisonVerdict::Witnessed(w) } else { ComparisonVerdict::Unknown(format!("point residual {:e}", w.residual)) });
    }
    let gap_ok = grid.points.par_iter().all(|x| {
        let ra = rank(&a.eval(x), tol).unwrap_or(usize::MAX);
        let rb = rank(&b.eval(x), tol).unwrap_or(0);
        ra.saturating_add(5 * d + 4) <= rb
    });
    if gap_ok {
        match constructive(a, b, eps, tol) {
            Ok(Some(w)) => return Ok(ComparisonVerdict::Witnessed(w)),
            Ok(None) => {}
            Err(e) => {
                if mode == Mode::Strict {
                    return Ok(ComparisonVerdict::Unknown(format!("pipeline failed: {e}")));
                }
            }
        }
    }
    match mode {
        Mode::Oracle => witness_search_optimize(a, b, eps, seed, 500),
        Mode::Strict => Ok(ComparisonVerdict::Unknown(if gap_ok {
            "pipeline did not reach the residual budget".into()
        } else {
            "gap below theorem threshold".into()
        })),
    }
}

fn constructive(a: &MatrixField, b: &MatrixField, eps: f64, tol: f64) -> Result<Option<Witness>> {
    let maj = trivial_majorant(a, eps / 3.0, tol).map_err(|e| e.at("majorant"))?;
    let n = a.n();
    // v1 norm bounds how the minorant residual propagates
    let w1 = &maj.witness;
    let v1norm = w1
        .grid
        .points
        .par_iter()
        .map(|x| linalg::op_norm(&w1.v.eval(x)))
        .reduce(|| 0.0, f64::max);
    let budget = (eps / 3.0) / v1norm.powi(2).max(1.0);
    let verdict = trivial_minorant(b, &maj.r, budget, tol).map_err(|e| e.at("minorant"))?;
    let ComparisonVerdict::Witnessed(w3) = verdict else {
        return Ok(None);
    };
    let v1 = w1.v.clone();
    let v1n = FnField::new(a.mesh().root.clone(), n, v1.shape().1, move |x| v1.eval(x).rows(0, n).clone_owned());
    let head = Witness {
        v: Arc::new(v1n),
        b: w1.b.clone(),
        target: Arc::new(a.clone()),
        eps,
        residual: f64::NAN,
        grid: w1.grid.clone(),
        trace: vec![format!("majorant: depth={}, error={:e}", maj.depth, maj.error)],
    };
    let w = head.compose(&w3, eps);
    Ok(w.holds().then_some(w))
}

const ORACLE_REFINE: usize = 3;

/// Searches for a PL `v` minimising the sampled `||v b v* - a||`, starting
/// from `a^{1/2} (b + delta)^{-1/2}` and running gradient steps with step
/// halving. Works on the finer of the two meshes, then on up to three
/// refinements of it warm-started from the previous level. Deterministic in
/// `seed`.
pub fn witness_search_optimize(a: &MatrixField, b: &MatrixField, eps: f64, seed: u64, iters: usize) -> Result<ComparisonVerdict> {
    let mut mesh = if a.mesh().depth() >= b.mesh().depth() { a.mesh().clone() } else { b.mesh().clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warm: Option<MatrixField> = None;
    let mut best = f64::INFINITY;
    for level in 0..=ORACLE_REFINE {
        let (field, roots) = optimize_on(&mesh, a, b, eps, &mut rng, iters, warm.as_ref())?;
        let grid = Grid::for_mesh(&mesh).extend(Grid { points: roots });
        let w = Witness::new(Arc::new(field.clone()), Arc::new(b.clone()), Arc::new(a.clone()), eps, grid, vec![format!("oracle: level={level}")]);
        if w.holds() {
            return Ok(ComparisonVerdict::Witnessed(w));
        }
        best = best.min(w.residual);
        if cells(&mesh.refined()) > MAX_CELLS {
            break;
        }
        warm = Some(field);
        mesh = mesh.refined();
    }
    Ok(ComparisonVerdict::Unknown(format!("oracle residual {best:e}")))
}

fn optimize_on(
    mesh: &Mesh,
    a: &MatrixField,
    b: &MatrixField,
    eps: f64,
    rng: &mut ChaCha8Rng,
    iters: usize,
    warm: Option<&MatrixField>,
) -> Result<(MatrixField, Vec<BarycentricPoint>)> {
    let k = mesh.top();
    let (na, nb) = (a.n(), b.n());
    let samples: Vec<BarycentricPoint> = (0..k.num_simplices()).map(|s| BarycentricPoint::barycenter(k, s)).collect();
    let roots: Vec<BarycentricPoint> = samples.iter().map(|q| mesh.to_root(q)).collect();
    let avals: Vec<CMat> = roots.iter().map(|x| a.eval(x)).collect();
    let bvals: Vec<CMat> = roots.iter().map(|x| b.eval(x)).collect();
    let weights: Vec<Vec<(usize, f64)>> = samples.iter().map(|q| q.weights(k).collect()).collect();
    let nv = k.num_vertices();
    let interp = |vs: &[CMat], i: usize| -> CMat {
        let mut out = linalg::zeros(na, nb);
        for &(v, w) in &weights[i] {
            out += &vs[v] * c(w);
        }
        out
    };
    let score = |vs: &[CMat]| -> f64 {
        (0..samples.len())
            .into_par_iter()
            .map(|i| {
                let v = interp(vs, i);
                linalg::op_norm(&(&v * &bvals[i] * v.adjoint() - &avals[i]))
            })
            .reduce(|| 0.0, f64::max)
    };
    let mut best: Option<(f64, Vec<CMat>)> = warm.map(|w| {
        let vs: Vec<CMat> = (0..nv).map(|v| w.eval(&mesh.root_point(v))).collect();
        (score(&vs), vs)
    });
    let j_pad = CMat::from_fn(na, nb, |i, k| c(if i == k { 1.0 } else { 0.0 }));
    let pointwise: Result<Vec<CMat>> = (0..nv)
        .map(|v| {
            let x = mesh.root_point(v);
            point_witness(&a.eval(&x), &b.eval(&x), eps)
        })
        .collect();
    if let Ok(vs) = pointwise {
        let sc = score(&vs);
        if best.as_ref().map_or(true, |(b, _)| sc < *b) {
            best = Some((sc, vs));
        }
    }
    // delta = 0 stands for the pseudo-inverse seed
    for j in 0..=31 {
        let delta = if j == 31 { 0.0 } else { 0.5f64.powi(j) };
        let vs: Vec<CMat> = (0..nv)
            .map(|v| {
                let x = mesh.root_point(v);
                let s = linalg::funcalc(&a.eval(&x), |t| t.max(0.0).sqrt())?;
                let bx = b.eval(&x);
                let floor = 1e-12 * linalg::op_norm(&bx);
                let bi = linalg::funcalc(&bx, |t| if delta > 0.0 { 1.0 / (t.max(0.0) + delta).sqrt() } else if t > floor { 1.0 / t.sqrt() } else { 0.0 })?;
                Ok(s * &j_pad * bi)
            })
            .collect::<Result<_>>()?;
        let sc = score(&vs);
        if best.as_ref().map_or(true, |(b, _)| sc < *b) {
            best = Some((sc, vs));
        }
    }
    let (mut cur_score, mut vs) = best.unwrap();
    let mut step = 0.1;
    for _ in 0..iters {
        if cur_score < eps * 0.5 {
            break;
        }
        let mut grad = vec![linalg::zeros(na, nb); nv];
        for i in 0..samples.len() {
            let v = interp(&vs, i);
            let e = &v * &bvals[i] * v.adjoint() - &avals[i];
            let g = e * &v * &bvals[i];
            for &(vtx, w) in &weights[i] {
                grad[vtx] += &g * c(w);
            }
        }
        let gn = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt().max(1e-300);
        loop {
            let trial: Vec<CMat> = vs.iter().zip(&grad).map(|(v, g)| v - g * c(step / gn)).collect();
            let s = score(&trial);
            if s < cur_score {
                vs = trial;
                cur_score = s;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                // random restart kick, deterministic in the seed
                let kick = 1e-3;
                vs = vs.iter().map(|v| v + linalg::random_gaussian(na, nb, rng) * c(kick)).collect();
                cur_score = score(&vs);
                step = 0.1;
                break;
            }
        }
    }
    Ok((MatrixField::general(mesh.clone(), na, nb, vs), roots))
}
