//! Projection-valued fields as frame fields; extension, complements,
//! sandwiches and staircases.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, Eigh};
use crate::matfield::{Field, FnField};
use crate::simplicial::{BarycentricPoint, Complex, Mesh, Subcomplex};

/// Minimum singular value required of interpolated frames.
pub const MIN_SINGULAR: f64 = 0.2;
const RETRIES: usize = 20;
const MAX_REFINE: usize = 4;
const SWEEPS: usize = 50;

/// A projection-valued field stored as orthonormal frames at the vertices of
/// a mesh's top level, PL-interpolated and re-orthonormalised on evaluation.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub mesh: Mesh,
    pub n: usize,
    pub rank: usize,
    /// One `n x rank` frame per top vertex; `None` off the domain.
    pub frames: Vec<Option<CMat>>,
}

impl FrameField {
    pub fn new(mesh: Mesh, n: usize, rank: usize, frames: Vec<Option<CMat>>) -> Result<Self> {
        if frames.len() != mesh.top().num_vertices() {
            return Err(Error::InvalidField("one frame per vertex expected".into()));
        }
        for (v, f) in frames.iter().enumerate() {
            if let Some(f) = f {
                if f.shape() != (n, rank) {
                    return Err(Error::ShapeMismatch(format!("frame at vertex {v} is {:?}", f.shape())));
                }
                if gram_defect(f) > 1e-10 {
                    return Err(Error::InvalidField(format!("frame at vertex {v} is not orthonormal")));
                }
            }
        }
        Ok(FrameField { mesh, n, rank, frames })
    }

    pub fn constant(mesh: Mesh, frame: CMat) -> Self {
        let (n, rank) = frame.shape();
        let frames = vec![Some(frame); mesh.top().num_vertices()];
        FrameField { mesh, n, rank, frames }
    }

    pub fn zero(mesh: Mesh, n: usize) -> Self {
        Self::constant(mesh, linalg::zeros(n, 0))
    }

    /// Simplices all of whose vertices carry a frame.
    pub fn domain(&self) -> Subcomplex {
        let k = self.mesh.top();
        let mask = (0..k.num_simplices())
            .map(|s| k.simplex(s).iter().all(|&v| self.frames[v].is_some()))
            .collect();
        Subcomplex::from_mask(k, mask).expect("vertex-defined sets are closed")
    }

    /// Interpolated frame before orthonormalisation.
    pub fn raw_top(&self, q: &BarycentricPoint) -> Option<CMat> {
        let mut out = linalg::zeros(self.n, self.rank);
        for (v, w) in q.weights(self.mesh.top()) {
            if w == 0.0 {
                continue;
            }
            out += self.frames[v].as_ref()? * c(w);
        }
        Some(out)
    }

    pub fn eval_top(&self, q: &BarycentricPoint) -> Option<CMat> {
        self.raw_top(q).map(|m| linalg::gram_schmidt(&m))
    }

    /// Frame at a root point, if the point lies in the domain.
    pub fn eval(&self, p: &BarycentricPoint) -> Option<CMat> {
        self.eval_top(&self.mesh.locate(p))
    }

    pub fn projection(&self, p: &BarycentricPoint) -> Option<CMat> {
        self.eval(p).map(|f| linalg::frame_projection(&f))
    }

    /// Smallest singular value of the interpolated frame over barycenters and
    /// vertices of domain simplices.
    pub fn min_singular_value(&self) -> f64 {
        if self.rank == 0 {
            return 1.0;
        }
        let k = self.mesh.top();
        let dom = self.domain();
        dom.members()
            .filter_map(|s| self.raw_top(&BarycentricPoint::barycenter(k, s)))
            .map(|m| linalg::min_singular_value(&m))
            .fold(f64::INFINITY, f64::min)
    }

    /// Max over vertices of `||F*F - I||`.
    pub fn orthonormality_defect(&self) -> f64 {
        self.frames.iter().flatten().map(gram_defect).fold(0.0, f64::max)
    }

    /// Same frames on a finer mesh (vertex frames are evaluated, so the
    /// result agrees with this field at the old vertices).
    pub fn resample(&self, finer: &Mesh) -> FrameField {
        let frames = (0..finer.top().num_vertices())
            .map(|v| self.eval(&finer.root_point(v)))
            .collect();
        FrameField {
            mesh: finer.clone(),
            n: self.n,
            rank: self.rank,
            frames,
        }
    }

    pub fn padded(&self, n: usize) -> FrameField {
        FrameField {
            mesh: self.mesh.clone(),
            n,
            rank: self.rank,
            frames: self.frames.iter().map(|f| f.as_ref().map(|f| linalg::pad_rows(f, n))).collect(),
        }
    }
}

pub fn gram_defect(f: &CMat) -> f64 {
    if f.ncols() == 0 {
        return 0.0;
    }
    linalg::herm_norm(&(f.adjoint() * f - linalg::identity(f.ncols())))
}

/// Re-gauges vertex frames (same spans) so that neighbours are close: vertices
/// are visited breadth first and each frame is rotated by the unitary that
/// best matches the average of its already visited neighbours.
pub fn align_frames(k: &Complex, frames: &mut [Option<CMat>]) {
    let nb = k.vertex_neighbors();
    let mut done = vec![false; frames.len()];
    for start in 0..frames.len() {
        if done[start] || frames[start].is_none() {
            continue;
        }
        done[start] = true;
        let mut q = VecDeque::from([start]);
        while let Some(v) = q.pop_front() {
            for &w in &nb[v] {
                if done[w] || frames[w].is_none() {
                    continue;
                }
                let f = frames[w].as_ref().unwrap();
                let mut target = linalg::zeros(f.nrows(), f.ncols());
                for &u in &nb[w] {
                    if done[u] {
                        if let Some(g) = &frames[u] {
                            target += g;
                        }
                    }
                }
                let rot = linalg::polar(&(f.adjoint() * &target));
                frames[w] = Some(f * rot);
                done[w] = true;
                q.push_back(w);
            }
        }
    }
}

/// Largest `||F_u - F_v||` over edges with both frames present.
pub fn alignment_residual(k: &Complex, frames: &[Option<CMat>]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..k.num_simplices() {
        if let [u, v] = k.simplex(s) {
            if let (Some(a), Some(b)) = (&frames[*u], &frames[*v]) {
                worst = worst.max(linalg::op_norm(&(a - b)));
            }
        }
    }
    worst
}

/// Per-vertex requirement on one block of a nested frame: the span of the
/// columns up to and including the block must contain `contain`, and the
/// block's own columns must lie in `within` when given.
#[derive(Clone, Debug)]
pub struct BlockReq {
    pub contain: CMat,
    pub within: Option<CMat>,
}

impl BlockReq {
    pub fn free(n: usize) -> Self {
        BlockReq { contain: linalg::zeros(n, 0), within: None }
    }
}

fn orth(m: &CMat) -> CMat {
    linalg::range_basis(m, 1e-7)
}

fn complement_of(cur: &CMat, m: &CMat) -> CMat {
    if cur.ncols() == 0 {
        return m.clone();
    }
    m - cur * (cur.adjoint() * m)
}

/// `k` directions of the orthonormal basis `avail` best matching `guide`
/// (top left singular vectors of `avail* guide`); falls back to the leading
/// columns of `avail` when the guide has no component there.
fn pick(avail: &CMat, guide: &CMat, k: usize) -> CMat {
    if k == 0 {
        return linalg::zeros(avail.nrows(), 0);
    }
    let z = avail.adjoint() * guide;
    if z.ncols() > 0 && z.norm() > 1e-9 {
        let zz = &z * z.adjoint();
        if let Ok(e) = Eigh::new(&zz) {
            let top = e.top(k);
            let weakest = e.values[e.n() - k];
            if weakest > 1e-6 * e.values[e.n() - 1] {
                return avail * top;
            }
            // partly guided: keep the guided part, complete deterministically
            let good = e.values.iter().filter(|&&l| l > 1e-6 * e.values[e.n() - 1]).count();
            let head = avail * e.top(good);
            let rest = orth(&complement_of(&head, avail));
            let mut out = linalg::zeros(avail.nrows(), k);
            out.columns_mut(0, good).copy_from(&head);
            out.columns_mut(good, k - good).copy_from(&rest.columns(0, k - good));
            return out;
        }
    }
    avail.columns(0, k).clone_owned()
}

fn fill_vertex(n: usize, widths: &[usize], reqs: &[BlockReq], guide: &CMat) -> Result<CMat> {
    let total: usize = widths.iter().sum();
    let mut cur = linalg::zeros(n, 0);
    let mut out = linalg::zeros(n, total);
    let mut c0 = 0;
    for (b, &w) in widths.iter().enumerate() {
        let req = &reqs[b];
        let gblock = guide.columns(c0, w).clone_owned();
        let r = orth(&complement_of(&cur, &req.contain));
        if r.ncols() > w {
            return Err(Error::ConstructionFailed(format!(
                "block {b} must absorb {} new directions but has width {w}",
                r.ncols()
            )));
        }
        let mut block = r.clone();
        // prefer directions later blocks will need, then anything allowed
        let mut pools: Vec<CMat> = reqs[b + 1..].iter().map(|q| q.contain.clone()).collect();
        pools.push(linalg::identity(n));
        for pool in pools {
            if block.ncols() == w {
                break;
            }
            let mut pool = pool;
            if let Some(wi) = &req.within {
                pool = wi * (wi.adjoint() * pool);
            }
            let mut taken = cur.clone();
            taken = concat(&taken, &block);
            let avail = orth(&complement_of(&taken, &pool));
            let k = (w - block.ncols()).min(avail.ncols());
            let chosen = pick(&avail, &complement_of(&taken, &gblock), k);
            block = concat(&block, &chosen);
        }
        if block.ncols() < w {
            return Err(Error::ConstructionFailed(format!("block {b} cannot be filled to width {w}")));
        }
        let gauge = block.adjoint() * &gblock;
        let block = if gauge.norm() > 1e-9 { &block * linalg::polar(&gauge) } else { block };
        let block = linalg::gram_schmidt(&complement_of(&cur, &block));
        out.columns_mut(c0, w).copy_from(&block);
        cur = concat(&cur, &block);
        c0 += w;
    }
    Ok(out)
}

fn concat(a: &CMat, b: &CMat) -> CMat {
    let mut out = linalg::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Builds a global frame of `sum(widths)` columns in `C^n` on the top vertices
/// of `mesh`, block by block. Vertices with a `fixed` frame keep it; the rest
/// are visited breadth first from them and filled to meet `reqs`, each block
/// rotated towards the sum of its already visited neighbours.
pub fn nested_frame(
    mesh: &Mesh,
    n: usize,
    widths: &[usize],
    fixed: &[Option<CMat>],
    reqs: impl Fn(usize) -> Result<Vec<BlockReq>> + Sync,
) -> Result<FrameField> {
    let k = mesh.top();
    let nv = k.num_vertices();
    let total: usize = widths.iter().sum();
    let reqs: Vec<Option<Vec<BlockReq>>> = (0..nv)
        .into_par_iter()
        .map(|v| if fixed.get(v).map_or(false, |f| f.is_some()) { Ok(None) } else { reqs(v).map(Some) })
        .collect::<Result<_>>()?;
    let nb = k.vertex_neighbors();
    let mut frames: Vec<Option<CMat>> = vec![None; nv];
    let mut queue = VecDeque::new();
    for v in 0..nv {
        if let Some(Some(f)) = fixed.get(v) {
            frames[v] = Some(f.clone());
            queue.push_back(v);
        }
    }
    let mut seen: Vec<bool> = frames.iter().map(|f| f.is_some()).collect();
    let mut order = Vec::with_capacity(nv);
    let mut start = 0;
    loop {
        while let Some(v) = queue.pop_front() {
            if frames[v].is_none() {
                order.push(v);
                let mut guide = linalg::zeros(n, total);
                for &u in &nb[v] {
                    if let Some(f) = &frames[u] {
                        guide += f;
                    }
                }
                frames[v] = Some(fill_vertex(n, widths, reqs[v].as_ref().unwrap(), &guide)?);
            }
            for &u in &nb[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        while start < nv && seen[start] {
            start += 1;
        }
        if start == nv {
            break;
        }
        seen[start] = true;
        queue.push_back(start);
    }
    // Gauss-Seidel sweeps: refill each free vertex against all neighbours
    for _ in 0..SWEEPS {
        let mut moved = 0.0f64;
        for &v in &order {
            if reqs[v].is_none() {
                continue;
            }
            let mut guide = linalg::zeros(n, total);
            for &u in &nb[v] {
                if let Some(f) = &frames[u] {
                    guide += f;
                }
            }
            let next = fill_vertex(n, widths, reqs[v].as_ref().unwrap(), &guide)?;
            moved = moved.max((&next - frames[v].as_ref().unwrap()).norm());
            frames[v] = Some(next);
        }
        if moved < 1e-8 {
            break;
        }
    }
    FrameField::new(mesh.clone(), n, total, frames)
}

/// Minimum singular value of the interpolated frame over a lattice of each top
/// simplex (vertices, edge midpoints, barycenters and so on).
pub fn sampled_min_singular(f: &FrameField, skip: Option<&Subcomplex>) -> f64 {
    if f.rank == 0 {
        return 1.0;
    }
    let k = f.mesh.top();
    k.top_simplices()
        .collect::<Vec<_>>()
        .par_iter()
        .filter(|&&s| skip.map_or(true, |y| !y.contains(s)))
        .map(|&s| {
            let mut worst = f64::INFINITY;
            for face in k.faces(s).into_iter().chain(std::iter::once(s)) {
                let q = BarycentricPoint::barycenter(k, face);
                if let Some(m) = f.raw_top(&q) {
                    worst = worst.min(linalg::min_singular_value(&m));
                }
            }
            worst
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Extends a rank-`l` frame given on the vertices of `y` to every vertex,
/// refining the mesh (at most four times) until the interpolated frame is
/// well conditioned off `y`. The input frame is kept at every vertex of `y`.
pub fn extend_frame(input: &FrameField, y: &Subcomplex, seed: u64) -> Result<FrameField> {
    let (n, l) = (input.n, input.rank);
    let d = input.mesh.root.dim();
    if l > n || 2 * (n - l) + 1 < d {
        return Err(Error::DimensionObstruction { rank: l, bound: n.saturating_sub(d.saturating_sub(1).div_ceil(2)) });
    }
    let base = input.mesh.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = input.mesh.clone();
    for attempt in 0..=MAX_REFINE {
        let ym = mesh.tower.map_subcomplex_to(base, mesh.depth(), y);
        let fixed: Vec<Option<CMat>> = (0..mesh.top().num_vertices())
            .map(|v| {
                if !ym.has_vertex(v) {
                    return None;
                }
                if attempt == 0 {
                    input.frames[v].clone()
                } else {
                    input.eval(&mesh.root_point(v))
                }
            })
            .collect();
        if fixed.iter().enumerate().any(|(v, f)| ym.has_vertex(v) && f.is_none()) {
            return Err(Error::InvalidField("frame missing on a vertex of Y".into()));
        }
        let mut field = nested_frame(&mesh, n, &[l], &fixed, |_| Ok(vec![BlockReq::free(n)]))?;
        let mut tries = 0;
        while sampled_min_singular(&field, Some(&ym)) <= MIN_SINGULAR && tries < RETRIES {
            // generic-position retry: perturb the free vertices and re-smooth
            tries += 1;
            for (v, f) in field.frames.iter_mut().enumerate() {
                if !ym.has_vertex(v) {
                    let g = f.as_ref().unwrap() + linalg::random_gaussian(n, l, &mut rng) * c(0.3);
                    *f = Some(linalg::gram_schmidt(&g));
                }
            }
            let pert = field.frames.clone();
            let guide_fixed: Vec<Option<CMat>> =
                fixed.iter().zip(&pert).map(|(f, p)| f.clone().or_else(|| (tries % 2 == 1).then(|| p.clone().unwrap()))).collect();
            field = nested_frame(&mesh, n, &[l], &guide_fixed, |_| Ok(vec![BlockReq::free(n)]))?;
        }
        if sampled_min_singular(&field, Some(&ym)) > MIN_SINGULAR {
            return Ok(field);
        }
        mesh = mesh.refined();
    }
    Err(Error::ExtensionStuck(RETRIES))
}

fn projection_rank(p: &CMat) -> usize {
    (0..p.nrows()).map(|i| p[(i, i)].re).sum::<f64>().round().max(0.0) as usize
}

/// A complement `q` of a projection field `p` together with a global frame
/// of `p + q`.
#[derive(Clone)]
pub struct Complement {
    pub q: FnField,
    pub rank: usize,
    pub frame: FrameField,
}

/// Whether the projection field `s` admits a global frame on `mesh`: vertex
/// ranges are aligned and the interpolated frame must reproduce `s` at the
/// barycenters (within `0.25`) and stay well conditioned.
pub fn global_frame(s: &dyn Field, mesh: &Mesh) -> Result<Option<FrameField>> {
    let k = mesh.top();
    let n = s.shape().0;
    let mut frames: Vec<Option<CMat>> = (0..k.num_vertices())
        .into_par_iter()
        .map(|v| {
            let p = s.eval(&mesh.root_point(v));
            let r = projection_rank(&p);
            Ok(Some(Eigh::new(&p)?.top(r)))
        })
        .collect::<Result<_>>()?;
    let rank = frames[0].as_ref().map_or(0, |f| f.ncols());
    if frames.iter().any(|f| f.as_ref().unwrap().ncols() != rank) {
        return Err(Error::InvalidField("projection rank is not constant".into()));
    }
    align_frames(k, &mut frames);
    let field = FrameField::new(mesh.clone(), n, rank, frames)?;
    if alignment_residual(k, &field.frames) > 0.5 || sampled_min_singular(&field, None) <= MIN_SINGULAR {
        return Ok(None);
    }
    let bad = (0..k.num_simplices()).into_par_iter().any(|sx| {
        let q = BarycentricPoint::barycenter(k, sx);
        let x = mesh.to_root(&q);
        let pf = linalg::frame_projection(&field.eval_top(&q).unwrap());
        linalg::herm_norm(&(pf - s.eval(&x))) > 0.25
    });
    Ok((!bad).then_some(field))
}

/// Smallest-rank `q ⟂ p` (rank at most `d`) such that `p + q` has a global
/// frame on `mesh`. Candidates are `q = (1-p) - proj((1-p) W)` for a fixed
/// generic `W` with `n - l - r` columns, `r = 0..=d`.
pub fn trivial_complement(p: Arc<dyn Field>, mesh: &Mesh, d: usize, seed: u64) -> Result<Complement> {
    let n0 = p.shape().0;
    let l = projection_rank(&p.eval(&mesh.root_point(0)));
    let n = n0.max(l + d);
    let root = p.root().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..=d {
        let w = linalg::random_gaussian(n, n - l - r, &mut rng);
        // generic W keeps (1-p)W of full rank; check at the vertices
        let ok = (0..mesh.top().num_vertices()).all(|v| {
            let x = mesh.root_point(v);
            let comp = linalg::identity(n) - linalg::pad(&p.eval(&x), n);
            let y = comp * &w;
            y.ncols() == 0 || linalg::min_singular_value(&y) > 1e-3
        });
        if !ok {
            continue;
        }
        let pp = p.clone();
        let cut = move |x: &BarycentricPoint| -> CMat {
            let pad = linalg::pad(&pp.eval(x), n);
            let comp = linalg::identity(n) - &pad;
            let y = &comp * &w;
            let py = if y.ncols() == 0 {
                linalg::zeros(n, n)
            } else {
                let b = Eigh::new(&(&y * y.adjoint())).map(|e| e.top(y.ncols()));
                b.map(|b| linalg::frame_projection(&b)).unwrap_or_else(|_| linalg::zeros(n, n))
            };
            comp - py
        };
        let cut = Arc::new(cut);
        let c1 = cut.clone();
        let q = FnField::new(root.clone(), n, n, move |x| c1(x));
        let pp = p.clone();
        let c2 = cut.clone();
        let sum = FnField::new(root.clone(), n, n, move |x| linalg::pad(&pp.eval(x), n) + c2(x));
        if let Some(frame) = global_frame(&sum, mesh)? {
            return Ok(Complement { q, rank: r, frame });
        }
    }
    Err(Error::NoComplementFound(d))
}

/// Output of [`sandwich_projection`]: `r(x) = Q(x) + proj((P - Q)(x) F(x))`
/// restricted to the top `k - rank Q(x)` directions, `F` a global rank-`k`
/// frame built inside `P` around `Q` at the vertices.
#[derive(Clone)]
pub struct Sandwich {
    pub r: FnField,
    pub frame: FrameField,
}

pub fn sandwich_projection(
    big: Arc<dyn Field>,
    small: Arc<dyn Field>,
    k: usize,
    mesh: &Mesh,
) -> Result<Sandwich> {
    let n = big.shape().0;
    let d = mesh.root.dim();
    let half = (d + 1) as f64 / 2.0;
    let top = mesh.top();
    let check: Vec<BarycentricPoint> =
        (0..top.num_simplices()).map(|s| mesh.to_root(&BarycentricPoint::barycenter(top, s))).collect();
    for x in &check {
        let (pb, ps) = (big.eval(x), small.eval(x));
        let (rb, rs) = (projection_rank(&pb), projection_rank(&ps));
        if rb as f64 <= k as f64 + half || (rs > 0 && rs as f64 >= k as f64 - half) {
            return Err(Error::HypothesisViolation(format!("ranks {rs} < {k} < {rb} lack the margin {half}")));
        }
        if linalg::containment_defect(&ps, &pb) > 1e-7 {
            return Err(Error::HypothesisViolation("Q is not below P".into()));
        }
    }
    let frame = nested_frame(mesh, n, &[k], &[], |v| {
        let x = mesh.root_point(v);
        let (pb, ps) = (big.eval(&x), small.eval(&x));
        Ok(vec![BlockReq {
            contain: Eigh::new(&ps)?.top(projection_rank(&ps)),
            within: Some(Eigh::new(&pb)?.top(projection_rank(&pb))),
        }])
    })?;
    if sampled_min_singular(&frame, None) <= MIN_SINGULAR {
        return Err(Error::ConstructionFailed("sandwich frame degenerates".into()));
    }
    let fr = frame.clone();
    let r = FnField::new(mesh.root.clone(), n, n, move |x| {
        let (pb, ps) = (big.eval(x), small.eval(x));
        let rs = projection_rank(&ps);
        let f = fr.eval(x).expect("global frame");
        let m = (pb - &ps) * f;
        let g = &m * m.adjoint();
        let extra = Eigh::new(&g).map(|e| e.top(k.saturating_sub(rs))).unwrap_or_else(|_| linalg::zeros(n, 0));
        ps + linalg::frame_projection(&extra)
    });
    Ok(Sandwich { r, frame })
}

/// Rank blocks of the staircase: the rank values falling in
/// `[(t-1)d, td)` share a block of rank `td + 3d + 2` (`d >= 1`); for
/// `d = 0` each value gets its own block of rank `n_i + 3`. Zero rank
/// values get no block.
pub fn staircase_blocks(values: &[usize], d: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out: Vec<(Vec<usize>, usize)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let rank = if d == 0 { v + 3 } else { (v / d + 1) * d + 3 * d + 2 };
        match out.last_mut() {
            Some((members, r)) if *r == rank => members.push(i),
            _ => out.push((vec![i], rank)),
        }
    }
    out
}

/// One projection `p_i` of a coherent family: a frame on the vertices of its
/// domain `U_i`.
#[derive(Clone, Debug)]
pub struct Stratum {
    pub domain: Subcomplex,
    pub frame: FrameField,
}

#[derive(Clone, Debug)]
pub struct StaircaseBlock {
    pub members: Vec<usize>,
    pub rank: usize,
    pub domain: Subcomplex,
}

/// Staircase of trivial projections over a coherent, rank-increasing family
/// on a common mesh. The `R_l` are the leading `rank_l` columns of one
/// global frame (returned), built so that at each vertex of `U_i` the
/// columns of the block of `i` span `p_i`.
pub fn staircase_majorant(strata: &[Stratum], d: usize) -> Result<(Vec<StaircaseBlock>, FrameField)> {
    if strata.is_empty() {
        return Err(Error::HypothesisViolation("no strata".into()));
    }
    let mesh = strata[0].frame.mesh.clone();
    let ranks: Vec<usize> = strata.iter().map(|s| s.frame.rank).collect();
    if ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::HypothesisViolation("ranks must increase".into()));
    }
    let blocks = staircase_blocks(&ranks, d);
    let top_rank = blocks.last().map_or(0, |b| b.1);
    let n = strata[0].frame.n.max(top_rank);
    let mut widths = Vec::new();
    let mut prev = 0;
    for (_, r) in &blocks {
        widths.push(r - prev);
        prev = *r;
    }
    let frame = nested_frame(&mesh, n, &widths, &[], |v| {
        Ok(blocks
            .iter()
            .map(|(members, _)| {
                let last = members.last().copied().unwrap();
                let best = (0..=last).rev().find(|&i| strata[i].domain.has_vertex(v));
                let contain = match best {
                    Some(i) => linalg::pad_rows(strata[i].frame.frames[v].as_ref().unwrap(), n),
                    None => linalg::zeros(n, 0),
                };
                BlockReq { contain, within: None }
            })
            .collect())
    })
    .map_err(|e| e.at("staircase"))?;
    let k = mesh.top();
    let out = blocks
        .into_iter()
        .map(|(members, rank)| {
            let domain = members
                .iter()
                .fold(Subcomplex::empty(k), |acc, &i| acc.union(&strata[i].domain));
            StaircaseBlock { members, rank, domain }
        })
        .collect();
    Ok((out, frame))
}

/// Scalar value of a `1 x 1` field.
pub fn scalar(f: &dyn Field, x: &BarycentricPoint) -> f64 {
    f.eval(x)[(0, 0)].re
}

/// One block of a trivial element: a scalar bump and a range of line
/// columns.
#[derive(Clone)]
pub struct TrivialBlock {
    pub bump: Arc<dyn Field>,
    pub cols: Range<usize>,
}

/// `sum_l g_l(x) sum_{j in block l} q_j(x) q_j(x)*` for a global frame of
/// lines `q_j` and bumps with nested decreasing supports.
#[derive(Clone)]
pub struct TrivialElement {
    pub lines: FrameField,
    pub blocks: Vec<TrivialBlock>,
}

impl TrivialElement {
    pub fn zero(mesh: Mesh, n: usize) -> Self {
        TrivialElement { lines: FrameField::zero(mesh, n), blocks: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.lines.n
    }

    pub fn bumps(&self, x: &BarycentricPoint) -> Vec<f64> {
        self.blocks.iter().map(|b| scalar(b.bump.as_ref(), x)).collect()
    }

    /// Number of lines whose bump is positive at `x`.
    pub fn rank_at(&self, x: &BarycentricPoint) -> usize {
        self.blocks
            .iter()
            .filter(|b| scalar(b.bump.as_ref(), x) > 0.0)
            .map(|b| b.cols.len())
            .sum()
    }

    /// Per-line coefficients at `x`.
    pub fn coefficients(&self, x: &BarycentricPoint) -> Vec<f64> {
        let mut c_ = vec![0.0; self.lines.rank];
        for b in &self.blocks {
            let g = scalar(b.bump.as_ref(), x);
            for j in b.cols.clone() {
                c_[j] = g;
            }
        }
        c_
    }

    /// Line frame at `x` (`n x #lines`).
    pub fn frame(&self, x: &BarycentricPoint) -> CMat {
        self.lines.eval(x).expect("lines are global")
    }

    /// Largest off-diagonal Gram entry of the lines at `x`.
    pub fn line_defect(&self, x: &BarycentricPoint) -> f64 {
        gram_defect(&self.frame(x))
    }
}

impl Field for TrivialElement {
    fn root(&self) -> &Arc<Complex> {
        &self.lines.mesh.root
    }

    fn shape(&self) -> (usize, usize) {
        (self.n(), self.n())
    }

    fn eval(&self, x: &BarycentricPoint) -> CMat {
        let q = self.frame(x);
        let w = self.coefficients(x);
        let mut out = linalg::zeros(self.n(), self.n());
        for (j, g) in w.into_iter().enumerate() {
            if g != 0.0 {
                let col = q.column(j);
                out += col * col.adjoint() * c(g);
            }
        }
        out
    }
}

/// Indicator of a subcomplex of a mesh level, as a `1 x 1` field.
pub fn indicator(mesh: &Mesh, sub: Subcomplex) -> FnField {
    let m = mesh.clone();
    FnField::new(mesh.root.clone(), 1, 1, move |x| {
        let q = m.locate(x);
        let v = sub.contains(q.canonical(m.top()).simplex) as u8 as f64;
        linalg::diag(&[v])
    })
}

/// Trivial staircase basis: given the staircase blocks and their global
/// frame, the lines are the frame's columns and block `l` carries the
/// indicator of `V_l ∪ ... ∪ V_s`.
pub fn trivial_staircase(blocks: &[StaircaseBlock], frame: &FrameField) -> TrivialElement {
    let k = frame.mesh.top();
    let mut out = Vec::new();
    let mut start = 0;
    for (l, b) in blocks.iter().enumerate() {
        let tail = blocks[l..].iter().fold(Subcomplex::empty(k), |acc, t| acc.union(&t.domain));
        out.push(TrivialBlock { bump: Arc::new(indicator(&frame.mesh, tail)), cols: start..b.rank });
        start = b.rank;
    }
    let lines = FrameField {
        mesh: frame.mesh.clone(),
        n: frame.n,
        rank: start,
        frames: frame.frames.iter().map(|f| f.as_ref().map(|f| f.columns(0, start).clone_owned())).collect(),
    };
    TrivialElement { lines, blocks: out }
}
