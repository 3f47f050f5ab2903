//! Finite geometric simplicial complexes.
//!
//! Simplices are stored as sorted vertex-index tuples, ordered by dimension and
//! then lexicographically, so the first `num_vertices` simplices are the
//! vertices themselves and simplex `i < num_vertices` is vertex `i`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric tolerance for affine independence and distance comparisons.
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Complex {
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
    cofacets: Vec<Vec<usize>>,
    dim: usize,
}

/// A point addressed by a simplex and barycentric coordinates aligned with
/// that simplex's sorted vertex list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarycentricPoint {
    pub simplex: usize,
    pub coords: Vec<f64>,
}

impl BarycentricPoint {
    pub fn vertex(v: usize) -> Self {
        BarycentricPoint {
            simplex: v,
            coords: vec![1.0],
        }
    }

    pub fn barycenter(k: &Complex, simplex: usize) -> Self {
        let m = k.simplex(simplex).len();
        BarycentricPoint {
            simplex,
            coords: vec![1.0 / m as f64; m],
        }
    }

    /// Drops vanishing coordinates so that `simplex` is the carrier (the
    /// smallest simplex containing the point).
    pub fn canonical(&self, k: &Complex) -> BarycentricPoint {
        let verts = k.simplex(self.simplex);
        let keep: Vec<usize> = (0..verts.len())
            .filter(|&i| self.coords[i] > 1e-15)
            .collect();
        if keep.len() == verts.len() {
            return self.clone();
        }
        let face: Vec<usize> = keep.iter().map(|&i| verts[i]).collect();
        let total: f64 = keep.iter().map(|&i| self.coords[i]).sum();
        BarycentricPoint {
            simplex: k.simplex_index(&face).expect("faces are listed"),
            coords: keep.iter().map(|&i| self.coords[i] / total).collect(),
        }
    }

    /// Pairs of (vertex id, weight).
    pub fn weights<'a>(&'a self, k: &'a Complex) -> impl Iterator<Item = (usize, f64)> + 'a {
        k.simplex(self.simplex)
            .iter()
            .copied()
            .zip(self.coords.iter().copied())
    }
}

#[derive(Serialize, Deserialize)]
struct ComplexJson {
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Vec<usize>>,
}

impl Complex {
    /// Builds a complex from vertex coordinates and a list of simplices; faces
    /// are completed automatically.
    pub fn new(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidComplex("no vertices".into()));
        }
        let amb = vertices[0].len();
        if vertices.iter().any(|v| v.len() != amb) {
            return Err(Error::InvalidComplex("ragged vertex coordinates".into()));
        }
        let mut all: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
        for v in 0..vertices.len() {
            all.insert((1, vec![v]));
        }
        for s in simplices {
            let mut s = s;
            s.sort_unstable();
            let len = s.len();
            s.dedup();
            if s.len() != len || s.is_empty() {
                return Err(Error::InvalidComplex(format!(
                    "simplex {s:?} has repeated or no vertices"
                )));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidComplex(format!("vertex index {bad} out of range")));
            }
            if s.len() > 63 {
                return Err(Error::InvalidComplex("simplex too large".into()));
            }
            let m = s.len();
            for mask in 1u64..(1u64 << m) {
                let face: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| s[i]).collect();
                all.insert((face.len(), face));
            }
        }
        let simplices: Vec<Vec<usize>> = all.into_iter().map(|(_, s)| s).collect();
        let k = Self::assemble(vertices, simplices);
        for (i, s) in k.simplices.iter().enumerate() {
            if s.len() > 1 && !k.affinely_independent(i) {
                return Err(Error::InvalidComplex(format!(
                    "simplex {s:?} is affinely degenerate"
                )));
            }
        }
        Ok(k)
    }

    fn assemble(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> Self {
        let index: HashMap<Vec<usize>, usize> = simplices
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut cofacets = vec![Vec::new(); simplices.len()];
        for (i, s) in simplices.iter().enumerate() {
            if s.len() < 2 {
                continue;
            }
            for skip in 0..s.len() {
                let face: Vec<usize> = s
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != skip)
                    .map(|(_, &v)| v)
                    .collect();
                cofacets[index[&face]].push(i);
            }
        }
        let dim = simplices.iter().map(|s| s.len() - 1).max().unwrap_or(0);
        Complex {
            vertices,
            simplices,
            index,
            cofacets,
            dim,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ComplexJson =
            serde_json::from_str(text).map_err(|e| Error::InvalidComplex(e.to_string()))?;
        Self::new(raw.vertices, raw.simplices)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "vertices": self.vertices,
            "simplices": self.top_simplices().map(|i| self.simplices[i].clone()).collect::<Vec<_>>(),
        })
    }

    /// The interval `[0, 1]` cut into `n` edges.
    pub fn interval(n: usize) -> Self {
        let vertices = (0..=n).map(|i| vec![i as f64 / n as f64]).collect();
        let edges = (0..n).map(|i| vec![i, i + 1]).collect();
        Self::new(vertices, edges).expect("valid interval")
    }

    /// A circle triangulated as an `n`-gon in the plane (`n >= 3`).
    pub fn circle(n: usize) -> Self {
        assert!(n >= 3);
        let vertices = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let edges = (0..n).map(|i| vec![i, (i + 1) % n]).collect();
        Self::new(vertices, edges).expect("valid circle")
    }

    /// Boundary of the octahedron: a triangulated 2-sphere with 6 vertices.
    pub fn octahedron() -> Self {
        let vertices = vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, -1.0],
        ];
        let mut tris = Vec::new();
        for &x in &[0, 1] {
            for &y in &[2, 3] {
                for &z in &[4, 5] {
                    tris.push(vec![x, y, z]);
                }
            }
        }
        Self::new(vertices, tris).expect("valid octahedron")
    }

    /// The standard `d`-simplex spanned by the origin and the unit vectors.
    pub fn standard_simplex(d: usize) -> Self {
        let vertices = (0..=d)
            .map(|i| {
                let mut v = vec![0.0; d.max(1)];
                if i > 0 {
                    v[i - 1] = 1.0;
                }
                v
            })
            .collect();
        Self::new(vertices, vec![(0..=d).collect()]).expect("valid simplex")
    }

    /// `n` isolated points.
    pub fn points(n: usize) -> Self {
        Self::new((0..n).map(|i| vec![i as f64]).collect(), vec![]).expect("valid points")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// For a finite complex the covering dimension equals the simplicial one.
    pub fn covering_dimension(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn simplex(&self, i: usize) -> &[usize] {
        &self.simplices[i]
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn simplex_dim(&self, i: usize) -> usize {
        self.simplices[i].len() - 1
    }

    pub fn simplex_index(&self, verts: &[usize]) -> Option<usize> {
        self.index.get(verts).copied()
    }

    /// Simplices having `i` as a codimension-one face.
    pub fn cofacets(&self, i: usize) -> &[usize] {
        &self.cofacets[i]
    }

    /// Indices of all proper and improper faces of simplex `i`.
    pub fn faces(&self, i: usize) -> Vec<usize> {
        let s = &self.simplices[i];
        let m = s.len();
        (1u64..(1u64 << m))
            .map(|mask| {
                let f: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).map(|j| s[j]).collect();
                self.index[&f]
            })
            .collect()
    }

    /// Maximal simplices (those without cofacets).
    pub fn top_simplices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.simplices.len()).filter(|&i| self.cofacets[i].is_empty())
    }

    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for s in self.simplices.iter().filter(|s| s.len() == 2) {
            nb[s[0]].push(s[1]);
            nb[s[1]].push(s[0]);
        }
        nb
    }

    fn edge_matrix(&self, i: usize) -> DMatrix<f64> {
        let s = &self.simplices[i];
        let base = &self.vertices[s[0]];
        let amb = base.len();
        DMatrix::from_fn(amb, s.len() - 1, |r, c| self.vertices[s[c + 1]][r] - base[r])
    }

    fn affinely_independent(&self, i: usize) -> bool {
        let e = self.edge_matrix(i);
        if e.ncols() > e.nrows() {
            return false;
        }
        let gram = e.transpose() * &e;
        let scale: f64 = (0..e.ncols()).map(|c| gram[(c, c)]).product();
        scale > 0.0 && gram.determinant() / scale > GEOM_TOL
    }

    /// `k`-dimensional volume of simplex `i` (1 for vertices).
    pub fn volume(&self, i: usize) -> f64 {
        let k = self.simplex_dim(i);
        if k == 0 {
            return 1.0;
        }
        let e = self.edge_matrix(i);
        let g = (e.transpose() * &e).determinant().max(0.0).sqrt();
        g / (1..=k).map(|j| j as f64).product::<f64>()
    }

    pub fn diameter(&self, i: usize) -> f64 {
        let s = &self.simplices[i];
        let mut d: f64 = 0.0;
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                d = d.max(dist(&self.vertices[s[a]], &self.vertices[s[b]]));
            }
        }
        d
    }

    pub fn mesh_diameter(&self) -> f64 {
        self.top_simplices().map(|i| self.diameter(i)).fold(0.0, f64::max)
    }

    pub fn barycenter_coords(&self, i: usize) -> Vec<f64> {
        self.point_coords(&BarycentricPoint::barycenter(self, i))
    }

    pub fn point_coords(&self, p: &BarycentricPoint) -> Vec<f64> {
        let amb = self.vertices[0].len();
        let mut x = vec![0.0; amb];
        for (v, w) in p.weights(self) {
            for (xi, ci) in x.iter_mut().zip(&self.vertices[v]) {
                *xi += w * ci;
            }
        }
        x
    }

    /// Euclidean distance between two closed simplices, found by enumerating
    /// pairs of faces and solving for the closest points of their affine hulls.
    pub fn simplex_distance(&self, i: usize, j: usize) -> f64 {
        let mut best = f64::INFINITY;
        for fi in self.faces(i) {
            for fj in self.faces(j) {
                if let Some(d) = self.face_pair_distance(fi, fj) {
                    best = best.min(d);
                }
            }
        }
        best
    }

    fn face_pair_distance(&self, fi: usize, fj: usize) -> Option<f64> {
        let a = &self.simplices[fi];
        let b = &self.simplices[fj];
        let amb = self.vertices[0].len();
        let a0 = DVector::from_column_slice(&self.vertices[a[0]]);
        let b0 = DVector::from_column_slice(&self.vertices[b[0]]);
        let ka = a.len() - 1;
        let kb = b.len() - 1;
        if ka + kb == 0 {
            return Some((a0 - b0).norm());
        }
        // closest points a0 + E s and b0 + F t: minimise |a0 - b0 + E s - F t|
        let m = DMatrix::from_fn(amb, ka + kb, |r, c| {
            if c < ka {
                self.vertices[a[c + 1]][r] - a0[r]
            } else {
                -(self.vertices[b[c - ka + 1]][r] - b0[r])
            }
        });
        let rhs = &b0 - &a0;
        let gram = m.transpose() * &m;
        let scale = (0..gram.ncols()).map(|c| gram[(c, c)]).product::<f64>();
        if gram.determinant().abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        let sol = gram.lu().solve(&(m.transpose() * &rhs))?;
        let s_sum: f64 = sol.iter().take(ka).sum();
        let t_sum: f64 = sol.iter().skip(ka).sum();
        let ok = sol.iter().all(|&c| c >= -1e-12) && s_sum <= 1.0 + 1e-12 && t_sum <= 1.0 + 1e-12;
        if !ok {
            return None;
        }
        Some((&m * &sol - rhs).norm())
    }

    /// Distance between the realisations of two subcomplexes (infinite when
    /// either is empty).
    pub fn subcomplex_distance(&self, a: &Subcomplex, b: &Subcomplex) -> f64 {
        let ma = a.maximal(self);
        let mb = b.maximal(self);
        let boxes = |v: &[usize]| -> Vec<(Vec<f64>, Vec<f64>)> {
            v.iter().map(|&i| self.bbox(i)).collect()
        };
        let ba = boxes(&ma);
        let bb = boxes(&mb);
        let mut best = f64::INFINITY;
        for (ia, &i) in ma.iter().enumerate() {
            for (ib, &j) in mb.iter().enumerate() {
                if bbox_distance(&ba[ia], &bb[ib]) >= best {
                    continue;
                }
                best = best.min(self.simplex_distance(i, j));
            }
        }
        best
    }

    fn bbox(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let amb = self.vertices[0].len();
        let mut lo = vec![f64::INFINITY; amb];
        let mut hi = vec![f64::NEG_INFINITY; amb];
        for &v in &self.simplices[i] {
            for c in 0..amb {
                lo[c] = lo[c].min(self.vertices[v][c]);
                hi[c] = hi[c].max(self.vertices[v][c]);
            }
        }
        (lo, hi)
    }

    /// Barycentric subdivision. New vertex `i` is the barycenter of old
    /// simplex `i`, so old vertex ids are preserved.
    pub fn barycentric_subdivide(&self) -> Subdivision {
        let vertices: Vec<Vec<f64>> = (0..self.simplices.len())
            .map(|i| self.barycenter_coords(i))
            .collect();
        // chains ending at each simplex
        let mut chains: Vec<Vec<Vec<usize>>> = Vec::with_capacity(self.simplices.len());
        for i in 0..self.simplices.len() {
            let mut mine = vec![vec![i]];
            for f in self.faces(i) {
                if f == i {
                    continue;
                }
                for c in &chains[f] {
                    let mut c = c.clone();
                    c.push(i);
                    mine.push(c);
                }
            }
            chains.push(mine);
        }
        let mut all: Vec<(Vec<usize>, usize)> = Vec::new();
        for (top, cs) in chains.into_iter().enumerate() {
            for mut c in cs {
                c.sort_unstable();
                all.push((c, top));
            }
        }
        all.sort_by(|x, y| x.0.len().cmp(&y.0.len()).then_with(|| x.0.cmp(&y.0)));
        let carrier: Vec<usize> = all.iter().map(|(_, t)| *t).collect();
        let simplices: Vec<Vec<usize>> = all.into_iter().map(|(c, _)| c).collect();
        Subdivision {
            complex: Complex::assemble(vertices, simplices),
            carrier,
        }
    }

    /// Barycentric points of the vertices of the twice-subdivided complex,
    /// expressed in this complex: the standard sampling grid.
    pub fn sample_grid(&self, levels: usize) -> Vec<BarycentricPoint> {
        let mut tower = Tower::default();
        let mut k = self.clone();
        for _ in 0..levels {
            let sd = k.barycentric_subdivide();
            k = sd.complex.clone();
            tower.levels.push(Arc::new(sd));
        }
        (0..k.num_vertices())
            .map(|v| tower.root_point(self, v))
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn bbox_distance(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    let mut s = 0.0;
    for c in 0..a.0.len() {
        let gap = (b.0[c] - a.1[c]).max(a.0[c] - b.1[c]).max(0.0);
        s += gap * gap;
    }
    s.sqrt()
}

/// One barycentric subdivision step together with the carrier map.
#[derive(Clone, Debug)]
pub struct Subdivision {
    pub complex: Complex,
    /// For each new simplex, the old simplex whose interior contains its interior.
    pub carrier: Vec<usize>,
}

impl Subdivision {
    /// Re-expresses a point of the old complex in the new one. A point with
    /// coordinates sorted as l_1 >= l_2 >= ... lies in the chain of faces
    /// {v_1} < {v_1, v_2} < ... with weights k (l_k - l_{k+1}).
    pub fn locate(&self, old: &Complex, p: &BarycentricPoint) -> BarycentricPoint {
        let verts = old.simplex(p.simplex);
        let mut order: Vec<usize> = (0..verts.len()).collect();
        order.sort_by(|&a, &b| p.coords[b].total_cmp(&p.coords[a]).then(a.cmp(&b)));
        let mut chain_ids = Vec::new();
        let mut weights = Vec::new();
        let mut face = Vec::new();
        for (k, &o) in order.iter().enumerate() {
            face.push(verts[o]);
            let mut sorted = face.clone();
            sorted.sort_unstable();
            let next = order.get(k + 1).map(|&q| p.coords[q]).unwrap_or(0.0);
            let w = (k + 1) as f64 * (p.coords[o] - next);
            chain_ids.push(old.simplex_index(&sorted).expect("face listed"));
            weights.push(w.max(0.0));
        }
        let mut pairs: Vec<(usize, f64)> = chain_ids.into_iter().zip(weights).collect();
        pairs.sort_by_key(|x| x.0);
        let simplex_verts: Vec<usize> = pairs.iter().map(|x| x.0).collect();
        let total: f64 = pairs.iter().map(|x| x.1).sum();
        let q = BarycentricPoint {
            simplex: self
                .complex
                .simplex_index(&simplex_verts)
                .expect("chain simplex listed"),
            coords: pairs.iter().map(|x| x.1 / total).collect(),
        };
        q.canonical(&self.complex)
    }
}

/// A stack of barycentric subdivisions over a root complex.
#[derive(Clone, Debug, Default)]
pub struct Tower {
    pub levels: Vec<Arc<Subdivision>>,
}

impl Tower {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn top<'a>(&'a self, root: &'a Complex) -> &'a Complex {
        self.levels.last().map(|s| &s.complex).unwrap_or(root)
    }

    pub fn push(&mut self, root: &Complex) {
        let sd = self.top(root).barycentric_subdivide();
        self.levels.push(Arc::new(sd));
    }

    /// Locates a root point in the top complex.
    pub fn locate(&self, root: &Complex, p: &BarycentricPoint) -> BarycentricPoint {
        let mut q = p.canonical(root);
        let mut prev = root;
        for lvl in &self.levels {
            q = lvl.locate(prev, &q);
            prev = &lvl.complex;
        }
        q
    }

    /// Complex at `level` (0 = root).
    pub fn level<'a>(&'a self, root: &'a Complex, level: usize) -> &'a Complex {
        if level == 0 {
            root
        } else {
            &self.levels[level - 1].complex
        }
    }

    /// Locates a root point in the complex at `level`.
    pub fn locate_to(&self, root: &Complex, level: usize, p: &BarycentricPoint) -> BarycentricPoint {
        let mut q = p.canonical(root);
        let mut prev = root;
        for lvl in &self.levels[..level] {
            q = lvl.locate(prev, &q);
            prev = &lvl.complex;
        }
        q
    }

    /// Locates a point given at level `from` (0 = root) in the top complex.
    pub fn locate_from(&self, root: &Complex, from: usize, p: &BarycentricPoint) -> BarycentricPoint {
        let mut prev = if from == 0 { root } else { &self.levels[from - 1].complex };
        let mut q = p.canonical(prev);
        for lvl in &self.levels[from..] {
            q = lvl.locate(prev, &q);
            prev = &lvl.complex;
        }
        q
    }

    /// Root carrier of a top-level simplex.
    pub fn root_carrier(&self, mut s: usize) -> usize {
        for lvl in self.levels.iter().rev() {
            s = lvl.carrier[s];
        }
        s
    }

    /// Barycentric point, in the root complex, of a top-level vertex.
    pub fn root_point(&self, root: &Complex, v: usize) -> BarycentricPoint {
        self.point_at_level(root, self.levels.len(), &BarycentricPoint::vertex(v))
    }

    /// Pushes a point at level `level` down to the root.
    pub fn point_at_level(&self, root: &Complex, level: usize, p: &BarycentricPoint) -> BarycentricPoint {
        let mut q = p.clone();
        for l in (0..level).rev() {
            let parent = if l == 0 { root } else { &self.levels[l - 1].complex };
            let here = &self.levels[l].complex;
            // each vertex of `here` is the barycenter of a parent simplex
            let mut acc: HashMap<usize, f64> = HashMap::new();
            let mut carrier = parent.simplex(self.levels[l].carrier[q.simplex]).to_vec();
            carrier.sort_unstable();
            for (v, w) in q.weights(here) {
                let ps = parent.simplex(v);
                let share = w / ps.len() as f64;
                for &pv in ps {
                    *acc.entry(pv).or_insert(0.0) += share;
                }
            }
            let cidx = parent.simplex_index(&carrier).expect("carrier listed");
            q = BarycentricPoint {
                simplex: cidx,
                coords: carrier.iter().map(|v| acc.get(v).copied().unwrap_or(0.0)).collect(),
            }
            .canonical(parent);
        }
        q
    }

    /// Maps a subcomplex at level `from` to the top complex.
    pub fn map_subcomplex(&self, from: usize, sub: &Subcomplex) -> Subcomplex {
        self.map_subcomplex_to(from, self.levels.len(), sub)
    }

    pub fn map_subcomplex_to(&self, from: usize, to: usize, sub: &Subcomplex) -> Subcomplex {
        let mut s = sub.clone();
        for lvl in &self.levels[from..to] {
            s = Subcomplex {
                mask: lvl.carrier.iter().map(|&c| s.mask[c]).collect(),
            };
        }
        s
    }
}

/// A root complex together with a stack of subdivisions. Fields defined on
/// any level are addressed by barycentric points of the root.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub root: Arc<Complex>,
    pub tower: Tower,
}

impl Mesh {
    pub fn new(root: Complex) -> Self {
        Mesh {
            root: Arc::new(root),
            tower: Tower::default(),
        }
    }

    pub fn from_arc(root: Arc<Complex>) -> Self {
        Mesh {
            root,
            tower: Tower::default(),
        }
    }

    pub fn depth(&self) -> usize {
        self.tower.depth()
    }

    pub fn top(&self) -> &Complex {
        self.tower.top(&self.root)
    }

    pub fn level(&self, l: usize) -> &Complex {
        self.tower.level(&self.root, l)
    }

    pub fn refined(&self) -> Mesh {
        let mut m = self.clone();
        m.tower.push(&self.root);
        m
    }

    /// Refines until the depth is at least `depth`.
    pub fn refined_to(&self, depth: usize) -> Mesh {
        let mut m = self.clone();
        while m.depth() < depth {
            m.tower.push(&self.root);
        }
        m
    }

    /// Truncates to the first `depth` levels.
    pub fn truncated(&self, depth: usize) -> Mesh {
        let mut m = self.clone();
        m.tower.levels.truncate(depth);
        m
    }

    pub fn locate(&self, p: &BarycentricPoint) -> BarycentricPoint {
        self.tower.locate(&self.root, p)
    }

    pub fn locate_to(&self, level: usize, p: &BarycentricPoint) -> BarycentricPoint {
        self.tower.locate_to(&self.root, level, p)
    }

    /// Root address of a vertex of the top complex.
    pub fn root_point(&self, v: usize) -> BarycentricPoint {
        self.tower.root_point(&self.root, v)
    }

    /// Root address of a point of the top complex.
    pub fn to_root(&self, p: &BarycentricPoint) -> BarycentricPoint {
        self.tower.point_at_level(&self.root, self.depth(), p)
    }

    /// Exact transfer of PL vertex data from level `from` to a finer level
    /// `to`; a new vertex is the barycenter of its parent simplex.
    pub fn prolong<T: Clone>(&self, from: usize, to: usize, vals: Vec<T>, mean: impl Fn(&[&T]) -> T) -> Vec<T> {
        let mut vals = vals;
        for l in from..to {
            let k = self.level(l);
            let next: Vec<T> = (0..k.num_simplices())
                .map(|s| {
                    let vs = k.simplex(s);
                    if vs.len() == 1 {
                        vals[vs[0]].clone()
                    } else {
                        let refs: Vec<&T> = vs.iter().map(|&v| &vals[v]).collect();
                        mean(&refs)
                    }
                })
                .collect();
            vals = next;
        }
        vals
    }

    pub fn prolong_scalar(&self, from: usize, to: usize, vals: Vec<f64>) -> Vec<f64> {
        self.prolong(from, to, vals, |xs| xs.iter().copied().sum::<f64>() / xs.len() as f64)
    }

    /// Whether `other` is this mesh refined further (same root, shared levels).
    pub fn is_prefix_of(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.root, &other.root)
            && self.depth() <= other.depth()
            && self
                .tower
                .levels
                .iter()
                .zip(&other.tower.levels)
                .all(|(a, b)| Arc::ptr_eq(a, b))
    }
}

/// A subcomplex, stored as a membership mask over the parent's simplices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subcomplex {
    mask: Vec<bool>,
}

impl Subcomplex {
    pub fn empty(k: &Complex) -> Self {
        Subcomplex {
            mask: vec![false; k.num_simplices()],
        }
    }

    pub fn full(k: &Complex) -> Self {
        Subcomplex {
            mask: vec![true; k.num_simplices()],
        }
    }

    /// Face closure of the given simplices.
    pub fn closure_of(k: &Complex, simplices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; k.num_simplices()];
        for s in simplices {
            if mask[s] {
                continue;
            }
            for f in k.faces(s) {
                mask[f] = true;
            }
        }
        Subcomplex { mask }
    }

    /// Validates a raw mask (must be closed under faces).
    pub fn from_mask(k: &Complex, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != k.num_simplices() {
            return Err(Error::InvalidComplex("subcomplex mask length".into()));
        }
        for (i, &m) in mask.iter().enumerate() {
            if m && k.faces(i).iter().any(|&f| !mask[f]) {
                return Err(Error::InvalidComplex(format!("simplex {i} lacks a face")));
            }
        }
        Ok(Subcomplex { mask })
    }

    pub fn contains(&self, s: usize) -> bool {
        self.mask[s]
    }

    pub fn contains_point(&self, k: &Complex, p: &BarycentricPoint) -> bool {
        self.mask[p.canonical(k).simplex]
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|x| *x.1).map(|x| x.0)
    }

    pub fn maximal(&self, k: &Complex) -> Vec<usize> {
        self.members()
            .filter(|&i| !k.cofacets(i).iter().any(|&c| self.mask[c]))
            .collect()
    }

    pub fn has_vertex(&self, v: usize) -> bool {
        self.mask[v]
    }

    pub fn union(&self, other: &Subcomplex) -> Subcomplex {
        Subcomplex {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection(&self, other: &Subcomplex) -> Subcomplex {
        Subcomplex {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Subcomplex) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !*a || *b)
    }

    /// Realisations intersect iff the subcomplexes share a vertex.
    pub fn meets(&self, k: &Complex, other: &Subcomplex) -> bool {
        (0..k.num_vertices()).any(|v| self.mask[v] && other.mask[v])
    }

    /// Closure of the complement of the realisation, `cl(X \ |S|)`.
    pub fn closure_of_complement(&self, k: &Complex) -> Subcomplex {
        Self::closure_of(k, (0..k.num_simplices()).filter(|&i| !self.mask[i]))
    }

    /// Simplices whose relative interiors lie in the topological interior.
    pub fn interior_simplices(&self, k: &Complex) -> Vec<usize> {
        let outside = self.closure_of_complement(k);
        (0..k.num_simplices()).filter(|&i| !outside.mask[i]).collect()
    }

    /// Whether `|S|` is the closure of its interior.
    pub fn is_regular_closed(&self, k: &Complex) -> bool {
        let back = self.closure_of_complement(k).closure_of_complement(k);
        back == *self
    }

    /// Topological boundary as a subcomplex: `S ∩ cl(X \ S)`.
    pub fn boundary(&self, k: &Complex) -> Subcomplex {
        self.intersection(&self.closure_of_complement(k))
    }

    /// Open star: simplices with at least one vertex in `S`.
    pub fn open_star(&self, k: &Complex) -> Vec<usize> {
        (0..k.num_simplices())
            .filter(|&i| k.simplex(i).iter().any(|&v| self.mask[v]))
            .collect()
    }

    /// Closed subcomplex of simplices with no vertex in `S`, i.e. the
    /// complement of the open star.
    pub fn star_complement(&self, k: &Complex) -> Subcomplex {
        Subcomplex {
            mask: (0..k.num_simplices())
                .map(|i| !k.simplex(i).iter().any(|&v| self.mask[v]))
                .collect(),
        }
    }

    /// Hop distance (along edges) from each vertex to the subcomplex.
    pub fn hop_distance(&self, k: &Complex) -> Vec<usize> {
        let nb = k.vertex_neighbors();
        let mut d = vec![usize::MAX; k.num_vertices()];
        let mut q = VecDeque::new();
        for v in 0..k.num_vertices() {
            if self.mask[v] {
                d[v] = 0;
                q.push_back(v);
            }
        }
        while let Some(v) = q.pop_front() {
            for &w in &nb[v] {
                if d[w] == usize::MAX {
                    d[w] = d[v] + 1;
                    q.push_back(w);
                }
            }
        }
        d
    }
}

/// Outcome of [`separating_subcomplex`].
#[derive(Clone, Debug)]
pub struct Separation {
    /// Subdivisions applied on top of the input complex.
    pub tower: Tower,
    pub y: Subcomplex,
    pub delta: f64,
}

/// Given a closed subcomplex `closed_complement` (the complement `V^c` of an
/// open set `V`) and a subcomplex `u` with `|u| ⊆ V`, refines the complex until
/// its mesh is below `delta / 2` and returns a regular-closed subcomplex `Y`
/// with `Y ⊇ V^c` and `Y ∩ u = ∅`.
pub fn separating_subcomplex(
    k: &Complex,
    closed_complement: &Subcomplex,
    u: &Subcomplex,
    max_subdivisions: usize,
) -> Result<Separation> {
    let mut tower = Tower::default();
    if closed_complement.is_empty() {
        return Ok(Separation {
            y: Subcomplex::empty(k),
            tower,
            delta: f64::INFINITY,
        });
    }
    let delta = k.subcomplex_distance(u, closed_complement);
    if delta <= GEOM_TOL {
        return Err(Error::DegenerateSeparation(delta));
    }
    if delta.is_finite() {
        while tower.top(k).mesh_diameter() >= delta / 2.0 {
            if tower.depth() >= max_subdivisions {
                return Err(Error::BudgetExceeded(max_subdivisions));
            }
            tower.push(k);
        }
    }
    let top = tower.top(k);
    let c = tower.map_subcomplex(0, closed_complement);
    let u_top = tower.map_subcomplex(0, u);
    let star: Vec<usize> = c.open_star(top);
    let y_tilde = Subcomplex::closure_of(top, star);
    let y = y_tilde.closure_of_complement(top).closure_of_complement(top);
    debug_assert!(c.is_subset_of(&y));
    if y.meets(top, &u_top) {
        return Err(Error::ConstructionFailed(
            "separating subcomplex meets the protected set".into(),
        ));
    }
    Ok(Separation { tower, y, delta })
}
