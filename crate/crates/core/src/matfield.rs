//! Matrix-valued fields over complexes, spectra, rank profiles.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, Eigh};
use crate::simplicial::{BarycentricPoint, Complex, Mesh, Subcomplex};

pub const DEFAULT_TOL: f64 = 1e-8;

/// A matrix-valued function on the realisation of a root complex, addressed
/// by barycentric points of that root.
pub trait Field: Send + Sync {
    fn root(&self) -> &Arc<Complex>;
    fn shape(&self) -> (usize, usize);
    fn eval(&self, p: &BarycentricPoint) -> CMat;
}

/// Piecewise-linear field given by one matrix per vertex of the top level of
/// a mesh.
#[derive(Clone, Debug)]
pub struct MatrixField {
    mesh: Mesh,
    rows: usize,
    cols: usize,
    samples: Arc<Vec<CMat>>,
}

impl MatrixField {
    /// Positive field from vertex samples; checks Hermitian and PSD.
    pub fn new(mesh: Mesh, samples: Vec<CMat>) -> Result<Self> {
        let top = mesh.top();
        if samples.len() != top.num_vertices() {
            return Err(Error::InvalidField(format!(
                "{} samples for {} vertices",
                samples.len(),
                top.num_vertices()
            )));
        }
        let n = samples.first().map(|m| m.nrows()).unwrap_or(0);
        for (v, m) in samples.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidField(format!("sample {v} is not {n}x{n}")));
            }
            let scale = 1.0f64.max(m.iter().map(|z| z.norm()).fold(0.0, f64::max));
            if linalg::hermitian_defect(m) > 1e-10 * scale {
                return Err(Error::InvalidField(format!("sample {v} is not Hermitian")));
            }
            let e = Eigh::new(m)?;
            if e.values.first().copied().unwrap_or(0.0) < -1e-9 {
                return Err(Error::InvalidField(format!(
                    "sample {v} has eigenvalue {:e}",
                    e.values[0]
                )));
            }
        }
        Ok(Self::general(mesh, n, n, samples))
    }

    /// PL field with arbitrary (possibly rectangular) samples, unchecked.
    pub fn general(mesh: Mesh, rows: usize, cols: usize, samples: Vec<CMat>) -> Self {
        MatrixField {
            mesh,
            rows,
            cols,
            samples: Arc::new(samples),
        }
    }

    /// Samples `f` at the top vertices of `mesh`.
    pub fn sample(mesh: Mesh, f: impl Fn(&BarycentricPoint) -> CMat + Sync) -> Self {
        let nv = mesh.top().num_vertices();
        let samples: Vec<CMat> = (0..nv)
            .into_par_iter()
            .map(|v| f(&mesh.root_point(v)))
            .collect();
        let (rows, cols) = samples.first().map(|m| m.shape()).unwrap_or((0, 0));
        Self::general(mesh, rows, cols, samples)
    }

    /// Samples a field defined in terms of ambient coordinates.
    pub fn from_coords(mesh: Mesh, f: impl Fn(&[f64]) -> CMat + Sync) -> Self {
        let root = mesh.root.clone();
        Self::sample(mesh, move |p| f(&root.point_coords(p)))
    }

    pub fn constant(mesh: Mesh, m: CMat) -> Self {
        let nv = mesh.top().num_vertices();
        let (r, c_) = m.shape();
        Self::general(mesh, r, c_, vec![m; nv])
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n(&self) -> usize {
        self.rows
    }

    pub fn samples(&self) -> &[CMat] {
        &self.samples
    }

    /// Evaluates at a point of the top complex.
    pub fn eval_top(&self, q: &BarycentricPoint) -> CMat {
        let mut out = linalg::zeros(self.rows, self.cols);
        for (v, w) in q.weights(self.mesh.top()) {
            out += &self.samples[v] * c(w);
        }
        out
    }

    /// Re-expresses the field on a finer mesh (exact for PL data).
    pub fn resample(&self, finer: &Mesh) -> MatrixField {
        let samples: Vec<CMat> = (0..finer.top().num_vertices())
            .into_par_iter()
            .map(|v| self.eval(&finer.root_point(v)))
            .collect();
        Self::general(finer.clone(), self.rows, self.cols, samples)
    }

    pub fn rank_profile(&self, tol: f64) -> Result<RankProfile> {
        rank_profile(self, &self.mesh, tol, 0)
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| {
            Error::InvalidField(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        Self::from_json_value(&v, base_dir)
    }

    pub fn from_json_value(v: &Value, base_dir: Option<&Path>) -> Result<Self> {
        let complex = match v.get("complex") {
            Some(Value::String(path)) => {
                let p = base_dir.map(|d| d.join(path)).unwrap_or_else(|| path.into());
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::InvalidComplex(format!("{}: {e}", p.display())))?;
                Complex::from_json(&text)?
            }
            Some(obj @ Value::Object(_)) => Complex::from_json(&obj.to_string())?,
            _ => return Err(Error::InvalidField("missing complex".into())),
        };
        let n = v
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidField("missing n".into()))? as usize;
        let raw = v
            .get("samples")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidField("missing samples".into()))?;
        let samples = raw
            .iter()
            .map(|s| parse_hermitian(s, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(Mesh::new(complex), samples)
    }

    pub fn to_json_value(&self) -> Value {
        let samples: Vec<Value> = self
            .samples
            .iter()
            .map(|m| {
                Value::Array(
                    (0..m.nrows())
                        .map(|i| {
                            Value::Array(
                                (0..m.ncols())
                                    .map(|j| serde_json::json!([m[(i, j)].re, m[(i, j)].im]))
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        serde_json::json!({
            "complex": self.mesh.top().to_json_value(),
            "n": self.rows,
            "samples": samples,
        })
    }
}

fn parse_entry(v: &Value) -> Result<num_complex::Complex64> {
    match v {
        Value::Number(x) => Ok(c(x.as_f64().unwrap_or(f64::NAN))),
        Value::Array(p) if p.len() == 2 => {
            let re = p[0].as_f64();
            let im = p[1].as_f64();
            match (re, im) {
                (Some(re), Some(im)) => Ok(num_complex::Complex64::new(re, im)),
                _ => Err(Error::InvalidField("non-numeric entry".into())),
            }
        }
        _ => Err(Error::InvalidField(format!("bad matrix entry {v}"))),
    }
}

/// Accepts a flat row-major list of `n*n` entries, a list of full rows, or a
/// ragged lower triangle; the upper triangle is filled by conjugation.
fn parse_hermitian(v: &Value, n: usize) -> Result<CMat> {
    let items = v
        .as_array()
        .ok_or_else(|| Error::InvalidField("sample is not an array".into()))?;
    let mut m = linalg::zeros(n, n);
    let nested = items.first().map(|x| matches!(x, Value::Array(r) if r.iter().all(|e| e.is_array()) && !r.is_empty() && !(r.len() == 2 && r.iter().all(Value::is_number)))).unwrap_or(false);
    if !nested && items.len() == n * n {
        for (k, e) in items.iter().enumerate() {
            m[(k / n, k % n)] = parse_entry(e)?;
        }
        return Ok(m);
    }
    if items.len() != n {
        return Err(Error::InvalidField(format!("expected {n} rows")));
    }
    let mut seen = vec![vec![false; n]; n];
    for (i, row) in items.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::InvalidField("row is not an array".into()))?;
        if row.len() != n && row.len() != i + 1 {
            return Err(Error::InvalidField(format!("row {i} has length {}", row.len())));
        }
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = parse_entry(e)?;
            seen[i][j] = true;
        }
    }
    for i in 0..n {
        for j in 0..n {
            if !seen[i][j] {
                m[(i, j)] = m[(j, i)].conj();
            }
        }
    }
    Ok(m)
}

impl Field for MatrixField {
    fn root(&self) -> &Arc<Complex> {
        &self.mesh.root
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn eval(&self, p: &BarycentricPoint) -> CMat {
        self.eval_top(&self.mesh.locate(p))
    }
}

type PointFn = dyn Fn(&BarycentricPoint) -> CMat + Send + Sync;

/// Field defined by a pointwise recipe.
#[derive(Clone)]
pub struct FnField {
    root: Arc<Complex>,
    rows: usize,
    cols: usize,
    f: Arc<PointFn>,
}

impl FnField {
    pub fn new(
        root: Arc<Complex>,
        rows: usize,
        cols: usize,
        f: impl Fn(&BarycentricPoint) -> CMat + Send + Sync + 'static,
    ) -> Self {
        FnField {
            root,
            rows,
            cols,
            f: Arc::new(f),
        }
    }
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnField({}x{})", self.rows, self.cols)
    }
}

impl Field for FnField {
    fn root(&self) -> &Arc<Complex> {
        &self.root
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn eval(&self, p: &BarycentricPoint) -> CMat {
        (self.f)(p)
    }
}

/// Pointwise `f(a(x))` for Hermitian `a`.
pub fn map_spectrum(
    a: Arc<dyn Field>,
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> FnField {
    let (n, _) = a.shape();
    let root = a.root().clone();
    FnField::new(root, n, n, move |p| {
        linalg::funcalc(&a.eval(p), &f).unwrap_or_else(|_| linalg::zeros(n, n))
    })
}

/// Pointwise `(a(x) - eps)_+`.
pub fn cutdown_field(a: Arc<dyn Field>, eps: f64) -> FnField {
    map_spectrum(a, move |t| (t - eps).max(0.0))
}

/// Sampling grid of root points.
#[derive(Clone, Debug)]
pub struct Grid {
    pub points: Vec<BarycentricPoint>,
}

impl Grid {
    /// Vertices and barycenters of the twice-subdivided root.
    pub fn standard(root: &Complex) -> Grid {
        let mesh = Mesh::new(root.clone()).refined_to(2);
        let top = mesh.top();
        let points = (0..top.num_simplices())
            .map(|s| mesh.to_root(&BarycentricPoint::barycenter(top, s)))
            .collect();
        Grid { points }
    }

    /// Standard grid plus the vertices and barycenters of the mesh's top level.
    pub fn for_mesh(mesh: &Mesh) -> Grid {
        let mut g = Grid::standard(&mesh.root);
        if mesh.depth() > 2 {
            let top = mesh.top();
            g.points.extend(
                top.top_simplices()
                    .map(|s| mesh.to_root(&BarycentricPoint::barycenter(top, s))),
            );
            g.points
                .extend((0..top.num_vertices()).map(|v| mesh.root_point(v)));
        }
        g
    }

    /// `count` random points of the root, uniform within a uniformly chosen
    /// top simplex.
    pub fn random(root: &Complex, count: usize, rng: &mut impl Rng) -> Grid {
        let tops: Vec<usize> = root.top_simplices().collect();
        let points = (0..count)
            .map(|_| {
                let s = tops[rng.gen_range(0..tops.len())];
                let m = root.simplex(s).len();
                let mut w: Vec<f64> = (0..m).map(|_| -rng.gen_range(1e-12f64..1.0).ln()).collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= t);
                BarycentricPoint { simplex: s, coords: w }
            })
            .collect();
        Grid { points }
    }

    pub fn extend(mut self, other: Grid) -> Grid {
        self.points.extend(other.points);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sorted eigenvalues with multiplicity, clamped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumMultiset(Vec<f64>);

impl SpectrumMultiset {
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| a.total_cmp(b));
        SpectrumMultiset(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn spectrum_multiset(a: &dyn Field, p: &BarycentricPoint) -> Result<SpectrumMultiset> {
    Ok(SpectrumMultiset::new(Eigh::new(&a.eval(p))?.values))
}

/// Bottleneck distance between multisets of reals; pairing sorted lists is
/// optimal on the line.
pub fn multiset_distance(a: &SpectrumMultiset, b: &SpectrumMultiset) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Integer rank data of a field on the simplices of a mesh's top level.
#[derive(Clone, Debug)]
pub struct RankProfile {
    pub mesh: Mesh,
    /// Rank on each open simplex of `mesh.top()`.
    pub ranks: Vec<usize>,
    /// Distinct rank values `n_1 < ... < n_k`.
    pub values: Vec<usize>,
    pub tol: f64,
}

impl RankProfile {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn complex(&self) -> &Complex {
        self.mesh.top()
    }

    /// Rank at a root point (rank of its carrier simplex).
    pub fn rank_at(&self, p: &BarycentricPoint) -> usize {
        self.ranks[self.mesh.locate(p).simplex]
    }

    /// Index `i` (0-based) with `values[i] == rank` of simplex `s`.
    pub fn stratum(&self, s: usize) -> usize {
        self.values.binary_search(&self.ranks[s]).expect("rank value listed")
    }

    /// `H_i = {rank <= n_i}` (closed).
    pub fn h(&self, i: usize) -> Subcomplex {
        let t = self.values[i];
        Subcomplex::from_mask(self.complex(), self.ranks.iter().map(|&r| r <= t).collect())
            .expect("lower semicontinuous rank gives a subcomplex")
    }

    /// `G_i = {rank > n_i}` as a set of open simplices.
    pub fn g(&self, i: usize) -> Vec<bool> {
        let t = self.values[i];
        self.ranks.iter().map(|&r| r > t).collect()
    }

    /// `F_i = {rank == n_i}` as a set of open simplices.
    pub fn f(&self, i: usize) -> Vec<bool> {
        let t = self.values[i];
        self.ranks.iter().map(|&r| r == t).collect()
    }

    /// Closure of `F_i`.
    pub fn f_closure(&self, i: usize) -> Subcomplex {
        let mask = self.f(i);
        Subcomplex::closure_of(self.complex(), (0..mask.len()).filter(|&s| mask[s]))
    }

    /// A face whose rank exceeds that of a cofacet, if any.
    pub fn lsc_violation(&self) -> Option<usize> {
        let k = self.complex();
        (0..k.num_simplices()).find(|&s| k.cofacets(s).iter().any(|&c_| self.ranks[s] > self.ranks[c_]))
    }
}

/// Ranks at simplex barycenters of `mesh` (which must refine the field's
/// root), refined up to `max_subdivisions` extra times until lower
/// semicontinuous across faces.
pub fn rank_profile(a: &dyn Field, mesh: &Mesh, tol: f64, max_subdivisions: usize) -> Result<RankProfile> {
    let mut mesh = mesh.clone();
    let mut extra = 0;
    loop {
        let top = mesh.top();
        let ranks: Vec<usize> = (0..top.num_simplices())
            .into_par_iter()
            .map(|s| {
                let p = mesh.to_root(&BarycentricPoint::barycenter(top, s));
                Eigh::new(&a.eval(&p)).map(|e| e.rank(tol))
            })
            .collect::<Result<_>>()?;
        let mut values = ranks.clone();
        values.sort_unstable();
        values.dedup();
        let prof = RankProfile {
            mesh: mesh.clone(),
            ranks,
            values,
            tol,
        };
        match prof.lsc_violation() {
            None => return Ok(prof),
            Some(s) if extra >= max_subdivisions => return Err(Error::UnresolvedCrossing(s)),
            Some(_) => {
                mesh = mesh.refined();
                extra += 1;
            }
        }
    }
}

/// Sup of the operator-norm distance over a grid. A lower bound for the
/// true sup norm.
pub fn sup_distance(a: &dyn Field, b: &dyn Field, grid: &Grid) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if !same_root(a.root(), b.root()) {
        return Err(Error::ShapeMismatch("fields live on different complexes".into()));
    }
    Ok(grid
        .points
        .par_iter()
        .map(|p| linalg::op_norm(&(a.eval(p) - b.eval(p))))
        .reduce(|| 0.0, f64::max))
}

pub fn same_root(a: &Arc<Complex>, b: &Arc<Complex>) -> bool {
    Arc::ptr_eq(a, b) || (a.vertices() == b.vertices() && a.simplices() == b.simplices())
}

/// Smallest eigenvalue over a grid (PSD check).
pub fn min_eigenvalue(a: &dyn Field, grid: &Grid) -> Result<f64> {
    grid.points
        .par_iter()
        .map(|p| Eigh::new(&a.eval(p)).map(|e| e.values.first().copied().unwrap_or(0.0)))
        .try_reduce(|| f64::INFINITY, |x, y| Ok(x.min(y)))
}

/// Result of [`eps_cutdown`].
#[derive(Clone, Debug)]
pub struct Cutdown {
    pub field: MatrixField,
    /// Grid estimate of `sup ||PL result - (a(x) - eps)_+||`.
    pub gap: f64,
}

/// PL field with vertex values `(a(v) - eps)_+` after `refine` subdivisions.
pub fn eps_cutdown(a: &MatrixField, eps: f64, refine: usize) -> Result<Cutdown> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidField("eps must be positive".into()));
    }
    let mesh = a.mesh().refined_to(a.mesh().depth() + refine);
    let n = a.n();
    let field = MatrixField::sample(mesh.clone(), |p| {
        linalg::funcalc(&a.eval(p), |t| (t - eps).max(0.0)).unwrap_or_else(|_| linalg::zeros(n, n))
    });
    let exact = cutdown_field(Arc::new(a.clone()), eps);
    let gap = sup_distance(&field, &exact, &Grid::for_mesh(&mesh))?;
    Ok(Cutdown { field, gap })
}

/// Output of [`approximate_in_subdivision`].
#[derive(Clone)]
pub struct DenseApproximation {
    /// PL interpolant of `(a - eps/2)_+`.
    pub b: MatrixField,
    /// `(b - eps/4)_+`, evaluated pointwise.
    pub a_tilde: FnField,
    pub subdivisions: usize,
    /// Grid estimate of `||b - (a - eps/2)_+||`.
    pub error: f64,
}

/// Subdivides until the PL interpolant `b` of `(a - eps/2)_+` is within
/// `eps/4` of it on the grid, and returns `(b - eps/4)_+`.
pub fn approximate_in_subdivision(a: Arc<dyn Field>, eps: f64, max_subdivisions: usize) -> Result<DenseApproximation> {
    let half = Arc::new(cutdown_field(a.clone(), eps / 2.0));
    let mut mesh = Mesh::from_arc(a.root().clone());
    loop {
        let h = half.clone();
        let b = MatrixField::sample(mesh.clone(), move |p| h.eval(p));
        let grid = Grid::for_mesh(&mesh).extend(Grid::for_mesh(&mesh.refined()));
        let error = sup_distance(&b, half.as_ref(), &grid)?;
        if error < eps / 4.0 {
            let bb: Arc<dyn Field> = Arc::new(b.clone());
            let a_tilde = cutdown_field(bb, eps / 4.0);
            return Ok(DenseApproximation {
                b,
                a_tilde,
                subdivisions: mesh.depth(),
                error,
            });
        }
        if mesh.depth() >= max_subdivisions {
            return Err(Error::BudgetExceeded(max_subdivisions));
        }
        mesh = mesh.refined();
    }
}

/// Random PL field whose vertex values are `0`, positive on a fixed subspace
/// `S1`, or positive on a fixed `S ⊃ S1`; at most three rank values.
pub fn random_stratified(mesh: Mesh, n: usize, rng: &mut impl Rng) -> MatrixField {
    let r2 = rng.gen_range(1..=n);
    let r1 = rng.gen_range(0..r2);
    let u = linalg::random_unitary(n, rng);
    let s1 = u.columns(0, r1).clone_owned();
    let s = u.columns(0, r2).clone_owned();
    let nv = mesh.top().num_vertices();
    let samples = (0..nv)
        .map(|_| match rng.gen_range(0..3) {
            0 => linalg::zeros(n, n),
            1 => linalg::random_psd_on(&s1, 0.5, 2.0, rng),
            _ => linalg::random_psd_on(&s, 0.5, 2.0, rng),
        })
        .collect();
    MatrixField::general(mesh, n, n, samples)
}
