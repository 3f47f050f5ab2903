//! Dense complex linear algebra helpers.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn zeros(r: usize, c_: usize) -> CMat {
    CMat::zeros(r, c_)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag(values: &[f64]) -> CMat {
    let n = values.len();
    CMat::from_fn(n, n, |i, j| if i == j { c(values[i]) } else { c(0.0) })
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending and
/// eigenvectors as matching columns.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigh {
    pub fn new(m: &CMat) -> Result<Eigh> {
        let n = m.nrows();
        if n == 0 {
            return Ok(Eigh {
                values: vec![],
                vectors: zeros(0, 0),
            });
        }
        let h = hermitian_part(m);
        let scale = h.norm().max(1e-300);
        let (vals, vecs) = match SymmetricEigen::try_new(h.clone(), 1e-15, 10_000) {
            Some(eig) if (&h * &eig.eigenvectors - &eig.eigenvectors * diag(eig.eigenvalues.as_slice())).norm() <= 1e-12 * scale => {
                (eig.eigenvalues.iter().copied().collect::<Vec<f64>>(), eig.eigenvectors)
            }
            // the QR path occasionally loses accuracy on nearly diagonal input
            _ => jacobi_eigh(&h)?,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let values = order.iter().map(|&i| vals[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, k| vecs[(r, order[k])]);
        Ok(Eigh { values, vectors })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Count of eigenvalues strictly above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.values.iter().filter(|&&l| l > tol).count()
    }

    /// `sum_k f(l_k) v_k v_k^*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.n();
        let mut out = zeros(n, n);
        for k in 0..n {
            let w = f(self.values[k]);
            if w == 0.0 {
                continue;
            }
            let v = self.vectors.column(k);
            out += (&v * v.adjoint()) * c(w);
        }
        out
    }

    /// `sum_k f(k, l_k) v_k v_k^*`.
    pub fn apply_indexed(&self, f: impl Fn(usize, f64) -> f64) -> CMat {
        let n = self.n();
        let mut out = zeros(n, n);
        for k in 0..n {
            let w = f(k, self.values[k]);
            if w != 0.0 {
                let v = self.vectors.column(k);
                out += (&v * v.adjoint()) * c(w);
            }
        }
        out
    }

    /// Columns of eigenvectors whose eigenvalues satisfy `keep`.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> CMat {
        let idx: Vec<usize> = (0..self.n()).filter(|&k| keep(self.values[k])).collect();
        CMat::from_fn(self.n(), idx.len(), |r, j| self.vectors[(r, idx[j])])
    }

    pub fn select_indexed(&self, keep: impl Fn(usize, f64) -> bool) -> CMat {
        let idx: Vec<usize> = (0..self.n()).filter(|&k| keep(k, self.values[k])).collect();
        CMat::from_fn(self.n(), idx.len(), |r, j| self.vectors[(r, idx[j])])
    }

    /// The `m` eigenvectors with the largest eigenvalues, largest first.
    pub fn top(&self, m: usize) -> CMat {
        let n = self.n();
        let m = m.min(n);
        CMat::from_fn(n, m, |r, j| self.vectors[(r, n - 1 - j)])
    }
}

pub fn funcalc(m: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat> {
    Ok(Eigh::new(m)?.apply(f))
}

/// Operator norm of a Hermitian matrix.
pub fn herm_norm(m: &CMat) -> f64 {
    match Eigh::new(m) {
        Ok(e) => e.values.iter().fold(0.0, |a: f64, l| a.max(l.abs())),
        Err(_) => op_norm(m),
    }
}

/// Operator norm (largest singular value) of an arbitrary matrix.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // the Gram matrix is Hermitian and cheaper to diagonalise
    let g = if m.nrows() <= m.ncols() {
        m * m.adjoint()
    } else {
        m.adjoint() * m
    };
    match Eigh::new(&g) {
        Ok(e) => e.values.last().copied().unwrap_or(0.0).max(0.0).sqrt(),
        Err(_) => m.clone().svd(false, false).singular_values.max(),
    }
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn min_singular_value(m: &CMat) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Ordered Gram-Schmidt on the columns (twice, for stability). Columns whose
/// residual norm drops below `1e-300` are left as zero.
pub fn gram_schmidt(m: &CMat) -> CMat {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i).clone_owned();
                let proj = qi.dotc(&q.column(j));
                let upd = q.column(j) - qi * proj;
                q.set_column(j, &upd);
            }
        }
        let nrm = q.column(j).norm();
        if nrm > 1e-300 {
            let upd = q.column(j) / c(nrm);
            q.set_column(j, &upd);
        }
    }
    q
}

/// Nearest matrix with orthonormal columns, `U V^*` from the SVD.
pub fn polar(m: &CMat) -> CMat {
    if m.ncols() == 0 {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    u * vt
}

/// Orthonormal basis of the column space, keeping directions with singular
/// value above `tol` (largest first).
pub fn range_basis(m: &CMat, tol: f64) -> CMat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return zeros(m.nrows(), 0);
    }
    let g = m * m.adjoint();
    let e = Eigh::new(&g).expect("gram matrix");
    let k = e.values.iter().filter(|&&l| l > tol * tol).count();
    e.top(k)
}

/// Orthogonal projection onto the columns of an orthonormal frame.
pub fn frame_projection(f: &CMat) -> CMat {
    f * f.adjoint()
}

/// Zero-pads a square matrix to size `n`.
pub fn pad(m: &CMat, n: usize) -> CMat {
    let mut out = zeros(n, n);
    out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    out
}

pub fn pad_rows(m: &CMat, rows: usize) -> CMat {
    let mut out = zeros(rows, m.ncols());
    out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    out
}

pub fn top_left(m: &CMat, n: usize) -> CMat {
    m.view((0, 0), (n, n)).clone_owned()
}

/// Largest principal-angle sine between `range(p)` and `range(q)` in the sense
/// `||(1 - Q) P||` for projections `p`, `q`.
pub fn containment_defect(p: &CMat, q: &CMat) -> f64 {
    let n = p.nrows();
    op_norm(&((identity(n) - q) * p))
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi on the real symmetric
/// embedding `[[Re, -Im], [Im, Re]]`. Independent of the main eigensolver.
pub fn jacobi_eigenvalues(m: &CMat) -> Vec<f64> {
    let n = m.nrows();
    let h = hermitian_part(m);
    let mut a = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let size = 2 * n;
    for _sweep in 0..100 {
        let off: f64 = (0..size)
            .flat_map(|i| (0..size).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..size {
            for q in p + 1..size {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..size {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..size {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..size).map(|i| a[(i, i)]).collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    // each eigenvalue of the complex matrix appears twice
    vals.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Cyclic complex Jacobi for a Hermitian matrix: unsorted eigenvalues and
/// the matching unitary.
pub fn jacobi_eigh(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = h.nrows();
    let mut a = h.clone();
    let mut v = CMat::identity(n, n);
    let stop = (1e-14 * h.norm()).powi(2).max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].norm_sqr()).sum();
        if off <= stop {
            let vals = (0..n).map(|i| a[(i, i)].re).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r < 1e-300 {
                    continue;
                }
                // make the pivot real, then rotate as in the real case
                let ph = apq / r;
                for k in 0..n {
                    a[(k, q)] *= ph.conj();
                    v[(k, q)] *= ph.conj();
                }
                for k in 0..n {
                    a[(q, k)] *= ph;
                }
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = if theta == 0.0 { 1.0 } else { theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt()) };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * cs - akq * sn;
                    a[(k, q)] = akp * sn + akq * cs;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * cs - vkq * sn;
                    v[(k, q)] = vkp * sn + vkq * cs;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = apk * cs - aqk * sn;
                    a[(q, k)] = apk * sn + aqk * cs;
                }
            }
        }
    }
    Err(Error::EigensolverFailure)
}

pub fn random_gaussian(r: usize, c_: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(r, c_, |_, _| {
        let (a, b) = gaussian_pair(rng);
        Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
    })
}

fn gaussian_pair(rng: &mut impl Rng) -> (f64, f64) {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

pub fn random_unitary(n: usize, rng: &mut impl Rng) -> CMat {
    gram_schmidt(&random_gaussian(n, n, rng))
}

/// Random PSD matrix of exact rank `rank` with eigenvalues in `[lo, hi]`.
pub fn random_psd(n: usize, rank: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> CMat {
    let u = random_unitary(n, rng);
    let vals: Vec<f64> = (0..n)
        .map(|i| if i < rank { rng.gen_range(lo..=hi) } else { 0.0 })
        .collect();
    &u * diag(&vals) * u.adjoint()
}

/// Random PSD matrix whose range is exactly the span of the orthonormal
/// columns of `basis`, eigenvalues in `[lo, hi]`.
pub fn random_psd_on(basis: &CMat, lo: f64, hi: f64, rng: &mut impl Rng) -> CMat {
    let r = basis.ncols();
    let inner = random_unitary(r, rng);
    let vals: Vec<f64> = (0..r).map(|_| rng.gen_range(lo..=hi)).collect();
    let w = basis * inner;
    &w * diag(&vals) * w.adjoint()
}
