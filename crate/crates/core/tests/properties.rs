use std::collections::BTreeMap;
use std::sync::Arc;

use cuntzlab::approximant::{well_supported_approximant, Thresholds};
use cuntzlab::bundles::{align_frames, extend_frame, gram_defect, FrameField};
use cuntzlab::cuntz::{decide_subequivalence, point_witness, ComparisonVerdict, Mode};
use cuntzlab::linalg::{self, CMat, Eigh};
use cuntzlab::matfield::{cutdown_field, multiset_distance, random_stratified, rank_profile, Field, Grid, MatrixField, SpectrumMultiset};
use cuntzlab::simplicial::{BarycentricPoint, Complex, Mesh, Subcomplex};
use cuntzlab::traces::{drr, ldf_value, StageAlgebra, StageBlock, TraceSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn complex(kind: u8) -> Complex {
    match kind % 5 {
        0 => Complex::interval(3),
        1 => Complex::circle(4),
        2 => Complex::standard_simplex(2),
        3 => Complex::octahedron(),
        _ => Complex::points(3),
    }
}

fn field(kind: u8, n: usize, seed: u64) -> MatrixField {
    random_stratified(Mesh::new(complex(kind)), n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rank(m: &CMat) -> usize {
    Eigh::new(m).unwrap().rank(1e-8)
}

fn brute_force(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm over all pairings
    let mut c = vec![0; n];
    let cost = |p: &[usize]| (0..n).map(|i| (a[i] - b[p[i]]).abs()).fold(0.0, f64::max);
    best = best.min(cost(&idx));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                idx.swap(0, i);
            } else {
                idx.swap(c[i], i);
            }
            best = best.min(cost(&idx));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subdivision_keeps_vertices_and_adds_barycenters(kind in 0u8..5) {
        let k = complex(kind);
        let sub = k.barycentric_subdivide();
        let nk = sub.complex;
        for v in 0..k.num_vertices() {
            prop_assert!(nk.vertices().iter().any(|w| w == k.vertex(v)));
        }
        let centers: Vec<Vec<f64>> = (0..k.num_simplices()).map(|s| k.barycenter_coords(s)).collect();
        for w in nk.vertices() {
            let hit = centers.iter().any(|c| c.iter().zip(w).all(|(x, y)| (x - y).abs() < 1e-12));
            prop_assert!(hit);
        }
        for s in 0..nk.num_simplices() {
            for f in nk.faces(s) {
                prop_assert!(nk.simplex_index(nk.simplex(f)).is_some());
            }
        }
    }

    #[test]
    fn multiset_distance_is_bottleneck(a in prop::collection::vec(0.0f64..3.0, 1..=6), seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| if r.gen_bool(0.3) { a[r.gen_range(0..a.len())] } else { r.gen_range(0.0..3.0) }).collect();
        let d = multiset_distance(&SpectrumMultiset::new(a.clone()), &SpectrumMultiset::new(b.clone())).unwrap();
        prop_assert!((d - brute_force(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn fields_stay_positive(kind in 0u8..5, n in 1usize..6, seed: u64, eps in 0.0f64..1.5) {
        let a: Arc<dyn Field> = Arc::new(field(kind, n, seed));
        let grid = Grid::random(a.root(), 200, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let cut = cutdown_field(a.clone(), eps);
        for x in &grid.points {
            prop_assert!(Eigh::new(&a.eval(x)).unwrap().values[0] >= -1e-9);
            prop_assert!(Eigh::new(&cut.eval(x)).unwrap().values[0] >= -1e-9);
        }
    }

    #[test]
    fn cutdown_rank_is_monotone(kind in 0u8..5, n in 1usize..6, seed: u64, e1 in 0.0f64..2.0, e2 in 0.0f64..2.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a: Arc<dyn Field> = Arc::new(field(kind, n, seed));
        let (c1, c2) = (cutdown_field(a.clone(), lo), cutdown_field(a.clone(), hi));
        for x in &Grid::standard(a.root()).points {
            prop_assert!(rank(&c1.eval(x)) >= rank(&c2.eval(x)));
        }
    }

    #[test]
    fn rank_is_lower_semicontinuous(kind in 0u8..5, n in 1usize..6, seed: u64) {
        let a = field(kind, n, seed);
        let p = rank_profile(&a, a.mesh(), 1e-8, 0).unwrap();
        prop_assert!(p.lsc_violation().is_none());
        let k = p.complex();
        for s in 0..k.num_simplices() {
            for &c in k.cofacets(s) {
                prop_assert!(p.ranks[s] <= p.ranks[c]);
            }
        }
    }

    #[test]
    fn thresholds_are_monotone(eta in prop::collection::vec(0.01f64..5.0, 1..6), eps in 0.001f64..0.5) {
        let mut eta = eta;
        eta.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let t = Thresholds::from_eta(eta, eps);
        for w in t.lower.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for (l, u) in t.lower.iter().zip(&t.upper) {
            prop_assert!(l <= u);
        }
    }

    #[test]
    fn approximant_is_below_with_same_values(kind in 0u8..4, n in 1usize..5, seed: u64) {
        let a = field(kind, n, seed);
        let f = well_supported_approximant(&a, 0.05, 1e-8).unwrap();
        let p = rank_profile(&a, a.mesh(), 1e-8, 0).unwrap();
        prop_assert_eq!(&f.values, &p.values);
        let grid = Grid::random(&a.mesh().root, 100, &mut ChaCha8Rng::seed_from_u64(seed));
        for x in &grid.points {
            prop_assert!(Eigh::new(&(a.eval(x) - f.eval(x))).unwrap().values[0] >= -1e-9);
        }
    }

    #[test]
    fn aligned_frames_are_orthonormal(kind in 0u8..4, w in 1usize..4, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(complex(kind));
        let n = w + 3;
        let k = mesh.top();
        let mut frames: Vec<Option<CMat>> = (0..k.num_vertices()).map(|_| Some(linalg::random_unitary(n, &mut r).columns(0, w).clone_owned())).collect();
        align_frames(k, &mut frames);
        let f = FrameField::new(mesh.clone(), n, w, frames).unwrap();
        for x in &Grid::random(&mesh.root, 200, &mut r).points {
            if let Some(m) = f.eval(x) {
                prop_assert!(gram_defect(&m) < 1e-8);
            }
        }
    }

    #[test]
    fn extension_agrees_on_y(kind in 0u8..3, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(complex(kind));
        let k = mesh.top();
        let (n, l) = (4, 2);
        let given: Vec<usize> = (0..k.num_vertices()).filter(|_| r.gen_bool(0.4)).collect();
        let mut frames = vec![None; k.num_vertices()];
        for &v in &given {
            frames[v] = Some(linalg::random_unitary(n, &mut r).columns(0, l).clone_owned());
        }
        let y = Subcomplex::closure_of(k, given.iter().copied());
        let input = FrameField::new(mesh.clone(), n, l, frames).unwrap();
        let out = extend_frame(&input, &y, seed).unwrap();
        for &v in &given {
            let x = BarycentricPoint::vertex(v);
            prop_assert!((out.eval(&x).unwrap() - input.eval(&x).unwrap()).norm() < 1e-8);
        }
        for x in &Grid::random(&mesh.root, 100, &mut r).points {
            prop_assert!(gram_defect(&out.eval(x).unwrap()) < 1e-8);
        }
    }

    #[test]
    fn point_witness_meets_budget(n in 1usize..6, extra in 0usize..3, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ra = r.gen_range(0..=n);
        let nb = n + extra;
        let a = linalg::random_psd(n, ra, 0.1, 3.0, &mut r);
        let b = linalg::random_psd(nb, r.gen_range(ra..=nb), 0.1, 3.0, &mut r);
        let v = point_witness(&a, &b, 1e-6).unwrap();
        prop_assert!(linalg::op_norm(&(&v * &b * v.adjoint() - &a)) < 1e-6);
    }

    #[test]
    fn witnesses_recompute_and_are_unitarily_invariant(n in 1usize..5, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(Complex::points(3));
        let ranks: Vec<usize> = (0..3).map(|_| r.gen_range(0..=n)).collect();
        let a = MatrixField::new(mesh.clone(), ranks.iter().map(|&k| linalg::random_psd(n, k, 0.5, 2.0, &mut r)).collect()).unwrap();
        let b = MatrixField::new(mesh.clone(), ranks.iter().map(|&k| linalg::random_psd(n, k + r.gen_range(0..=n - k), 0.5, 2.0, &mut r)).collect()).unwrap();
        let u = linalg::random_unitary(n, &mut r);
        let conj = |f: &MatrixField| MatrixField::new(mesh.clone(), f.samples().iter().map(|m| &u * m * u.adjoint()).collect()).unwrap();
        let v1 = decide_subequivalence(&a, &b, 1e-6, Mode::Strict, 1e-8, 0).unwrap();
        let v2 = decide_subequivalence(&conj(&a), &conj(&b), 1e-6, Mode::Strict, 1e-8, 0).unwrap();
        match (v1, v2) {
            (ComparisonVerdict::Witnessed(w1), ComparisonVerdict::Witnessed(w2)) => {
                prop_assert!(w1.residual < 1e-6);
                prop_assert!((w1.recompute() - w1.residual).abs() < 1e-14);
                prop_assert!((w1.residual - w2.residual).abs() < 1e-10);
            }
            (x, y) => prop_assert!(false, "{} / {}", x.label(), y.label()),
        }
    }

    #[test]
    fn jacobi_matches_eigh(n in 1usize..8, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = linalg::random_gaussian(n, n, &mut r);
        let h = linalg::hermitian_part(&g);
        let e = Eigh::new(&h).unwrap();
        let (vals, vecs) = linalg::jacobi_eigh(&h).unwrap();
        let scale = h.norm().max(1.0);
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        for (x, y) in e.values.iter().zip(&sorted) {
            prop_assert!((x - y).abs() < 1e-10 * scale);
        }
        prop_assert!((&h * &vecs - &vecs * linalg::diag(&vals)).norm() < 1e-10 * scale);
    }

    #[test]
    fn drr_of_sum_is_max(ranks in prop::collection::vec((0u8..5, 1usize..20), 1..5)) {
        let blocks: Vec<StageBlock> = ranks.iter().map(|&(k, r)| StageBlock { complex: Arc::new(complex(k)), n: r, rank: r }).collect();
        let each: Vec<f64> = blocks.iter().map(|b| drr(&StageAlgebra::new(vec![b.clone()]).unwrap())).collect();
        let all = drr(&StageAlgebra::new(blocks).unwrap());
        prop_assert_eq!(all, each.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn trace_mass_is_one(kind in 0u8..5, listed in prop::collection::vec(0.0f64..1.0, 0..3)) {
        let root = Arc::new(complex(kind));
        let tops: Vec<usize> = root.top_simplices().collect();
        // leave at least one simplex for the remainder
        let listed = &listed[..listed.len().min(tops.len() - 1)];
        let budget = 0.9 / listed.len().max(1) as f64;
        let weights: BTreeMap<usize, f64> = tops.iter().zip(listed).map(|(&s, &w)| (s, w * budget)).collect();
        let t = TraceSpec::new(root.clone(), &weights).unwrap();
        prop_assert!((t.total() - 1.0).abs() < 1e-12);
        let q: f64 = t.quadrature(&Mesh::from_arc(root)).iter().map(|p| p.1).sum();
        prop_assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ldf_is_additive_on_orthogonal_sums(kind in 0u8..4, n in 1usize..4, m in 1usize..4, seed: u64) {
        let a = field(kind, n, seed);
        let b = random_stratified(a.mesh().clone(), m, &mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let sum = MatrixField::new(
            a.mesh().clone(),
            a.samples().iter().zip(b.samples()).map(|(x, y)| {
                let mut out = linalg::zeros(n + m, n + m);
                out.view_mut((0, 0), (n, n)).copy_from(x);
                out.view_mut((n, n), (m, m)).copy_from(y);
                out
            }).collect(),
        ).unwrap();
        let tau = TraceSpec::lebesgue(a.mesh().root.clone());
        // values are normalised by matrix size
        let (sa, sb, ss) = (ldf_value(&tau, &a, 1e-8).unwrap(), ldf_value(&tau, &b, 1e-8).unwrap(), ldf_value(&tau, &sum, 1e-8).unwrap());
        let lhs = ss.value * (n + m) as f64;
        prop_assert!((lhs - sa.value * n as f64 - sb.value * m as f64).abs() < 1e-10);
        prop_assert!((ss.value - ss.trace_limit).abs() < 1e-2);
    }
}
