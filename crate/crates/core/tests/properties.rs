use morse_conley::config::RunConfig;
use morse_conley::homology::*;
use morse_conley::raster::GridFile;
use morse_conley::semiflow::{FlowParams, Semiflow};
use morse_conley::systems::{finite_difference_check, LoopDiscretization, RiemannianSystem};
use num_bigint::BigInt;
use num_integer::Integer;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = IntegerMatrix> {
    prop::collection::vec(-6i64..=6, rows * cols)
        .prop_map(move |v| IntegerMatrix::from_rows(&v.chunks(cols.max(1)).take(rows).map(|r| r.to_vec()).collect::<Vec<_>>()))
}

fn sized_matrix() -> impl Strategy<Value = IntegerMatrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))
}

fn mask(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.55), n * n)
}

fn tops(l: &Lattice, n: usize, m: &[bool]) -> Vec<CellKey> {
    (0..n * n).filter(|&i| m[i]).map(|i| l.key(&[2 * (i % n) as i64 + 1, 2 * (i / n) as i64 + 1]).unwrap()).collect()
}

fn ranks(h: &[HomologyGroup]) -> Vec<(usize, Vec<u64>)> {
    let mut v: Vec<_> = h.iter().map(|g| (g.betti, g.torsion.clone())).collect();
    while v.last().is_some_and(|x| x.0 == 0 && x.1.is_empty()) {
        v.pop();
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snf_is_unimodular_and_divisible(a in sized_matrix()) {
        let s = smith_normal_form(&a);
        let d = s.d_matrix(a.rows, a.cols);
        prop_assert_eq!(s.u.mul(&a).mul(&s.v), d);
        let one = BigInt::from(1);
        prop_assert!(s.u.det() == one || s.u.det() == -one.clone());
        prop_assert!(s.v.det() == one || s.v.det() == -one);
        for w in s.diagonal[..s.rank].windows(2) {
            prop_assert!(w[1].is_multiple_of(&w[0]));
        }
        prop_assert_eq!(s.rank, a.rank());
    }

    #[test]
    fn determinant_is_multiplicative(a in matrix(3, 3), b in matrix(3, 3)) {
        prop_assert_eq!(a.mul(&b).det(), a.det() * b.det());
    }

    #[test]
    fn euler_characteristic_is_additive(mx in mask(5), ma in mask(5)) {
        let l = Lattice::new(vec![5, 5], vec![false, false]);
        let sub: Vec<bool> = mx.iter().zip(&ma).map(|(x, a)| *x && *a).collect();
        let x = CubicalComplex::from_cells(l.clone(), tops(&l, 5, &mx));
        let a = CubicalComplex::from_cells(l.clone(), tops(&l, 5, &sub));
        let chi = |h: &[HomologyGroup]| h.iter().map(|g| if g.degree % 2 == 0 { g.betti as i64 } else { -(g.betti as i64) }).sum::<i64>();
        let hx = cubical_homology(&x).unwrap();
        let ha = cubical_homology(&a).unwrap();
        let hxa = relative_homology(&x, &a).unwrap();
        prop_assert_eq!(chi(&hx), x.euler_characteristic());
        prop_assert_eq!(chi(&hx), chi(&ha) + chi(&hxa));
    }

    #[test]
    fn homology_survives_refinement(m in mask(5)) {
        let l = Lattice::new(vec![5, 5], vec![false, false]);
        let fine = Lattice::new(vec![10, 10], vec![false, false]);
        let mut fm = vec![false; 100];
        for i in 0..25 {
            if m[i] {
                let (x, y) = (i % 5, i / 5);
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    fm[(2 * y + b) * 10 + 2 * x + a] = true;
                }
            }
        }
        let h = cubical_homology(&CubicalComplex::from_cells(l.clone(), tops(&l, 5, &m))).unwrap();
        let hf = cubical_homology(&CubicalComplex::from_cells(fine.clone(), tops(&fine, 10, &fm))).unwrap();
        prop_assert_eq!(ranks(&h), ranks(&hf));
    }

    #[test]
    fn cubical_boundary_squares_to_zero(coeffs in prop::collection::vec(-3i64..=3, 16)) {
        let l = Lattice::new(vec![4, 4], vec![true, true]);
        let x = CubicalComplex::full(l.clone());
        let c: KeyChain = l.top_cells().into_iter().zip(coeffs).filter(|(_, v)| *v != 0).collect();
        prop_assert!(x.key_boundary(&x.key_boundary(&c)).is_empty());
    }

    #[test]
    fn grid_files_roundtrip(m in mask(7)) {
        let g = GridFile {
            lattice: "torus".into(),
            dims: vec![7, 7],
            spacing: vec![1.0 / 7.0; 2],
            origin: vec![0.0; 2],
            periodic: vec![true; 2],
            sets: vec![("F_0".into(), m.clone()), ("F_1".into(), m.iter().map(|b| !b).collect())],
        };
        prop_assert_eq!(GridFile::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>()) {
        let loops = RiemannianSystem::loopspace(LoopDiscretization { base_dim: 1, num_points: 8, kappa: 0.1, kappa_t: 0.05, winding_class: vec![0] });
        for sys in [RiemannianSystem::circle(), RiemannianSystem::sphere2(), RiemannianSystem::torus2(), loops] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sys.point(sys.random_point(&mut rng));
            prop_assert!(finite_difference_check(&sys, &p, 1e-5) < 1e-6);
        }
    }

    #[test]
    fn retraction_is_idempotent(seed in any::<u64>()) {
        for sys in [RiemannianSystem::sphere2(), RiemannianSystem::torus2(), RiemannianSystem::loopspace_circle(8)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sys.random_point(&mut rng);
            let v = sys.random_tangent(&p, &mut rng);
            let q = sys.retract(&p, &v);
            let zero = vec![0.0; q.len()];
            prop_assert!(sys.distance(&sys.retract(&q, &zero), &q) <= 1e-10);
        }
    }

    #[test]
    fn loop_action_is_shift_invariant_and_bounded(seed in any::<u64>(), shift in 1usize..8) {
        let sys = RiemannianSystem::loopspace_circle(8);
        let l = sys.loop_data().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = sys.random_point(&mut rng);
        let mut r = q.clone();
        r.rotate_left(shift);
        prop_assert!((l.action(&q) - l.action(&r)).abs() < 1e-12);
        prop_assert!(l.action(&q) >= -l.kappa - 1e-12);
    }

    #[test]
    fn config_canonical_form_is_stable(grid in 1usize..512, seed in any::<u64>(), eps in 0.001f64..1.0) {
        let text = format!("seed = {seed}\n[conley]\nepsilon = {eps}\n[filtration]\ngrid = {grid}\n");
        let a = RunConfig::parse(&text).unwrap();
        let b = RunConfig::parse(a.canonical().as_str()).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(b.grid, grid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_is_a_monotone_semigroup(seed in any::<u64>(), s in 0.0f64..0.5, t in 0.0f64..0.5) {
        for sys in [RiemannianSystem::circle(), RiemannianSystem::sphere2(), RiemannianSystem::torus2()] {
            let flow = Semiflow::new(sys, FlowParams::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = flow.sys.random_point(&mut rng);
            let a = flow.flow(&flow.flow(&p, s).unwrap(), t).unwrap();
            let b = flow.flow(&p, s + t).unwrap();
            prop_assert!(flow.sys.distance(&a, &b) < 1e-6);
            prop_assert!(flow.sys.value(&b) <= flow.sys.value(&p) + 1e-9);
        }
    }
}
