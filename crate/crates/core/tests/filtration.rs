use morse_conley::conley::{conley_pairs, ConleyConfig};
use morse_conley::connections::{enumerate_connections, ConnectionConfig};
use morse_conley::critical::{choose_rho, find_critical_points, SearchConfig};
use morse_conley::filtration::*;
use morse_conley::morse_complex::build_complex;
use morse_conley::semiflow::{FlowParams, Semiflow};
use morse_conley::systems::RiemannianSystem;
use std::time::Instant;

fn run(sys: RiemannianSystem, grids: &[usize], counts: &[usize]) {
    let flow = Semiflow::new(sys, FlowParams::default());
    let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
    reg.separation = choose_rho(&reg, &flow, 64, 1).unwrap().rho;
    let pairs = conley_pairs(&flow, &reg, &ConleyConfig::default()).unwrap();
    let cfg = FiltrationConfig::default();
    let filt = build_filtration(&flow, &reg, &pairs, &cfg).unwrap();
    eprintln!("times {:?}", filt.times);
    let t = Instant::now();
    let inv = check_invariants(&flow, &reg, &pairs, &filt, 1000, 7).unwrap();
    eprintln!("{inv:?} {:?}", t.elapsed());
    assert!(inv.ok());
    let conns = enumerate_connections(&flow, &reg, &ConnectionConfig::default()).unwrap();
    let mc = build_complex(&reg, &conns).unwrap();
    for &n in grids {
        let t = Instant::now();
        let r = rasterize_filtration(&flow, &reg, &filt, n, &cfg).unwrap();
        eprintln!("n={n} raster {:?} repairs {} refinements {}", t.elapsed(), r.repairs, r.refinements);
        let rep = cellular_report(&flow, &r, &pairs, &mc).unwrap();
        eprintln!("{:?} det {:?} {:?}", rep.relative_betti, rep.theta_det, t.elapsed());
        assert!(rep.concentrated(counts));
        assert!(rep.theta_isomorphism() && rep.intertwines);
    }
}

#[test]
fn torus_filtration_cellular() {
    run(RiemannianSystem::torus2(), &[128, 256], &[1, 2, 1]);
}

#[test]
fn sphere_filtration_cellular() {
    run(RiemannianSystem::sphere2(), &[64, 128], &[1, 0, 1]);
}
