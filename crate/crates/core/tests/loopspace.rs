use morse_conley::connections::{enumerate_connections, ConnectionConfig};
use morse_conley::critical::{choose_rho, find_critical_points, SearchConfig};
use morse_conley::morse_complex::build_complex;
use morse_conley::semiflow::{FlowParams, Semiflow};
use morse_conley::systems::RiemannianSystem;

#[test]
fn loopspace_morse_homology_matches_circle() {
    let flow = Semiflow::new(RiemannianSystem::loopspace_circle(16), FlowParams::default());
    let t = std::time::Instant::now();
    let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
    reg.separation = choose_rho(&reg, &flow, 64, 1).unwrap().rho;
    eprintln!("{} points {:?}", reg.points.len(), t.elapsed());
    let conns = enumerate_connections(&flow, &reg, &ConnectionConfig::default()).unwrap();
    let mc = build_complex(&reg, &conns).unwrap();
    mc.check_square_zero().unwrap();
    let h: Vec<usize> = mc.homology().unwrap().iter().map(|g| g.betti).collect();
    eprintln!("{:?}", t.elapsed());
    assert_eq!(h, vec![1, 1]);
}
