use morse_conley::connections::*;
use morse_conley::critical::{choose_rho, find_critical_points, CritRegistry, SearchConfig};
use morse_conley::morse_complex::build_complex;
use morse_conley::semiflow::{FlowParams, Semiflow};
use morse_conley::systems::RiemannianSystem;

fn setup(sys: RiemannianSystem, params: FlowParams) -> (Semiflow, CritRegistry) {
    let flow = Semiflow::new(sys, params);
    let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
    reg.separation = choose_rho(&reg, &flow, 64, 1).unwrap().rho;
    (flow, reg)
}

#[test]
fn torus_connections_and_homology() {
    let (flow, reg) = setup(RiemannianSystem::torus2(), FlowParams::default());
    let t = std::time::Instant::now();
    let c = enumerate_connections(&flow, &reg, &ConnectionConfig::default()).unwrap();
    eprintln!("{:?}\n{}", t.elapsed(), connections_csv(&c));
    let mc = build_complex(&reg, &c).unwrap();
    let h: Vec<usize> = mc.homology().unwrap().iter().map(|g| g.betti).collect();
    assert_eq!(h, vec![1, 2, 1]);
    assert!(c.iter().all(|x| x.bracket_agrees()));
}
