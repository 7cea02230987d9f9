use morse_conley::conley::*;
use morse_conley::critical::{choose_rho, find_critical_points, CritRegistry, SearchConfig};
use morse_conley::semiflow::{FlowParams, Semiflow};
use morse_conley::systems::RiemannianSystem;

fn setup(sys: RiemannianSystem) -> (Semiflow, CritRegistry) {
    let flow = Semiflow::new(sys, FlowParams::default());
    let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
    reg.separation = choose_rho(&reg, &flow, 64, 1).unwrap().rho;
    (flow, reg)
}

#[test]
fn pair_homology_is_a_point_class_in_the_index_degree() {
    for sys in [RiemannianSystem::sphere2(), RiemannianSystem::torus2()] {
        let (flow, reg) = setup(sys);
        for c in &reg.points {
            let pair = conley_pair(&flow, &reg, c.id, &ConleyConfig::default()).unwrap();
            let t = std::time::Instant::now();
            let h = conley_pair_homology_checked(&flow, &pair, 128).unwrap();
            let ranks: Vec<usize> = h.iter().map(|g| g.betti).collect();
            eprintln!("{} x{} ind {} eps {:.3} tau {:.4} -> {:?} ({:?})", flow.sys.name, c.id, c.index, pair.params.epsilon, pair.params.tau, ranks, t.elapsed());
            for (k, g) in h.iter().enumerate() {
                assert_eq!(g.betti, usize::from(k == c.index));
                assert!(g.torsion.is_empty());
            }
        }
    }
}

#[test]
fn axioms_hold_on_a_thousand_trajectories() {
    let (flow, reg) = setup(RiemannianSystem::torus2());
    for c in &reg.points {
        let pair = conley_pair(&flow, &reg, c.id, &ConleyConfig::default()).unwrap();
        let rep = verify_axioms(&flow, &pair, 1000, 3).unwrap();
        eprintln!("x{} {:?}", c.id, rep);
        assert!(rep.ok(), "{rep:?}");
    }
}

#[test]
fn leaf_distance_decays_exponentially() {
    let (flow, reg) = setup(RiemannianSystem::torus2());
    let saddle = reg.of_index(1)[0].id;
    let pair = conley_pair(&flow, &reg, saddle, &ConleyConfig::default()).unwrap();
    let probe = leaf_convergence_probe(&flow, &pair, 6, 12).unwrap();
    eprintln!("{probe:?}");
    assert!(probe.passes());
}
