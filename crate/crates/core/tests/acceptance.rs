//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

use morse_conley::config::RunConfig;
use morse_conley::conley::{conley_pair, conley_pair_homology, leaf_convergence_probe, verify_axioms};
use morse_conley::filtration::{
    build_filtration, cellular_report, check_invariants, inclusion_ranks, rasterize_filtration, sublevel_raster,
};
use morse_conley::homology::{cubical_homology, HomologyGroup};
use morse_conley::morse_complex::{build_complex, sublevel_inclusion};
use morse_conley::raster::GlobalGrid;
use morse_conley::reports::{self, orientation_robustness, Context};
use morse_conley::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

const SYSTEMS: [&str; 4] = ["circle", "sphere2", "torus2", "loopspace"];
const SURFACES: [&str; 3] = ["circle", "sphere2", "torus2"];

fn ctx(system: &str) -> Result<Context> {
    let mut cfg = RunConfig::default();
    cfg.set("system.name", system)?;
    Context::new(&cfg)
}

fn table(h: &[HomologyGroup]) -> Vec<usize> {
    let mut v: Vec<usize> = h.iter().map(|g| g.betti).collect();
    while v.last() == Some(&0) {
        v.pop();
    }
    v
}

fn torsion_free(h: &[HomologyGroup]) -> bool {
    h.iter().all(|g| g.torsion.is_empty())
}

type Outcome = Result<(bool, String)>;

fn c1_square_zero() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for s in SYSTEMS {
        let c = ctx(s)?;
        let (_, mc) = c.complex()?;
        let mut zero = true;
        for k in 2..=mc.top() {
            zero &= mc.boundary(k - 1).mul(&mc.boundary(k)).is_zero();
        }
        ok &= zero && mc.check_square_zero().is_ok();
        notes.push(format!("{s}:{}", if zero { "0" } else { "nonzero" }));
    }
    Ok((ok, notes.join(" ")))
}

fn c2_morse_vs_oracle() -> Outcome {
    // textbook homology of S^1, S^2, T^2
    let expected = [("circle", vec![1, 1]), ("sphere2", vec![1, 0, 1]), ("torus2", vec![1, 2, 1])];
    let mut ok = true;
    let mut notes = Vec::new();
    for (s, want) in expected {
        let c = ctx(s)?;
        let (_, mc) = c.complex()?;
        let hm = mc.homology()?;
        let (_, oracle) = reports::oracle_homology(&c)?;
        let agree = reports::same_homology(&hm, &oracle) && table(&hm) == want && torsion_free(&hm);
        ok &= agree;
        notes.push(format!("{s}:HM={:?} oracle={:?}", table(&hm), table(&oracle)));
    }
    Ok((ok, notes.join(" ")))
}

fn c3_functoriality() -> Outcome {
    let c = ctx("torus2")?;
    let sys = &c.flow.sys;
    let (conns, full) = c.complex()?;
    let grid = GlobalGrid::for_system(sys, 128)?;
    let mut ok = true;
    let mut notes = Vec::new();
    // b = -1: Λ^b is a disk around the minimum; b = 0 adds one saddle (an annulus)
    for (b, want) in [(-1.0, vec![1, 0, 0]), (0.0, vec![1, 1, 0])] {
        let sub_reg = c.reg.below(b);
        let sub_conns: Vec<_> = conns.iter().filter(|x| sub_reg.points.iter().any(|p| p.id == x.from)).cloned().collect();
        let sub = build_complex(&sub_reg, &sub_conns)?;
        let morse: Vec<usize> = (0..=2)
            .map(|k| if k <= sub.top() && sub.rank(k) > 0 { sublevel_inclusion(&sub, &full, k).map(|m| m.rank()) } else { Ok(0) })
            .collect::<Result<_>>()?;
        let lam_b = sublevel_raster(&grid, sys, b)?;
        let oracle = inclusion_ranks(&lam_b, &grid.full())?;
        let hb = sub.homology()?;
        let kernels_agree = table(&hb) == table(&cubical_homology(&lam_b)?);
        ok &= morse == oracle && morse == want && kernels_agree;
        notes.push(format!("b={b}: morse={morse:?} oracle={oracle:?}"));
    }
    Ok((ok, notes.join(" ")))
}

fn c4_pair_homology() -> Outcome {
    let mut ok = true;
    let mut n = 0;
    for s in SURFACES {
        let c = ctx(s)?;
        for x in &c.reg.points {
            let pair = conley_pair(&c.flow, &c.reg, x.id, &c.cfg.conley)?;
            let a = conley_pair_homology(&c.flow, &pair, 128)?;
            let b = conley_pair_homology(&c.flow, &pair, 256)?;
            let point_class = a.iter().all(|g| g.betti == usize::from(g.degree == x.index)) && torsion_free(&a);
            ok &= point_class && a == b;
            n += 1;
        }
    }
    Ok((ok, format!("{n} pairs rank 1 in the index degree at 128 and 256")))
}

fn c5_axioms() -> Outcome {
    let mut ok = true;
    let mut worst = 0;
    let mut n = 0;
    for s in SYSTEMS {
        let c = ctx(s)?;
        for x in &c.reg.points {
            let pair = conley_pair(&c.flow, &c.reg, x.id, &c.cfg.conley)?;
            let r = verify_axioms(&c.flow, &pair, 1000, 11)?;
            ok &= r.ok() && r.samples == 1000;
            worst = worst.max(r.isolation_violations + r.invariance_violations + r.exit_violations);
            n += 1;
        }
    }
    Ok((ok, format!("{n} pairs x 1000 trajectories, max violations {worst}")))
}

fn c6_filtration_invariants() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for s in SYSTEMS {
        let c = ctx(s)?;
        let pairs = c.pairs()?;
        let f = build_filtration(&c.flow, &c.reg, &pairs, &c.cfg.filtration)?;
        let r = check_invariants(&c.flow, &c.reg, &pairs, &f, 1000, 5)?;
        ok &= r.ok();
        notes.push(format!(
            "{s}:{}/{}/{}/{}",
            r.nesting_violations, r.invariance_violations, r.exit_containment_violations, r.critical_violations
        ));
    }
    Ok((ok, notes.join(" ")))
}

fn cellular(system: &str) -> Result<Vec<(usize, morse_conley::filtration::CellularReport)>> {
    let c = ctx(system)?;
    let pairs = c.pairs()?;
    let f = build_filtration(&c.flow, &c.reg, &pairs, &c.cfg.filtration)?;
    let (_, mc) = c.complex()?;
    [128, 256]
        .into_iter()
        .map(|n| {
            let r = rasterize_filtration(&c.flow, &c.reg, &f, n, &c.cfg.filtration)?;
            Ok((n, cellular_report(&c.flow, &r, &pairs, &mc)?))
        })
        .collect()
}

fn c7_concentration() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for s in ["sphere2", "torus2"] {
        let c = ctx(s)?;
        let counts: Vec<usize> = (0..=2).map(|k| c.reg.of_index(k).len()).collect();
        let reps = cellular(s)?;
        let stable = reps[0].1.relative_betti == reps[1].1.relative_betti;
        ok &= stable && reps.iter().all(|(_, r)| r.concentrated(&counts));
        let diag: Vec<usize> = reps[1].1.relative_betti.iter().enumerate().map(|(k, row)| row[k]).collect();
        notes.push(format!("{s}:{diag:?}{}", if stable { "" } else { " unstable" }));
    }
    Ok((ok, notes.join(" ")))
}

fn c8_theta() -> Outcome {
    let reps = cellular("torus2")?;
    let ok = reps.iter().all(|(_, r)| r.intertwines && r.theta_isomorphism());
    let dets: Vec<String> = reps[1].1.theta_det.iter().map(|d| d.as_ref().map_or("-".into(), |d| d.to_string())).collect();
    Ok((ok, format!("grids 128/256, det Theta = {}", dets.join(","))))
}

fn c9_orientation() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for s in SYSTEMS {
        let c = ctx(s)?;
        let (pass, _) = orientation_robustness(&c)?;
        ok &= pass;
        notes.push(format!("{s}:{}", if pass { "ok" } else { "changed" }));
    }
    Ok((ok, notes.join(" ")))
}

/// Independent least squares slope of log d against T.
fn slope(t: &[f64], d: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let y: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    let (st, sy) = (t.iter().sum::<f64>(), y.iter().sum::<f64>());
    let stt: f64 = t.iter().map(|a| a * a).sum();
    let sty: f64 = t.iter().zip(&y).map(|(a, b)| a * b).sum();
    let b = (n * sty - st * sy) / (n * stt - st * st);
    let a = (sy - b * st) / n;
    let ss_res: f64 = t.iter().zip(&y).map(|(x, v)| (v - a - b * x).powi(2)).sum();
    let my = sy / n;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    (-b, 1.0 - ss_res / ss_tot)
}

fn c10_leaf() -> Outcome {
    let c = ctx("torus2")?;
    let mut ok = true;
    let mut notes = Vec::new();
    for x in c.reg.of_index(1) {
        let pair = conley_pair(&c.flow, &c.reg, x.id, &c.cfg.conley)?;
        let p = leaf_convergence_probe(&c.flow, &pair, 6, 12)?;
        let (rate, r2) = slope(&p.times, &p.distances);
        ok &= p.times.len() >= 5 && rate >= x.spectral_gap / 16.0 && r2 >= 0.9;
        notes.push(format!("x{}: rate {rate:.2} (gap {:.2}) R2 {r2:.4}", x.id, x.spectral_gap));
    }
    Ok((ok, notes.join(" ")))
}

fn c11_gradient() -> Outcome {
    let mut worst = 0.0f64;
    for s in SYSTEMS {
        let sys = ctx(s)?.flow.sys;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let p = sys.random_point(&mut rng);
            let g = sys.grad_vec(&p);
            let scale = sys.norm(&g).max(1e-8);
            for _ in 0..3 {
                let mut v = sys.random_tangent(&p, &mut rng);
                let nv = sys.norm(&v);
                v.iter_mut().for_each(|a| *a /= nv);
                let h = 1e-5 * if rng.gen::<bool>() { 1.0 } else { 0.5 };
                let plus: Vec<f64> = v.iter().map(|a| a * h).collect();
                let minus: Vec<f64> = v.iter().map(|a| -a * h).collect();
                let fd = (sys.value(&sys.retract(&p, &plus)) - sys.value(&sys.retract(&p, &minus))) / (2.0 * h);
                worst = worst.max((fd - sys.inner(&g, &v)).abs() / scale);
            }
        }
    }
    Ok((worst < 1e-6, format!("max relative error {worst:.2e}")))
}

fn c12_determinism() -> Outcome {
    let mut ok = true;
    for (s, cmd) in [("torus2", "homology"), ("torus2", "conley"), ("loopspace", "crit")] {
        let mut cfg = RunConfig::default();
        cfg.set("system.name", s)?;
        cfg.set("seed", "17")?;
        let a = reports::run(cmd, &cfg, None, false)?.to_json(&cfg);
        let b = reports::run(cmd, &cfg, None, false)?.to_json(&cfg);
        ok &= a == b;
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let mut cfg = RunConfig::default();
        cfg.set("system.name", "circle")?;
        let c = Context::new(&cfg)?;
        files.push(reports::cmd_plotdata(&c, d.path())?.files);
    }
    ok &= files[0] == files[1];
    for f in &files[0] {
        ok &= std::fs::read(dirs[0].path().join(f)).ok() == std::fs::read(dirs[1].path().join(f)).ok();
    }
    Ok((ok, format!("3 reports and {} plot files identical across runs", files[0].len())))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 12] = [
        ("1 boundary squares to zero", c1_square_zero, 120),
        ("2 Morse homology equals the cubical oracle", c2_morse_vs_oracle, 300),
        ("3 sublevel functoriality", c3_functoriality, 300),
        ("4 Conley pair homology", c4_pair_homology, 600),
        ("5 Conley pair axioms", c5_axioms, 300),
        ("6 filtration certificates", c6_filtration_invariants, 300),
        ("7 cellular degree concentration", c7_concentration, 600),
        ("8 Theta intertwining", c8_theta, 600),
        ("9 orientation robustness", c9_orientation, 300),
        ("10 leaf convergence", c10_leaf, 180),
        ("11 gradient correctness", c11_gradient, 60),
        ("12 determinism", c12_determinism, 60),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let dt = t.elapsed();
        let in_time = dt <= Duration::from_secs(budget);
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.1}s / {budget}s{}]",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            if in_time { "" } else { " over budget" }
        );
    }
    println!("acceptance: {} of 12 criteria pass", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
