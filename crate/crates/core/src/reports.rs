//! Pipeline orchestration behind the CLI: one function per subcommand, JSON
//! reports with sorted keys, verification suites and plot data.

use crate::config::RunConfig;
use crate::conley::{
    build_pair, conley_pair, conley_pair_homology_checked, default_epsilon, leaf_convergence_probe, rasterize_pair, sample_disks,
    verify_axioms, ConleyPair, ConleyParams,
};
use crate::connections::{connections_csv, connections_dot, enumerate_connections, Connection};
use crate::critical::{choose_rho, find_critical_points, CritRegistry, RhoCertificate};
use crate::error::{Error, Result};
use crate::filtration::{build_filtration, cellular_report, check_invariants, inclusion_ranks, rasterize_filtration, sublevel_raster, Filtration};
use crate::homology::{cubical_homology, HomologyGroup};
use crate::morse_complex::{build_complex, sublevel_inclusion, MorseComplex};
use crate::raster::{GlobalGrid, GlobalKind, GridFile};
use crate::semiflow::Semiflow;
use crate::systems::finite_difference_check;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

pub const COMMANDS: &[&str] = &["crit", "connections", "complex", "homology", "conley", "filtration", "verify", "plotdata"];
pub const SUITES: &[&str] =
    &["gradient", "complex", "homology", "functoriality", "conley", "filtration", "orientation", "leaf", "determinism"];
pub const SYSTEMS: &[&str] = &["circle", "sphere2", "torus2", "loopspace"];

/// Registry and flow shared by all commands of one run.
pub struct Context {
    pub cfg: RunConfig,
    pub flow: Semiflow,
    pub reg: CritRegistry,
    pub rho: RhoCertificate,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let flow = Semiflow::new(cfg.system()?, cfg.flow.clone());
        let mut reg = find_critical_points(&flow.sys, cfg.level, &cfg.search)?;
        let rho = choose_rho(&reg, &flow, cfg.rho_shots, cfg.seed)?;
        reg.separation = rho.rho;
        Ok(Context { cfg: cfg.clone(), flow, reg, rho })
    }

    pub fn connections(&self) -> Result<Vec<Connection>> {
        enumerate_connections(&self.flow, &self.reg, &self.cfg.connections)
    }

    pub fn complex(&self) -> Result<(Vec<Connection>, MorseComplex)> {
        let c = self.connections()?;
        let mc = build_complex(&self.reg, &c)?;
        Ok((c, mc))
    }

    /// Pairs by the automatic search, or at the configured (ε, τ).
    pub fn pairs(&self) -> Result<Vec<ConleyPair>> {
        let cfg = &self.cfg;
        if cfg.conley_epsilon.is_none() && cfg.conley_tau.is_none() {
            return self.reg.points.iter().map(|c| conley_pair(&self.flow, &self.reg, c.id, &cfg.conley)).collect();
        }
        let eps = cfg.conley_epsilon.unwrap_or_else(|| default_epsilon(&self.flow.sys, &self.reg, &cfg.conley));
        self.reg
            .points
            .iter()
            .map(|c| {
                let tau = cfg.conley_tau.unwrap_or(cfg.conley.tau_scale / c.spectral_gap);
                let p = build_pair(&self.flow, &self.reg, c.id, ConleyParams { epsilon: eps, tau }, &cfg.conley)?;
                if !p.isolation.ok() {
                    return Err(Error::Isolation(format!("x{} at eps={eps} tau={tau}: {:?}", c.id, p.isolation)));
                }
                Ok(p)
            })
            .collect()
    }

    pub fn filtration(&self, pairs: &[ConleyPair]) -> Result<Filtration> {
        build_filtration(&self.flow, &self.reg, pairs, &self.cfg.filtration)
    }

    fn rasterizable(&self) -> bool {
        self.flow.sys.loop_data().is_none() && self.flow.sys.dim() <= 2
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub command: String,
    pub pass: bool,
    pub sections: Map<String, Value>,
    pub files: Vec<String>,
}

impl Report {
    fn new(command: &str) -> Self {
        Report { command: command.into(), pass: true, sections: Map::new(), files: vec![] }
    }

    fn section(&mut self, name: &str, v: Value) {
        self.sections.insert(name.into(), v);
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }

    /// Deterministic JSON; keys are sorted and no timestamps are recorded.
    pub fn to_json(&self, cfg: &RunConfig) -> String {
        let v = json!({
            "command": self.command,
            "system": cfg.system.name,
            "level": level_json(cfg.level),
            "seed": cfg.seed,
            "provenance": { "config_hash": cfg.hash(), "version": env!("CARGO_PKG_VERSION") },
            "sections": Value::Object(self.sections.clone()),
            "files": self.files,
            "verdict": self.verdict(),
        });
        serde_json::to_string_pretty(&v).unwrap() + "\n"
    }
}

fn level_json(a: f64) -> Value {
    if a.is_finite() {
        json!(a)
    } else {
        json!("inf")
    }
}

fn groups_json(g: &[HomologyGroup]) -> Value {
    json!(g.iter().map(|h| json!({"degree": h.degree, "betti": h.betti, "torsion": h.torsion})).collect::<Vec<_>>())
}

/// Betti and torsion agree degree by degree (missing degrees are zero).
pub fn same_homology(a: &[HomologyGroup], b: &[HomologyGroup]) -> bool {
    let n = a.len().max(b.len());
    (0..n).all(|k| {
        let f = |g: &[HomologyGroup]| g.get(k).map_or((0, vec![]), |h| (h.betti, h.torsion.clone()));
        f(a) == f(b)
    })
}

fn registry_json(ctx: &Context) -> Value {
    let pts: Vec<Value> = ctx
        .reg
        .points
        .iter()
        .map(|c| {
            json!({
                "id": c.id, "index": c.index, "value": c.value, "location": c.location,
                "spectral_gap": c.spectral_gap, "eigenvalues": c.eigenvalues,
            })
        })
        .collect();
    json!({ "points": pts, "rho": ctx.rho.rho, "rho_attempts": ctx.rho.attempts, "morse_count": ctx.reg.morse_count() })
}

pub fn cmd_crit(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("crit");
    r.section("registry", registry_json(ctx));
    if !ctx.cfg.level.is_finite() && ctx.flow.sys.loop_data().is_none() {
        let chi = ctx.flow.sys.euler_characteristic();
        r.pass = ctx.reg.morse_count() == chi;
        r.section("euler", json!({ "expected": chi, "morse_count": ctx.reg.morse_count() }));
    }
    Ok(r)
}

fn connections_json(c: &[Connection]) -> Value {
    json!(c
        .iter()
        .map(|x| json!({"from": x.from, "to": x.to, "sign": x.sign, "alpha": x.alpha, "approach": x.approach, "bracket_sign": x.bracket_sign}))
        .collect::<Vec<_>>())
}

pub fn cmd_connections(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("connections");
    let c = ctx.connections()?;
    r.pass = c.iter().all(|x| x.bracket_agrees());
    r.section("connections", connections_json(&c));
    r.section("dot", json!(connections_dot(&ctx.reg, &c)));
    r.section("csv", json!(connections_csv(&c)));
    Ok(r)
}

fn complex_json(mc: &MorseComplex) -> Value {
    let b: Vec<Value> = (1..mc.generators.len()).map(|k| json!(mc.boundary(k).to_i64_rows())).collect();
    json!({ "generators": mc.generators, "boundaries": b, "text": mc.to_text() })
}

pub fn cmd_complex(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("complex");
    let (c, mc) = ctx.complex()?;
    r.pass = mc.check_square_zero().is_ok();
    r.section("connections", connections_json(&c));
    r.section("complex", complex_json(&mc));
    r.section("square_zero", json!(r.pass));
    Ok(r)
}

/// Independent reference homology of Λ^a: the cubical oracle on a grid for
/// manifolds, the known table for the loop-space component.
pub fn oracle_homology(ctx: &Context) -> Result<(String, Vec<HomologyGroup>)> {
    let sys = &ctx.flow.sys;
    if let Some(l) = sys.loop_data() {
        if ctx.cfg.level.is_finite() {
            return Err(Error::Unsupported("loop-space reference homology is tabulated for level = inf only".into()));
        }
        // each winding component of the free loop space of T^d retracts onto T^d
        let d = l.base_dim;
        let binom = |k: usize| (0..k).fold(1usize, |acc, i| acc * (d - i) / (i + 1));
        let g = (0..=d).map(|k| HomologyGroup { degree: k, betti: binom(k), torsion: vec![] }).collect();
        return Ok(("reference table: component of the free loop space".into(), g));
    }
    let grid = GlobalGrid::for_system(sys, ctx.cfg.grid)?;
    let cx = if ctx.cfg.level.is_finite() { sublevel_raster(&grid, sys, ctx.cfg.level)? } else { grid.full() };
    Ok((format!("cubical oracle, grid {}", ctx.cfg.grid), cubical_homology(&cx)?))
}

pub fn cmd_homology(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("homology");
    let (c, mc) = ctx.complex()?;
    let hm = mc.homology()?;
    let (source, oracle) = oracle_homology(ctx)?;
    r.pass = same_homology(&hm, &oracle);
    r.section("registry", registry_json(ctx));
    r.section("connections", connections_json(&c));
    r.section("complex", complex_json(&mc));
    r.section("morse_homology", groups_json(&hm));
    r.section("oracle", json!({ "source": source, "groups": groups_json(&oracle) }));
    Ok(r)
}

fn pair_json(ctx: &Context, p: &ConleyPair) -> Result<(bool, Value)> {
    let axioms = verify_axioms(&ctx.flow, p, ctx.cfg.conley.axiom_samples, ctx.cfg.seed)?;
    let mut ok = axioms.ok() && p.isolation.ok();
    let homology = if ctx.rasterizable() {
        let h = conley_pair_homology_checked(&ctx.flow, p, ctx.cfg.conley.grid)?;
        ok &= h.iter().all(|g| g.betti == usize::from(g.degree == p.crit.index) && g.torsion.is_empty());
        groups_json(&h)
    } else {
        json!("gated: ambient dimension above 2")
    };
    Ok((
        ok,
        json!({
            "id": p.crit.id, "index": p.crit.index, "epsilon": p.params.epsilon, "tau": p.params.tau,
            "attempts": p.attempts.len(), "isolation": p.isolation, "axioms": axioms, "homology": homology, "pass": ok,
        }),
    ))
}

pub fn cmd_conley(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("conley");
    let pairs = ctx.pairs()?;
    let mut out = Vec::new();
    for p in &pairs {
        let (ok, v) = pair_json(ctx, p)?;
        r.pass &= ok;
        out.push(v);
    }
    r.section("pairs", json!(out));
    Ok(r)
}

fn filtration_json(ctx: &Context, pairs: &[ConleyPair], filt: &Filtration) -> Result<(bool, Value)> {
    let inv = check_invariants(&ctx.flow, &ctx.reg, pairs, filt, ctx.cfg.samples, ctx.cfg.seed)?;
    let mut ok = inv.ok();
    let mut v = json!({
        "times": filt.times,
        "sets": filt.sets.iter().map(|s| s.description.clone()).collect::<Vec<_>>(),
        "invariants": inv,
    });
    if ctx.rasterizable() {
        let (_, mc) = ctx.complex()?;
        let counts: Vec<usize> = (0..filt.sets.len()).map(|k| mc.rank(k)).collect();
        let mut cellular = Vec::new();
        let mut bettis = Vec::new();
        for n in [ctx.cfg.grid, 2 * ctx.cfg.grid] {
            let raster = rasterize_filtration(&ctx.flow, &ctx.reg, filt, n, &ctx.cfg.filtration)?;
            let rep = cellular_report(&ctx.flow, &raster, pairs, &mc)?;
            let total = cubical_homology(raster.complexes.last().unwrap())?;
            let (_, oracle) = oracle_homology(ctx)?;
            let pass = rep.concentrated(&counts) && rep.theta_isomorphism() && rep.intertwines && same_homology(&total, &oracle);
            ok &= pass;
            bettis.push(rep.relative_betti.clone());
            cellular.push(json!({
                "grid": n,
                "relative_betti": rep.relative_betti,
                "relative_torsion": rep.relative_torsion,
                "theta": rep.theta.iter().map(|t| t.to_i64_rows()).collect::<Vec<_>>(),
                "theta_det": rep.theta_det.iter().map(|d| d.as_ref().map(|d| d.to_string())).collect::<Vec<_>>(),
                "triple": rep.triple.iter().map(|t| t.to_i64_rows()).collect::<Vec<_>>(),
                "intertwines": rep.intertwines,
                "total_homology": groups_json(&total),
                "repairs": rep.repairs,
                "pass": pass,
            }));
        }
        let stable = bettis.windows(2).all(|w| w[0] == w[1]);
        ok &= stable;
        v["cellular"] = json!(cellular);
        v["grid_stable"] = json!(stable);
    } else {
        v["cellular"] = json!("gated: ambient dimension above 2");
    }
    Ok((ok, v))
}

pub fn cmd_filtration(ctx: &Context) -> Result<Report> {
    let mut r = Report::new("filtration");
    let pairs = ctx.pairs()?;
    let filt = ctx.filtration(&pairs)?;
    let (ok, v) = filtration_json(ctx, &pairs, &filt)?;
    r.pass = ok;
    r.section("filtration", v);
    Ok(r)
}

/// Default sublevel for the functoriality check: midway between the two lowest
/// critical values.
fn sublevel_value(ctx: &Context) -> Option<f64> {
    if let Some(b) = ctx.cfg.sublevel {
        return Some(b);
    }
    let mut v: Vec<f64> = ctx.reg.points.iter().map(|c| c.value).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    (v.len() >= 2).then(|| 0.5 * (v[0] + v[1]))
}

/// Ranks of HM^b → HM^a against ranks of H(Λ^b) → H(Λ^a) from the oracle.
pub fn functoriality(ctx: &Context, b: f64) -> Result<(bool, Value)> {
    let (conns, full) = ctx.complex()?;
    let sub_reg = ctx.reg.below(b);
    let sub_conns: Vec<Connection> =
        conns.iter().filter(|c| sub_reg.points.iter().any(|p| p.id == c.from)).cloned().collect();
    let sub = build_complex(&sub_reg, &sub_conns)?;
    let top = full.top();
    let morse_ranks: Vec<usize> =
        (0..=top).map(|k| if k <= sub.top() && sub.rank(k) > 0 { sublevel_inclusion(&sub, &full, k).map(|m| m.rank()) } else { Ok(0) }).collect::<Result<_>>()?;
    let hm_b = sub.homology()?;
    let grid = GlobalGrid::for_system(&ctx.flow.sys, ctx.cfg.grid)?;
    let sys = &ctx.flow.sys;
    let lam_b = sublevel_raster(&grid, sys, b)?;
    let lam_a = if ctx.cfg.level.is_finite() { sublevel_raster(&grid, sys, ctx.cfg.level)? } else { grid.full() };
    let mut oracle_ranks = inclusion_ranks(&lam_b, &lam_a)?;
    oracle_ranks.truncate(top + 1);
    let h_b = cubical_homology(&lam_b)?;
    let ok = morse_ranks == oracle_ranks && same_homology(&hm_b, &h_b);
    Ok((
        ok,
        json!({ "b": b, "morse_image_ranks": morse_ranks, "oracle_image_ranks": oracle_ranks,
                "morse_sublevel": groups_json(&hm_b), "oracle_sublevel": groups_json(&h_b), "pass": ok }),
    ))
}

fn signature(c: &[Connection]) -> Vec<(usize, usize, i8)> {
    let mut s: Vec<_> = c.iter().map(|x| (x.from, x.to, x.sign)).collect();
    s.sort();
    s
}

/// Sign invariance under a finer integrator and a doubled shooting mesh, and
/// homology invariance under generator flips.
pub fn orientation_robustness(ctx: &Context) -> Result<(bool, Value)> {
    let (base, mc) = ctx.complex()?;
    let mut fine = ctx.cfg.clone();
    fine.flow.step_ctrl /= 32.0;
    fine.connections.mesh *= 2;
    let flow = Semiflow::new(ctx.flow.sys.clone(), fine.flow.clone());
    let refined = enumerate_connections(&flow, &ctx.reg, &fine.connections)?;
    let signs_ok = signature(&base) == signature(&refined);
    let h = mc.homology()?;
    let mut flips_ok = true;
    for c in &ctx.reg.points {
        let mut m = mc.clone();
        m.flip(c.id)?;
        flips_ok &= m.homology()? == h;
    }
    let ok = signs_ok && flips_ok;
    Ok((ok, json!({ "signs_invariant": signs_ok, "flips_invariant": flips_ok, "connections": base.len(), "pass": ok })))
}

fn leaf_json(ctx: &Context) -> Result<(bool, Value)> {
    let eligible: Vec<_> = ctx.reg.points.iter().filter(|c| c.index >= 1 && c.index < ctx.flow.sys.dim()).collect();
    if !ctx.rasterizable() || eligible.is_empty() {
        return Ok((true, json!("not applicable: no saddle with a nontrivial ascending disk")));
    }
    let mut ok = true;
    let mut out = Vec::new();
    for c in eligible {
        let pair = conley_pair(&ctx.flow, &ctx.reg, c.id, &ctx.cfg.conley)?;
        let p = leaf_convergence_probe(&ctx.flow, &pair, ctx.cfg.leaf_probes, ctx.cfg.leaf_per_branch)?;
        ok &= p.passes();
        out.push(json!({ "probe": p, "pass": p.passes() }));
    }
    Ok((ok, json!(out)))
}

fn gradient_json(ctx: &Context) -> (bool, Value) {
    let sys = &ctx.flow.sys;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x9bad);
    let worst = (0..100).map(|_| finite_difference_check(sys, &sys.point(sys.random_point(&mut rng)), 1e-5)).fold(0.0, f64::max);
    (worst < 1e-6, json!({ "points": 100, "h": 1e-5, "max_relative_error": worst }))
}

fn suite(ctx: &Context, name: &str) -> Result<(bool, Value)> {
    match name {
        "gradient" => Ok(gradient_json(ctx)),
        "complex" => {
            let r = cmd_complex(ctx)?;
            Ok((r.pass, Value::Object(r.sections)))
        }
        "homology" => {
            let r = cmd_homology(ctx)?;
            Ok((r.pass, json!({ "morse_homology": r.sections["morse_homology"], "oracle": r.sections["oracle"] })))
        }
        "functoriality" => match (ctx.rasterizable(), sublevel_value(ctx)) {
            (true, Some(b)) => functoriality(ctx, b),
            _ => Ok((true, json!("not applicable"))),
        },
        "conley" => {
            let r = cmd_conley(ctx)?;
            Ok((r.pass, Value::Object(r.sections)))
        }
        "filtration" => {
            let r = cmd_filtration(ctx)?;
            Ok((r.pass, Value::Object(r.sections)))
        }
        "orientation" => orientation_robustness(ctx),
        "leaf" => leaf_json(ctx),
        "determinism" => {
            let a = cmd_homology(&Context::new(&ctx.cfg)?)?.to_json(&ctx.cfg);
            let b = cmd_homology(&Context::new(&ctx.cfg)?)?.to_json(&ctx.cfg);
            Ok((a == b, json!({ "identical": a == b, "bytes": a.len() })))
        }
        other => Err(Error::Config(format!("unknown suite '{other}' ({})", SUITES.join(", ")))),
    }
}

/// Runs the selected suites on the configured system, or on every built-in
/// system when `all_systems` is set.
pub fn cmd_verify(cfg: &RunConfig, suite_name: Option<&str>, all_systems: bool) -> Result<Report> {
    let suites: Vec<&str> = match suite_name {
        None | Some("all") => SUITES.to_vec(),
        Some(s) if SUITES.contains(&s) => vec![s],
        Some(s) => return Err(Error::Config(format!("unknown suite '{s}' ({})", SUITES.join(", ")))),
    };
    let systems: Vec<String> = if all_systems { SYSTEMS.iter().map(|s| s.to_string()).collect() } else { vec![cfg.system.name.clone()] };
    let mut r = Report::new("verify");
    let mut results = Vec::new();
    for name in systems {
        let mut c = cfg.clone();
        c.system.name = name.clone();
        let ctx = Context::new(&c)?;
        for s in &suites {
            let (ok, detail) = suite(&ctx, s)?;
            r.pass &= ok;
            results.push(json!({ "suite": s, "system": name, "seed": c.seed, "pass": ok, "detail": detail }));
        }
    }
    r.section("suites", json!(results));
    Ok(r)
}

fn write(dir: &Path, name: &str, body: &str, files: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), body)?;
    files.push(name.to_string());
    Ok(())
}

fn crit_csv(reg: &CritRegistry) -> String {
    let d = reg.points.first().map_or(0, |c| c.location.len());
    let mut s = String::from("id,index,value");
    for i in 0..d {
        s.push_str(&format!(",x{i}"));
    }
    s.push('\n');
    for c in &reg.points {
        s.push_str(&format!("{},{},{:.12e}", c.id, c.index, c.value));
        for x in &c.location {
            s.push_str(&format!(",{x:.12e}"));
        }
        s.push('\n');
    }
    s
}

fn point_rows(tag: &str, pts: &[Vec<f64>], s: &mut String) {
    for p in pts {
        s.push_str(tag);
        for x in p {
            s.push_str(&format!(",{x:.10e}"));
        }
        s.push('\n');
    }
}

/// Writes crit.csv, connections.dot/csv, trajectories.csv, disks.csv, F<k>.grid,
/// pair grids and decay.csv (when a saddle probe applies) into `dir`.
pub fn cmd_plotdata(ctx: &Context, dir: &Path) -> Result<Report> {
    std::fs::create_dir_all(dir)?;
    let mut r = Report::new("plotdata");
    let mut files = Vec::new();
    let sys = &ctx.flow.sys;
    write(dir, "crit.csv", &crit_csv(&ctx.reg), &mut files)?;
    let conns = ctx.connections()?;
    write(dir, "connections.dot", &connections_dot(&ctx.reg, &conns), &mut files)?;
    write(dir, "connections.csv", &connections_csv(&conns), &mut files)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x7a11);
    let mut traj = String::new();
    for i in 0..8 {
        let p = sys.random_point(&mut rng);
        let t = ctx.flow.trajectory(&p, 5.0)?;
        let body = t.to_csv(sys);
        let mut lines = body.lines();
        let header = lines.next().unwrap_or("");
        if i == 0 {
            traj.push_str(&format!("trajectory,{header}\n"));
        }
        for l in lines {
            traj.push_str(&format!("{i},{l}\n"));
        }
    }
    write(dir, "trajectories.csv", &traj, &mut files)?;
    let pairs = ctx.pairs()?;
    let d = sys.ambient_dim();
    let mut disks = String::from("set");
    for i in 0..d {
        disks.push_str(&format!(",x{i}"));
    }
    disks.push('\n');
    for p in pairs.iter().filter(|p| p.crit.index >= 1) {
        let s = sample_disks(&ctx.flow, &p.crit, p.params.epsilon, 16, ctx.cfg.seed)?;
        for trail in &s.descending {
            point_rows(&format!("descending_x{}", p.crit.id), trail, &mut disks);
        }
        for branch in &s.ascending {
            point_rows(&format!("ascending_x{}", p.crit.id), branch, &mut disks);
        }
    }
    write(dir, "disks.csv", &disks, &mut files)?;
    if ctx.rasterizable() {
        for p in &pairs {
            let pr = rasterize_pair(&ctx.flow, p, ctx.cfg.conley.grid)?;
            let c = &pr.chart;
            let g = GridFile {
                lattice: "chart".into(),
                dims: vec![c.n; c.dim()],
                spacing: (0..c.dim()).map(|i| c.cell_width(i)).collect(),
                origin: c.half.iter().map(|h| -h).collect(),
                periodic: vec![false; c.dim()],
                sets: vec![(format!("N_{}", p.crit.id), pr.n_cells.clone()), (format!("L_{}", p.crit.id), pr.l_cells.clone())],
            };
            write(dir, &format!("pair_x{}.grid", p.crit.id), &g.to_text(), &mut files)?;
        }
        let filt = ctx.filtration(&pairs)?;
        let raster = rasterize_filtration(&ctx.flow, &ctx.reg, &filt, ctx.cfg.grid, &ctx.cfg.filtration)?;
        let (tops, masks) = raster.top_masks();
        let n = ctx.cfg.grid;
        let (lattice, dims, periodic) = match raster.grid.kind {
            GlobalKind::CubeSphere => (format!("cube-sphere {n}"), vec![tops.len()], vec![false]),
            _ => ("torus".to_string(), vec![n; raster.grid.dim()], vec![true; raster.grid.dim()]),
        };
        for (k, m) in masks.into_iter().enumerate() {
            let g = GridFile {
                lattice: lattice.clone(),
                dims: dims.clone(),
                spacing: vec![1.0 / n as f64; dims.len()],
                origin: vec![0.0; dims.len()],
                periodic: periodic.clone(),
                sets: vec![(format!("F_{k}"), m)],
            };
            write(dir, &format!("F{k}.grid"), &g.to_text(), &mut files)?;
        }
    }
    if let Some(c) = ctx.reg.points.iter().find(|c| c.index >= 1 && c.index < sys.dim()).filter(|_| ctx.rasterizable()) {
        let pair = pairs.iter().find(|p| p.crit.id == c.id).unwrap();
        let probe = leaf_convergence_probe(&ctx.flow, pair, ctx.cfg.leaf_probes, ctx.cfg.leaf_per_branch)?;
        let mut s = String::from("time,max_distance\n");
        for (t, dist) in probe.times.iter().zip(&probe.distances) {
            s.push_str(&format!("{t:.10e},{dist:.10e}\n"));
        }
        write(dir, "decay.csv", &s, &mut files)?;
        r.section("decay", json!(probe));
    }
    r.files = files;
    Ok(r)
}

/// Runs one subcommand and writes `<command>.json` to the output directory
/// when one is configured.
pub fn run(command: &str, cfg: &RunConfig, suite_name: Option<&str>, all_systems: bool) -> Result<Report> {
    let out = cfg.out_dir();
    let report = match command {
        "verify" => cmd_verify(cfg, suite_name, all_systems)?,
        "plotdata" => {
            let dir = out.clone().unwrap_or_else(|| PathBuf::from("plotdata"));
            cmd_plotdata(&Context::new(cfg)?, &dir)?
        }
        _ => {
            let ctx = Context::new(cfg)?;
            match command {
                "crit" => cmd_crit(&ctx)?,
                "connections" => cmd_connections(&ctx)?,
                "complex" => cmd_complex(&ctx)?,
                "homology" => cmd_homology(&ctx)?,
                "conley" => cmd_conley(&ctx)?,
                "filtration" => cmd_filtration(&ctx)?,
                other => return Err(Error::Config(format!("unknown command '{other}'"))),
            }
        }
    };
    if let Some(dir) = out.or_else(|| (command == "plotdata").then(|| PathBuf::from("plotdata"))) {
        std::fs::create_dir_all(&dir)?;
        if cfg.json {
            std::fs::write(dir.join(format!("{command}.json")), report.to_json(cfg))?;
        }
        if let (true, Some(Value::String(csv))) = (cfg.csv, report.sections.get("csv")) {
            std::fs::write(dir.join("connections.csv"), csv)?;
        }
    }
    Ok(report)
}
