//! Conley index pairs (N_x, L_x) built from sub- and superlevel preimages, their
//! axioms, rasterized relative homology, disk samples and leaf probes.

use crate::critical::{CritRegistry, CriticalPoint};
use crate::error::{Error, Result};
use crate::homology::{relative_homology, HomologyGroup};
use crate::raster::{ChartMask, LocalChart};
use crate::semiflow::{Ball, Integrator, Membership, Semiflow, SetExpr, SetOracle, TrajectoryCache, UnstablePoint};
use crate::systems::RiemannianSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConleyConfig {
    /// τ = tau_scale / spectral gap.
    pub tau_scale: f64,
    /// ε = eps_frac · (smallest action gap).
    pub eps_frac: f64,
    pub grid: usize,
    pub fit_grid: usize,
    pub axiom_samples: usize,
    pub pilot_samples: usize,
    pub max_tau_doublings: usize,
    pub max_eps_halvings: usize,
    pub seed: u64,
}

impl Default for ConleyConfig {
    fn default() -> Self {
        ConleyConfig {
            tau_scale: 0.5,
            eps_frac: 0.25,
            grid: 128,
            fit_grid: 64,
            axiom_samples: 1000,
            pilot_samples: 200,
            max_tau_doublings: 4,
            max_eps_halvings: 4,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConleyParams {
    pub epsilon: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IsolationReport {
    /// Other critical points in the closure of N_x.
    pub intruders: Vec<usize>,
    pub contained_in_ball: bool,
    pub max_radius: f64,
}

impl IsolationReport {
    pub fn ok(&self) -> bool {
        self.intruders.is_empty() && self.contained_in_ball
    }
}

#[derive(Clone, Debug)]
pub struct ConleyPair {
    pub crit: CriticalPoint,
    pub params: ConleyParams,
    pub rho: f64,
    pub raw_n: SetExpr,
    pub raw_l: SetExpr,
    pub n: SetOracle,
    pub l: SetOracle,
    /// Fitted chart and component cells for manifolds of dimension ≤ 2.
    pub chart: Option<LocalChart>,
    pub component: Option<Vec<bool>>,
    pub isolation: IsolationReport,
    /// (ε, τ) tried before this pair was accepted.
    pub attempts: Vec<ConleyParams>,
}

fn raw_sets(c: f64, p: ConleyParams) -> (SetExpr, SetExpr) {
    let raw_n = SetExpr::Intersection(vec![
        SetExpr::Sublevel { level: c + p.epsilon, closed: false },
        SetExpr::preimage(p.tau, SetExpr::Superlevel { level: c - p.epsilon, closed: false }),
    ]);
    let raw_l = SetExpr::Intersection(vec![
        raw_n.clone(),
        SetExpr::preimage(2.0 * p.tau, SetExpr::Sublevel { level: c - p.epsilon, closed: true }),
    ]);
    (raw_n, raw_l)
}

fn classify_cells(flow: &Semiflow, chart: &LocalChart, exprs: &[&SetExpr]) -> Result<Vec<Vec<Membership>>> {
    (0..chart.cell_count())
        .into_par_iter()
        .map(|i| {
            let p = chart.point(&chart.cell_center(i));
            let mut cache = TrajectoryCache::new(flow, &p);
            exprs.iter().map(|e| e.classify(&mut cache, 0.0)).collect()
        })
        .collect()
}

fn start_cell(chart: &LocalChart, inside: &[bool]) -> Option<usize> {
    let d = chart.dim();
    (0..1usize << d).find_map(|m| {
        let a: Vec<f64> = (0..d).map(|i| if m >> i & 1 == 0 { 1e-9 } else { -1e-9 } * chart.cell_width(i)).collect();
        chart.cell_of_coords(&a).filter(|&c| inside[c])
    })
}

/// Axes along which the component reaches the box face.
fn touching_axes(chart: &LocalChart, comp: &[bool]) -> Vec<bool> {
    let mut t = vec![false; chart.dim()];
    for (i, _) in comp.iter().enumerate().filter(|(_, &b)| b) {
        for (j, &m) in chart.multi_index(i).iter().enumerate() {
            if m == 0 || m + 1 == chart.n {
                t[j] = true;
            }
        }
    }
    t
}

fn component_of(flow: &Semiflow, chart: &LocalChart, raw_n: &SetExpr) -> Result<Vec<bool>> {
    let cls = classify_cells(flow, chart, &[raw_n])?;
    let inside: Vec<bool> = cls.iter().map(|m| m[0].inside).collect();
    let start = start_cell(chart, &inside)
        .ok_or_else(|| Error::Resolution("chart cells next to the critical point are not in N".into()))?;
    Ok(chart.flood_fill(&inside, start))
}

/// Fits an eigen-aligned box around the component of raw N containing x and
/// rasterizes the component at resolution n.
fn fit_chart(flow: &Semiflow, crit: &CriticalPoint, raw_n: &SetExpr, rho: f64, cfg: &ConleyConfig) -> Result<(LocalChart, Vec<bool>)> {
    let sys = &flow.sys;
    let max_half = if sys.is_flat() { 0.45 / sys.metric_scale().sqrt() } else { 4.0 };
    let d = sys.dim();
    let mut half = vec![rho.min(max_half); d];
    for _ in 0..24 {
        let chart = LocalChart::new(sys, &crit.location, crit.eigenvectors.clone(), half.clone(), cfg.fit_grid);
        let comp = component_of(flow, &chart, raw_n)?;
        let touch = touching_axes(&chart, &comp);
        if touch.iter().any(|&t| t) {
            for i in 0..d {
                if touch[i] {
                    if half[i] >= max_half {
                        return Err(Error::Isolation(format!(
                            "component of N around critical point {} is not contained in its chart",
                            crit.id
                        )));
                    }
                    half[i] = (half[i] * 1.6).min(max_half);
                }
            }
            continue;
        }
        let mut ext = vec![0.0f64; d];
        for (i, _) in comp.iter().enumerate().filter(|(_, &b)| b) {
            for (j, a) in chart.cell_center(i).iter().enumerate() {
                ext[j] = ext[j].max(a.abs() + 0.5 * chart.cell_width(j));
            }
        }
        let target: Vec<f64> = ext.iter().map(|e| (1.3 * e).min(max_half)).collect();
        let tight = target.iter().zip(&half).all(|(t, h)| *t >= 0.7 * h);
        half = target;
        if tight {
            let chart = chart_with(sys, crit, &half, cfg.grid);
            let comp = component_of(flow, &chart, raw_n)?;
            if touching_axes(&chart, &comp).iter().any(|&t| t) {
                continue;
            }
            return Ok((chart, comp));
        }
    }
    Err(Error::Resolution(format!("chart fit around critical point {} did not settle", crit.id)))
}

fn chart_with(sys: &RiemannianSystem, crit: &CriticalPoint, half: &[f64], n: usize) -> LocalChart {
    LocalChart::new(sys, &crit.location, crit.eigenvectors.clone(), half.to_vec(), n)
}

/// Builds the pair for fixed (ε, τ) and reports isolation without judging it.
pub fn build_pair(flow: &Semiflow, reg: &CritRegistry, id: usize, params: ConleyParams, cfg: &ConleyConfig) -> Result<ConleyPair> {
    let sys = &flow.sys;
    let crit = reg.get(id)?.clone();
    if !(params.epsilon > 0.0 && params.tau > 0.0) {
        return Err(Error::Config("conley epsilon and tau must be positive".into()));
    }
    let c = crit.value;
    let rho = reg.separation;
    let (raw_n, raw_l) = raw_sets(c, params);
    let mut isolation = IsolationReport { contained_in_ball: true, ..Default::default() };
    let (region, chart, component): (Arc<dyn crate::semiflow::Region>, _, _) = if sys.dim() <= 2 && sys.loop_data().is_none() {
        let (chart, comp) = fit_chart(flow, &crit, &raw_n, rho, cfg)?;
        for (i, _) in comp.iter().enumerate().filter(|(_, &b)| b) {
            let r = sys.distance(&chart.point(&chart.cell_center(i)), &crit.location);
            isolation.max_radius = isolation.max_radius.max(r);
        }
        let mask = chart.dilate(&comp);
        for y in reg.points.iter().filter(|y| y.id != id) {
            let inside = chart.cell_of(&y.location).is_some_and(|k| mask[k]);
            if inside && (y.value - c).abs() <= params.epsilon {
                isolation.intruders.push(y.id);
            }
        }
        let region = ChartMask { name: format!("x{id}"), chart: chart.clone(), mask };
        (Arc::new(region), Some(chart), Some(comp))
    } else {
        for y in reg.points.iter().filter(|y| y.id != id) {
            if sys.distance(&y.location, &crit.location) <= rho && (y.value - c).abs() <= params.epsilon {
                isolation.intruders.push(y.id);
            }
        }
        isolation.max_radius = rho;
        (Arc::new(Ball { center: crit.location.clone(), radius: rho }), None, None)
    };
    isolation.contained_in_ball = isolation.max_radius <= rho;
    let comp_atom = SetExpr::Region { region, closed: false };
    let n = SetOracle::named(
        &format!("N_{id}"),
        SetExpr::Intersection(vec![raw_n.clone(), comp_atom.clone()]),
    );
    let l = SetOracle::named(&format!("L_{id}"), SetExpr::Intersection(vec![raw_l.clone(), comp_atom]));
    Ok(ConleyPair { crit, params, rho, raw_n, raw_l, n, l, chart, component, isolation, attempts: vec![params] })
}

/// Default ε for a registry: a fraction of the smallest gap between critical
/// values and the level, capped for single-valued registries.
pub fn default_epsilon(sys: &RiemannianSystem, reg: &CritRegistry, cfg: &ConleyConfig) -> f64 {
    let mut vals: Vec<f64> = reg.points.iter().map(|c| c.value).collect();
    if reg.level.is_finite() {
        vals.push(reg.level);
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let gap = vals.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 1e-9).fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        cfg.eps_frac * gap
    } else {
        cfg.eps_frac * sys.value_scale()
    }
}

/// Searches (ε, τ): start from ε = eps_frac·gap, τ = tau_scale/d; double τ while
/// pilot axiom checks fail and halve ε on isolation failure.
pub fn conley_pair(flow: &Semiflow, reg: &CritRegistry, id: usize, cfg: &ConleyConfig) -> Result<ConleyPair> {
    let crit = reg.get(id)?;
    let mut eps = default_epsilon(&flow.sys, reg, cfg);
    let mut attempts = Vec::new();
    let mut last_err = None;
    for _ in 0..=cfg.max_eps_halvings {
        let mut tau = cfg.tau_scale / crit.spectral_gap;
        for _ in 0..=cfg.max_tau_doublings {
            let params = ConleyParams { epsilon: eps, tau };
            attempts.push(params);
            match build_pair(flow, reg, id, params, cfg) {
                Ok(mut pair) if pair.isolation.ok() => {
                    let report = verify_axioms(flow, &pair, cfg.pilot_samples, cfg.seed)?;
                    if report.ok() {
                        pair.attempts = attempts;
                        return Ok(pair);
                    }
                    last_err = Some(Error::Isolation(format!("axioms fail at eps={eps:.4e} tau={tau:.4e}: {report:?}")));
                    tau *= 2.0;
                }
                Ok(pair) => {
                    last_err = Some(Error::Isolation(format!("isolation fails at eps={eps:.4e}: {:?}", pair.isolation)));
                    break;
                }
                Err(e @ Error::Isolation(_)) => {
                    last_err = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        eps *= 0.5;
    }
    Err(last_err.unwrap_or_else(|| Error::Isolation("no admissible (eps, tau)".into())))
}

pub fn conley_pairs(flow: &Semiflow, reg: &CritRegistry, cfg: &ConleyConfig) -> Result<Vec<ConleyPair>> {
    reg.points.iter().map(|c| conley_pair(flow, reg, c.id, cfg)).collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct AxiomReport {
    pub samples: usize,
    pub crit_in_n_minus_l: bool,
    pub isolation_violations: usize,
    pub invariance_violations: usize,
    pub exit_violations: usize,
    pub band_skips: usize,
}

impl AxiomReport {
    pub fn ok(&self) -> bool {
        self.crit_in_n_minus_l && self.isolation_violations == 0 && self.invariance_violations == 0 && self.exit_violations == 0
    }
}

/// Uniform samples of N_x (rejection from the rasterized component or the
/// linearized box), away from the boundary band.
pub fn sample_n(flow: &Semiflow, pair: &ConleyPair, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_in(flow, pair, &pair.n, count, seed)
}

/// Uniform samples of the exit set L_x.
pub fn sample_l(flow: &Semiflow, pair: &ConleyPair, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_in(flow, pair, &pair.l, count, seed ^ 0x1111)
}

fn sample_in(flow: &Semiflow, pair: &ConleyPair, set: &SetOracle, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sys = &flow.sys;
    let cells: Vec<usize> = match &pair.component {
        Some(c) => c.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        None => vec![],
    };
    let widths: Vec<f64> = pair
        .crit
        .eigenvalues
        .iter()
        .map(|l| (1.5 * (2.0 * pair.params.epsilon / l.abs().max(1e-12)).sqrt()).min(pair.rho))
        .collect();
    (0..count)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ (pair.crit.id as u64) << 40 ^ s as u64);
            for _ in 0..10_000 {
                let p = match (&pair.chart, cells.is_empty()) {
                    (Some(chart), false) => {
                        let c = chart.cell_center(cells[rng.gen_range(0..cells.len())]);
                        let a: Vec<f64> =
                            c.iter().enumerate().map(|(i, x)| x + chart.cell_width(i) * (rng.gen::<f64>() - 0.5)).collect();
                        chart.point(&a)
                    }
                    _ => {
                        // unstable coordinates uniform in a box, stable ones in the
                        // quadratic sublevel ellipsoid with the energy they leave
                        let k = pair.crit.index;
                        let mut v = vec![0.0; sys.ambient_dim()];
                        let mut budget = pair.params.epsilon;
                        let mut coeffs = Vec::with_capacity(widths.len());
                        for (w, l) in widths[..k].iter().zip(&pair.crit.eigenvalues) {
                            let a = w * (2.0 * rng.gen::<f64>() - 1.0);
                            budget += 0.5 * l.abs() * a * a;
                            coeffs.push(a);
                        }
                        let m = widths.len() - k;
                        let g: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                        let r = 1.05 * (2.0 * budget).sqrt() * rng.gen::<f64>().powf(1.0 / m as f64);
                        for (gi, l) in g.iter().zip(&pair.crit.eigenvalues[k..]) {
                            coeffs.push(r * gi / gn / l.abs().max(1e-12).sqrt());
                        }
                        for (a, e) in coeffs.iter().zip(&pair.crit.eigenvectors) {
                            for j in 0..v.len() {
                                v[j] += a * e[j];
                            }
                        }
                        sys.retract(&pair.crit.location, &v)
                    }
                };
                let m = set.classify(flow, &p)?;
                if m.inside && !m.near_boundary {
                    return Ok(p);
                }
            }
            Err(Error::Resolution(format!("could not sample {}", set.description)))
        })
        .collect()
}

/// Sampled check of the index pair axioms along trajectories with step τ/20.
pub fn verify_axioms(flow: &Semiflow, pair: &ConleyPair, samples: usize, seed: u64) -> Result<AxiomReport> {
    let x = &pair.crit.location;
    let crit_ok = pair.n.contains(flow, x)? && !pair.l.contains(flow, x)?;
    let pts = sample_n(flow, pair, samples, seed)?;
    let dt = pair.params.tau / 20.0;
    let results: Vec<Result<[usize; 4]>> = pts
        .par_iter()
        .map(|p| {
            let mut r = [0usize; 4];
            let mut cache = TrajectoryCache::new(flow, p);
            let mut prev: Option<(Membership, Membership)> = None;
            let max_steps = 4000;
            for j in 0..=max_steps {
                let s = j as f64 * dt;
                let mn = pair.n.expr.classify(&mut cache, s)?;
                let ml = pair.l.expr.classify(&mut cache, s)?;
                let band = mn.near_boundary || ml.near_boundary;
                if let Some((pn, pl)) = prev {
                    let prev_band = pn.near_boundary || pl.near_boundary;
                    if band || prev_band {
                        r[3] += 1;
                    } else {
                        if pl.inside && mn.inside && !ml.inside {
                            r[1] += 1;
                        }
                        if pn.inside && !mn.inside && !pl.inside {
                            r[2] += 1;
                        }
                    }
                }
                if !mn.inside && !mn.near_boundary {
                    return Ok(r);
                }
                if cache.stationary_before(s) {
                    let q = cache.at(s)?;
                    if flow.sys.distance(&q, x) > flow.params.basin_tol {
                        r[0] += 1;
                    }
                    return Ok(r);
                }
                prev = Some((mn, ml));
            }
            // still inside N after the horizon: must be converging to x
            let q = cache.at(max_steps as f64 * dt)?;
            let (lim, _) = flow.converge(&q)?;
            if flow.sys.distance(&lim, x) > flow.params.basin_tol {
                r[0] += 1;
            }
            Ok(r)
        })
        .collect();
    let mut rep = AxiomReport { samples: pts.len(), crit_in_n_minus_l: crit_ok, ..Default::default() };
    for r in results {
        let r = r?;
        rep.isolation_violations += r[0];
        rep.invariance_violations += r[1];
        rep.exit_violations += r[2];
        rep.band_skips += r[3];
    }
    Ok(rep)
}

/// Rasterized (N, L) at resolution n on the fitted chart.
pub struct PairRaster {
    pub chart: LocalChart,
    pub n_cells: Vec<bool>,
    pub l_cells: Vec<bool>,
}

pub fn rasterize_pair(flow: &Semiflow, pair: &ConleyPair, n: usize) -> Result<PairRaster> {
    let chart = pair
        .chart
        .as_ref()
        .ok_or_else(|| Error::Unsupported("cubical pair homology needs manifold dimension <= 2".into()))?
        .with_resolution(n);
    let cls = classify_cells(flow, &chart, &[&pair.raw_n, &pair.raw_l])?;
    let inside: Vec<bool> = cls.iter().map(|m| m[0].inside).collect();
    let start = start_cell(&chart, &inside).ok_or_else(|| Error::Resolution("N cells next to x missing".into()))?;
    let n_cells = chart.flood_fill(&inside, start);
    if touching_axes(&chart, &n_cells).iter().any(|&t| t) {
        return Err(Error::Resolution("N component touches the chart boundary".into()));
    }
    let l_cells: Vec<bool> = n_cells.iter().zip(&cls).map(|(&a, m)| a && m[1].inside).collect();
    Ok(PairRaster { chart, n_cells, l_cells })
}

/// H_*(N, L) from cubical rasters at resolution n.
pub fn conley_pair_homology(flow: &Semiflow, pair: &ConleyPair, n: usize) -> Result<Vec<HomologyGroup>> {
    let r = rasterize_pair(flow, pair, n)?;
    relative_homology(&r.chart.complex(&r.n_cells), &r.chart.complex(&r.l_cells))
}

/// Homology at n and 2n; a mismatch is a resolution failure.
pub fn conley_pair_homology_checked(flow: &Semiflow, pair: &ConleyPair, n: usize) -> Result<Vec<HomologyGroup>> {
    let a = conley_pair_homology(flow, pair, n)?;
    let b = conley_pair_homology(flow, pair, 2 * n)?;
    if a != b {
        return Err(Error::Resolution(format!(
            "pair homology of critical point {} changes under grid doubling ({n} -> {})",
            pair.crit.id,
            2 * n
        )));
    }
    Ok(a)
}

/// Unit directions in a k-dimensional coefficient space.
fn unit_directions(k: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match k {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..m).map(|j| {
            let a = 2.0 * PI * j as f64 / m as f64;
            vec![a.cos(), a.sin()]
        }).collect(),
        _ => (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() - 0.5).collect();
                let n = crate::systems::norm2(&v);
                v.iter().map(|x| x / n).collect()
            })
            .collect(),
    }
}

/// Seed radius for linear seeds on W^u_loc / W^s_loc.
pub const SEED_R: f64 = 1e-6;

/// First time the trajectory from `seed` reaches f ≤ level, with the trail.
fn shoot_down(flow: &Semiflow, seed: &[f64], level: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let sys = &flow.sys;
    let mut y = seed.to_vec();
    let mut h = 1e-3;
    let mut trail = vec![(0.0, y.clone())];
    let mut integ = Integrator::new(y.len());
    let mut hit = false;
    integ.advance(&mut y, flow.params.max_time, &mut h, flow.params.step_ctrl, |q, o| sys.vector_field(q, o), |q| sys.project(q), |s, q| {
        trail.push((s, q.to_vec()));
        hit = sys.value(q) <= level;
        !hit
    })?;
    if !hit {
        return Err(Error::Timeout("descending shot never reached the level".into()));
    }
    let (t0, y0) = trail[trail.len() - 2].clone();
    let t1 = trail[trail.len() - 1].0;
    let (mut l, mut r) = (0.0, t1 - t0);
    while r - l > flow.params.time_tol {
        let m = 0.5 * (l + r);
        if sys.value(&flow.flow(&y0, m)?) <= level {
            r = m;
        } else {
            l = m;
        }
    }
    let mut pts: Vec<Vec<f64>> = trail[..trail.len() - 1].iter().map(|s| s.1.clone()).collect();
    pts.push(flow.flow(&y0, r)?);
    Ok((t0 + r, pts))
}

/// Reversed-flow shot from `seed` until f ≥ level (stable-manifold branch).
fn shoot_up(flow: &Semiflow, seed: &[f64], level: f64) -> Result<Vec<Vec<f64>>> {
    let sys = &flow.sys;
    let mut y = seed.to_vec();
    let mut h = 1e-3;
    let mut trail = vec![y.clone()];
    let mut integ = Integrator::new(y.len());
    let mut hit = false;
    integ.advance(&mut y, 100.0, &mut h, flow.params.step_ctrl, |q, o| sys.grad(q, o), |q| sys.project(q), |_, q| {
        hit = sys.value(q) >= level;
        if !hit {
            trail.push(q.to_vec());
        }
        !hit
    })?;
    if !hit {
        return Err(Error::Timeout("ascending shot never reached the level".into()));
    }
    Ok(trail)
}

#[derive(Clone, Debug)]
pub struct DiskSamples {
    /// S^u_ε(x) = W^u(x) ∩ {f = c - ε}, certified unstable points.
    pub descending_sphere: Vec<UnstablePoint>,
    /// Trails from x to each sphere point (the descending disk).
    pub descending: Vec<Vec<Vec<f64>>>,
    /// Branches of W^s_ε(x) from x up to {f = c + ε}.
    pub ascending: Vec<Vec<Vec<f64>>>,
}

pub fn sample_disks(flow: &Semiflow, crit: &CriticalPoint, eps: f64, m: usize, seed: u64) -> Result<DiskSamples> {
    let sys = &flow.sys;
    let k = crit.index;
    let c = crit.value;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    let rates = crit.unstable_rates();
    let mut sphere = Vec::new();
    let mut descending = Vec::new();
    for dir in unit_directions(k, m, &mut rng) {
        let seed_pt = crate::semiflow::linear_seed(sys, &crit.location, &crit.neg_frame, &dir, SEED_R);
        let (t, trail) = shoot_down(flow, &seed_pt, c - eps)?;
        sphere.push(flow.unstable_point(crit.id, &crit.location, &rates, &crit.neg_frame, &dir, SEED_R, t)?);
        let mut tr = vec![crit.location.clone()];
        tr.extend(trail);
        descending.push(tr);
    }
    let stable = &crit.eigenvectors[k..];
    let mut ascending = Vec::new();
    for dir in unit_directions(stable.len(), m, &mut rng) {
        let seed_pt = crate::semiflow::linear_seed(sys, &crit.location, stable, &dir, SEED_R);
        let mut tr = vec![crit.location.clone()];
        tr.extend(shoot_up(flow, &seed_pt, c + eps)?);
        ascending.push(tr);
    }
    Ok(DiskSamples { descending_sphere: sphere, descending, ascending })
}

/// Metric distance from p to a polyline (segments in local displacement coordinates).
pub fn polyline_distance(sys: &RiemannianSystem, p: &[f64], line: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for w in line.windows(2) {
        let d0 = sys.displacement(&w[0], p);
        let seg = sys.displacement(&w[0], &w[1]);
        let ss = sys.inner(&seg, &seg);
        let t = if ss > 0.0 { (sys.inner(&d0, &seg) / ss).clamp(0.0, 1.0) } else { 0.0 };
        let r: Vec<f64> = d0.iter().zip(&seg).map(|(a, b)| a - t * b).collect();
        best = best.min(sys.norm(&r));
    }
    if line.len() == 1 {
        best = sys.distance(p, &line[0]);
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafProbe {
    pub crit: usize,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub rate: f64,
    pub r_squared: f64,
    pub spectral_gap: f64,
}

impl LeafProbe {
    pub fn passes(&self) -> bool {
        self.rate >= self.spectral_gap / 16.0 && self.r_squared >= 0.9
    }
}

/// Least squares fit of log(y) = a - rate·t; returns (rate, R²).
pub fn log_linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(&ly).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (-slope, r2)
}

/// Distance from the time-T leaf through γ ∈ S^u_ε (+ branch) to W^s_ε(x), for
/// T_j = τ + j/d. Leaf points are found on lines through W^s samples along the
/// unstable direction by bisecting f(φ_T z) = c - ε.
pub fn leaf_convergence_probe(flow: &Semiflow, pair: &ConleyPair, probes: usize, per_branch: usize) -> Result<LeafProbe> {
    let sys = &flow.sys;
    let crit = &pair.crit;
    if crit.index == 0 {
        return Err(Error::Input("leaf probe needs an index >= 1 critical point".into()));
    }
    let eps = pair.params.epsilon;
    let disks = sample_disks(flow, crit, eps, 16, 7)?;
    let v = &crit.neg_frame[0];
    let level = crit.value - eps;
    let d = crit.spectral_gap;
    let mut samples = Vec::new();
    for br in &disks.ascending {
        let step = (br.len() / per_branch).max(1);
        for (i, s) in br.iter().enumerate() {
            if i > 0 && i % step == 0 {
                samples.push(s.clone());
            }
        }
    }
    let times: Vec<f64> = (1..=probes).map(|j| pair.params.tau + j as f64 / d).collect();
    let mut distances = Vec::new();
    for &t in &times {
        let found: Vec<Option<f64>> = samples
            .par_iter()
            .map(|s| -> Result<Option<f64>> {
                let g = |u: f64| -> Result<f64> {
                    let z = sys.retract(s, &v.iter().map(|a| a * u).collect::<Vec<_>>());
                    Ok(sys.value(&flow.flow(&z, t)?) - level)
                };
                if g(0.0)? <= 0.0 {
                    return Ok(None);
                }
                let mut hi = pair.rho;
                if g(hi)? > 0.0 {
                    return Ok(None);
                }
                let mut lo = 0.0;
                for _ in 0..80 {
                    let m = 0.5 * (lo + hi);
                    if g(m)? > 0.0 {
                        lo = m;
                    } else {
                        hi = m;
                    }
                    if hi - lo < 1e-15 * hi.max(1e-300) * 1e3 {
                        break;
                    }
                }
                let z = sys.retract(s, &v.iter().map(|a| a * hi).collect::<Vec<_>>());
                let dist = disks.ascending.iter().map(|br| polyline_distance(sys, &z, br)).fold(f64::INFINITY, f64::min);
                Ok(Some(dist))
            })
            .collect::<Result<_>>()?;
        let m = found.into_iter().flatten().fold(0.0f64, f64::max);
        if m <= 0.0 {
            return Err(Error::Probe(format!("no leaf points found at T = {t:.4}")));
        }
        distances.push(m);
    }
    let (rate, r_squared) = log_linear_fit(&times, &distances);
    Ok(LeafProbe { crit: crit.id, times, distances, rate, r_squared, spectral_gap: d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{choose_rho, find_critical_points, SearchConfig};
    use crate::semiflow::FlowParams;

    fn setup(sys: RiemannianSystem) -> (Semiflow, CritRegistry) {
        let flow = Semiflow::new(sys, FlowParams::default());
        let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
        reg.separation = choose_rho(&reg, &flow, 32, 1).unwrap().rho;
        (flow, reg)
    }

    fn ranks(g: &[HomologyGroup]) -> Vec<usize> {
        g.iter().map(|h| h.betti).collect()
    }

    #[test]
    fn circle_pairs_have_point_homology() {
        let (flow, reg) = setup(RiemannianSystem::circle());
        let cfg = ConleyConfig { pilot_samples: 50, ..Default::default() };
        for c in &reg.points {
            let pair = conley_pair(&flow, &reg, c.id, &cfg).unwrap();
            let h = conley_pair_homology_checked(&flow, &pair, 64).unwrap();
            let mut expect = vec![0; 2];
            expect[c.index] = 1;
            assert_eq!(ranks(&h), expect);
        }
    }

    #[test]
    fn exit_set_contains_backward_unstable_points() {
        let (flow, reg) = setup(RiemannianSystem::torus2());
        let cfg = ConleyConfig { pilot_samples: 50, ..Default::default() };
        let saddle = reg.of_index(1)[0].id;
        let pair = conley_pair(&flow, &reg, saddle, &cfg).unwrap();
        let disks = sample_disks(&flow, &pair.crit, pair.params.epsilon, 8, 1).unwrap();
        assert_eq!(disks.descending_sphere.len(), 2);
        let tau = pair.params.tau;
        for q in &disks.descending_sphere {
            // φ_{-s} q lies in N exactly for s > τ
            let inside = flow.backward_flow_unstable(q, 1.2 * tau).unwrap();
            assert!(pair.n.contains(&flow, &inside.point).unwrap());
            let outside = flow.backward_flow_unstable(q, 0.8 * tau).unwrap();
            assert!(!pair.n.contains(&flow, &outside.point).unwrap());
            let exit = flow.backward_flow_unstable(q, 1.5 * tau).unwrap();
            assert!(pair.l.contains(&flow, &exit.point).unwrap());
        }
    }

    #[test]
    fn negative_controls() {
        let (flow, reg) = setup(RiemannianSystem::torus2());
        let cfg = ConleyConfig::default();
        let saddle = reg.of_index(1)[0];
        let gap = reg.action_gap();
        let big = build_pair(&flow, &reg, saddle.id, ConleyParams { epsilon: 1.2 * gap, tau: 0.5 / saddle.spectral_gap }, &cfg);
        assert!(match big {
            Ok(p) => !p.isolation.ok(),
            Err(e) => matches!(e, Error::Isolation(_)),
        });
        let tiny = build_pair(&flow, &reg, saddle.id, ConleyParams { epsilon: 0.25 * gap, tau: 1e-4 / saddle.spectral_gap }, &cfg);
        assert!(match tiny {
            Ok(p) => !p.isolation.ok(),
            Err(e) => matches!(e, Error::Isolation(_)),
        });
    }

    #[test]
    fn log_fit_recovers_rate() {
        let t = [1.0f64, 2.0, 3.0];
        let y: Vec<f64> = t.iter().map(|s| 2.0 * (-3.0 * s).exp()).collect();
        let (r, r2) = log_linear_fit(&t, &y);
        assert!((r - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
