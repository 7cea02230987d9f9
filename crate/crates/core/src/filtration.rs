//! Filtration F_0 ⊂ … ⊂ F_m = Λ^a by flow preimages of the index pairs, its
//! sampled invariants, cubical rasters, cellular groups and the comparison map Θ.

use crate::conley::{sample_disks, sample_l, ConleyPair};
use crate::critical::CritRegistry;
use crate::error::{Error, Result};
use crate::homology::{
    connecting_and_induced_maps, relative_homology, CellKey, CubicalComplex, HomologyGroup, IntegerMatrix, KeyChain, PairModel,
};
use crate::morse_complex::MorseComplex;
use crate::raster::{GlobalGrid, GlobalKind};
use crate::semiflow::{linear_seed, Semiflow, SetExpr, SetOracle, TrajectoryCache};
use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationConfig {
    /// T_{k+1} = time_factor · max entrance time of the exit-set samples.
    pub time_factor: f64,
    pub exit_samples: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for FiltrationConfig {
    fn default() -> Self {
        FiltrationConfig { time_factor: 1.5, exit_samples: 400, max_depth: 40, seed: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct Filtration {
    pub level: f64,
    /// T_1, …, T_m.
    pub times: Vec<f64>,
    /// F_0, …, F_m.
    pub sets: Vec<SetOracle>,
}

impl Filtration {
    pub fn top(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.sets.iter().map(|s| s.expr.horizon()).fold(0.0, f64::max)
    }
}

/// Factor times the largest entrance time of the samples into A; infinite
/// entrance is a construction failure.
pub fn uniform_time(flow: &Semiflow, a: &SetOracle, samples: &[Vec<f64>], factor: f64) -> Result<f64> {
    let times: Vec<f64> = samples.par_iter().map(|p| flow.entrance_time(a, p)).collect::<Result<_>>()?;
    let worst = times.iter().copied().fold(0.0, f64::max);
    if !worst.is_finite() {
        return Err(Error::Construction(format!("an exit-set sample never enters {}", a.description)));
    }
    Ok(factor * worst)
}

fn union(mut v: Vec<SetExpr>) -> SetExpr {
    v.retain(|e| !matches!(e, SetExpr::Empty));
    match v.len() {
        0 => SetExpr::Empty,
        1 => v.pop().unwrap(),
        _ => SetExpr::Union(v),
    }
}

/// F_k = Λ^a ∩ φ_{T_{k+1}}^{-1}(N_k ∪ F_{k-1}) for k < m, F_m = Λ^a.
pub fn build_filtration(flow: &Semiflow, reg: &CritRegistry, pairs: &[ConleyPair], cfg: &FiltrationConfig) -> Result<Filtration> {
    let m = reg.max_index().unwrap_or(0);
    let lam = if reg.level.is_finite() { SetExpr::Sublevel { level: reg.level, closed: false } } else { SetExpr::Whole };
    let mut sets = Vec::new();
    let mut times = Vec::new();
    let mut prev = SetExpr::Empty;
    for k in 0..m {
        let nk: Vec<SetExpr> = pairs.iter().filter(|p| p.crit.index == k).map(|p| p.n.expr.clone()).collect();
        let a = SetOracle::new(union(nk.into_iter().chain([prev.clone()]).collect()));
        let mut samples = Vec::new();
        for p in pairs.iter().filter(|p| p.crit.index == k + 1) {
            samples.extend(sample_l(flow, p, cfg.exit_samples, cfg.seed ^ p.crit.id as u64)?);
        }
        let t = if samples.is_empty() { 0.0 } else { uniform_time(flow, &a, &samples, cfg.time_factor)? };
        let fk = match &lam {
            SetExpr::Whole => SetExpr::preimage(t, a.expr),
            l => SetExpr::Intersection(vec![l.clone(), SetExpr::preimage(t, a.expr)]),
        };
        sets.push(SetOracle::named(&format!("F_{k}"), fk.clone()));
        times.push(t);
        prev = fk;
    }
    sets.push(SetOracle::named(&format!("F_{m}"), lam));
    Ok(Filtration { level: reg.level, times, sets })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct InvariantReport {
    pub samples: usize,
    pub nesting_violations: usize,
    pub invariance_violations: usize,
    pub exit_containment_violations: usize,
    pub critical_violations: usize,
    pub band_skips: usize,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.nesting_violations == 0
            && self.invariance_violations == 0
            && self.exit_containment_violations == 0
            && self.critical_violations == 0
    }
}

/// Sampled checks of nesting, forward invariance at five times, L_{k+1} ⊂ F_k
/// and F_k ∩ Crit = Crit_{≤k}.
pub fn check_invariants(
    flow: &Semiflow,
    reg: &CritRegistry,
    pairs: &[ConleyPair],
    filt: &Filtration,
    samples: usize,
    seed: u64,
) -> Result<InvariantReport> {
    let sys = &flow.sys;
    let m = filt.top();
    let mut rep = InvariantReport { samples, ..Default::default() };
    for c in &reg.points {
        for (k, f) in filt.sets.iter().enumerate() {
            if f.contains(flow, &c.location)? != (c.index <= k) {
                rep.critical_violations += 1;
            }
        }
    }
    let pts: Vec<Vec<f64>> = (0..samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
            loop {
                let p = sys.random_point(&mut rng);
                if !filt.level.is_finite() || sys.value(&p) < filt.level {
                    return p;
                }
            }
        })
        .collect();
    let times = [0.05, 0.2, 0.5, 1.0, 2.0];
    let per_point: Vec<[usize; 3]> = pts
        .par_iter()
        .map(|p| -> Result<[usize; 3]> {
            let mut r = [0usize; 3];
            let mut cache = TrajectoryCache::new(flow, p);
            let ms: Vec<_> = filt.sets.iter().map(|f| f.expr.classify(&mut cache, 0.0)).collect::<Result<_>>()?;
            for k in 1..=m {
                if ms[k - 1].near_boundary || ms[k].near_boundary {
                    r[2] += 1;
                } else if ms[k - 1].inside && !ms[k].inside {
                    r[0] += 1;
                }
            }
            for (k, f) in filt.sets.iter().enumerate() {
                if !ms[k].inside || ms[k].near_boundary {
                    continue;
                }
                for &s in &times {
                    let q = flow.flow(p, s)?;
                    let mq = f.classify(flow, &q)?;
                    if mq.near_boundary {
                        r[2] += 1;
                    } else if !mq.inside {
                        r[1] += 1;
                    }
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    for r in per_point {
        rep.nesting_violations += r[0];
        rep.invariance_violations += r[1];
        rep.band_skips += r[2];
    }
    for k in 0..m {
        let per = (samples / pairs.iter().filter(|p| p.crit.index == k + 1).count().max(1)).max(1);
        for p in pairs.iter().filter(|p| p.crit.index == k + 1) {
            let ls = sample_l(flow, p, per, seed ^ 0xe417 ^ p.crit.id as u64)?;
            let bad: Vec<(bool, bool)> = ls
                .par_iter()
                .map(|q| filt.sets[k].classify(flow, q).map(|m| (m.inside, m.near_boundary)))
                .collect::<Result<_>>()?;
            for (inside, band) in bad {
                if band {
                    rep.band_skips += 1;
                } else if !inside {
                    rep.exit_containment_violations += 1;
                }
            }
        }
    }
    Ok(rep)
}

/// Cubical inner approximations of F_0 ⊂ … ⊂ F_m on a global grid.
#[derive(Clone, Debug)]
pub struct FiltrationRaster {
    pub grid: GlobalGrid,
    pub complexes: Vec<CubicalComplex>,
    /// Cells of F_{k-1} added to F_k to enforce nesting.
    pub repairs: usize,
    /// Extra points evaluated while refining edges.
    pub refinements: usize,
}

impl FiltrationRaster {
    pub fn complex(&self, k: isize) -> CubicalComplex {
        if k < 0 {
            CubicalComplex::empty(self.grid.lattice.clone())
        } else {
            self.complexes[k as usize].clone()
        }
    }

    /// Top-cell masks in lattice top-cell order, for grid files.
    pub fn top_masks(&self) -> (Vec<CellKey>, Vec<Vec<bool>>) {
        let full = self.grid.full();
        let tops: Vec<CellKey> = full.cells().iter().copied().filter(|&k| self.grid.is_top(k)).collect();
        let masks = self.complexes.iter().map(|c| tops.iter().map(|&k| c.contains(k)).collect()).collect();
        (tops, masks)
    }
}

struct PointEval {
    member: Vec<bool>,
    cp: Vec<Vec<f64>>,
}

fn eval_point(flow: &Semiflow, sets: &[SetOracle], cps: &[f64], p: &[f64]) -> Result<PointEval> {
    let mut cache = TrajectoryCache::new(flow, p);
    let member = sets.iter().map(|s| s.expr.classify(&mut cache, 0.0).map(|m| m.inside)).collect::<Result<_>>()?;
    let cp = cps.iter().map(|&t| cache.at(t)).collect::<Result<_>>()?;
    Ok(PointEval { member, cp })
}

fn diverge(flow: &Semiflow, a: &PointEval, b: &PointEval, sep: f64) -> bool {
    a.cp.iter().zip(&b.cp).any(|(p, q)| flow.sys.distance(p, q) > sep)
}

struct Refiner<'a> {
    flow: &'a Semiflow,
    grid: &'a GlobalGrid,
    sets: &'a [SetOracle],
    cps: &'a [f64],
    sep: f64,
    max_depth: usize,
}

impl Refiner<'_> {
    /// Clears flags of sets missing some point of the segment, bisecting while
    /// the endpoint trajectories diverge.
    fn refine(&self, lo: &[f64], a: &PointEval, hi: &[f64], b: &PointEval, flags: &mut [bool], depth: usize, count: &mut usize) -> Result<()> {
        if !flags.iter().any(|&f| f) || depth >= self.max_depth || !diverge(self.flow, a, b, self.sep) {
            return Ok(());
        }
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(x, y)| 0.5 * (x + y)).collect();
        let e = eval_point(self.flow, self.sets, self.cps, &self.grid.position(&mid))?;
        *count += 1;
        for (f, m) in flags.iter_mut().zip(&e.member) {
            *f &= m;
        }
        self.refine(lo, a, &mid, &e, flags, depth + 1, count)?;
        self.refine(&mid, &e, hi, b, flags, depth + 1, count)
    }
}

fn checkpoints(h: f64) -> Vec<f64> {
    let h = h.max(0.05);
    let mut t: Vec<f64> = (1..=24).map(|j| h * j as f64 / 24.0).collect();
    let mut s = 0.005;
    while s < h {
        t.push(s);
        s *= 2.0;
    }
    t.sort_by(|a, b| a.total_cmp(b));
    t
}

/// Rasterizes every F_k: a vertex is in when its point is, an edge when every
/// bisection point is (refined by trajectory divergence), a top cell when its
/// edges are and it contains no critical point outside F_k.
pub fn rasterize_filtration(flow: &Semiflow, reg: &CritRegistry, filt: &Filtration, n: usize, cfg: &FiltrationConfig) -> Result<FiltrationRaster> {
    let grid = GlobalGrid::for_system(&flow.sys, n)?;
    let lat = &grid.lattice;
    let full = grid.full();
    let sets = &filt.sets;
    let ns = sets.len();
    let cps = checkpoints(filt.horizon());
    let by_dim = |d: usize| -> Vec<CellKey> { full.cells().iter().copied().filter(|&k| lat.cell_dim(k) == d).collect() };
    let verts = by_dim(0);
    let edges = by_dim(1);
    let vevals: Vec<PointEval> =
        verts.par_iter().map(|&v| eval_point(flow, sets, &cps, &grid.key_position(v))).collect::<Result<_>>()?;
    let vindex: HashMap<CellKey, usize> = verts.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let crit_member: Vec<(Vec<CellKey>, Vec<bool>)> = reg
        .points
        .iter()
        .map(|c| -> Result<_> {
            let m = sets.iter().map(|s| s.contains(flow, &c.location)).collect::<Result<Vec<bool>>>()?;
            Ok((grid.cells_containing(&c.location), m))
        })
        .collect::<Result<_>>()?;
    let refiner = Refiner { flow, grid: &grid, sets, cps: &cps, sep: 0.25 * reg.separation, max_depth: cfg.max_depth };
    let edge_flags: Vec<(Vec<bool>, usize)> = edges
        .par_iter()
        .map(|&e| -> Result<(Vec<bool>, usize)> {
            let c = lat.coords(e);
            let axis = (0..c.len()).find(|&i| c[i] & 1 == 1).unwrap();
            let mut lo: Vec<f64> = c.iter().map(|&x| x as f64).collect();
            let mut hi = lo.clone();
            lo[axis] -= 1.0;
            hi[axis] += 1.0;
            let ends: Vec<CellKey> = lat.boundary(e).into_iter().map(|(k, _)| k).collect();
            let lo_key = lat.key(&lo.iter().map(|&x| x as i64).collect::<Vec<_>>()).unwrap();
            let (ka, kb) = if ends[0] == lo_key { (ends[0], ends[1]) } else { (ends[1], ends[0]) };
            let (a, b) = (&vevals[vindex[&ka]], &vevals[vindex[&kb]]);
            let mut flags: Vec<bool> = (0..ns).map(|k| a.member[k] && b.member[k]).collect();
            let mut count = 0;
            refiner.refine(&lo, a, &hi, b, &mut flags, 0, &mut count)?;
            if grid.dim() == 1 {
                for (cells, m) in &crit_member {
                    if cells.contains(&e) {
                        for k in 0..ns {
                            flags[k] &= m[k];
                        }
                    }
                }
            }
            Ok((flags, count))
        })
        .collect::<Result<_>>()?;
    let eindex: HashMap<CellKey, usize> = edges.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let refinements = edge_flags.iter().map(|f| f.1).sum();
    let tops: Vec<CellKey> = if grid.dim() == 2 { by_dim(2) } else { vec![] };
    let top_flags: Vec<Vec<bool>> = tops
        .iter()
        .map(|&t| {
            let mut flags = vec![true; ns];
            for (f, _) in lat.boundary(t) {
                for k in 0..ns {
                    flags[k] &= edge_flags[eindex[&f]].0[k];
                }
            }
            for (cells, m) in &crit_member {
                if cells.contains(&t) {
                    for k in 0..ns {
                        flags[k] &= m[k];
                    }
                }
            }
            flags
        })
        .collect();
    let mut complexes: Vec<CubicalComplex> = Vec::new();
    let mut repairs = 0;
    for k in 0..ns {
        let mut cells: Vec<CellKey> = Vec::new();
        cells.extend(verts.iter().zip(&vevals).filter(|(_, e)| e.member[k]).map(|(&v, _)| v));
        cells.extend(edges.iter().zip(&edge_flags).filter(|(_, f)| f.0[k]).map(|(&e, _)| e));
        cells.extend(tops.iter().zip(&top_flags).filter(|(_, f)| f[k]).map(|(&t, _)| t));
        let mut cx = CubicalComplex::from_closed_cells(lat.clone(), cells)?;
        if let Some(prev) = complexes.last() {
            let before = cx.len();
            cx = cx.union(prev);
            repairs += cx.len() - before;
        }
        complexes.push(cx);
    }
    Ok(FiltrationRaster { grid, complexes, repairs, refinements })
}

/// H_*(F_k, F_{k-1}) for every k.
pub fn relative_groups(r: &FiltrationRaster) -> Result<Vec<Vec<HomologyGroup>>> {
    (0..r.complexes.len()).map(|k| relative_homology(&r.complex(k as isize), &r.complex(k as isize - 1))).collect()
}

fn wrapped_delta(grid: &GlobalGrid, from: &[i64], to: &[i64]) -> Vec<i64> {
    (0..from.len())
        .map(|i| {
            let d = to[i] - from[i];
            if grid.lattice.periodic[i] {
                let e = grid.lattice.extent(i);
                (d + e / 2).rem_euclid(e) - e / 2
            } else {
                d
            }
        })
        .collect()
}

/// Lattice 1-chain following a polyline vertex by vertex.
fn path_chain(grid: &GlobalGrid, sys: &crate::systems::RiemannianSystem, line: &[Vec<f64>]) -> Result<KeyChain> {
    if grid.kind == GlobalKind::CubeSphere {
        return Err(Error::Unsupported("index-1 disk chains on the cube sphere".into()));
    }
    let lat = &grid.lattice;
    let cell = 1.0 / grid.n as f64;
    let mut dense = vec![line[0].clone()];
    for w in line.windows(2) {
        let d = sys.displacement(&w[0], &w[1]);
        let steps = (sys.norm(&d) / (0.25 * cell)).ceil().max(1.0) as usize;
        for s in 1..=steps {
            let v: Vec<f64> = d.iter().map(|x| x * s as f64 / steps as f64).collect();
            dense.push(sys.retract(&w[0], &v));
        }
    }
    let mut chain = KeyChain::new();
    let mut cur = lat.coords(grid.nearest_vertex(&dense[0]));
    for p in &dense[1..] {
        let target = lat.coords(grid.nearest_vertex(p));
        loop {
            let delta = wrapped_delta(grid, &cur, &target);
            let Some(i) = (0..delta.len()).filter(|&i| delta[i] != 0).max_by_key(|&i| delta[i].abs()) else { break };
            let s = delta[i].signum();
            let mut e = cur.clone();
            e[i] += s;
            let key = lat.key(&e).unwrap();
            let v = chain.entry(key).or_insert(0);
            *v += s;
            if *v == 0 {
                chain.remove(&key);
            }
            cur[i] = lat.wrap(i, cur[i] + 2 * s).unwrap();
        }
    }
    Ok(chain)
}

/// Relative cycle of (F_k, F_{k-1}) carried by D' = φ_{-1.5τ}(closure W^u_ε(x)),
/// oriented by the unstable frame.
pub fn disk_chain(flow: &Semiflow, r: &FiltrationRaster, pair: &ConleyPair) -> Result<KeyChain> {
    let sys = &flow.sys;
    let x = &pair.crit;
    let grid = &r.grid;
    let k = x.index;
    let chain: KeyChain = match k {
        0 => [(grid.nearest_vertex(&x.location), 1)].into_iter().collect(),
        1 => {
            let disks = sample_disks(flow, x, pair.params.epsilon, 2, 1)?;
            let mut branches = Vec::new();
            for q in &disks.descending_sphere {
                let e = flow.backward_flow_unstable(q, 1.5 * pair.params.tau)?;
                let seed = linear_seed(sys, &x.location, &e.frame, &e.coeffs, e.seed_r);
                let mut line = vec![x.location.clone(), seed.clone()];
                if e.seed_time > 0.0 {
                    line.extend(flow.trajectory(&seed, e.seed_time)?.points.into_iter().skip(1));
                }
                branches.push((e.coeffs[0], line));
            }
            branches.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut line: Vec<Vec<f64>> = branches[0].1.iter().rev().cloned().collect();
            line.extend(branches[1].1.iter().skip(1).cloned());
            path_chain(grid, sys, &line)?
        }
        2 if grid.dim() == 2 => {
            let dprime = SetExpr::Intersection(vec![
                pair.n.expr.clone(),
                SetExpr::preimage(1.5 * pair.params.tau, SetExpr::Superlevel { level: x.value - pair.params.epsilon, closed: true }),
            ]);
            let tops: Vec<CellKey> = grid.full().cells().iter().copied().filter(|&c| grid.is_top(c)).collect();
            let picked: Vec<Option<(CellKey, i64)>> = tops
                .par_iter()
                .map(|&c| -> Result<Option<(CellKey, i64)>> {
                    let p = grid.key_position(c);
                    if sys.distance(&p, &x.location) > pair.rho {
                        return Ok(None);
                    }
                    let mut cache = TrajectoryCache::new(flow, &p);
                    if dprime.classify(&mut cache, 0.0)?.inside {
                        Ok(Some((c, grid.cell_orientation(c, &x.neg_frame, &x.location))))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            picked.into_iter().flatten().collect()
        }
        _ => return Err(Error::Unsupported(format!("disk chains for index {k} in dimension {}", grid.dim()))),
    };
    let fk = r.complex(k as isize);
    let fprev = r.complex(k as isize - 1);
    if let Some(c) = chain.keys().find(|&&c| !fk.contains(c)) {
        return Err(Error::Basis(format!("disk chain of critical point {} leaves F_{k} at cell {c}", x.id)));
    }
    let bd = fk.key_boundary(&chain);
    if let Some(c) = bd.keys().find(|&&c| !fprev.contains(c)) {
        return Err(Error::Basis(format!("boundary of the disk chain of {} leaves F_{} at cell {c}", x.id, k as isize - 1)));
    }
    Ok(chain)
}

/// Θ_k: columns are the coordinates of the disk chains of the degree-k
/// generators in the chosen basis of H_k(F_k, F_{k-1}).
pub fn theta_map(flow: &Semiflow, r: &FiltrationRaster, pairs: &[ConleyPair], mc: &MorseComplex, k: usize) -> Result<IntegerMatrix> {
    let model = PairModel::new(&r.complex(k as isize), Some(&r.complex(k as isize - 1)))?;
    let gens = mc.generators.get(k).cloned().unwrap_or_default();
    let mut theta = IntegerMatrix::zeros(model.betti(k), gens.len());
    for (j, id) in gens.iter().enumerate() {
        let pair = pairs.iter().find(|p| p.crit.id == *id).ok_or_else(|| Error::Input(format!("no pair for {id}")))?;
        let mut chain = disk_chain(flow, r, pair)?;
        if mc.orientation.get(id).copied().unwrap_or(1) < 0 {
            for v in chain.values_mut() {
                *v = -*v;
            }
        }
        for (i, v) in model.coordinates(k, &chain)?.free.into_iter().enumerate() {
            theta.set(i, j, v);
        }
    }
    Ok(theta)
}

/// Triple boundary H_k(F_k, F_{k-1}) → H_{k-1}(F_{k-1}, F_{k-2}).
pub fn triple_boundary(r: &FiltrationRaster, k: usize) -> Result<IntegerMatrix> {
    let maps = connecting_and_induced_maps(&r.complex(k as isize), &r.complex(k as isize - 1), &r.complex(k as isize - 2), k)?;
    Ok(maps.triple)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellularReport {
    pub relative_betti: Vec<Vec<usize>>,
    pub relative_torsion: Vec<Vec<Vec<u64>>>,
    pub theta: Vec<IntegerMatrix>,
    pub theta_det: Vec<Option<BigInt>>,
    pub triple: Vec<IntegerMatrix>,
    pub intertwines: bool,
    pub repairs: usize,
}

impl CellularReport {
    pub fn concentrated(&self, counts: &[usize]) -> bool {
        self.relative_betti.iter().enumerate().all(|(k, row)| {
            row.iter().enumerate().all(|(l, &b)| b == if l == k { counts.get(k).copied().unwrap_or(0) } else { 0 })
        }) && self.relative_torsion.iter().flatten().all(|t| t.is_empty())
    }

    pub fn theta_isomorphism(&self) -> bool {
        self.theta_det.iter().all(|d| d.as_ref().is_some_and(|d| *d == BigInt::from(1) || *d == BigInt::from(-1)))
    }
}

pub fn cellular_report(flow: &Semiflow, r: &FiltrationRaster, pairs: &[ConleyPair], mc: &MorseComplex) -> Result<CellularReport> {
    let groups = relative_groups(r)?;
    let relative_betti = groups.iter().map(|g| g.iter().map(|h| h.betti).collect()).collect();
    let relative_torsion = groups.iter().map(|g| g.iter().map(|h| h.torsion.clone()).collect()).collect();
    let top = r.complexes.len() - 1;
    let mut theta = Vec::new();
    let mut theta_det = Vec::new();
    for k in 0..=top {
        let t = theta_map(flow, r, pairs, mc, k)?;
        theta_det.push(if t.rows == t.cols { Some(if t.rows == 0 { BigInt::from(1) } else { t.det() }) } else { None });
        theta.push(t);
    }
    let mut triple = vec![IntegerMatrix::zeros(0, 0)];
    let mut intertwines = true;
    for k in 1..=top {
        let d = triple_boundary(r, k)?;
        let lhs = d.mul(&theta[k]);
        let rhs = theta[k - 1].mul(&mc.boundary(k));
        intertwines &= lhs == rhs;
        triple.push(d);
    }
    Ok(CellularReport { relative_betti, relative_torsion, theta, theta_det, triple, intertwines, repairs: r.repairs })
}

/// Inner raster of the open sublevel set {f < b}.
pub fn sublevel_raster(grid: &GlobalGrid, sys: &crate::systems::RiemannianSystem, b: f64) -> Result<CubicalComplex> {
    let full = grid.full();
    let cells: Vec<CellKey> = full
        .cells()
        .iter()
        .copied()
        .filter(|&k| grid.lattice.closure(k).iter().all(|&f| sys.value(&grid.key_position(f)) < b))
        .collect();
    CubicalComplex::from_closed_cells(grid.lattice.clone(), cells)
}

/// Ranks of H_k(sub) → H_k(sup) induced by inclusion.
pub fn inclusion_ranks(sub: &CubicalComplex, sup: &CubicalComplex) -> Result<Vec<usize>> {
    let ms = PairModel::new(sub, None)?;
    let mp = PairModel::new(sup, None)?;
    (0..=sup.lattice.dim())
        .map(|k| {
            let mut m = IntegerMatrix::zeros(mp.betti(k), ms.betti(k));
            for j in 0..ms.betti(k) {
                let g = ms.generator(k, j)?;
                for (i, v) in mp.coordinates(k, &g)?.free.into_iter().enumerate() {
                    m.set(i, j, v);
                }
            }
            Ok(m.rank())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conley::{conley_pairs, ConleyConfig};
    use crate::connections::{enumerate_connections, ConnectionConfig};
    use crate::critical::{choose_rho, find_critical_points, SearchConfig};
    use crate::morse_complex::build_complex;
    use crate::semiflow::FlowParams;
    use crate::systems::RiemannianSystem;

    #[test]
    fn circle_filtration_end_to_end() {
        let flow = Semiflow::new(RiemannianSystem::circle(), FlowParams::default());
        let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
        reg.separation = choose_rho(&reg, &flow, 16, 1).unwrap().rho;
        let pairs = conley_pairs(&flow, &reg, &ConleyConfig { pilot_samples: 50, ..Default::default() }).unwrap();
        let cfg = FiltrationConfig::default();
        let filt = build_filtration(&flow, &reg, &pairs, &cfg).unwrap();
        assert_eq!(filt.times.len(), 1);
        let inv = check_invariants(&flow, &reg, &pairs, &filt, 200, 1).unwrap();
        assert!(inv.ok(), "{inv:?}");
        let r = rasterize_filtration(&flow, &reg, &filt, 256, &cfg).unwrap();
        let conns = enumerate_connections(&flow, &reg, &ConnectionConfig::default()).unwrap();
        let mc = build_complex(&reg, &conns).unwrap();
        let rep = cellular_report(&flow, &r, &pairs, &mc).unwrap();
        assert!(rep.concentrated(&[1, 1]), "{:?}", rep.relative_betti);
        assert!(rep.theta_isomorphism() && rep.intertwines);
    }
}
