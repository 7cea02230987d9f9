//! Critical point search, nondegeneracy certificates and separation radii.

use crate::error::{Error, Result};
use crate::semiflow::Semiflow;
use crate::systems::{random_loop, Geometry, RiemannianSystem};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub id: usize,
    pub location: Vec<f64>,
    pub value: f64,
    pub index: usize,
    /// Eigenvectors of the negative eigenvalues in ascending order.
    pub neg_frame: Vec<Vec<f64>>,
    pub spectral_gap: f64,
    pub pos_min_eig: f64,
    pub eigenvalues: Vec<f64>,
    /// Full eigenbasis (ascending), metric-orthonormal.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl CriticalPoint {
    /// Growth rates of the unstable directions under the semi-flow.
    pub fn unstable_rates(&self) -> Vec<f64> {
        self.eigenvalues[..self.index].iter().map(|l| -l).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientedCriticalPoint {
    pub crit: usize,
    pub orientation: i8,
}

pub fn orient(crit: &CriticalPoint, sign: i8) -> OrientedCriticalPoint {
    OrientedCriticalPoint { crit: crit.id, orientation: if sign >= 0 { 1 } else { -1 } }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CritRegistry {
    pub level: f64,
    pub points: Vec<CriticalPoint>,
    pub separation: f64,
    pub rho_samples: usize,
}

impl CritRegistry {
    pub fn locations(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|c| c.location.clone()).collect()
    }

    pub fn of_index(&self, k: usize) -> Vec<&CriticalPoint> {
        self.points.iter().filter(|c| c.index == k).collect()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.points.iter().map(|c| c.index).max()
    }

    /// Σ (-1)^ind.
    pub fn morse_count(&self) -> i64 {
        self.points.iter().map(|c| if c.index % 2 == 0 { 1 } else { -1 }).sum()
    }

    /// Critical points strictly below b, with ids preserved.
    pub fn below(&self, b: f64) -> CritRegistry {
        CritRegistry {
            level: b,
            points: self.points.iter().filter(|c| c.value < b).cloned().collect(),
            separation: self.separation,
            rho_samples: self.rho_samples,
        }
    }

    pub fn get(&self, id: usize) -> Result<&CriticalPoint> {
        self.points.iter().find(|c| c.id == id).ok_or_else(|| Error::Input(format!("no critical point {id}")))
    }

    /// Smallest gap between distinct critical values (infinite with one value).
    pub fn action_gap(&self) -> f64 {
        let mut v: Vec<f64> = self.points.iter().map(|c| c.value).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 1e-9).fold(f64::INFINITY, f64::min)
    }

    pub fn min_distance(&self, sys: &RiemannianSystem) -> f64 {
        let mut d = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                d = d.min(sys.distance(&a.location, &b.location));
            }
        }
        d
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Seeds per dimension per period.
    pub density: usize,
    pub newton_iters: usize,
    pub merge_tol: f64,
    pub degeneracy_rel: f64,
    /// Random smooth seeds for loop spaces.
    pub loop_seeds: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { density: 16, newton_iters: 60, merge_tol: 1e-6, degeneracy_rel: 1e-6, loop_seeds: 64, seed: 1 }
    }
}

fn seeds(sys: &RiemannianSystem, cfg: &SearchConfig) -> Vec<Vec<f64>> {
    let m = cfg.density;
    if let Some(l) = sys.loop_data() {
        let (n, d) = (l.num_points, l.base_dim);
        let mut out = Vec::new();
        for j in 0..m {
            let q0 = j as f64 / m as f64;
            let mut q = vec![0.0; n * d];
            for i in 0..n {
                for a in 0..d {
                    let w = l.winding_class.get(a).copied().unwrap_or(0) as f64;
                    q[i * d + a] = crate::systems::wrap_unit(q0 + w * i as f64 / n as f64);
                }
            }
            out.push(q);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.loop_seeds {
            out.push(random_loop(l, &mut rng, 0.05));
        }
        return out;
    }
    match sys.geometry {
        Geometry::Flat { dim, .. } => {
            let total = m.pow(dim as u32);
            (0..total)
                .map(|mut k| {
                    let mut p = vec![0.0; dim];
                    for x in p.iter_mut() {
                        // offset by a quarter cell so seeds avoid symmetric points
                        *x = ((k % m) as f64 + 0.25) / m as f64;
                        k /= m;
                    }
                    p
                })
                .collect()
        }
        Geometry::Sphere2 => {
            let mut out = Vec::new();
            for face in 0..6 {
                for a in 0..m {
                    for b in 0..m {
                        let u = 2.0 * (a as f64 + 0.5) / m as f64 - 1.0;
                        let v = 2.0 * (b as f64 + 0.5) / m as f64 - 1.0;
                        let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                        let mut p = match face / 2 {
                            0 => vec![s, u, v],
                            1 => vec![u, s, v],
                            _ => vec![u, v, s],
                        };
                        sys.project(&mut p);
                        out.push(p);
                    }
                }
            }
            out
        }
    }
}

/// Damped Newton iteration on the metric gradient in a tangent basis.
pub fn refine(sys: &RiemannianSystem, p0: &[f64], iters: usize) -> Option<Vec<f64>> {
    let mut p = p0.to_vec();
    let mut gn = sys.grad_norm(&p);
    let max_step = 0.15;
    for _ in 0..iters {
        if gn < sys.tol.crit * 1e-3 {
            break;
        }
        let (basis, h) = sys.hessian_in_basis(&p);
        let g = sys.grad_vec(&p);
        let rhs = DVector::from_iterator(basis.len(), basis.iter().map(|b| -sys.inner(&g, b)));
        let delta = DMatrix::clone(&h).lu().solve(&rhs).or_else(|| h.svd(true, true).solve(&rhs, 1e-12).ok())?;
        let mut v = vec![0.0; p.len()];
        for (b, c) in basis.iter().zip(delta.iter()) {
            for i in 0..v.len() {
                v[i] += c * b[i];
            }
        }
        let len = sys.norm(&v);
        if !len.is_finite() {
            return None;
        }
        let mut alpha = if len > max_step { max_step / len } else { 1.0 };
        let mut accepted = false;
        for _ in 0..30 {
            let step: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let q = sys.retract(&p, &step);
            let gq = sys.grad_norm(&q);
            if gq < gn {
                p = q;
                gn = gq;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (gn < sys.tol.crit).then_some(p)
}

fn certify(sys: &RiemannianSystem, p: Vec<f64>, degeneracy_rel: f64) -> Result<CriticalPoint> {
    let spec = sys.hessian_spectrum(&p)?;
    let hnorm = spec.iter().fold(0.0f64, |a, e| a.max(e.0.abs()));
    let gap = spec.iter().fold(f64::INFINITY, |a, e| a.min(e.0.abs()));
    let value = sys.value(&p);
    if gap < degeneracy_rel * hnorm.max(1e-300) {
        return Err(Error::Degenerate { id: usize::MAX, eig: gap });
    }
    let index = spec.iter().filter(|e| e.0 < 0.0).count();
    Ok(CriticalPoint {
        id: 0,
        value,
        index,
        neg_frame: spec[..index].iter().map(|e| e.1.clone()).collect(),
        spectral_gap: gap,
        pos_min_eig: spec.iter().map(|e| e.0).filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min),
        eigenvalues: spec.iter().map(|e| e.0).collect(),
        eigenvectors: spec.into_iter().map(|e| e.1).collect(),
        location: p,
    })
}

/// Every nondegenerate critical point with value below `level`, sorted by
/// (index, value, coordinates) and numbered in that order.
pub fn find_critical_points(sys: &RiemannianSystem, level: f64, cfg: &SearchConfig) -> Result<CritRegistry> {
    let found: Vec<Vec<f64>> = seeds(sys, cfg).par_iter().filter_map(|s| refine(sys, s, cfg.newton_iters)).collect();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for p in found {
        if !sys.in_component(&p) {
            continue;
        }
        if !unique.iter().any(|q| sys.distance(q, &p) < cfg.merge_tol) {
            unique.push(p);
        }
    }
    let mut points = Vec::new();
    for p in unique {
        let c = certify(sys, p, cfg.degeneracy_rel)?;
        points.push(c);
    }
    let tol = 1e-9 * sys.value_scale();
    if level.is_finite() && points.iter().any(|c| (c.value - level).abs() <= tol) {
        return Err(Error::NotRegular(level));
    }
    points.retain(|c| c.value < level);
    points.sort_by(|a, b| {
        a.index.cmp(&b.index).then(a.value.total_cmp(&b.value)).then_with(|| {
            a.location.iter().zip(&b.location).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for (i, c) in points.iter_mut().enumerate() {
        c.id = i;
    }
    Ok(CritRegistry { level, points, separation: 0.0, rho_samples: 0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoCertificate {
    pub rho: f64,
    pub shots_per_point: usize,
    pub attempts: usize,
}

/// Largest radius on the schedule 0.45 dmin 0.8^j such that no shot from ∂B_x
/// enters B_y for ind x ≤ ind y.
pub fn choose_rho(reg: &CritRegistry, flow: &Semiflow, shots: usize, seed: u64) -> Result<RhoCertificate> {
    let sys = &flow.sys;
    let dmin = reg.min_distance(sys);
    if reg.points.len() < 2 {
        let rho = if dmin.is_finite() { 0.45 * dmin } else { 0.2 };
        return Ok(RhoCertificate { rho, shots_per_point: 0, attempts: 1 });
    }
    for j in 0..16 {
        let rho = 0.45 * dmin * 0.8f64.powi(j);
        if rho_ok(reg, flow, rho, shots, seed ^ j as u64)? {
            return Ok(RhoCertificate { rho, shots_per_point: shots, attempts: j as usize + 1 });
        }
    }
    Err(Error::Config("no separation radius found; system parameters may be non-generic".into()))
}

fn rho_ok(reg: &CritRegistry, flow: &Semiflow, rho: f64, shots: usize, seed: u64) -> Result<bool> {
    let sys = &flow.sys;
    for x in &reg.points {
        let targets: Vec<&CriticalPoint> = reg.points.iter().filter(|y| y.id != x.id && x.index <= y.index).collect();
        if targets.is_empty() {
            continue;
        }
        let bad = (0..shots)
            .into_par_iter()
            .map(|s| -> Result<bool> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add((x.id * shots + s) as u64));
                let v = sys.random_tangent(&x.location, &mut rng);
                let step: Vec<f64> = v.iter().map(|a| a * rho).collect();
                let p = sys.retract(&x.location, &step);
                shot_enters(flow, &p, &targets, rho)
            })
            .collect::<Result<Vec<bool>>>()?;
        if bad.into_iter().any(|b| b) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn shot_enters(flow: &Semiflow, p: &[f64], targets: &[&CriticalPoint], rho: f64) -> Result<bool> {
    let sys = &flow.sys;
    let mut y = p.to_vec();
    let mut h = 1e-3;
    let mut hit = false;
    let mut g = vec![0.0; y.len()];
    let stop = flow.params.grad_stop_tol.max(1e-8);
    let mut integ = crate::semiflow::Integrator::new(y.len());
    integ.advance(
        &mut y,
        flow.params.max_time,
        &mut h,
        flow.params.step_ctrl.max(1e-7),
        |q, o| sys.vector_field(q, o),
        |q| sys.project(q),
        |_, q| {
            if targets.iter().any(|t| sys.distance(&t.location, q) < rho) {
                hit = true;
                return false;
            }
            sys.grad(q, &mut g);
            sys.norm(&g) >= stop
        },
    )?;
    Ok(hit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiflow::FlowParams;

    #[test]
    fn circle_sphere_torus_registries() {
        let cfg = SearchConfig::default();
        let c = find_critical_points(&RiemannianSystem::circle(), f64::INFINITY, &cfg).unwrap();
        assert_eq!(c.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 1]);
        let s = find_critical_points(&RiemannianSystem::sphere2(), f64::INFINITY, &cfg).unwrap();
        assert_eq!(s.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 2]);
        assert!((s.points[0].location[2] + 1.0).abs() < 1e-9);
        let t = find_critical_points(&RiemannianSystem::torus2(), f64::INFINITY, &cfg).unwrap();
        assert_eq!(t.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 1, 1, 2]);
        assert_eq!(t.morse_count(), 0);
        assert_eq!(s.morse_count(), 2);
    }

    #[test]
    fn level_filter_and_regularity() {
        let cfg = SearchConfig::default();
        let sys = RiemannianSystem::torus2();
        let t = find_critical_points(&sys, 0.0, &cfg).unwrap();
        assert!(t.points.iter().all(|p| p.value <= 0.0));
        assert_eq!(t.points.len(), 2);
        assert!(matches!(find_critical_points(&sys, 0.5, &cfg), Err(Error::NotRegular(_))));
    }

    #[test]
    fn doubling_density_is_stable() {
        let sys = RiemannianSystem::torus2();
        let a = find_critical_points(&sys, f64::INFINITY, &SearchConfig::default()).unwrap();
        let b = find_critical_points(&sys, f64::INFINITY, &SearchConfig { density: 32, ..Default::default() }).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(sys.distance(&p.location, &q.location) < 1e-6);
        }
    }

    #[test]
    fn degenerate_point_rejected() {
        // f = cos 2πθ + b cos 2πφ with b = 0 is degenerate in φ everywhere
        let sys = RiemannianSystem::torus2_with(0.0, 0.0);
        assert!(matches!(
            find_critical_points(&sys, f64::INFINITY, &SearchConfig::default()),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn loop_space_constant_loops() {
        let sys = RiemannianSystem::loopspace_circle(16);
        let r = find_critical_points(&sys, 1.0, &SearchConfig::default()).unwrap();
        assert_eq!(r.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 1]);
        for p in &r.points {
            let q0 = p.location[0];
            assert!(p.location.iter().all(|q| (q - q0).abs() < 1e-8));
        }
    }

    #[test]
    fn rho_for_circle() {
        let sys = RiemannianSystem::circle();
        let reg = find_critical_points(&sys, f64::INFINITY, &SearchConfig::default()).unwrap();
        let flow = Semiflow::new(sys, FlowParams::default());
        let cert = choose_rho(&reg, &flow, 50, 1).unwrap();
        assert!(cert.rho < 0.25 && cert.rho > 0.0);
    }
}
