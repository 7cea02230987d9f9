//! Connecting orbits between consecutive indices, with transported orientations.

use crate::critical::{CritRegistry, CriticalPoint};
use crate::error::{Error, Result};
use crate::semiflow::{linear_seed, Integrator, Semiflow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionConfig {
    /// Angular mesh on the unstable circle for index-2 sources.
    pub mesh: usize,
    pub max_depth: usize,
    pub levels: usize,
    pub seed_r1: f64,
    pub seed_r2: f64,
}

impl Default for ConnectionConfig {
    fn default() -> Self {
        ConnectionConfig { mesh: 64, max_depth: 40, levels: 64, seed_r1: 1e-6, seed_r2: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub from: usize,
    pub to: usize,
    pub sign: i8,
    /// Seed coefficients in the source's unstable frame.
    pub coeffs: Vec<f64>,
    /// Angle on the unstable circle (index-2 sources).
    pub alpha: Option<f64>,
    /// Closest approach of the connecting shot to the target.
    pub approach: f64,
    /// Side of W^s(y) taken just past α* (index-2 sources), for cross-checking.
    pub bracket_sign: Option<i8>,
}

impl Connection {
    pub fn bracket_agrees(&self) -> bool {
        self.bracket_sign.is_none_or(|b| b == self.sign)
    }
}

#[derive(Clone)]
struct Shot {
    at_level: Vec<Option<Vec<f64>>>,
    limit: Option<usize>,
    approach: Vec<f64>,
    side: Vec<Option<i8>>,
}

struct Shooter<'a> {
    flow: &'a Semiflow,
    reg: &'a CritRegistry,
    x: &'a CriticalPoint,
    targets: Vec<&'a CriticalPoint>,
    levels: Vec<f64>,
    r0: f64,
    near: f64,
}

impl Shooter<'_> {
    fn seed(&self, coeffs: &[f64]) -> Vec<f64> {
        linear_seed(&self.flow.sys, &self.x.location, &self.x.neg_frame, coeffs, self.r0)
    }

    fn shoot(&self, coeffs: &[f64]) -> Result<Shot> {
        let flow = self.flow;
        let sys = &flow.sys;
        let mut y = self.seed(coeffs);
        let mut at_level = vec![None; self.levels.len()];
        let mut next = 0;
        let mut approach = vec![f64::INFINITY; self.targets.len()];
        let mut side = vec![None; self.targets.len()];
        let mut inside = vec![false; self.targets.len()];
        let mut prev = (y.clone(), sys.value(&y));
        let mut g = vec![0.0; y.len()];
        let stop = flow.params.grad_stop_tol;
        let mut converged = false;
        let mut h = 1e-3;
        let mut integ = Integrator::new(y.len());
        integ.advance(&mut y, flow.params.max_time, &mut h, flow.params.step_ctrl, |q, o| sys.vector_field(q, o), |q| sys.project(q), |_, q| {
            let f = sys.value(q);
            while next < self.levels.len() && f <= self.levels[next] {
                // interpolate the crossing between the last two accepted states
                let l = self.levels[next];
                let s = ((prev.1 - l) / (prev.1 - f)).clamp(0.0, 1.0);
                let d = sys.displacement(&prev.0, q);
                let step: Vec<f64> = d.iter().map(|v| v * s).collect();
                at_level[next] = Some(sys.retract(&prev.0, &step));
                next += 1;
            }
            for (i, t) in self.targets.iter().enumerate() {
                let dist = sys.distance(q, &t.location);
                approach[i] = approach[i].min(dist);
                if dist < self.near {
                    inside[i] = true;
                } else if inside[i] && side[i].is_none() {
                    let disp = sys.displacement(&t.location, q);
                    side[i] = Some(if sys.inner(&disp, &t.neg_frame[0]) >= 0.0 { 1 } else { -1 });
                }
            }
            prev = (q.to_vec(), f);
            sys.grad(q, &mut g);
            converged = sys.norm(&g) < stop;
            !converged
        })?;
        let limit = if converged { flow.identify(&y, &self.reg.locations()).ok() } else { None };
        Ok(Shot { at_level, limit, approach, side })
    }

    fn diverge(&self, a: &Shot, b: &Shot, sep: f64) -> bool {
        if a.limit != b.limit {
            return true;
        }
        a.at_level.iter().zip(&b.at_level).any(|(p, q)| match (p, q) {
            (Some(p), Some(q)) => self.flow.sys.distance(p, q) > sep,
            (None, None) => false,
            _ => true,
        })
    }
}

fn circle_coeffs(alpha: f64) -> Vec<f64> {
    vec![alpha.cos(), alpha.sin()]
}

/// Transports the source's unstable frame along the shot and reads the sign at
/// the first point within `near` of the target.
pub fn transport_orientation(flow: &Semiflow, x: &CriticalPoint, y: &CriticalPoint, coeffs: &[f64], r0: f64, near: f64) -> Result<i8> {
    let sys = &flow.sys;
    let seed = linear_seed(sys, &x.location, &x.neg_frame, coeffs, r0);
    let frame: Vec<Vec<f64>> = x
        .neg_frame
        .iter()
        .map(|v| {
            let mut w = v.clone();
            sys.tangent_project(&seed, &mut w);
            w
        })
        .collect();
    let mut reached = false;
    let (_, p, fr) = flow.flow_with_frame(&seed, &frame, flow.params.max_time, |_, q, _| {
        reached = sys.distance(q, &y.location) < near;
        !reached
    })?;
    if !reached {
        return Err(Error::Transport(format!("shot from {} never reached {}", x.id, y.id)));
    }
    let mut xf = vec![0.0; p.len()];
    sys.vector_field(&p, &mut xf);
    let nx = sys.norm(&xf);
    let xf: Vec<f64> = xf.iter().map(|v| v / nx).collect();
    let s = match fr.len() {
        1 => sys.inner(&fr[0], &xf),
        2 => {
            let a = sys.inner(&xf, &fr[0]);
            let b = sys.inner(&xf, &fr[1]);
            let w: Vec<f64> = fr[0].iter().zip(&fr[1]).map(|(d1, d2)| -b * d1 + a * d2).collect();
            sys.inner(&w, &y.neg_frame[0])
        }
        k => return Err(Error::Unsupported(format!("orientation transport for index {k}"))),
    };
    if s.abs() < 1e-6 {
        return Err(Error::Transport(format!("degenerate orientation on the orbit {} -> {}", x.id, y.id)));
    }
    Ok(if s > 0.0 { 1 } else { -1 })
}

fn index_one_connections(sh: &Shooter, cfg: &ConnectionConfig) -> Result<Vec<Connection>> {
    let x = sh.x;
    let mut out = Vec::new();
    for dir in [1.0, -1.0] {
        let coeffs = vec![dir];
        let shot = sh.shoot(&coeffs)?;
        let lim = shot.limit.ok_or_else(|| Error::Shooting(format!("branch of {} did not converge", x.id)))?;
        let y = &sh.reg.points[lim];
        if y.index >= x.index {
            return Err(Error::MorseSmale(format!("orbit from {} (index {}) ends at {} (index {})", x.id, x.index, y.id, y.index)));
        }
        let sign = transport_orientation(sh.flow, x, y, &coeffs, cfg.seed_r1, 0.5 * sh.reg.separation)?;
        out.push(Connection { from: x.id, to: y.id, sign, coeffs, alpha: None, approach: 0.0, bracket_sign: None });
    }
    Ok(out)
}

fn index_two_connections(sh: &Shooter, cfg: &ConnectionConfig) -> Result<Vec<Connection>> {
    let x = sh.x;
    let sep = 0.25 * sh.reg.separation;
    let m = cfg.mesh;
    let alphas: Vec<f64> = (0..=m).map(|j| 2.0 * PI * j as f64 / m as f64).collect();
    let shots: Vec<Shot> = alphas.par_iter().map(|&a| sh.shoot(&circle_coeffs(a))).collect::<Result<_>>()?;
    let min_width = 1e-14 / sh.r0;
    let brackets: Vec<Vec<(f64, f64, Shot, Shot)>> = (0..m)
        .into_par_iter()
        .map(|j| -> Result<Vec<(f64, f64, Shot, Shot)>> {
            let (a, b) = (alphas[j], alphas[j + 1]);
            let (sa, sb) = (shots[j].clone(), shots[j + 1].clone());
            let mut found = Vec::new();
            let mut stack = vec![(a, sa, b, sb, 0usize)];
            while let Some((a, sa, b, sb, depth)) = stack.pop() {
                if !sh.diverge(&sa, &sb, sep) {
                    continue;
                }
                if depth >= cfg.max_depth || b - a < min_width {
                    found.push((a, b, sa, sb));
                    continue;
                }
                let mid = 0.5 * (a + b);
                let sm = sh.shoot(&circle_coeffs(mid))?;
                stack.push((mid, sm.clone(), b, sb, depth + 1));
                stack.push((a, sa, mid, sm, depth + 1));
            }
            Ok(found)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Connection> = Vec::new();
    for (a, b, sa, sb) in brackets.into_iter().flatten() {
        let mid = 0.5 * (a + b);
        let sm = sh.shoot(&circle_coeffs(mid))?;
        let (ti, &dist) = sm
            .approach
            .iter()
            .enumerate()
            .min_by(|p, q| p.1.total_cmp(q.1))
            .ok_or_else(|| Error::Shooting(format!("no index-{} targets for {}", x.index - 1, x.id)))?;
        if dist > 0.1 * sh.reg.separation {
            return Err(Error::Shooting(format!(
                "unresolved divergence on the unstable circle of {} near alpha = {mid:.6}",
                x.id
            )));
        }
        let y = sh.targets[ti];
        for other in sh.reg.points.iter().filter(|p| p.index >= x.index && p.id != x.id) {
            if sh.flow.sys.distance(&other.location, &y.location) < 1e-9 {
                return Err(Error::MorseSmale(format!("orbit from {} meets {} of equal index", x.id, other.id)));
            }
        }
        let side_b = sb.side[ti];
        let side_a = sa.side[ti];
        if side_a.is_none() || side_b.is_none() || side_a == side_b {
            return Err(Error::Shooting(format!("bracket around alpha = {mid:.6} does not straddle W^s({})", y.id)));
        }
        if out.iter().any(|c| c.to == y.id && (c.alpha.unwrap() - mid).abs() < 1e-6) {
            continue;
        }
        let coeffs = circle_coeffs(mid);
        let sign = transport_orientation(sh.flow, x, y, &coeffs, sh.r0, 0.5 * sh.reg.separation)?;
        out.push(Connection { from: x.id, to: y.id, sign, coeffs, alpha: Some(mid), approach: dist, bracket_sign: side_b });
    }
    Ok(out)
}

/// All connections x → y with ind y = ind x − 1, ordered by (from, to, alpha).
pub fn enumerate_connections(flow: &Semiflow, reg: &CritRegistry, cfg: &ConnectionConfig) -> Result<Vec<Connection>> {
    let lo = reg.points.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    let mut all = Vec::new();
    for x in reg.points.iter().filter(|c| c.index >= 1) {
        let targets: Vec<&CriticalPoint> = reg.points.iter().filter(|y| y.index + 1 == x.index).collect();
        let scale = flow.sys.value_scale();
        let hi = x.value - 1e-3 * scale;
        let bottom = lo + 1e-3 * scale;
        let levels = (0..cfg.levels).map(|i| hi - (hi - bottom) * i as f64 / (cfg.levels - 1).max(1) as f64).collect();
        let sh = Shooter {
            flow,
            reg,
            x,
            targets,
            levels,
            r0: if x.index == 1 { cfg.seed_r1 } else { cfg.seed_r2 },
            near: 0.5 * reg.separation,
        };
        match x.index {
            1 => all.extend(index_one_connections(&sh, cfg)?),
            2 => {
                if !sh.targets.is_empty() {
                    all.extend(index_two_connections(&sh, cfg)?)
                }
            }
            k => return Err(Error::Unsupported(format!("connection search from index {k}"))),
        }
    }
    all.sort_by(|a, b| (a.from, a.to).cmp(&(b.from, b.to)).then(a.alpha.unwrap_or(0.0).total_cmp(&b.alpha.unwrap_or(0.0))));
    Ok(all)
}

pub fn connections_dot(reg: &CritRegistry, conns: &[Connection]) -> String {
    let mut s = String::from("digraph connections {\n  rankdir=TB;\n");
    for c in &reg.points {
        let _ = writeln!(s, "  x{} [label=\"x{} ind={} f={:.6}\"];", c.id, c.id, c.index, c.value);
    }
    for c in conns {
        let _ = writeln!(s, "  x{} -> x{} [label=\"{:+}\"];", c.from, c.to, c.sign);
    }
    s.push_str("}\n");
    s
}

pub fn connections_csv(conns: &[Connection]) -> String {
    let mut s = String::from("from,to,sign,alpha,approach,bracket_sign\n");
    for c in conns {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3e},{}",
            c.from,
            c.to,
            c.sign,
            c.alpha.map_or(String::new(), |a| format!("{a:.12}")),
            c.approach,
            c.bracket_sign.map_or(String::new(), |b| b.to_string())
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{choose_rho, find_critical_points, SearchConfig};
    use crate::semiflow::FlowParams;
    use crate::systems::RiemannianSystem;

    #[test]
    fn circle_max_connects_twice_with_opposite_signs() {
        let flow = Semiflow::new(RiemannianSystem::circle(), FlowParams::default());
        let mut reg = find_critical_points(&flow.sys, f64::INFINITY, &SearchConfig::default()).unwrap();
        reg.separation = choose_rho(&reg, &flow, 16, 1).unwrap().rho;
        let c = enumerate_connections(&flow, &reg, &ConnectionConfig::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].sign + c[1].sign, 0);
        assert!(connections_dot(&reg, &c).contains("x1 -> x0"));
    }
}
