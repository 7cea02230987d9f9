//! Negative gradient semi-flow, preimage oracles and entrance times.

use crate::error::{Error, Result};
use crate::systems::{RiemannianSystem, TangentVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub step_ctrl: f64,
    pub max_time: f64,
    pub integrator_order: usize,
    pub grad_stop_tol: f64,
    pub basin_tol: f64,
    pub time_tol: f64,
    pub monotone_tol: f64,
    /// Width of the boundary band for membership margins.
    pub band: f64,
    /// Sampling interval for event scans.
    pub scan_dt: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            step_ctrl: 1e-8,
            max_time: 1e3,
            integrator_order: 5,
            grad_stop_tol: 1e-10,
            basin_tol: 1e-4,
            time_tol: 1e-8,
            monotone_tol: 1e-9,
            band: 1e-7,
            scan_dt: 0.01,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive explicit Runge-Kutta integrator with preallocated stage buffers.
pub struct Integrator {
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    ynew: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
}

impl Integrator {
    pub fn new(n: usize) -> Self {
        Integrator { k: vec![vec![0.0; n]; 7], tmp: vec![0.0; n], ynew: vec![0.0; n], steps: 0, rejected: 0 }
    }

    /// Advances `y` by `duration`, projecting after every accepted step. The hook
    /// sees `(elapsed, y)` after each step and may stop early by returning false.
    /// Returns the elapsed time.
    #[allow(clippy::too_many_arguments)]
    pub fn advance<F, P, H>(
        &mut self,
        y: &mut [f64],
        duration: f64,
        h: &mut f64,
        tol: f64,
        mut rhs: F,
        mut project: P,
        mut hook: H,
    ) -> Result<f64>
    where
        F: FnMut(&[f64], &mut [f64]),
        P: FnMut(&mut [f64]),
        H: FnMut(f64, &[f64]) -> bool,
    {
        let n = y.len();
        let mut t = 0.0;
        if duration <= 0.0 {
            return Ok(0.0);
        }
        if !(*h > 0.0 && h.is_finite()) {
            *h = 1e-3;
        }
        while t < duration {
            let last = *h >= duration - t;
            let step = if last { duration - t } else { *h };
            rhs(y, &mut self.k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * self.k[j][i];
                    }
                    self.tmp[i] = acc;
                }
                rhs(&self.tmp, &mut self.k[s]);
                if s == 6 {
                    self.ynew.copy_from_slice(&self.tmp);
                }
            }
            // mixed absolute/relative control, plus a bound relative to the step
            // displacement so that contraction toward equilibria is resolved
            let mut err = 0.0;
            let mut enorm = 0.0;
            let mut dnorm = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * self.k[s][i];
                }
                let sc = tol + tol * y[i].abs().max(self.ynew[i].abs());
                let r = step * e / sc;
                err += r * r;
                enorm += (step * e) * (step * e);
                dnorm += (self.ynew[i] - y[i]) * (self.ynew[i] - y[i]);
            }
            // floor at a few hundred ulps of y so rounding in tiny steps is not chased
            let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let floor = 256.0 * f64::EPSILON * (ymax + 1e-300);
            let err = (err / n as f64).sqrt().max(enorm.sqrt() / (1e-3 * dnorm.sqrt() + floor));
            if !err.is_finite() {
                return Err(Error::Integrator(format!("non-finite error estimate at t={t}")));
            }
            if err <= 1.0 {
                t = if last { duration } else { t + step };
                y.copy_from_slice(&self.ynew);
                project(y);
                self.steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    *h = step * fac;
                }
                if !hook(t, y) {
                    return Ok(t);
                }
            } else {
                self.rejected += 1;
                *h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if *h < 1e-14 * (1.0 + t) {
                    return Err(Error::Integrator(format!("step size underflow at t={t}, h={h}")));
                }
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    ReachedTime,
    ConvergedTo(usize),
    Stationary,
    LeftDomain,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub terminal: Terminal,
}

impl Trajectory {
    pub fn to_csv(&self, sys: &RiemannianSystem) -> String {
        let d = sys.ambient_dim();
        let mut s = String::from("time");
        for i in 0..d {
            s.push_str(&format!(",x{i}"));
        }
        s.push_str(",objective,grad_norm\n");
        for (t, p) in self.times.iter().zip(&self.points) {
            s.push_str(&format!("{t:.10e}"));
            for x in p {
                s.push_str(&format!(",{x:.12e}"));
            }
            s.push_str(&format!(",{:.12e},{:.6e}\n", sys.value(p), sys.grad_norm(p)));
        }
        s
    }
}

/// Point on an unstable manifold certified by construction: `point` is the
/// time-`seed_time` image of `crit + seed_r * sum_i coeffs_i e_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnstablePoint {
    pub crit: usize,
    pub crit_location: Vec<f64>,
    /// Unstable eigenvalues of the flow (positive) and frame vectors.
    pub rates: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub seed_r: f64,
    pub seed_time: f64,
    pub point: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Semiflow {
    pub sys: RiemannianSystem,
    pub params: FlowParams,
}

impl Semiflow {
    pub fn new(sys: RiemannianSystem, params: FlowParams) -> Self {
        Semiflow { sys, params }
    }

    fn run<H: FnMut(f64, &[f64]) -> bool>(&self, y: &mut [f64], t: f64, h: &mut f64, hook: H) -> Result<f64> {
        let sys = &self.sys;
        let mut integ = Integrator::new(y.len());
        integ.advance(y, t, h, self.params.step_ctrl, |p, o| sys.vector_field(p, o), |p| sys.project(p), hook)
    }

    /// φ_T(p). Integration stops early once the gradient vanishes to grad_stop_tol.
    pub fn flow(&self, p: &[f64], t: f64) -> Result<Vec<f64>> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Domain(format!("flow time {t} must be finite and non-negative")));
        }
        let mut y = p.to_vec();
        let mut h = 1e-3;
        let stop = self.params.grad_stop_tol;
        let mut g = vec![0.0; y.len()];
        if self.sys.grad_norm(&y) < stop {
            return Ok(y);
        }
        let sys = &self.sys;
        self.run(&mut y, t, &mut h, |_, q| {
            sys.grad(q, &mut g);
            sys.norm(&g) >= stop
        })?;
        Ok(y)
    }

    pub fn flow_point(&self, p: &crate::systems::Point, t: f64) -> Result<crate::systems::Point> {
        self.sys.check_point(&p.coords)?;
        Ok(self.sys.point(self.flow(&p.coords, t)?))
    }

    /// Samples φ_t(p) at increasing times within one integration.
    pub fn flow_samples(&self, p: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(times.len());
        let mut y = p.to_vec();
        let mut h = 1e-3;
        let mut now = 0.0;
        let mut stationary = self.sys.grad_norm(&y) < self.params.grad_stop_tol;
        for &t in times {
            if t < now {
                return Err(Error::Domain("sample times must increase".into()));
            }
            if !stationary && t > now {
                let stop = self.params.grad_stop_tol;
                let sys = &self.sys;
                let mut g = vec![0.0; y.len()];
                let mut hit = false;
                self.run(&mut y, t - now, &mut h, |_, q| {
                    sys.grad(q, &mut g);
                    hit = sys.norm(&g) < stop;
                    !hit
                })?;
                stationary = hit;
            }
            now = t;
            out.push(y.clone());
        }
        Ok(out)
    }

    /// Records every accepted step up to time t.
    pub fn trajectory(&self, p: &[f64], t: f64) -> Result<Trajectory> {
        let mut y = p.to_vec();
        let mut h = 1e-3;
        let mut times = vec![0.0];
        let mut points = vec![y.clone()];
        let stop = self.params.grad_stop_tol;
        let sys = &self.sys;
        let mut g = vec![0.0; y.len()];
        let mut stationary = sys.grad_norm(&y) < stop;
        if !stationary {
            self.run(&mut y, t, &mut h, |s, q| {
                times.push(s);
                points.push(q.to_vec());
                sys.grad(q, &mut g);
                stationary = sys.norm(&g) < stop;
                !stationary
            })?;
        }
        let terminal = if stationary { Terminal::Stationary } else { Terminal::ReachedTime };
        Ok(Trajectory { times, points, terminal })
    }

    /// Flows p for time t together with ∫‖grad‖² ds (energy identity check).
    pub fn flow_with_dissipation(&self, p: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let n = p.len();
        let sys = &self.sys;
        let mut y = p.to_vec();
        y.push(0.0);
        let mut h = 1e-3;
        let mut integ = Integrator::new(n + 1);
        let mut g = vec![0.0; n];
        integ.advance(
            &mut y,
            t,
            &mut h,
            self.params.step_ctrl,
            |q, o| {
                sys.vector_field(&q[..n], &mut o[..n]);
                o[n] = sys.norm(&o[..n]).powi(2);
            },
            |q| sys.project(&mut q[..n]),
            |_, _| true,
        )?;
        let e = y.pop().unwrap();
        sys.grad(&y, &mut g);
        Ok((y, e))
    }

    /// Flows p with a tangent frame under the linearized flow, re-orthonormalizing
    /// (positive Gram-Schmidt, orientation preserving) after each step. The hook
    /// sees `(elapsed, point, frame)` and may stop early.
    pub fn flow_with_frame<H>(
        &self,
        p: &[f64],
        frame: &[Vec<f64>],
        t: f64,
        mut hook: H,
    ) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)>
    where
        H: FnMut(f64, &[f64], &[Vec<f64>]) -> bool,
    {
        let n = p.len();
        let k = frame.len();
        let sys = &self.sys;
        let mut y = Vec::with_capacity(n * (k + 1));
        y.extend_from_slice(p);
        for f in frame {
            y.extend_from_slice(f);
        }
        let mut h = 1e-3;
        let mut integ = Integrator::new(y.len());
        let mut fr = vec![vec![0.0; n]; k];
        let elapsed = integ.advance(
            &mut y,
            t,
            &mut h,
            self.params.step_ctrl,
            |q, o| {
                let (x, vs) = q.split_at(n);
                let (ox, ovs) = o.split_at_mut(n);
                sys.vector_field(x, ox);
                for j in 0..k {
                    sys.field_jacobian(x, &vs[j * n..(j + 1) * n], &mut ovs[j * n..(j + 1) * n]);
                }
            },
            |q| {
                let (x, vs) = q.split_at_mut(n);
                sys.project(x);
                for j in 0..k {
                    sys.tangent_project(x, &mut vs[j * n..(j + 1) * n]);
                }
                orthonormalize(sys, &mut vs[..k * n], n, k);
            },
            |s, q| {
                for j in 0..k {
                    fr[j].copy_from_slice(&q[n + j * n..n + (j + 1) * n]);
                }
                hook(s, &q[..n], &fr)
            },
        )?;
        let x = y[..n].to_vec();
        let out = (0..k).map(|j| y[n + j * n..n + (j + 1) * n].to_vec()).collect();
        Ok((elapsed, x, out))
    }

    /// Forward limit of p in the registry, with the time the gradient dropped below
    /// grad_stop_tol.
    pub fn asymptotic_limit(&self, p: &[f64], crit_locations: &[Vec<f64>]) -> Result<(usize, f64)> {
        let (q, t) = self.converge(p)?;
        self.identify(&q, crit_locations).map(|i| (i, t))
    }

    /// Flows until the gradient vanishes; returns the end point and time.
    pub fn converge(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        let stop = self.params.grad_stop_tol;
        let mut y = p.to_vec();
        if self.sys.grad_norm(&y) < stop {
            return Ok((y, 0.0));
        }
        let sys = &self.sys;
        let mut g = vec![0.0; y.len()];
        let mut h = 1e-3;
        let mut done = false;
        let t = self.run(&mut y, self.params.max_time, &mut h, |_, q| {
            sys.grad(q, &mut g);
            done = sys.norm(&g) < stop;
            !done
        })?;
        if !done {
            return Err(Error::Timeout(format!("no convergence within max_time {}", self.params.max_time)));
        }
        Ok((y, t))
    }

    pub fn identify(&self, q: &[f64], crit_locations: &[Vec<f64>]) -> Result<usize> {
        let best = crit_locations
            .iter()
            .enumerate()
            .map(|(i, c)| (i, self.sys.distance(q, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, d)) if d < self.params.basin_tol => Ok(i),
            _ => Err(Error::Timeout("limit point is not in the registry (incomplete registry?)".into())),
        }
    }

    /// Builds a certified unstable-manifold point from linear seed coefficients.
    pub fn unstable_point(
        &self,
        crit: usize,
        location: &[f64],
        rates: &[f64],
        frame: &[Vec<f64>],
        coeffs: &[f64],
        seed_r: f64,
        seed_time: f64,
    ) -> Result<UnstablePoint> {
        let seed = linear_seed(&self.sys, location, frame, coeffs, seed_r);
        let point = self.flow(&seed, seed_time)?;
        Ok(UnstablePoint {
            crit,
            crit_location: location.to_vec(),
            rates: rates.to_vec(),
            frame: frame.to_vec(),
            coeffs: coeffs.to_vec(),
            seed_r,
            seed_time,
            point,
        })
    }

    /// φ_{-s} on the unstable manifold. Inside the seed time it replays the forward
    /// flow; beyond it contracts the linear seed along the unstable eigendirections.
    pub fn backward_flow_unstable(&self, q: &UnstablePoint, s: f64) -> Result<UnstablePoint> {
        if s < 0.0 {
            return Err(Error::Domain("backward time must be non-negative".into()));
        }
        if q.coeffs.is_empty() {
            // index 0: W^u is the point itself
            return Ok(q.clone());
        }
        let check = self.flow(&linear_seed(&self.sys, &q.crit_location, &q.frame, &q.coeffs, q.seed_r), q.seed_time)?;
        if self.sys.distance(&check, &q.point) > 1e-6 {
            return Err(Error::Domain("point is not certified on the unstable manifold".into()));
        }
        let mut out = q.clone();
        if s <= q.seed_time {
            out.seed_time = q.seed_time - s;
        } else {
            let extra = s - q.seed_time;
            for (c, r) in out.coeffs.iter_mut().zip(&q.rates) {
                *c *= (-r * extra).exp();
            }
            out.seed_time = 0.0;
        }
        let seed = linear_seed(&self.sys, &out.crit_location, &out.frame, &out.coeffs, out.seed_r);
        out.point = self.flow(&seed, out.seed_time)?;
        Ok(out)
    }

    /// inf{s ≥ 0 : φ_s p ∈ A}, infinite when not entered before max_time or once
    /// the trajectory becomes stationary outside A.
    pub fn entrance_time(&self, a: &SetOracle, p: &[f64]) -> Result<f64> {
        let mut cache = TrajectoryCache::new(self, p);
        if a.contains_at(&mut cache, 0.0)? {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut dt = self.params.scan_dt;
        loop {
            let hi = lo + dt;
            if hi > self.params.max_time {
                return Ok(f64::INFINITY);
            }
            if a.contains_at(&mut cache, hi)? {
                let (mut l, mut r) = (lo, hi);
                while r - l > self.params.time_tol {
                    let m = 0.5 * (l + r);
                    if a.contains_at(&mut cache, m)? {
                        r = m;
                    } else {
                        l = m;
                    }
                }
                return Ok(r);
            }
            if cache.stationary_before(hi) {
                return Ok(f64::INFINITY);
            }
            lo = hi;
            if lo > 50.0 * self.params.scan_dt {
                dt = (dt * 1.02).min(0.25);
            }
        }
    }
}

impl TangentVector {
    pub fn norm(&self, sys: &RiemannianSystem) -> f64 {
        sys.norm(&self.components)
    }
}

pub fn linear_seed(sys: &RiemannianSystem, x: &[f64], frame: &[Vec<f64>], coeffs: &[f64], r: f64) -> Vec<f64> {
    let mut v = vec![0.0; x.len()];
    for (f, c) in frame.iter().zip(coeffs) {
        for i in 0..v.len() {
            v[i] += r * c * f[i];
        }
    }
    sys.retract(x, &v)
}

fn orthonormalize(sys: &RiemannianSystem, vs: &mut [f64], n: usize, k: usize) {
    for j in 0..k {
        for i in 0..j {
            let (a, b) = vs.split_at_mut(j * n);
            let vi = &a[i * n..(i + 1) * n];
            let vj = &mut b[..n];
            let d = sys.inner(vi, vj);
            for m in 0..n {
                vj[m] -= d * vi[m];
            }
        }
        let vj = &mut vs[j * n..(j + 1) * n];
        let nn = sys.norm(vj);
        if nn > 0.0 {
            for x in vj.iter_mut() {
                *x /= nn;
            }
        }
    }
}

/// Lazily integrated samples of one trajectory, queried at arbitrary times.
pub struct TrajectoryCache<'a> {
    flow: &'a Semiflow,
    samples: Vec<(f64, Vec<f64>, f64)>,
    stationary_at: Option<f64>,
    pub evaluations: usize,
}

impl<'a> TrajectoryCache<'a> {
    pub fn new(flow: &'a Semiflow, p: &[f64]) -> Self {
        let stationary_at = if flow.sys.grad_norm(p) < flow.params.grad_stop_tol { Some(0.0) } else { None };
        TrajectoryCache { flow, samples: vec![(0.0, p.to_vec(), 1e-3)], stationary_at, evaluations: 0 }
    }

    pub fn start(&self) -> &[f64] {
        &self.samples[0].1
    }

    pub fn stationary_before(&self, t: f64) -> bool {
        self.stationary_at.is_some_and(|s| s <= t)
    }

    pub fn at(&mut self, t: f64) -> Result<Vec<f64>> {
        self.evaluations += 1;
        let idx = match self.samples.binary_search_by(|s| s.0.total_cmp(&t)) {
            Ok(i) => return Ok(self.samples[i].1.clone()),
            Err(i) => i - 1,
        };
        let (t0, ref y0, h0) = self.samples[idx];
        if let Some(s) = self.stationary_at {
            if s <= t0 {
                return Ok(y0.clone());
            }
        }
        let mut y = y0.clone();
        let mut h = h0;
        let sys = &self.flow.sys;
        let stop = self.flow.params.grad_stop_tol;
        let mut g = vec![0.0; y.len()];
        let mut hit = None;
        self.flow.run(&mut y, t - t0, &mut h, |s, q| {
            sys.grad(q, &mut g);
            if sys.norm(&g) < stop {
                hit = Some(t0 + s);
                false
            } else {
                true
            }
        })?;
        if let Some(s) = hit {
            self.stationary_at = Some(self.stationary_at.map_or(s, |old| old.min(s)));
        }
        self.samples.insert(idx + 1, (t, y.clone(), h));
        if self.samples.len() > 4096 {
            // keep the start and the most recent samples
            let keep = self.samples.split_off(self.samples.len() - 2048);
            self.samples.truncate(1);
            self.samples.extend(keep);
        }
        Ok(y)
    }
}

/// Point predicate evaluated at the current point (no flow).
pub trait Region: Send + Sync + fmt::Debug {
    /// Positive inside, negative outside.
    fn margin(&self, sys: &RiemannianSystem, p: &[f64]) -> f64;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Region for Ball {
    fn margin(&self, sys: &RiemannianSystem, p: &[f64]) -> f64 {
        self.radius - sys.distance(&self.center, p)
    }
    fn describe(&self) -> String {
        format!("ball(r={:.4})", self.radius)
    }
}

/// Composable set expression. Atoms carry their own open/closed semantics so that
/// boundary-band points resolve consistently inside unions and intersections.
#[derive(Clone, Debug)]
pub enum SetExpr {
    Whole,
    Empty,
    /// f < level (open) or f ≤ level (closed).
    Sublevel { level: f64, closed: bool },
    /// f > level (open) or f ≥ level (closed).
    Superlevel { level: f64, closed: bool },
    Preimage { time: f64, inner: Box<SetExpr> },
    Union(Vec<SetExpr>),
    Intersection(Vec<SetExpr>),
    Region { region: Arc<dyn Region>, closed: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Membership {
    pub inside: bool,
    /// Some deciding atom was within the boundary band.
    pub near_boundary: bool,
}

impl SetExpr {
    pub fn preimage(time: f64, inner: SetExpr) -> SetExpr {
        if time == 0.0 {
            inner
        } else {
            match inner {
                SetExpr::Whole | SetExpr::Empty => inner,
                _ => SetExpr::Preimage { time, inner: Box::new(inner) },
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SetExpr::Whole => "whole".into(),
            SetExpr::Empty => "empty".into(),
            SetExpr::Sublevel { level, closed } => format!("{{f {} {level:.6}}}", if *closed { "<=" } else { "<" }),
            SetExpr::Superlevel { level, closed } => {
                format!("{{f {} {level:.6}}}", if *closed { ">=" } else { ">" })
            }
            SetExpr::Preimage { time, inner } => format!("pre[{time:.4}]({})", inner.describe()),
            SetExpr::Union(v) => format!("({})", v.iter().map(|e| e.describe()).collect::<Vec<_>>().join(" | ")),
            SetExpr::Intersection(v) => {
                format!("({})", v.iter().map(|e| e.describe()).collect::<Vec<_>>().join(" & "))
            }
            SetExpr::Region { region, .. } => region.describe(),
        }
    }

    /// Largest total flow time the expression looks ahead.
    pub fn horizon(&self) -> f64 {
        match self {
            SetExpr::Preimage { time, inner } => time + inner.horizon(),
            SetExpr::Union(v) | SetExpr::Intersection(v) => v.iter().map(|e| e.horizon()).fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    fn atom(margin: f64, closed: bool, band: f64) -> Membership {
        Membership { inside: if closed { margin >= -band } else { margin > band }, near_boundary: margin.abs() <= band }
    }

    pub fn classify(&self, cache: &mut TrajectoryCache, offset: f64) -> Result<Membership> {
        let band = cache.flow.params.band;
        Ok(match self {
            SetExpr::Whole => Membership { inside: true, near_boundary: false },
            SetExpr::Empty => Membership::default(),
            SetExpr::Sublevel { level, closed } => {
                let p = cache.at(offset)?;
                Self::atom(level - cache.flow.sys.value(&p), *closed, band)
            }
            SetExpr::Superlevel { level, closed } => {
                let p = cache.at(offset)?;
                Self::atom(cache.flow.sys.value(&p) - level, *closed, band)
            }
            SetExpr::Region { region, closed } => {
                let p = cache.at(offset)?;
                Self::atom(region.margin(&cache.flow.sys, &p), *closed, band)
            }
            SetExpr::Preimage { time, inner } => inner.classify(cache, offset + time)?,
            SetExpr::Union(v) => {
                let mut out = Membership::default();
                for e in v {
                    let m = e.classify(cache, offset)?;
                    out.near_boundary |= m.near_boundary;
                    if m.inside {
                        return Ok(Membership { inside: true, near_boundary: m.near_boundary });
                    }
                }
                out
            }
            SetExpr::Intersection(v) => {
                let mut out = Membership { inside: true, near_boundary: false };
                for e in v {
                    let m = e.classify(cache, offset)?;
                    out.near_boundary |= m.near_boundary;
                    if !m.inside {
                        return Ok(Membership { inside: false, near_boundary: m.near_boundary });
                    }
                }
                out
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SetOracle {
    pub expr: SetExpr,
    pub description: String,
}

impl SetOracle {
    pub fn new(expr: SetExpr) -> Self {
        let description = expr.describe();
        SetOracle { expr, description }
    }

    pub fn named(name: &str, expr: SetExpr) -> Self {
        SetOracle { description: format!("{name} = {}", expr.describe()), expr }
    }

    pub fn whole() -> Self {
        Self::new(SetExpr::Whole)
    }

    pub fn classify(&self, flow: &Semiflow, p: &[f64]) -> Result<Membership> {
        let mut cache = TrajectoryCache::new(flow, p);
        self.expr.classify(&mut cache, 0.0)
    }

    pub fn contains(&self, flow: &Semiflow, p: &[f64]) -> Result<bool> {
        Ok(self.classify(flow, p)?.inside)
    }

    /// Membership of φ_offset(p) using a shared trajectory cache started at p.
    pub fn contains_at(&self, cache: &mut TrajectoryCache, offset: f64) -> Result<bool> {
        Ok(self.expr.classify(cache, offset)?.inside)
    }
}

/// φ_T^{-1}(A).
pub fn preimage_oracle(a: &SetOracle, t: f64) -> Result<SetOracle> {
    if t < 0.0 {
        return Err(Error::Domain("preimage time must be non-negative".into()));
    }
    Ok(SetOracle::new(SetExpr::preimage(t, a.expr.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::RiemannianSystem;
    use std::f64::consts::PI;

    fn circle() -> Semiflow {
        Semiflow::new(RiemannianSystem::circle(), FlowParams::default())
    }

    /// Closed-form flow of θ' = 2π sin 2πθ.
    fn circle_exact(theta0: f64, s: f64) -> f64 {
        let u = (PI * theta0).tan() * (4.0 * PI * PI * s).exp();
        let th = u.atan() / PI;
        if th < 0.0 {
            th + 1.0
        } else {
            th
        }
    }

    #[test]
    fn circle_matches_closed_form() {
        let f = circle();
        for &(t0, s) in &[(0.1, 0.05), (0.25, 0.2), (0.4, 0.01), (0.3, 1.0)] {
            let got = f.flow(&[t0], s).unwrap()[0];
            assert!((got - circle_exact(t0, s)).abs() < 1e-7, "{t0} {s} {got}");
        }
        let got = f.flow(&[0.25], 50.0).unwrap()[0];
        assert!((got - 0.5).abs() < 1e-9, "{got}");
    }

    #[test]
    fn sphere_matches_closed_form() {
        let f = Semiflow::new(RiemannianSystem::sphere2(), FlowParams::default());
        let z0: f64 = 0.6;
        let p = [0.8, 0.0, z0];
        for s in [0.1, 0.7, 2.0] {
            let q = f.flow(&p, s).unwrap();
            let z = (z0.atanh() - s).tanh();
            assert!((q[2] - z).abs() < 1e-7);
            assert!(q[1].abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_points_and_zero_time() {
        let f = circle();
        assert_eq!(f.flow(&[0.0], 3.0).unwrap(), vec![0.0]);
        assert_eq!(f.flow(&[0.37], 0.0).unwrap(), vec![0.37]);
        assert!(f.flow(&[0.37], -1.0).is_err());
    }

    #[test]
    fn entrance_time_matches_bisection_oracle() {
        let f = circle();
        let a = SetOracle::new(SetExpr::Sublevel { level: 0.0, closed: false });
        // f(θ) = cos 2πθ < 0 when θ ∈ (1/4, 3/4); starting at 0.1 the crossing is exact
        let t = f.entrance_time(&a, &[0.1]).unwrap();
        // closed form: tan(π/4) = tan(0.1π) e^{4π² s}
        let want = (1.0 / (0.1 * PI).tan()).ln() / (4.0 * PI * PI);
        assert!((t - want).abs() < 1e-6, "{t} {want}");
        assert_eq!(f.entrance_time(&a, &[0.5]).unwrap(), 0.0);
        assert!(f.entrance_time(&a, &[0.0]).unwrap().is_infinite());
    }

    #[test]
    fn preimage_semantics() {
        let f = circle();
        let a = SetOracle::new(SetExpr::Sublevel { level: 0.5, closed: false });
        let pre = preimage_oracle(&a, 2.0).unwrap();
        for i in 0..200 {
            let th = i as f64 / 200.0;
            let direct = f.sys.value(&[circle_exact(th, 2.0)]) < 0.5;
            if th == 0.0 || th == 0.5 {
                continue;
            }
            assert_eq!(pre.contains(&f, &[th]).unwrap(), direct, "{th}");
        }
        let whole = preimage_oracle(&SetOracle::whole(), 3.0).unwrap();
        assert!(whole.contains(&f, &[0.0]).unwrap());
    }

    #[test]
    fn frame_transport_tracks_linearization() {
        // on the circle the normalized frame stays the unit vector pointing along the flow
        let f = circle();
        let (_, x, fr) = f.flow_with_frame(&[0.1], &[vec![1.0]], 0.1, |_, _, _| true).unwrap();
        assert!((fr[0][0] - 1.0).abs() < 1e-12);
        assert!((x[0] - circle_exact(0.1, 0.1)).abs() < 1e-7);
    }

    #[test]
    fn energy_identity_circle() {
        let f = circle();
        let (q, e) = f.flow_with_dissipation(&[0.1], 0.3).unwrap();
        let df = f.sys.value(&[0.1]) - f.sys.value(&q);
        assert!(((df - e) / df).abs() < 1e-6);
    }
}
