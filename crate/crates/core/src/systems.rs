//! Configuration spaces, metrics and objectives.
//!
//! Flat systems live on the unit torus `[0,1)^n` with metric `s * I`; the
//! sphere is embedded in R^3 with the induced metric. Loop spaces are flat
//! tori `T^{N d}` whose points are discrete loops `q_0, ..., q_{N-1}`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub constraint: f64,
    pub symmetry: f64,
    pub crit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { constraint: 1e-10, symmetry: 1e-7, crit: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
    pub system_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point,
    pub components: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Unit torus `[0,1)^dim` with metric `metric_scale * I`.
    Flat { dim: usize, metric_scale: f64 },
    /// Unit sphere in R^3.
    Sphere2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopDiscretization {
    pub base_dim: usize,
    pub num_points: usize,
    /// Amplitude of the static potential `kappa * sum_j cos(2 pi q_j)`.
    pub kappa: f64,
    /// Amplitude of the time-dependent part `kappa_t * sin(2 pi t) * sum_j sin(2 pi q_j)`.
    pub kappa_t: f64,
    pub winding_class: Vec<i64>,
}

impl LoopDiscretization {
    pub fn potential(&self, t: f64, q: &[f64]) -> f64 {
        let st = (TAU * t).sin();
        q.iter().map(|&x| self.kappa * (TAU * x).cos() + self.kappa_t * st * (TAU * x).sin()).sum()
    }

    fn dpot(&self, t: f64, x: f64) -> f64 {
        let st = (TAU * t).sin();
        -TAU * self.kappa * (TAU * x).sin() + TAU * self.kappa_t * st * (TAU * x).cos()
    }

    fn ddpot(&self, t: f64, x: f64) -> f64 {
        let st = (TAU * t).sin();
        -TAU * TAU * (self.kappa * (TAU * x).cos() + self.kappa_t * st * (TAU * x).sin())
    }

    /// Discrete action `sum_i N |q_{i+1} - q_i|^2 / 2 - (1/N) sum_i V(i/N, q_i)`.
    pub fn action(&self, q: &[f64]) -> f64 {
        let (n, d) = (self.num_points, self.base_dim);
        let nf = n as f64;
        let mut kin = 0.0;
        let mut pot = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            for a in 0..d {
                let dq = min_image(q[j * d + a] - q[i * d + a]);
                kin += dq * dq;
            }
            pot += self.potential(i as f64 / nf, &q[i * d..(i + 1) * d]);
        }
        nf * kin / 2.0 - pot / nf
    }

    fn euclid_grad(&self, q: &[f64], out: &mut [f64]) {
        let (n, d) = (self.num_points, self.base_dim);
        let nf = n as f64;
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for a in 0..d {
                let fwd = min_image(q[ip * d + a] - q[i * d + a]);
                let bwd = min_image(q[i * d + a] - q[im * d + a]);
                out[i * d + a] = nf * (bwd - fwd) - self.dpot(i as f64 / nf, q[i * d + a]) / nf;
            }
        }
    }

    fn euclid_hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let (n, d) = (self.num_points, self.base_dim);
        let nf = n as f64;
        let mut h = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for a in 0..d {
                let r = i * d + a;
                h[(r, r)] += 2.0 * nf - self.ddpot(i as f64 / nf, q[r]) / nf;
                h[(r, ip * d + a)] -= nf;
                h[(r, im * d + a)] -= nf;
            }
        }
        h
    }

    /// Winding vector: sums of minimal-image increments per base coordinate.
    pub fn winding(&self, q: &[f64]) -> Vec<i64> {
        let (n, d) = (self.num_points, self.base_dim);
        (0..d)
            .map(|a| {
                let s: f64 = (0..n).map(|i| min_image(q[((i + 1) % n) * d + a] - q[i * d + a])).sum();
                s.round() as i64
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// `cos(2 pi theta)` on the circle.
    Cosine,
    /// Height `z` on the sphere.
    Height,
    /// `cos X + b cos Y + t sin X sin Y` with `X = 2 pi theta`, `Y = 2 pi phi`.
    TiltedTorus { b: f64, t: f64 },
    LoopAction(LoopDiscretization),
}

/// Componentwise nearest representative of a periodic difference; ties go to +1/2.
pub fn min_image(d: f64) -> f64 {
    let r = d - d.round();
    if r == -0.5 {
        0.5
    } else {
        r
    }
}

pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiemannianSystem {
    pub name: String,
    pub geometry: Geometry,
    pub objective: Objective,
    pub tol: Tolerances,
    pub id: u64,
}

fn fingerprint(s: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl RiemannianSystem {
    fn build(name: &str, geometry: Geometry, objective: Objective) -> Self {
        let id = fingerprint(&format!("{name}{geometry:?}{objective:?}"));
        RiemannianSystem { name: name.to_string(), geometry, objective, tol: Tolerances::default(), id }
    }

    pub fn circle() -> Self {
        Self::build("circle", Geometry::Flat { dim: 1, metric_scale: 1.0 }, Objective::Cosine)
    }

    pub fn sphere2() -> Self {
        Self::build("sphere2", Geometry::Sphere2, Objective::Height)
    }

    pub fn torus2() -> Self {
        Self::torus2_with(0.5, 0.1)
    }

    pub fn torus2_with(b: f64, t: f64) -> Self {
        Self::build("torus2", Geometry::Flat { dim: 2, metric_scale: 1.0 }, Objective::TiltedTorus { b, t })
    }

    pub fn loopspace(disc: LoopDiscretization) -> Self {
        let dim = disc.base_dim * disc.num_points;
        let scale = 1.0 / disc.num_points as f64;
        Self::build("loopspace", Geometry::Flat { dim, metric_scale: scale }, Objective::LoopAction(disc))
    }

    /// Loop space of the circle with the default small cosine potential.
    pub fn loopspace_circle(num_points: usize) -> Self {
        Self::loopspace(LoopDiscretization {
            base_dim: 1,
            num_points,
            kappa: 0.1,
            kappa_t: 0.0,
            winding_class: vec![0],
        })
    }

    pub fn point(&self, coords: Vec<f64>) -> Point {
        Point { coords, system_id: self.id }
    }

    /// Manifold dimension.
    pub fn dim(&self) -> usize {
        match self.geometry {
            Geometry::Flat { dim, .. } => dim,
            Geometry::Sphere2 => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.geometry {
            Geometry::Flat { dim, .. } => dim,
            Geometry::Sphere2 => 3,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.geometry, Geometry::Flat { .. })
    }

    pub fn metric_scale(&self) -> f64 {
        match self.geometry {
            Geometry::Flat { metric_scale, .. } => metric_scale,
            Geometry::Sphere2 => 1.0,
        }
    }

    pub fn loop_data(&self) -> Option<&LoopDiscretization> {
        match &self.objective {
            Objective::LoopAction(l) => Some(l),
            _ => None,
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        match self.geometry {
            Geometry::Sphere2 => 2,
            Geometry::Flat { .. } => 0,
        }
    }

    /// Magnitude of objective variations, used to scale tolerances.
    pub fn value_scale(&self) -> f64 {
        match &self.objective {
            Objective::Cosine | Objective::Height => 1.0,
            Objective::TiltedTorus { b, t } => 1.0 + b.abs() + t.abs(),
            Objective::LoopAction(l) => (l.kappa.abs() + l.kappa_t.abs()).max(1e-3),
        }
    }

    pub fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.ambient_dim() || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPoint(format!("expected {} finite coordinates", self.ambient_dim())));
        }
        match self.geometry {
            Geometry::Sphere2 => {
                let r = norm2(p);
                if (r - 1.0).abs() > self.tol.constraint {
                    return Err(Error::InvalidPoint(format!("|p| = {r} off the unit sphere")));
                }
            }
            Geometry::Flat { .. } => {
                if p.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                    return Err(Error::InvalidPoint("flat coordinates must lie in [0,1)".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match &self.objective {
            Objective::Cosine => (TAU * p[0]).cos(),
            Objective::Height => p[2],
            Objective::TiltedTorus { b, t } => {
                let (x, y) = (TAU * p[0], TAU * p[1]);
                x.cos() + b * y.cos() + t * x.sin() * y.sin()
            }
            Objective::LoopAction(l) => l.action(p),
        }
    }

    /// Ambient (coordinate) gradient of the objective.
    pub fn euclid_grad(&self, p: &[f64], out: &mut [f64]) {
        match &self.objective {
            Objective::Cosine => out[0] = -TAU * (TAU * p[0]).sin(),
            Objective::Height => {
                out[0] = 0.0;
                out[1] = 0.0;
                out[2] = 1.0;
            }
            Objective::TiltedTorus { b, t } => {
                let (x, y) = (TAU * p[0], TAU * p[1]);
                out[0] = TAU * (-x.sin() + t * x.cos() * y.sin());
                out[1] = TAU * (-b * y.sin() + t * x.sin() * y.cos());
            }
            Objective::LoopAction(l) => l.euclid_grad(p, out),
        }
    }

    /// Ambient Hessian of the objective.
    pub fn euclid_hessian(&self, p: &[f64]) -> DMatrix<f64> {
        match &self.objective {
            Objective::Cosine => DMatrix::from_element(1, 1, -TAU * TAU * (TAU * p[0]).cos()),
            Objective::Height => DMatrix::zeros(3, 3),
            Objective::TiltedTorus { b, t } => {
                let (x, y) = (TAU * p[0], TAU * p[1]);
                let k = TAU * TAU;
                let hxx = k * (-x.cos() - t * x.sin() * y.sin());
                let hyy = k * (-b * y.cos() - t * x.sin() * y.sin());
                let hxy = k * t * x.cos() * y.cos();
                DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy])
            }
            Objective::LoopAction(l) => l.euclid_hessian(p),
        }
    }

    /// Metric gradient, tangent at p.
    pub fn grad(&self, p: &[f64], out: &mut [f64]) {
        self.euclid_grad(p, out);
        match self.geometry {
            Geometry::Flat { metric_scale, .. } => {
                for o in out.iter_mut() {
                    *o /= metric_scale;
                }
            }
            Geometry::Sphere2 => {
                let d = dot(out, p);
                for i in 0..3 {
                    out[i] -= d * p[i];
                }
            }
        }
    }

    pub fn grad_vec(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.ambient_dim()];
        self.grad(p, &mut g);
        g
    }

    /// Negative gradient vector field.
    pub fn vector_field(&self, p: &[f64], out: &mut [f64]) {
        self.grad(p, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.metric_scale() * dot(u, v)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).sqrt()
    }

    pub fn grad_norm(&self, p: &[f64]) -> f64 {
        let g = self.grad_vec(p);
        self.norm(&g)
    }

    /// Projects ambient coordinates back onto the manifold.
    pub fn project(&self, p: &mut [f64]) {
        match self.geometry {
            Geometry::Flat { .. } => {
                for x in p.iter_mut() {
                    *x = wrap_unit(*x);
                }
            }
            Geometry::Sphere2 => {
                let r = norm2(p);
                for x in p.iter_mut() {
                    *x /= r;
                }
            }
        }
    }

    /// Retraction `R(p, v) = project(p + v)`.
    pub fn retract(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = p.iter().zip(v).map(|(a, b)| a + b).collect();
        self.project(&mut q);
        q
    }

    /// Removes the normal component of an ambient vector at p.
    pub fn tangent_project(&self, p: &[f64], v: &mut [f64]) {
        if let Geometry::Sphere2 = self.geometry {
            let d = dot(v, p);
            for i in 0..3 {
                v[i] -= d * p[i];
            }
        }
    }

    /// Displacement from p to q: minimal image on flat tori, ambient difference otherwise.
    pub fn displacement(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        match self.geometry {
            Geometry::Flat { .. } => p.iter().zip(q).map(|(a, b)| min_image(b - a)).collect(),
            Geometry::Sphere2 => p.iter().zip(q).map(|(a, b)| b - a).collect(),
        }
    }

    /// Metric length of the displacement (chordal on the sphere).
    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        let d = self.displacement(p, q);
        self.norm(&d)
    }

    /// Metric-orthonormal basis of the tangent space at p.
    pub fn tangent_basis(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match self.geometry {
            Geometry::Flat { dim, metric_scale } => (0..dim)
                .map(|i| {
                    let mut e = vec![0.0; dim];
                    e[i] = 1.0 / metric_scale.sqrt();
                    e
                })
                .collect(),
            Geometry::Sphere2 => {
                // Gram-Schmidt against the coordinate axis least aligned with p
                let k = (0..3).min_by(|&a, &b| p[a].abs().total_cmp(&p[b].abs())).unwrap();
                let mut e1 = [0.0; 3];
                e1[k] = 1.0;
                let d = dot(&e1, p);
                for i in 0..3 {
                    e1[i] -= d * p[i];
                }
                let n = norm2(&e1);
                for x in e1.iter_mut() {
                    *x /= n;
                }
                let e2 = cross(p, &e1);
                vec![e1.to_vec(), e2.to_vec()]
            }
        }
    }

    /// Riemannian Hessian as a symmetric matrix in the tangent basis.
    pub fn hessian_in_basis(&self, p: &[f64]) -> (Vec<Vec<f64>>, DMatrix<f64>) {
        let basis = self.tangent_basis(p);
        let h = self.euclid_hessian(p);
        let k = basis.len();
        let mut m = DMatrix::zeros(k, k);
        match self.geometry {
            Geometry::Flat { .. } => {
                // basis vectors are e_i / sqrt(s), so B^T H B = H / s
                let s = self.metric_scale();
                for i in 0..k {
                    for j in 0..k {
                        m[(i, j)] = h[(i, j)] / s;
                    }
                }
            }
            Geometry::Sphere2 => {
                let mut g = [0.0; 3];
                self.euclid_grad(p, &mut g);
                let gp = dot(&g, p);
                for i in 0..k {
                    for j in 0..k {
                        let mut s = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                s += basis[i][a] * h[(a, b)] * basis[j][b];
                            }
                        }
                        m[(i, j)] = s - gp * dot(&basis[i], &basis[j]);
                    }
                }
            }
        }
        (basis, m)
    }

    /// Full tangent spectrum, ascending, with metric-orthonormal eigenvectors in
    /// ambient coordinates. Each eigenvector has its first significant component positive.
    pub fn hessian_spectrum(&self, p: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        let (basis, m) = self.hessian_in_basis(p);
        let k = basis.len();
        let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..k {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > self.tol.symmetry * scale {
                    return Err(Error::Numerical("Hessian is not symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..k)
            .map(|c| {
                let mut v = vec![0.0; self.ambient_dim()];
                for (i, b) in basis.iter().enumerate() {
                    let w = eig.eigenvectors[(i, c)];
                    for a in 0..v.len() {
                        v[a] += w * b[a];
                    }
                }
                let n = self.norm(&v);
                for x in v.iter_mut() {
                    *x /= n;
                }
                fix_sign(&mut v);
                (eig.eigenvalues[c], v)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(pairs)
    }

    /// Derivative of the negative gradient field at p applied to a tangent vector.
    pub fn field_jacobian(&self, p: &[f64], v: &[f64], out: &mut [f64]) {
        let h = self.euclid_hessian(p);
        let n = self.ambient_dim();
        let mut hv = vec![0.0; n];
        for i in 0..n {
            hv[i] = (0..n).map(|j| h[(i, j)] * v[j]).sum();
        }
        match self.geometry {
            Geometry::Flat { metric_scale, .. } => {
                for i in 0..n {
                    out[i] = -hv[i] / metric_scale;
                }
            }
            Geometry::Sphere2 => {
                let mut g = [0.0; 3];
                self.euclid_grad(p, &mut g);
                let gp = dot(&g, p);
                let c = dot(&hv, p) + dot(&g, v);
                for i in 0..3 {
                    out[i] = -(hv[i] - c * p[i] - gp * v[i]);
                }
                self.tangent_project(p, out);
            }
        }
    }

    /// Uniform random point; loop spaces draw smooth loops of the configured winding class.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match (&self.geometry, &self.objective) {
            (_, Objective::LoopAction(l)) => random_loop(l, rng, 0.15),
            (Geometry::Flat { dim, .. }, _) => (0..*dim).map(|_| rng.gen::<f64>()).collect(),
            (Geometry::Sphere2, _) => loop {
                let v: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let r = norm2(&v);
                if r > 1e-3 && r <= 1.0 {
                    break v.iter().map(|x| x / r).collect();
                }
            },
        }
    }

    /// Random tangent vector of unit metric norm.
    pub fn random_tangent<R: Rng>(&self, p: &[f64], rng: &mut R) -> Vec<f64> {
        let basis = self.tangent_basis(p);
        let mut v = vec![0.0; self.ambient_dim()];
        for b in &basis {
            let w = rng.gen::<f64>() * 2.0 - 1.0;
            for a in 0..v.len() {
                v[a] += w * b[a];
            }
        }
        let n = self.norm(&v).max(1e-300);
        v.iter().map(|x| x / n).collect()
    }

    /// Winding class of a loop (empty for non-loop systems).
    pub fn winding(&self, p: &[f64]) -> Vec<i64> {
        self.loop_data().map(|l| l.winding(p)).unwrap_or_default()
    }

    /// Whether p lies in the configured component (always true off loop spaces).
    pub fn in_component(&self, p: &[f64]) -> bool {
        match self.loop_data() {
            Some(l) => l.winding(p) == l.winding_class,
            None => true,
        }
    }
}

/// Smooth random loop: winding line plus a few low Fourier modes.
pub fn random_loop<R: Rng>(l: &LoopDiscretization, rng: &mut R, amp: f64) -> Vec<f64> {
    let (n, d) = (l.num_points, l.base_dim);
    let mut q = vec![0.0; n * d];
    for a in 0..d {
        let q0: f64 = rng.gen();
        let w = l.winding_class.get(a).copied().unwrap_or(0) as f64;
        let modes: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * TAU)).collect();
        for i in 0..n {
            let s = i as f64 / n as f64;
            let mut x = q0 + w * s;
            for (m, (c, ph)) in modes.iter().enumerate() {
                x += amp * c * (TAU * (m + 1) as f64 * s + ph).cos() / (m + 1) as f64;
            }
            q[i * d + a] = wrap_unit(x);
        }
    }
    q
}

pub fn fix_sign(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-9 * m) {
        if *first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Metric gradient as a tangent vector, validating the base point.
pub fn gradient(sys: &RiemannianSystem, p: &Point) -> Result<TangentVector> {
    sys.check_point(&p.coords)?;
    Ok(TangentVector { base: p.clone(), components: sys.grad_vec(&p.coords) })
}

pub fn hessian_spectrum(sys: &RiemannianSystem, p: &Point) -> Result<Vec<(f64, TangentVector)>> {
    sys.check_point(&p.coords)?;
    Ok(sys
        .hessian_spectrum(&p.coords)?
        .into_iter()
        .map(|(l, v)| (l, TangentVector { base: p.clone(), components: v }))
        .collect())
}

/// Largest relative error between metric directional derivatives and central
/// differences along the retraction, over a tangent basis. Errors are relative
/// to the gradient norm (floored at 1e-8).
pub fn finite_difference_check(sys: &RiemannianSystem, p: &Point, h: f64) -> f64 {
    let x = &p.coords;
    let g = sys.grad_vec(x);
    let denom = sys.norm(&g).max(1e-8);
    let mut worst = 0.0f64;
    for v in sys.tangent_basis(x) {
        let vp: Vec<f64> = v.iter().map(|a| a * h).collect();
        let vm: Vec<f64> = v.iter().map(|a| -a * h).collect();
        let fd = (sys.value(&sys.retract(x, &vp)) - sys.value(&sys.retract(x, &vm))) / (2.0 * h);
        let an = sys.inner(&g, &v);
        worst = worst.max((fd - an).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elementary_gradients() {
        let c = RiemannianSystem::circle();
        let g = gradient(&c, &c.point(vec![0.25])).unwrap();
        assert!((g.components[0] + TAU).abs() < 1e-12);
        let s = RiemannianSystem::sphere2();
        let g = gradient(&s, &s.point(vec![0.0, 0.0, 1.0])).unwrap();
        assert!(norm2(&g.components) < 1e-15);
        let l = RiemannianSystem::loopspace(LoopDiscretization {
            base_dim: 1,
            num_points: 8,
            kappa: 0.0,
            kappa_t: 0.0,
            winding_class: vec![0],
        });
        let g = gradient(&l, &l.point(vec![0.3; 8])).unwrap();
        assert!(norm2(&g.components) < 1e-12);
    }

    #[test]
    fn invalid_points_rejected() {
        let s = RiemannianSystem::sphere2();
        assert!(gradient(&s, &s.point(vec![0.0, 0.0, 1.1])).is_err());
        let t = RiemannianSystem::torus2();
        assert!(gradient(&t, &t.point(vec![1.2, 0.0])).is_err());
    }

    #[test]
    fn circle_max_spectrum() {
        let c = RiemannianSystem::circle();
        let sp = c.hessian_spectrum(&[0.0]).unwrap();
        assert_eq!(sp.len(), 1);
        assert!((sp[0].0 + TAU * TAU).abs() < 1e-9);
    }

    /// Independent oracle: second differences of f along the retraction.
    fn fd_hessian(sys: &RiemannianSystem, p: &[f64], u: &[f64], v: &[f64], h: f64) -> f64 {
        let f = |a: f64, b: f64| {
            let d: Vec<f64> = u.iter().zip(v).map(|(x, y)| a * x + b * y).collect();
            sys.value(&sys.retract(p, &d))
        };
        (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
    }

    #[test]
    fn hessians_match_second_differences_at_critical_points() {
        let cases: Vec<(RiemannianSystem, Vec<f64>)> = vec![
            (RiemannianSystem::sphere2(), vec![0.0, 0.0, 1.0]),
            (RiemannianSystem::sphere2(), vec![0.0, 0.0, -1.0]),
            (RiemannianSystem::torus2(), vec![0.0, 0.5]),
            (RiemannianSystem::torus2(), vec![0.5, 0.0]),
        ];
        for (sys, p) in cases {
            let (basis, m) = sys.hessian_in_basis(&p);
            for i in 0..basis.len() {
                for j in 0..basis.len() {
                    let fd = fd_hessian(&sys, &p, &basis[i], &basis[j], 1e-4);
                    assert!((fd - m[(i, j)]).abs() < 1e-4 * (1.0 + fd.abs()), "{} {i}{j}", sys.name);
                }
            }
        }
        let sp = RiemannianSystem::sphere2().hessian_spectrum(&[0.0, 0.0, 1.0]).unwrap();
        assert!(sp.iter().all(|e| e.0 < 0.0));
        for p in [[0.0, 0.5], [0.5, 0.0]] {
            let sp = RiemannianSystem::torus2().hessian_spectrum(&p).unwrap();
            assert_eq!(sp.iter().filter(|e| e.0 < 0.0).count(), 1);
        }
    }

    #[test]
    fn finite_differences_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = RiemannianSystem::circle();
        assert!(finite_difference_check(&c, &c.point(vec![0.1]), 1e-5) < 1e-8);
        let l = RiemannianSystem::loopspace(LoopDiscretization {
            base_dim: 1,
            num_points: 8,
            kappa: 1.0,
            kappa_t: 0.0,
            winding_class: vec![0],
        });
        for sys in [RiemannianSystem::sphere2(), RiemannianSystem::torus2(), l] {
            for _ in 0..20 {
                let p = sys.random_point(&mut rng);
                assert!(finite_difference_check(&sys, &sys.point(p), 1e-5) < 1e-6, "{}", sys.name);
            }
        }
    }

    #[test]
    fn eigenframes_orthonormal_in_metric() {
        let sys = RiemannianSystem::loopspace_circle(16);
        let sp = sys.hessian_spectrum(&vec![0.5; 16]).unwrap();
        for (i, a) in sp.iter().enumerate() {
            for (j, b) in sp.iter().enumerate() {
                let e = sys.inner(&a.1, &b.1);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((e - want).abs() < 1e-8);
            }
        }
        assert_eq!(sp.iter().filter(|e| e.0 < 0.0).count(), 1);
    }

    #[test]
    fn loop_action_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = LoopDiscretization { base_dim: 1, num_points: 12, kappa: 0.3, kappa_t: 0.0, winding_class: vec![1] };
        let q = random_loop(&l, &mut rng, 0.1);
        let mut r = q.clone();
        r.rotate_left(1);
        assert!((l.action(&q) - l.action(&r)).abs() < 1e-12);
        assert_eq!(l.winding(&q), vec![1]);
    }
}
