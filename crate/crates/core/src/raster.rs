//! Rasters: local eigen-charts around critical points, global lattices over the
//! configuration space, component masks and portable grid files.

use crate::error::{Error, Result};
use crate::homology::{CellKey, CubicalComplex, Lattice};
use crate::semiflow::Region;
use crate::systems::{dot, Geometry, RiemannianSystem};
use std::collections::VecDeque;
use std::fmt::Write as _;

/// Box chart `a ↦ retract(center, Σ a_i axes_i)` with n cells per axis.
#[derive(Clone, Debug)]
pub struct LocalChart {
    pub center: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub half: Vec<f64>,
    pub n: usize,
    pub flat: bool,
    metric_scale: f64,
}

impl LocalChart {
    pub fn new(sys: &RiemannianSystem, center: &[f64], axes: Vec<Vec<f64>>, half: Vec<f64>, n: usize) -> Self {
        LocalChart {
            center: center.to_vec(),
            axes,
            half,
            n,
            flat: sys.is_flat(),
            metric_scale: sys.metric_scale(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn with_resolution(&self, n: usize) -> Self {
        LocalChart { n, ..self.clone() }
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn point(&self, a: &[f64]) -> Vec<f64> {
        let mut p = self.center.clone();
        for (ai, e) in a.iter().zip(&self.axes) {
            for j in 0..p.len() {
                p[j] += ai * e[j];
            }
        }
        if self.flat {
            for x in p.iter_mut() {
                *x -= x.floor();
                if *x >= 1.0 {
                    *x = 0.0;
                }
            }
        } else {
            let r = dot(&p, &p).sqrt();
            for x in p.iter_mut() {
                *x /= r;
            }
        }
        p
    }

    /// Inverse chart; None outside the chart's domain of validity.
    pub fn coords(&self, p: &[f64]) -> Option<Vec<f64>> {
        if self.flat {
            let d: Vec<f64> = p.iter().zip(&self.center).map(|(a, b)| crate::systems::min_image(a - b)).collect();
            Some(self.axes.iter().map(|e| self.metric_scale * dot(&d, e)).collect())
        } else {
            let c = dot(p, &self.center);
            if c < 0.05 {
                return None;
            }
            let w: Vec<f64> = p.iter().zip(&self.center).map(|(a, b)| a / c - b).collect();
            Some(self.axes.iter().map(|e| dot(&w, e)).collect())
        }
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        2.0 * self.half[i] / self.n as f64
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dim()];
        for x in m.iter_mut() {
            *x = idx % self.n;
            idx /= self.n;
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().rev().fold(0, |acc, &x| acc * self.n + x)
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(i, &m)| -self.half[i] + (m as f64 + 0.5) * self.cell_width(i))
            .collect()
    }

    pub fn cell_of_coords(&self, a: &[f64]) -> Option<usize> {
        let mut m = vec![0; self.dim()];
        for i in 0..self.dim() {
            let u = (a[i] + self.half[i]) / self.cell_width(i);
            if !(0.0..self.n as f64).contains(&u) {
                return None;
            }
            m[i] = u as usize;
        }
        Some(self.flat_index(&m))
    }

    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        self.coords(p).and_then(|a| self.cell_of_coords(&a))
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(vec![self.n; self.dim()], vec![false; self.dim()])
    }

    pub fn cell_key(&self, idx: usize) -> CellKey {
        let c: Vec<i64> = self.multi_index(idx).iter().map(|&m| 2 * m as i64 + 1).collect();
        self.lattice().key(&c).unwrap()
    }

    /// Whether the cell touches the outer face of the box.
    pub fn on_edge(&self, idx: usize) -> bool {
        self.multi_index(idx).iter().any(|&m| m == 0 || m + 1 == self.n)
    }

    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let m = self.multi_index(idx);
        let d = self.dim();
        let mut out = Vec::new();
        for code in 0..3usize.pow(d as u32) {
            let mut c = code;
            let mut q = m.clone();
            let mut ok = true;
            let mut zero = true;
            for x in q.iter_mut() {
                let off = (c % 3) as i64 - 1;
                c /= 3;
                if off != 0 {
                    zero = false;
                }
                let v = *x as i64 + off;
                if v < 0 || v >= self.n as i64 {
                    ok = false;
                    break;
                }
                *x = v as usize;
            }
            if ok && !zero {
                out.push(self.flat_index(&q));
            }
        }
        out
    }

    pub fn flood_fill(&self, inside: &[bool], start: usize) -> Vec<bool> {
        let mut comp = vec![false; inside.len()];
        if !inside[start] {
            return comp;
        }
        let mut queue = VecDeque::from([start]);
        comp[start] = true;
        while let Some(c) = queue.pop_front() {
            for nb in self.neighbors(c) {
                if inside[nb] && !comp[nb] {
                    comp[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        comp
    }

    pub fn dilate(&self, mask: &[bool]) -> Vec<bool> {
        let mut out = mask.to_vec();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for nb in self.neighbors(i) {
                    out[nb] = true;
                }
            }
        }
        out
    }

    /// Closed cubical complex generated by the selected top cells.
    pub fn complex(&self, cells: &[bool]) -> CubicalComplex {
        CubicalComplex::from_cells(
            self.lattice(),
            cells.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| self.cell_key(i)),
        )
    }
}

/// Point predicate: the chart cell of p lies in the mask.
#[derive(Clone, Debug)]
pub struct ChartMask {
    pub name: String,
    pub chart: LocalChart,
    pub mask: Vec<bool>,
}

impl Region for ChartMask {
    fn margin(&self, _sys: &RiemannianSystem, p: &[f64]) -> f64 {
        match self.chart.cell_of(p) {
            Some(c) if self.mask[c] => 1.0,
            _ => -1.0,
        }
    }
    fn describe(&self) -> String {
        format!("component[{}]", self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalKind {
    Circle,
    Torus,
    CubeSphere,
}

/// Lattice covering the whole configuration space (flat tori and the sphere via
/// the radially projected cube surface).
#[derive(Clone, Debug)]
pub struct GlobalGrid {
    pub kind: GlobalKind,
    pub n: usize,
    pub lattice: Lattice,
}

impl GlobalGrid {
    pub fn for_system(sys: &RiemannianSystem, n: usize) -> Result<Self> {
        let kind = match (&sys.geometry, sys.loop_data()) {
            (_, Some(_)) => return Err(Error::Unsupported("cubical rasters need manifold dimension <= 2".into())),
            (Geometry::Flat { dim: 1, .. }, _) => GlobalKind::Circle,
            (Geometry::Flat { dim: 2, .. }, _) => GlobalKind::Torus,
            (Geometry::Sphere2, _) => GlobalKind::CubeSphere,
            _ => return Err(Error::Unsupported("cubical rasters need manifold dimension <= 2".into())),
        };
        let lattice = match kind {
            GlobalKind::Circle => Lattice::new(vec![n], vec![true]),
            GlobalKind::Torus => Lattice::new(vec![n, n], vec![true, true]),
            GlobalKind::CubeSphere => Lattice::new(vec![n; 3], vec![false; 3]),
        };
        Ok(GlobalGrid { kind, n, lattice })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            GlobalKind::Circle => 1,
            _ => 2,
        }
    }

    /// All cells of the space, sorted by key.
    pub fn full(&self) -> CubicalComplex {
        match self.kind {
            GlobalKind::CubeSphere => CubicalComplex::cube_surface(self.n),
            _ => CubicalComplex::full(self.lattice.clone()),
        }
    }

    /// Geometric position of doubled coordinates (any parity).
    pub fn position(&self, c: &[f64]) -> Vec<f64> {
        let two_n = 2.0 * self.n as f64;
        match self.kind {
            GlobalKind::Circle | GlobalKind::Torus => c
                .iter()
                .map(|&x| {
                    let r = x / two_n;
                    let r = r - r.floor();
                    if r >= 1.0 {
                        0.0
                    } else {
                        r
                    }
                })
                .collect(),
            GlobalKind::CubeSphere => {
                let q: Vec<f64> = c.iter().map(|&x| x / self.n as f64 - 1.0).collect();
                let r = dot(&q, &q).sqrt();
                q.iter().map(|x| x / r).collect()
            }
        }
    }

    pub fn key_position(&self, key: CellKey) -> Vec<f64> {
        let c: Vec<f64> = self.lattice.coords(key).iter().map(|&x| x as f64).collect();
        self.position(&c)
    }

    /// Continuous doubled coordinates of a point (inverse of `position`).
    pub fn doubled_coords(&self, p: &[f64]) -> Vec<f64> {
        let two_n = 2.0 * self.n as f64;
        match self.kind {
            GlobalKind::Circle | GlobalKind::Torus => p.iter().map(|x| x * two_n).collect(),
            GlobalKind::CubeSphere => {
                let m = p.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                p.iter().map(|x| (x / m + 1.0) * self.n as f64).collect()
            }
        }
    }

    pub fn nearest_vertex(&self, p: &[f64]) -> CellKey {
        let c = self.doubled_coords(p);
        let v: Vec<i64> = match self.kind {
            GlobalKind::CubeSphere => {
                // the face coordinate is pinned; round the others to even values
                let (fi, _) = p.iter().enumerate().fold((0, 0.0f64), |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b });
                c.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        if i == fi {
                            if p[i] > 0.0 {
                                2 * self.n as i64
                            } else {
                                0
                            }
                        } else {
                            (2.0 * (x / 2.0).round()) as i64
                        }
                    })
                    .collect()
            }
            _ => c.iter().map(|&x| (2.0 * (x / 2.0).round()) as i64).collect(),
        };
        self.lattice.key(&v).expect("vertex inside lattice")
    }

    /// Whether a lattice key is a top cell of the space.
    pub fn is_top(&self, key: CellKey) -> bool {
        let c = self.lattice.coords(key);
        match self.kind {
            GlobalKind::CubeSphere => {
                let even: Vec<usize> = (0..3).filter(|&i| c[i] & 1 == 0).collect();
                even.len() == 1 && (c[even[0]] == 0 || c[even[0]] == 2 * self.n as i64)
            }
            _ => c.iter().all(|x| x & 1 == 1),
        }
    }

    /// Closed top cells containing the point.
    pub fn cells_containing(&self, p: &[f64]) -> Vec<CellKey> {
        let v = self.lattice.coords(self.nearest_vertex(p));
        let c = self.doubled_coords(p);
        let d = self.lattice.dim();
        let mut out = Vec::new();
        for code in 0..3usize.pow(d as u32) {
            let mut cell = v.clone();
            let mut k = code;
            for x in cell.iter_mut() {
                *x += (k % 3) as i64 - 1;
                k /= 3;
            }
            if let Some(key) = self.lattice.key(&cell) {
                if self.is_top(key) && self.in_closed_cell(key, &c) && !out.contains(&key) {
                    out.push(key);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn in_closed_cell(&self, key: CellKey, c: &[f64]) -> bool {
        let k = self.lattice.coords(key);
        let tol = 1e-9;
        k.iter().enumerate().all(|(i, &ki)| {
            let e = self.lattice.extent(i) as f64;
            let mut d = c[i] - ki as f64;
            if self.lattice.periodic[i] {
                d -= e * (d / e).round();
            }
            if ki & 1 == 1 {
                d.abs() <= 1.0 + tol
            } else {
                d.abs() <= tol
            }
        })
    }

    /// Orientation sign of a top cell relative to a tangent frame given at `base`.
    pub fn cell_orientation(&self, key: CellKey, frame: &[Vec<f64>], base: &[f64]) -> i64 {
        let c = self.lattice.coords(key);
        let s = match self.kind {
            GlobalKind::Circle => frame[0][0],
            GlobalKind::Torus => frame[0][0] * frame[1][1] - frame[0][1] * frame[1][0],
            GlobalKind::CubeSphere => {
                let odd: Vec<usize> = (0..3).filter(|&i| c[i] & 1 == 1).collect();
                let (i, j) = (odd[0], odd[1]);
                // e_i × e_j is ±e_m for the pinned axis m
                let m = 3 - i - j;
                let face_normal = if (i, j) == (0, 1) || (i, j) == (1, 2) { 1.0 } else { -1.0 };
                let p = self.key_position(key);
                let (a, b) = (&frame[0], &frame[1]);
                let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                face_normal * p[m].signum() * dot(&n, base).signum()
            }
        };
        if s >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Portable grid file with named bitmask payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub lattice: String,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub periodic: Vec<bool>,
    pub sets: Vec<(String, Vec<bool>)>,
}

impl GridFile {
    pub fn to_text(&self) -> String {
        let mut s = String::from("MCGRID 1\n");
        let join = |v: Vec<String>| v.join(" ");
        let _ = writeln!(s, "lattice {}", self.lattice);
        let _ = writeln!(s, "dims {}", join(self.dims.iter().map(|d| d.to_string()).collect()));
        let _ = writeln!(s, "spacing {}", join(self.spacing.iter().map(|d| format!("{d:e}")).collect()));
        let _ = writeln!(s, "origin {}", join(self.origin.iter().map(|d| format!("{d:e}")).collect()));
        let _ = writeln!(s, "periodic {}", join(self.periodic.iter().map(|&b| (b as u8).to_string()).collect()));
        let width = self.dims.first().copied().unwrap_or(1).max(1);
        for (name, bits) in &self.sets {
            let _ = writeln!(s, "set {name}");
            s.push_str("payload\n");
            for row in bits.chunks(width) {
                s.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("MCGRID 1") {
            return Err(Error::Input("missing MCGRID header".into()));
        }
        let mut g = GridFile {
            lattice: String::new(),
            dims: vec![],
            spacing: vec![],
            origin: vec![],
            periodic: vec![],
            sets: vec![],
        };
        let bad = |l: &str| Error::Input(format!("bad grid line: {l}"));
        let mut in_payload = false;
        for line in lines {
            if in_payload && line.chars().all(|c| c == '0' || c == '1') && !line.is_empty() {
                let set = g.sets.last_mut().ok_or_else(|| bad(line))?;
                set.1.extend(line.chars().map(|c| c == '1'));
                continue;
            }
            in_payload = false;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "lattice" => g.lattice = rest.to_string(),
                "dims" => g.dims = rest.split_whitespace().map(|x| x.parse().map_err(|_| bad(line))).collect::<Result<_>>()?,
                "spacing" => g.spacing = rest.split_whitespace().map(|x| x.parse().map_err(|_| bad(line))).collect::<Result<_>>()?,
                "origin" => g.origin = rest.split_whitespace().map(|x| x.parse().map_err(|_| bad(line))).collect::<Result<_>>()?,
                "periodic" => g.periodic = rest.split_whitespace().map(|x| x == "1").collect(),
                "set" => g.sets.push((rest.to_string(), Vec::new())),
                "payload" => in_payload = true,
                "" => {}
                _ => return Err(bad(line)),
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homology::cubical_homology;

    #[test]
    fn chart_roundtrip() {
        let sys = RiemannianSystem::sphere2();
        let c = LocalChart::new(&sys, &[0.0, 0.0, 1.0], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![0.5, 0.5], 64);
        let p = c.point(&[0.2, -0.1]);
        let a = c.coords(&p).unwrap();
        assert!((a[0] - 0.2).abs() < 1e-12 && (a[1] + 0.1).abs() < 1e-12);
        let t = RiemannianSystem::torus2();
        let c = LocalChart::new(&t, &[0.0, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.2, 0.2], 16);
        let p = c.point(&[-0.1, 0.05]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        let a = c.coords(&p).unwrap();
        assert!((a[0] + 0.1).abs() < 1e-12);
        assert_eq!(c.cell_of_coords(&[-0.2 + 1e-9, 0.0]), Some(c.flat_index(&[0, 8])));
    }

    #[test]
    fn flood_fill_components() {
        let t = RiemannianSystem::torus2();
        let c = LocalChart::new(&t, &[0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.4, 0.4], 10);
        let mut inside = vec![false; 100];
        for i in 0..3 {
            inside[c.flat_index(&[i, 0])] = true;
            inside[c.flat_index(&[i, 5])] = true;
        }
        let comp = c.flood_fill(&inside, c.flat_index(&[0, 0]));
        assert_eq!(comp.iter().filter(|&&b| b).count(), 3);
        let h = cubical_homology(&c.complex(&comp)).unwrap();
        assert_eq!(h[0].betti, 1);
    }

    #[test]
    fn global_grids() {
        let sys = RiemannianSystem::sphere2();
        let g = GlobalGrid::for_system(&sys, 8).unwrap();
        let v = g.nearest_vertex(&[0.0, 0.0, 1.0]);
        let p = g.key_position(v);
        assert!((p[2] - 1.0).abs() < 1e-12);
        let cells = g.cells_containing(&[0.0, 0.0, 1.0]);
        assert_eq!(cells.len(), 4);
        let t = GlobalGrid::for_system(&RiemannianSystem::torus2(), 8).unwrap();
        assert_eq!(t.cells_containing(&[0.0, 0.5]).len(), 4);
        assert_eq!(t.cells_containing(&[0.01, 0.52]).len(), 1);
    }

    #[test]
    fn grid_file_roundtrip() {
        let g = GridFile {
            lattice: "torus".into(),
            dims: vec![3, 2],
            spacing: vec![0.5, 0.5],
            origin: vec![0.0, 0.0],
            periodic: vec![true, true],
            sets: vec![("F0".into(), vec![true, false, true, false, false, true])],
        };
        assert_eq!(GridFile::parse(&g.to_text()).unwrap(), g);
    }
}
