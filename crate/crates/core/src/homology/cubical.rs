//! Cubical complexes on (optionally periodic) lattices in doubled coordinates:
//! even coordinates are vertex positions, odd coordinates span unit intervals.

use super::chain::{Chain, ChainComplex, Coordinates, HomologyGroup, HomologyModel};
use super::matrix::IntegerMatrix;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet};

pub type CellKey = u64;
pub type KeyChain = BTreeMap<CellKey, i64>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lattice {
    /// Number of unit intervals per axis.
    pub n: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl Lattice {
    pub fn new(n: Vec<usize>, periodic: Vec<bool>) -> Self {
        assert_eq!(n.len(), periodic.len());
        Lattice { n, periodic }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    /// Number of doubled coordinate values on an axis.
    pub fn extent(&self, i: usize) -> i64 {
        if self.periodic[i] {
            2 * self.n[i] as i64
        } else {
            2 * self.n[i] as i64 + 1
        }
    }

    pub fn wrap(&self, i: usize, c: i64) -> Option<i64> {
        let e = self.extent(i);
        if self.periodic[i] {
            Some(c.rem_euclid(e))
        } else if (0..e).contains(&c) {
            Some(c)
        } else {
            None
        }
    }

    pub fn key(&self, c: &[i64]) -> Option<CellKey> {
        let mut k: u64 = 0;
        for i in (0..self.dim()).rev() {
            let ci = self.wrap(i, c[i])?;
            k = k * self.extent(i) as u64 + ci as u64;
        }
        Some(k)
    }

    pub fn coords(&self, mut key: CellKey) -> Vec<i64> {
        let mut c = vec![0; self.dim()];
        for (i, ci) in c.iter_mut().enumerate() {
            let e = self.extent(i) as u64;
            *ci = (key % e) as i64;
            key /= e;
        }
        c
    }

    pub fn cell_dim(&self, key: CellKey) -> usize {
        self.coords(key).iter().filter(|&&c| c & 1 == 1).count()
    }

    /// Signed boundary: for the j-th odd axis, sign (-1)^j times (upper - lower).
    pub fn boundary(&self, key: CellKey) -> Vec<(CellKey, i64)> {
        let c = self.coords(key);
        let mut out: Vec<(CellKey, i64)> = Vec::new();
        let mut seen = 0;
        for i in 0..self.dim() {
            if c[i] & 1 == 0 {
                continue;
            }
            let sign = if seen % 2 == 0 { 1 } else { -1 };
            seen += 1;
            for (off, s) in [(1, sign), (-1, -sign)] {
                let mut f = c.clone();
                f[i] += off;
                if let Some(k) = self.key(&f) {
                    match out.iter_mut().find(|e| e.0 == k) {
                        Some(e) => e.1 += s,
                        None => out.push((k, s)),
                    }
                }
            }
        }
        out.retain(|e| e.1 != 0);
        out
    }

    /// All faces of a cell including itself.
    pub fn closure(&self, key: CellKey) -> Vec<CellKey> {
        let c = self.coords(key);
        let mut out = vec![c.clone()];
        for i in 0..self.dim() {
            if c[i] & 1 == 1 {
                let mut more = Vec::new();
                for f in &out {
                    for off in [-1, 1] {
                        let mut g = f.clone();
                        g[i] += off;
                        more.push(g);
                    }
                }
                out.extend(more);
            }
        }
        let mut keys: Vec<CellKey> = out.iter().filter_map(|f| self.key(f)).collect();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    /// Top-dimensional cells of the whole lattice.
    pub fn top_cells(&self) -> Vec<CellKey> {
        let mut cells = vec![Vec::<i64>::new()];
        for i in 0..self.dim() {
            let mut next = Vec::new();
            for c in &cells {
                for j in 0..self.n[i] as i64 {
                    let mut d = c.clone();
                    d.push(2 * j + 1);
                    next.push(d);
                }
            }
            cells = next;
        }
        cells.iter().filter_map(|c| self.key(c)).collect()
    }
}

/// Closed set of cells of a lattice.
#[derive(Clone, Debug)]
pub struct CubicalComplex {
    pub lattice: Lattice,
    cells: Vec<CellKey>,
}

impl CubicalComplex {
    pub fn empty(lattice: Lattice) -> Self {
        CubicalComplex { lattice, cells: Vec::new() }
    }

    /// Closure of a set of cells.
    pub fn from_cells<I: IntoIterator<Item = CellKey>>(lattice: Lattice, cells: I) -> Self {
        let mut set = HashSet::new();
        for k in cells {
            if set.contains(&k) {
                continue;
            }
            for f in lattice.closure(k) {
                set.insert(f);
            }
        }
        let mut cells: Vec<CellKey> = set.into_iter().collect();
        cells.sort_unstable();
        CubicalComplex { lattice, cells }
    }

    /// Set of cells taken as given; fails if it is not closed under faces.
    pub fn from_closed_cells(lattice: Lattice, mut cells: Vec<CellKey>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        let cx = CubicalComplex { lattice, cells };
        cx.check_closure()?;
        Ok(cx)
    }

    pub fn full(lattice: Lattice) -> Self {
        let tops = lattice.top_cells();
        Self::from_cells(lattice, tops)
    }

    /// Boundary surface of the cube [0, n]^3.
    pub fn cube_surface(n: usize) -> Self {
        let lattice = Lattice::new(vec![n, n, n], vec![false; 3]);
        let tops = cube_surface_top_cells(n);
        Self::from_cells(lattice, tops)
    }

    pub fn cells(&self) -> &[CellKey] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, k: CellKey) -> bool {
        self.cells.binary_search(&k).is_ok()
    }

    pub fn check_closure(&self) -> Result<()> {
        for &k in &self.cells {
            for (f, _) in self.lattice.boundary(k) {
                if !self.contains(f) {
                    return Err(Error::Complex(format!("face {f} of cell {k} missing")));
                }
            }
        }
        Ok(())
    }

    pub fn is_subcomplex_of(&self, other: &CubicalComplex) -> bool {
        self.lattice == other.lattice && self.cells.iter().all(|&k| other.contains(k))
    }

    pub fn union(&self, other: &CubicalComplex) -> CubicalComplex {
        let mut cells = self.cells.clone();
        cells.extend_from_slice(&other.cells);
        cells.sort_unstable();
        cells.dedup();
        CubicalComplex { lattice: self.lattice.clone(), cells }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.cells.iter().map(|&k| if self.lattice.cell_dim(k) % 2 == 0 { 1 } else { -1 }).sum()
    }

    pub fn key_boundary(&self, c: &KeyChain) -> KeyChain {
        let mut out = KeyChain::new();
        for (&k, &v) in c {
            for (f, w) in self.lattice.boundary(k) {
                let e = out.entry(f).or_insert(0);
                *e += v * w;
                if *e == 0 {
                    out.remove(&f);
                }
            }
        }
        out
    }
}

pub fn cube_surface_top_cells(n: usize) -> Vec<CellKey> {
    let lattice = Lattice::new(vec![n, n, n], vec![false; 3]);
    let e = 2 * n as i64;
    let mut tops = Vec::new();
    for fixed in 0..3 {
        for side in [0, e] {
            for a in 0..n as i64 {
                for b in 0..n as i64 {
                    let mut c = [0i64; 3];
                    let (i, j) = match fixed {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    c[fixed] = side;
                    c[i] = 2 * a + 1;
                    c[j] = 2 * b + 1;
                    tops.push(lattice.key(&c).unwrap());
                }
            }
        }
    }
    tops
}

/// Homology model of a cubical pair (X, A) with key-level chain conversion.
pub struct PairModel {
    pub lattice: Lattice,
    key_index: HashMap<CellKey, usize>,
    keys: Vec<CellKey>,
    subset: HashSet<CellKey>,
    pub model: HomologyModel,
}

impl PairModel {
    pub fn new(x: &CubicalComplex, a: Option<&CubicalComplex>) -> Result<Self> {
        let subset: HashSet<CellKey> = match a {
            Some(a) => {
                if !a.is_subcomplex_of(x) {
                    return Err(Error::Input("A is not a subcomplex of X".into()));
                }
                a.cells.iter().copied().collect()
            }
            None => HashSet::new(),
        };
        let keys: Vec<CellKey> = x.cells.iter().copied().filter(|k| !subset.contains(k)).collect();
        let key_index: HashMap<CellKey, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let mut cx = ChainComplex::new();
        for &k in &keys {
            let bd: Vec<(u32, i64)> = x
                .lattice
                .boundary(k)
                .into_iter()
                .filter_map(|(f, v)| key_index.get(&f).map(|&i| (i as u32, v)))
                .collect();
            cx.add_cell(x.lattice.cell_dim(k), bd);
        }
        let model = HomologyModel::new(&cx)?;
        Ok(PairModel { lattice: x.lattice.clone(), key_index, keys, subset, model })
    }

    pub fn groups(&self) -> Vec<HomologyGroup> {
        self.model.groups()
    }

    pub fn betti(&self, k: usize) -> usize {
        self.model.betti(k)
    }

    pub fn in_subset(&self, k: CellKey) -> bool {
        self.subset.contains(&k)
    }

    pub fn in_space(&self, k: CellKey) -> bool {
        self.key_index.contains_key(&k) || self.subset.contains(&k)
    }

    /// Converts a key chain (dropping subset cells) into the model's indices.
    pub fn to_chain(&self, c: &KeyChain) -> Result<Chain> {
        let mut out = Chain::new();
        for (&k, &v) in c {
            if self.subset.contains(&k) {
                continue;
            }
            match self.key_index.get(&k) {
                Some(&i) => {
                    out.insert(i, v);
                }
                None => return Err(Error::Rasterization(format!("cell {k} outside the complex"))),
            }
        }
        Ok(out)
    }

    pub fn to_keys(&self, c: &Chain) -> KeyChain {
        c.iter().map(|(&i, &v)| (self.keys[i], v)).collect()
    }

    pub fn coordinates(&self, k: usize, c: &KeyChain) -> Result<Coordinates> {
        self.model.coordinates(k, &self.to_chain(c)?)
    }

    pub fn generator(&self, k: usize, j: usize) -> Result<KeyChain> {
        Ok(self.to_keys(&self.model.free_generator(k, j)?))
    }
}

pub fn cubical_homology(x: &CubicalComplex) -> Result<Vec<HomologyGroup>> {
    x.check_closure()?;
    Ok(full_groups(&PairModel::new(x, None)?, x.lattice.dim()))
}

pub fn relative_homology(x: &CubicalComplex, a: &CubicalComplex) -> Result<Vec<HomologyGroup>> {
    x.check_closure()?;
    a.check_closure()?;
    Ok(full_groups(&PairModel::new(x, Some(a))?, x.lattice.dim()))
}

/// Groups for every degree 0..=top, zero where the model has no cells.
pub fn full_groups(m: &PairModel, top: usize) -> Vec<HomologyGroup> {
    (0..=top).map(|k| m.model.group(k)).collect()
}

/// Connecting map of (X, A) followed by the quotient to (A, B), in degree k.
pub struct TripleMaps {
    /// H_k(X, A) -> H_{k-1}(A)
    pub connecting: IntegerMatrix,
    /// H_{k-1}(A) -> H_{k-1}(A, B)
    pub quotient: IntegerMatrix,
    /// H_k(X, A) -> H_{k-1}(A, B)
    pub triple: IntegerMatrix,
}

/// Boundary of a relative cycle of (X, A), read as a cycle of A.
pub fn relative_boundary(xa: &PairModel, k: usize, j: usize) -> Result<KeyChain> {
    let g = xa.generator(k, j)?;
    let mut b = KeyChain::new();
    for (&key, &v) in &g {
        for (f, w) in xa.lattice.boundary(key) {
            let e = b.entry(f).or_insert(0);
            *e += v * w;
            if *e == 0 {
                b.remove(&f);
            }
        }
    }
    if b.keys().any(|&f| !xa.in_subset(f)) {
        return Err(Error::Complex("relative generator boundary leaves A".into()));
    }
    Ok(b)
}

pub fn connecting_and_induced_maps(
    x: &CubicalComplex,
    a: &CubicalComplex,
    b: &CubicalComplex,
    k: usize,
) -> Result<TripleMaps> {
    if k == 0 {
        return Err(Error::Input("connecting map needs k >= 1".into()));
    }
    if !b.is_subcomplex_of(a) {
        return Err(Error::Input("B is not a subcomplex of A".into()));
    }
    let xa = PairModel::new(x, Some(a))?;
    let a_abs = PairModel::new(a, None)?;
    let ab = PairModel::new(a, Some(b))?;
    let n = xa.betti(k);
    let mut connecting = IntegerMatrix::zeros(a_abs.betti(k - 1), n);
    let mut triple = IntegerMatrix::zeros(ab.betti(k - 1), n);
    for j in 0..n {
        let bd = relative_boundary(&xa, k, j)?;
        for (i, v) in a_abs.coordinates(k - 1, &bd)?.free.into_iter().enumerate() {
            connecting.set(i, j, v);
        }
        for (i, v) in ab.coordinates(k - 1, &bd)?.free.into_iter().enumerate() {
            triple.set(i, j, v);
        }
    }
    let mut quotient = IntegerMatrix::zeros(ab.betti(k - 1), a_abs.betti(k - 1));
    for j in 0..a_abs.betti(k - 1) {
        let g = a_abs.generator(k - 1, j)?;
        for (i, v) in ab.coordinates(k - 1, &g)?.free.into_iter().enumerate() {
            quotient.set(i, j, v);
        }
    }
    Ok(TripleMaps { connecting, quotient, triple })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn betti(g: &[HomologyGroup]) -> Vec<usize> {
        g.iter().map(|h| h.betti).collect()
    }

    fn square_cells(l: &Lattice, pred: impl Fn(i64, i64) -> bool) -> Vec<CellKey> {
        let mut v = Vec::new();
        for i in 0..l.n[0] as i64 {
            for j in 0..l.n[1] as i64 {
                if pred(i, j) {
                    v.push(l.key(&[2 * i + 1, 2 * j + 1]).unwrap());
                }
            }
        }
        v
    }

    #[test]
    fn torus_grid() {
        let l = Lattice::new(vec![4, 5], vec![true, true]);
        let t = CubicalComplex::full(l);
        assert_eq!(betti(&cubical_homology(&t).unwrap()), vec![1, 2, 1]);
        assert_eq!(t.euler_characteristic(), 0);
    }

    #[test]
    fn single_cell_and_annulus() {
        let l = Lattice::new(vec![5, 5], vec![false, false]);
        let one = CubicalComplex::from_cells(l.clone(), square_cells(&l, |i, j| i == 2 && j == 2));
        assert_eq!(betti(&cubical_homology(&one).unwrap()), vec![1, 0, 0]);
        let ring = CubicalComplex::from_cells(
            l.clone(),
            square_cells(&l, |i, j| (1..=3).contains(&i) && (1..=3).contains(&j) && !(i == 2 && j == 2)),
        );
        assert_eq!(betti(&cubical_homology(&ring).unwrap()), vec![1, 1, 0]);
    }

    #[test]
    fn sphere_surface() {
        let s = CubicalComplex::cube_surface(3);
        assert_eq!(betti(&cubical_homology(&s).unwrap()), vec![1, 0, 1, 0]);
    }

    #[test]
    fn disk_boundary_pair_and_connecting_map() {
        let l = Lattice::new(vec![3, 3], vec![false, false]);
        let disk = CubicalComplex::full(l.clone());
        let boundary: Vec<CellKey> = disk
            .cells()
            .iter()
            .copied()
            .filter(|&k| {
                let c = l.coords(k);
                l.cell_dim(k) < 2 && c.iter().any(|&x| x == 0 || x == 6)
            })
            .collect();
        let circle = CubicalComplex::from_closed_cells(l.clone(), boundary).unwrap();
        assert_eq!(betti(&cubical_homology(&circle).unwrap()), vec![1, 1, 0]);
        assert_eq!(betti(&relative_homology(&disk, &circle).unwrap()), vec![0, 0, 1]);
        let empty = CubicalComplex::empty(l);
        let maps = connecting_and_induced_maps(&disk, &circle, &empty, 2).unwrap();
        assert_eq!(maps.connecting.rows, 1);
        let c = maps.connecting.get(0, 0).clone();
        assert!(c == 1.into() || c == (-1).into());
        assert_eq!(maps.quotient, IntegerMatrix::identity(1));
    }

    #[test]
    fn interval_rel_endpoints() {
        let l = Lattice::new(vec![4], vec![false]);
        let i = CubicalComplex::full(l.clone());
        let ends = CubicalComplex::from_closed_cells(l.clone(), vec![l.key(&[0]).unwrap(), l.key(&[8]).unwrap()]).unwrap();
        assert_eq!(betti(&relative_homology(&i, &ends).unwrap()), vec![0, 1]);
        assert_eq!(betti(&relative_homology(&i, &i).unwrap()), vec![0, 0]);
    }
}
