//! Sparse chain complexes, unit-pivot reduction and integer homology models.

use super::matrix::{big_mod, smith_normal_form, IntegerMatrix};
use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

/// Integer chain: cell index to coefficient, zero coefficients never stored.
pub type Chain = BTreeMap<usize, i64>;

pub fn chain_add(c: &mut Chain, cell: usize, v: i64) -> Result<()> {
    if v == 0 {
        return Ok(());
    }
    let e = c.entry(cell).or_insert(0);
    *e = e.checked_add(v).ok_or_else(|| Error::Numerical("chain coefficient overflow".into()))?;
    if *e == 0 {
        c.remove(&cell);
    }
    Ok(())
}

/// Homology group in one degree: free rank plus invariant factors above one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomologyGroup {
    pub degree: usize,
    pub betti: usize,
    pub torsion: Vec<u64>,
}

impl HomologyGroup {
    pub fn is_zero(&self) -> bool {
        self.betti == 0 && self.torsion.is_empty()
    }
}

/// Finite based chain complex with cells 0..n.
#[derive(Clone, Debug, Default)]
pub struct ChainComplex {
    pub dims: Vec<usize>,
    pub boundary: Vec<Vec<(u32, i64)>>,
}

impl ChainComplex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_cell(&mut self, dim: usize, boundary: Vec<(u32, i64)>) -> usize {
        self.dims.push(dim);
        self.boundary.push(boundary);
        self.dims.len() - 1
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn top_dim(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    pub fn boundary_of(&self, c: &Chain) -> Result<Chain> {
        let mut out = Chain::new();
        for (&cell, &v) in c {
            for &(f, w) in &self.boundary[cell] {
                let p = v.checked_mul(w).ok_or_else(|| Error::Numerical("overflow".into()))?;
                chain_add(&mut out, f as usize, p)?;
            }
        }
        Ok(out)
    }

    /// Checks that boundaries lower dimension by one and square to zero.
    pub fn validate(&self) -> Result<()> {
        for (i, bd) in self.boundary.iter().enumerate() {
            for &(f, _) in bd {
                if self.dims[f as usize] + 1 != self.dims[i] {
                    return Err(Error::Complex(format!("cell {i} has a face of wrong dimension")));
                }
            }
            let mut c = Chain::new();
            c.insert(i, 1);
            let b = self.boundary_of(&c)?;
            if !self.boundary_of(&b)?.is_empty() {
                return Err(Error::Complex(format!("boundary of boundary of cell {i} is nonzero")));
            }
        }
        Ok(())
    }

    /// Boundary matrix from degree k to k-1 in cell order.
    pub fn boundary_matrix(&self, k: usize) -> (IntegerMatrix, Vec<usize>, Vec<usize>) {
        let cols: Vec<usize> = (0..self.len()).filter(|&i| self.dims[i] == k).collect();
        let rows: Vec<usize> = if k == 0 {
            Vec::new()
        } else {
            (0..self.len()).filter(|&i| self.dims[i] == k - 1).collect()
        };
        let mut pos = vec![usize::MAX; self.len()];
        for (r, &i) in rows.iter().enumerate() {
            pos[i] = r;
        }
        let mut m = IntegerMatrix::zeros(rows.len(), cols.len());
        for (c, &j) in cols.iter().enumerate() {
            for &(f, v) in &self.boundary[j] {
                m.add_to(pos[f as usize], c, &BigInt::from(v));
            }
        }
        (m, rows, cols)
    }
}

struct Step {
    sigma: u32,
    tau: u32,
    unit: i64,
    bd_sigma: Vec<(u32, i64)>,
    cob_tau: Vec<(u32, i64)>,
}

fn coef(list: &[(u32, i64)], x: u32) -> i64 {
    list.iter().find(|e| e.0 == x).map_or(0, |e| e.1)
}

fn set_coef(list: &mut Vec<(u32, i64)>, x: u32, v: i64) {
    match list.iter().position(|e| e.0 == x) {
        Some(p) if v == 0 => {
            list.remove(p);
        }
        Some(p) => list[p].1 = v,
        None if v != 0 => list.push((x, v)),
        None => {}
    }
}

/// Record of a sequence of unit-pivot eliminations. Keeps enough data to
/// project chains onto the reduced complex and to lift reduced cycles back.
pub struct Reduction {
    dims: Vec<usize>,
    steps: Vec<Step>,
    /// Surviving cells per degree.
    pub remaining: Vec<Vec<usize>>,
    /// Reduced boundary of each surviving cell, in original indices.
    reduced_bd: BTreeMap<usize, Vec<(u32, i64)>>,
    /// Step indices, in order, touching chains of each degree.
    by_degree: Vec<Vec<usize>>,
}

impl Reduction {
    pub fn new(cx: &ChainComplex) -> Result<Self> {
        let n = cx.len();
        let top = cx.top_dim();
        let mut bd: Vec<Vec<(u32, i64)>> = cx.boundary.clone();
        let mut cob: Vec<Vec<(u32, i64)>> = vec![Vec::new(); n];
        for (i, b) in bd.iter().enumerate() {
            for &(f, v) in b {
                cob[f as usize].push((i as u32, v));
            }
        }
        let mut alive = vec![true; n];
        let cost = |bd: &Vec<Vec<(u32, i64)>>, cob: &Vec<Vec<(u32, i64)>>, s: u32, t: u32| -> u64 {
            let a = cob[t as usize].len().saturating_sub(1) as u64;
            let b = bd[s as usize].len().saturating_sub(1) as u64;
            a * b
        };
        let mut heap = BinaryHeap::new();
        for s in 0..n {
            for &(t, v) in &bd[s] {
                if v.abs() == 1 {
                    heap.push(Reverse((cost(&bd, &cob, s as u32, t), s as u32, t)));
                }
            }
        }
        let mut steps = Vec::new();
        while let Some(Reverse((c0, s, t))) = heap.pop() {
            if !alive[s as usize] || !alive[t as usize] {
                continue;
            }
            let u = coef(&bd[s as usize], t);
            if u.abs() != 1 {
                continue;
            }
            let c1 = cost(&bd, &cob, s, t);
            if c1 > c0 {
                heap.push(Reverse((c1, s, t)));
                continue;
            }
            let bd_sigma = bd[s as usize].clone();
            let cob_tau: Vec<(u32, i64)> =
                cob[t as usize].iter().copied().filter(|e| e.0 != s).collect();
            for &(rho, c) in &cob_tau {
                let q = c * u;
                for &(z, w) in &bd_sigma {
                    let old = coef(&bd[rho as usize], z);
                    let new = old
                        .checked_sub(q.checked_mul(w).ok_or_else(overflow)?)
                        .ok_or_else(overflow)?;
                    set_coef(&mut bd[rho as usize], z, new);
                    set_coef(&mut cob[z as usize], rho, new);
                }
            }
            for &(z, _) in &bd_sigma {
                set_coef(&mut cob[z as usize], s, 0);
            }
            let cof_sigma = std::mem::take(&mut cob[s as usize]);
            for &(xi, _) in &cof_sigma {
                set_coef(&mut bd[xi as usize], s, 0);
            }
            let bd_tau = std::mem::take(&mut bd[t as usize]);
            for &(w, _) in &bd_tau {
                set_coef(&mut cob[w as usize], t, 0);
            }
            bd[s as usize].clear();
            cob[t as usize].clear();
            alive[s as usize] = false;
            alive[t as usize] = false;
            for &(rho, _) in &cob_tau {
                for &(z, v) in &bd[rho as usize] {
                    if v.abs() == 1 {
                        heap.push(Reverse((cost(&bd, &cob, rho, z), rho, z)));
                    }
                }
            }
            steps.push(Step { sigma: s, tau: t, unit: u, bd_sigma, cob_tau });
        }
        let mut remaining = vec![Vec::new(); top + 1];
        let mut reduced_bd = BTreeMap::new();
        for i in 0..n {
            if alive[i] {
                remaining[cx.dims[i]].push(i);
                reduced_bd.insert(i, bd[i].clone());
            }
        }
        let mut by_degree = vec![Vec::new(); top + 2];
        for (k, st) in steps.iter().enumerate() {
            let dt = cx.dims[st.tau as usize];
            by_degree[dt].push(k);
            by_degree[dt + 1].push(k);
        }
        Ok(Reduction { dims: cx.dims.clone(), steps, remaining, reduced_bd, by_degree })
    }

    pub fn top_dim(&self) -> usize {
        self.remaining.len() - 1
    }

    /// Chain map onto the reduced complex.
    pub fn project(&self, k: usize, c: &Chain) -> Result<Chain> {
        let mut c = c.clone();
        if k < self.by_degree.len() {
            for &si in &self.by_degree[k] {
                let st = &self.steps[si];
                if self.dims[st.tau as usize] == k {
                    if let Some(&ct) = c.get(&(st.tau as usize)) {
                        let q = ct * st.unit;
                        for &(z, w) in &st.bd_sigma {
                            chain_add(&mut c, z as usize, -q.checked_mul(w).ok_or_else(overflow)?)?;
                        }
                    }
                } else {
                    c.remove(&(st.sigma as usize));
                }
            }
        }
        Ok(c)
    }

    /// Chain map from the reduced complex back into the original one.
    pub fn lift(&self, k: usize, c: &Chain) -> Result<Chain> {
        let mut c = c.clone();
        if k < self.by_degree.len() {
            for &si in self.by_degree[k].iter().rev() {
                let st = &self.steps[si];
                if self.dims[st.sigma as usize] != k {
                    continue;
                }
                let mut s = 0i64;
                for &(rho, w) in &st.cob_tau {
                    if let Some(&v) = c.get(&(rho as usize)) {
                        s = s.checked_add(v.checked_mul(w).ok_or_else(overflow)?).ok_or_else(overflow)?;
                    }
                }
                if s != 0 {
                    chain_add(&mut c, st.sigma as usize, -s * st.unit)?;
                }
            }
        }
        Ok(c)
    }

    /// Dense boundary of the reduced complex from degree k to k-1.
    pub fn dense_boundary(&self, k: usize) -> IntegerMatrix {
        let cols = self.remaining.get(k).cloned().unwrap_or_default();
        let rows = if k == 0 { Vec::new() } else { self.remaining.get(k - 1).cloned().unwrap_or_default() };
        let mut m = IntegerMatrix::zeros(rows.len(), cols.len());
        for (j, &cell) in cols.iter().enumerate() {
            for &(f, v) in &self.reduced_bd[&cell] {
                let i = rows.binary_search(&(f as usize)).expect("reduced face survives");
                m.add_to(i, j, &BigInt::from(v));
            }
        }
        m
    }
}

fn overflow() -> Error {
    Error::Numerical("coefficient overflow during reduction".into())
}

/// Homology coordinates of a cycle in the chosen basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coordinates {
    pub free: Vec<BigInt>,
    /// Residues modulo the torsion invariant factors, in order.
    pub torsion: Vec<BigInt>,
}

struct DegreeModel {
    u: IntegerMatrix,
    rank_in: usize,
    factors: Vec<BigInt>,
    v2_inv: IntegerMatrix,
    rank_out: usize,
    free_gens: Vec<Vec<BigInt>>,
    torsion_gens: Vec<Vec<BigInt>>,
}

/// Integer homology of a chain complex with explicit bases, coordinates and
/// generator representatives.
pub struct HomologyModel {
    complex: ChainComplex,
    reduction: Reduction,
    degrees: Vec<DegreeModel>,
}

impl HomologyModel {
    pub fn new(cx: &ChainComplex) -> Result<Self> {
        let reduction = Reduction::new(cx)?;
        let top = reduction.top_dim();
        let mut degrees = Vec::with_capacity(top + 1);
        for k in 0..=top {
            let nk = reduction.remaining[k].len();
            let d_in = if k < top {
                reduction.dense_boundary(k + 1)
            } else {
                IntegerMatrix::zeros(nk, 0)
            };
            let d_out = reduction.dense_boundary(k);
            let snf = smith_normal_form(&d_in);
            let r = snf.rank;
            let rest = snf.u_inv.columns(r, nk);
            let m = d_out.mul(&rest);
            let snf2 = smith_normal_form(&m);
            let s = snf2.rank;
            let kernel = snf2.v.columns(s, nk - r);
            let free_mat = rest.mul(&kernel);
            let free_gens = (0..free_mat.cols).map(|j| free_mat.column(j)).collect();
            let mut factors = Vec::new();
            let mut torsion_gens = Vec::new();
            for i in 0..r {
                let d = snf.diagonal[i].clone();
                if !d.is_one() {
                    torsion_gens.push(snf.u_inv.column(i));
                }
                factors.push(d);
            }
            degrees.push(DegreeModel {
                u: snf.u,
                rank_in: r,
                factors,
                v2_inv: snf2.v_inv,
                rank_out: s,
                free_gens,
                torsion_gens,
            });
        }
        Ok(HomologyModel { complex: cx.clone(), reduction, degrees })
    }

    pub fn top_dim(&self) -> usize {
        self.degrees.len() - 1
    }

    pub fn groups(&self) -> Vec<HomologyGroup> {
        self.degrees
            .iter()
            .enumerate()
            .map(|(k, d)| HomologyGroup {
                degree: k,
                betti: d.free_gens.len(),
                torsion: d
                    .factors
                    .iter()
                    .filter(|f| !f.is_one())
                    .map(|f| f.to_u64().unwrap_or(u64::MAX))
                    .collect(),
            })
            .collect()
    }

    pub fn group(&self, k: usize) -> HomologyGroup {
        if k < self.degrees.len() {
            self.groups()[k].clone()
        } else {
            HomologyGroup { degree: k, betti: 0, torsion: vec![] }
        }
    }

    pub fn betti(&self, k: usize) -> usize {
        self.degrees.get(k).map_or(0, |d| d.free_gens.len())
    }

    /// Coordinates of a cycle of degree k (given in original cell indices).
    pub fn coordinates(&self, k: usize, cycle: &Chain) -> Result<Coordinates> {
        if k >= self.degrees.len() {
            return Ok(Coordinates { free: vec![], torsion: vec![] });
        }
        if cycle.keys().any(|&c| c >= self.complex.len() || self.complex.dims[c] != k) {
            return Err(Error::Complex(format!("chain is not homogeneous of degree {k}")));
        }
        if !self.complex.boundary_of(cycle)?.is_empty() {
            return Err(Error::Complex(format!("chain of degree {k} is not a cycle")));
        }
        let d = &self.degrees[k];
        let reduced = self.reduction.project(k, cycle)?;
        let cells = &self.reduction.remaining[k];
        let mut z = vec![BigInt::zero(); cells.len()];
        for (&cell, &v) in &reduced {
            match cells.binary_search(&cell) {
                Ok(i) => z[i] = BigInt::from(v),
                Err(_) => return Err(Error::Complex(format!("projection left eliminated cell {cell}"))),
            }
        }
        let y = d.u.mul_vec(&z);
        let tail: Vec<BigInt> = y[d.rank_in..].to_vec();
        let w = d.v2_inv.mul_vec(&tail);
        if w[..d.rank_out].iter().any(|x| !x.is_zero()) {
            return Err(Error::Complex(format!("chain of degree {k} is not a cycle")));
        }
        let torsion = d
            .factors
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.is_one())
            .map(|(i, f)| big_mod(&y[i], f))
            .collect();
        Ok(Coordinates { free: w[d.rank_out..].to_vec(), torsion })
    }

    /// Representative cycle of the j-th free generator in degree k.
    pub fn free_generator(&self, k: usize, j: usize) -> Result<Chain> {
        self.lift_dense(k, &self.degrees[k].free_gens[j])
    }

    pub fn torsion_generator(&self, k: usize, j: usize) -> Result<Chain> {
        self.lift_dense(k, &self.degrees[k].torsion_gens[j])
    }

    fn lift_dense(&self, k: usize, v: &[BigInt]) -> Result<Chain> {
        let mut c = Chain::new();
        for (i, x) in v.iter().enumerate() {
            if !x.is_zero() {
                let xv = x.to_i64().ok_or_else(overflow)?;
                c.insert(self.reduction.remaining[k][i], xv);
            }
        }
        self.reduction.lift(k, &c)
    }
}

/// Matrix of a chain map in homology: columns are coordinates of the images
/// of the source free generators.
pub fn induced_map<F>(src: &HomologyModel, dst: &HomologyModel, k: usize, map: F) -> Result<IntegerMatrix>
where
    F: Fn(&Chain) -> Result<Chain>,
{
    let n_src = src.betti(k);
    let n_dst = dst.betti(k);
    let mut m = IntegerMatrix::zeros(n_dst, n_src);
    for j in 0..n_src {
        let g = src.free_generator(k, j)?;
        let img = map(&g)?;
        let c = dst.coordinates(k, &img)?;
        for (i, x) in c.free.into_iter().enumerate() {
            m.set(i, j, x);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Triangulated circle: three vertices, three edges.
    fn circle() -> ChainComplex {
        let mut cx = ChainComplex::new();
        for _ in 0..3 {
            cx.add_cell(0, vec![]);
        }
        cx.add_cell(1, vec![(1, 1), (0, -1)]);
        cx.add_cell(1, vec![(2, 1), (1, -1)]);
        cx.add_cell(1, vec![(0, 1), (2, -1)]);
        cx
    }

    #[test]
    fn circle_homology_and_coordinates() {
        let cx = circle();
        cx.validate().unwrap();
        let h = HomologyModel::new(&cx).unwrap();
        assert_eq!(h.betti(0), 1);
        assert_eq!(h.betti(1), 1);
        let fundamental: Chain = [(3, 1), (4, 1), (5, 1)].into_iter().collect();
        let c = h.coordinates(1, &fundamental).unwrap();
        assert_eq!(c.free.len(), 1);
        assert!(c.free[0] == BigInt::one() || c.free[0] == -BigInt::one());
        let g = h.free_generator(1, 0).unwrap();
        assert!(cx.boundary_of(&g).unwrap().is_empty());
        let not_cycle: Chain = [(3, 1)].into_iter().collect();
        assert!(h.coordinates(1, &not_cycle).is_err());
    }

    #[test]
    fn projective_plane_torsion() {
        // Minimal CW structure of RP^2: one cell per degree, boundary 2.
        let mut cx = ChainComplex::new();
        cx.add_cell(0, vec![]);
        cx.add_cell(1, vec![]);
        cx.add_cell(2, vec![(1, 2)]);
        let h = HomologyModel::new(&cx).unwrap();
        let g = h.groups();
        assert_eq!(g[0].betti, 1);
        assert_eq!(g[1].betti, 0);
        assert_eq!(g[1].torsion, vec![2]);
        assert!(g[2].is_zero());
    }
}
