//! Morse complex over the integers from counted, oriented connections.

use crate::connections::Connection;
use crate::critical::CritRegistry;
use crate::error::{Error, Result};
use crate::homology::{induced_map, Chain, ChainComplex, HomologyGroup, HomologyModel, IntegerMatrix};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorseComplex {
    /// Generator ids per degree, ordered by (value, id).
    pub generators: Vec<Vec<usize>>,
    /// ∂_k : C_k → C_{k-1}, rows indexed by degree k-1 generators. Entry 0 is empty.
    pub boundaries: Vec<IntegerMatrix>,
    /// Orientation chosen for each generator (+1 unless flipped).
    pub orientation: BTreeMap<usize, i8>,
}

impl MorseComplex {
    pub fn top(&self) -> usize {
        self.generators.len().saturating_sub(1)
    }

    pub fn rank(&self, k: usize) -> usize {
        self.generators.get(k).map_or(0, |g| g.len())
    }

    fn position(&self, id: usize) -> Option<(usize, usize)> {
        self.generators.iter().enumerate().find_map(|(k, g)| g.iter().position(|&x| x == id).map(|i| (k, i)))
    }

    pub fn boundary(&self, k: usize) -> IntegerMatrix {
        if k == 0 || k >= self.generators.len() {
            return IntegerMatrix::zeros(self.rank(k.saturating_sub(1)), self.rank(k));
        }
        self.boundaries[k].clone()
    }

    /// ∂_{k-1} ∂_k = 0 in every degree.
    pub fn check_square_zero(&self) -> Result<()> {
        for k in 2..self.generators.len() {
            if !self.boundary(k - 1).mul(&self.boundary(k)).is_zero() {
                return Err(Error::Complex(format!("boundary squares to nonzero in degree {k}")));
            }
        }
        Ok(())
    }

    /// Reverses the orientation of one generator (negates its row and column).
    pub fn flip(&mut self, id: usize) -> Result<()> {
        let (k, i) = self.position(id).ok_or_else(|| Error::Input(format!("no generator {id}")))?;
        let neg = |m: &mut IntegerMatrix, row: Option<usize>, col: Option<usize>| {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    if row == Some(r) || col == Some(c) {
                        let v = -m.get(r, c).clone();
                        m.set(r, c, v);
                    }
                }
            }
        };
        if k >= 1 {
            neg(&mut self.boundaries[k], None, Some(i));
        }
        if k + 1 < self.generators.len() {
            neg(&mut self.boundaries[k + 1], Some(i), None);
        }
        *self.orientation.entry(id).or_insert(1) *= -1;
        Ok(())
    }

    pub fn chain_complex(&self) -> ChainComplex {
        let mut cx = ChainComplex::new();
        let mut offset = vec![0usize; self.generators.len()];
        let mut next = 0;
        for k in 0..self.generators.len() {
            offset[k] = next;
            for j in 0..self.rank(k) {
                let mut bd = Vec::new();
                if k >= 1 {
                    let m = &self.boundaries[k];
                    for i in 0..m.rows {
                        let v = m.get(i, j);
                        if *v != BigInt::from(0) {
                            bd.push(((offset[k - 1] + i) as u32, i64::try_from(v.clone()).unwrap_or(0)));
                        }
                    }
                }
                cx.add_cell(k, bd);
                next += 1;
            }
        }
        cx
    }

    pub fn model(&self) -> Result<HomologyModel> {
        self.check_square_zero()?;
        HomologyModel::new(&self.chain_complex())
    }

    pub fn homology(&self) -> Result<Vec<HomologyGroup>> {
        let m = self.model()?;
        Ok((0..self.generators.len()).map(|k| m.group(k)).collect())
    }

    /// Cell index of a generator in `chain_complex()`.
    pub fn cell_index(&self, id: usize) -> Option<usize> {
        let (k, i) = self.position(id)?;
        Some((0..k).map(|d| self.rank(d)).sum::<usize>() + i)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in 1..self.generators.len() {
            let rows: Vec<String> = self.generators[k - 1].iter().map(|i| format!("x{i}")).collect();
            let cols: Vec<String> = self.generators[k].iter().map(|i| format!("x{i}")).collect();
            s.push_str(&format!("# boundary {k}\n"));
            s.push_str(&self.boundary(k).to_text(&rows, &cols));
        }
        s
    }
}

/// C_k is free on index-k critical points; ∂⟨x⟩ = Σ_y (Σ signs) ⟨y⟩.
pub fn build_complex(reg: &CritRegistry, conns: &[Connection]) -> Result<MorseComplex> {
    let top = reg.max_index().unwrap_or(0);
    let mut generators = vec![Vec::new(); top + 1];
    let mut sorted: Vec<_> = reg.points.iter().collect();
    sorted.sort_by(|a, b| (a.index, a.value).partial_cmp(&(b.index, b.value)).unwrap().then(a.id.cmp(&b.id)));
    for c in sorted {
        generators[c.index].push(c.id);
    }
    let mut boundaries = vec![IntegerMatrix::zeros(0, generators[0].len())];
    for k in 1..=top {
        boundaries.push(IntegerMatrix::zeros(generators[k - 1].len(), generators[k].len()));
    }
    let mut mc = MorseComplex { generators, boundaries, orientation: reg.points.iter().map(|c| (c.id, 1)).collect() };
    for c in conns {
        let (kx, j) = mc.position(c.from).ok_or_else(|| Error::Input(format!("connection from unknown {}", c.from)))?;
        let (ky, i) = mc.position(c.to).ok_or_else(|| Error::Input(format!("connection to unknown {}", c.to)))?;
        if ky + 1 != kx {
            return Err(Error::Input(format!("connection {} -> {} skips degrees", c.from, c.to)));
        }
        mc.boundaries[kx].add_to(i, j, &BigInt::from(c.sign));
    }
    Ok(mc)
}

/// Inclusion C(Λ^b) → C(Λ^a) on homology in degree k (generators matched by id).
pub fn sublevel_inclusion(sub: &MorseComplex, sup: &MorseComplex, k: usize) -> Result<IntegerMatrix> {
    let ms = sub.model()?;
    let mp = sup.model()?;
    let ids: Vec<usize> = sub.generators.iter().flatten().copied().collect();
    induced_map(&ms, &mp, k, |c: &Chain| {
        let mut out = Chain::new();
        for (&cell, &v) in c {
            let id = ids[cell];
            if sub.orientation.get(&id) != sup.orientation.get(&id) {
                return Err(Error::Input(format!("generator {id} oriented differently in the two complexes")));
            }
            let target = sup.cell_index(id).ok_or_else(|| Error::Input(format!("{id} missing from the larger complex")))?;
            out.insert(target, v);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::CriticalPoint;

    fn point(id: usize, index: usize, value: f64) -> CriticalPoint {
        CriticalPoint {
            id,
            location: vec![],
            value,
            index,
            neg_frame: vec![],
            spectral_gap: 1.0,
            pos_min_eig: 1.0,
            eigenvalues: vec![],
            eigenvectors: vec![],
        }
    }

    fn conn(from: usize, to: usize, sign: i8) -> Connection {
        Connection { from, to, sign, coeffs: vec![], alpha: None, approach: 0.0, bracket_sign: None }
    }

    #[test]
    fn torus_like_complex() {
        let reg = CritRegistry {
            level: f64::INFINITY,
            points: vec![point(0, 0, -1.5), point(1, 1, -0.5), point(2, 1, 0.5), point(3, 2, 1.5)],
            separation: 0.1,
            rho_samples: 0,
        };
        let cs = vec![conn(1, 0, 1), conn(1, 0, -1), conn(2, 0, 1), conn(2, 0, -1), conn(3, 1, 1), conn(3, 1, -1), conn(3, 2, -1), conn(3, 2, 1)];
        let mut mc = build_complex(&reg, &cs).unwrap();
        let h: Vec<usize> = mc.homology().unwrap().iter().map(|g| g.betti).collect();
        assert_eq!(h, vec![1, 2, 1]);
        mc.flip(2).unwrap();
        let h2: Vec<usize> = mc.homology().unwrap().iter().map(|g| g.betti).collect();
        assert_eq!(h, h2);
    }

    #[test]
    fn projective_plane_like_torsion_and_square_zero() {
        let reg = CritRegistry {
            level: f64::INFINITY,
            points: vec![point(0, 0, 0.0), point(1, 1, 1.0), point(2, 2, 2.0)],
            separation: 0.1,
            rho_samples: 0,
        };
        let cs = vec![conn(1, 0, 1), conn(1, 0, -1), conn(2, 1, 1), conn(2, 1, 1)];
        let mc = build_complex(&reg, &cs).unwrap();
        let h = mc.homology().unwrap();
        assert_eq!(h[1].torsion, vec![2]);
        let bad = build_complex(&reg, &[conn(1, 0, 1), conn(2, 1, 1)]).unwrap();
        assert!(bad.check_square_zero().is_err());
    }
}
