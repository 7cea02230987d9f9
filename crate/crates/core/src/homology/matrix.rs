use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense integer matrix with arbitrary-precision entries.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct IntegerMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<BigInt>,
}

impl IntegerMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntegerMatrix { rows, cols, data: vec![BigInt::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, BigInt::one());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, BigInt::from(v));
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &BigInt {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: BigInt) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: &BigInt) {
        let e = &mut self.data[i * self.cols + j];
        *e += v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    pub fn mul(&self, other: &IntegerMatrix) -> IntegerMatrix {
        assert_eq!(self.cols, other.rows, "shape mismatch in product");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if !b.is_zero() {
                        out.data[i * other.cols + j] += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[BigInt]) -> Vec<BigInt> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut s = BigInt::zero();
                for j in 0..self.cols {
                    if !v[j].is_zero() {
                        s += self.get(i, j) * &v[j];
                    }
                }
                s
            })
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<BigInt> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    /// Submatrix with the given column range.
    pub fn columns(&self, start: usize, end: usize) -> IntegerMatrix {
        let mut out = Self::zeros(self.rows, end - start);
        for i in 0..self.rows {
            for j in start..end {
                out.set(i, j - start, self.get(i, j).clone());
            }
        }
        out
    }

    /// Submatrix with the given row range.
    pub fn row_range(&self, start: usize, end: usize) -> IntegerMatrix {
        let mut out = Self::zeros(end - start, self.cols);
        for i in start..end {
            for j in 0..self.cols {
                out.set(i - start, j, self.get(i, j).clone());
            }
        }
        out
    }

    /// Exact determinant by fraction-free Bareiss elimination.
    pub fn det(&self) -> BigInt {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let n = self.rows;
        if n == 0 {
            return BigInt::one();
        }
        let mut a: Vec<Vec<BigInt>> =
            (0..n).map(|i| (0..n).map(|j| self.get(i, j).clone()).collect()).collect();
        let mut sign = BigInt::one();
        let mut prev = BigInt::one();
        for k in 0..n - 1 {
            if a[k][k].is_zero() {
                match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                    Some(i) => {
                        a.swap(i, k);
                        sign = -sign;
                    }
                    None => return BigInt::zero(),
                }
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                    a[i][j] = v / &prev;
                }
            }
            prev = a[k][k].clone();
        }
        sign * a[n - 1][n - 1].clone()
    }

    pub fn to_i64_rows(&self) -> Option<Vec<Vec<i64>>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_i64()).collect())
            .collect()
    }

    pub fn rank(&self) -> usize {
        smith_normal_form(self).rank
    }

    /// Plain-text export: a header with shape and labels, then space-separated rows.
    pub fn to_text(&self, row_labels: &[String], col_labels: &[String]) -> String {
        let mut s = format!("# shape {} {}\n", self.rows, self.cols);
        s.push_str(&format!("# rows {}\n", row_labels.join(" ")));
        s.push_str(&format!("# cols {}\n", col_labels.join(" ")));
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for IntegerMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// Result of a Smith normal form computation with `u * a * v = d`.
#[derive(Clone, Debug)]
pub struct SnfResult {
    /// Diagonal of `d`, of length min(rows, cols); only the first `rank` are nonzero.
    pub diagonal: Vec<BigInt>,
    pub rank: usize,
    pub u: IntegerMatrix,
    pub v: IntegerMatrix,
    pub u_inv: IntegerMatrix,
    pub v_inv: IntegerMatrix,
}

impl SnfResult {
    /// Invariant factors greater than one.
    pub fn torsion(&self) -> Vec<BigInt> {
        self.diagonal[..self.rank].iter().filter(|d| !d.is_one()).cloned().collect()
    }

    pub fn d_matrix(&self, rows: usize, cols: usize) -> IntegerMatrix {
        let mut d = IntegerMatrix::zeros(rows, cols);
        for (i, x) in self.diagonal.iter().enumerate() {
            d.set(i, i, x.clone());
        }
        d
    }
}

trait Ring: Clone + PartialEq {
    fn rzero() -> Self;
    fn rone() -> Self;
    fn ris_zero(&self) -> bool;
    fn abs_lt(&self, other: &Self) -> bool;
    fn is_negative(&self) -> bool;
    /// Quotient rounded toward zero.
    fn quot(&self, d: &Self) -> Self;
    fn rem_nonzero(&self, d: &Self) -> bool;
    fn sub_mul(&self, q: &Self, b: &Self) -> Option<Self>;
    fn neg(&self) -> Option<Self>;
    fn to_big(&self) -> BigInt;
}

impl Ring for i64 {
    fn rzero() -> Self {
        0
    }
    fn rone() -> Self {
        1
    }
    fn ris_zero(&self) -> bool {
        *self == 0
    }
    fn abs_lt(&self, other: &Self) -> bool {
        self.unsigned_abs() < other.unsigned_abs()
    }
    fn is_negative(&self) -> bool {
        *self < 0
    }
    fn quot(&self, d: &Self) -> Self {
        self.checked_div(*d).unwrap_or(0)
    }
    fn rem_nonzero(&self, d: &Self) -> bool {
        self.checked_rem(*d).is_some_and(|r| r != 0)
    }
    fn sub_mul(&self, q: &Self, b: &Self) -> Option<Self> {
        self.checked_sub(q.checked_mul(*b)?)
    }
    fn neg(&self) -> Option<Self> {
        self.checked_neg()
    }
    fn to_big(&self) -> BigInt {
        BigInt::from(*self)
    }
}

impl Ring for BigInt {
    fn rzero() -> Self {
        Zero::zero()
    }
    fn rone() -> Self {
        One::one()
    }
    fn ris_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn abs_lt(&self, other: &Self) -> bool {
        self.abs() < other.abs()
    }
    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }
    fn quot(&self, d: &Self) -> Self {
        self / d
    }
    fn rem_nonzero(&self, d: &Self) -> bool {
        !Zero::is_zero(&(self % d))
    }
    fn sub_mul(&self, q: &Self, b: &Self) -> Option<Self> {
        Some(self - q * b)
    }
    fn neg(&self) -> Option<Self> {
        Some(-self.clone())
    }
    fn to_big(&self) -> BigInt {
        self.clone()
    }
}

struct Work<T> {
    a: Vec<Vec<T>>,
    u: Vec<Vec<T>>,
    ui: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    vi: Vec<Vec<T>>,
}

fn eye<T: Ring>(n: usize) -> Vec<Vec<T>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { T::rone() } else { T::rzero() }).collect()).collect()
}

impl<T: Ring> Work<T> {
    fn m(&self) -> usize {
        self.a.len()
    }
    fn n(&self) -> usize {
        self.v.len()
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.a.swap(i, j);
        self.u.swap(i, j);
        for row in self.ui.iter_mut() {
            row.swap(i, j);
        }
    }

    fn swap_cols(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        for row in self.a.iter_mut() {
            row.swap(i, j);
        }
        for row in self.v.iter_mut() {
            row.swap(i, j);
        }
        self.vi.swap(i, j);
    }

    /// row_i -= q * row_t
    fn row_sub(&mut self, i: usize, t: usize, q: &T) -> Option<()> {
        for j in 0..self.n() {
            let x = self.a[i][j].sub_mul(q, &self.a[t][j])?;
            self.a[i][j] = x;
        }
        for j in 0..self.m() {
            let x = self.u[i][j].sub_mul(q, &self.u[t][j])?;
            self.u[i][j] = x;
        }
        // inverse: col_t += q * col_i
        let mq = q.neg()?;
        for r in 0..self.m() {
            let x = self.ui[r][t].sub_mul(&mq, &self.ui[r][i])?;
            self.ui[r][t] = x;
        }
        Some(())
    }

    /// col_j -= q * col_t
    fn col_sub(&mut self, j: usize, t: usize, q: &T) -> Option<()> {
        for r in 0..self.m() {
            let x = self.a[r][j].sub_mul(q, &self.a[r][t])?;
            self.a[r][j] = x;
        }
        for r in 0..self.n() {
            let x = self.v[r][j].sub_mul(q, &self.v[r][t])?;
            self.v[r][j] = x;
        }
        let mq = q.neg()?;
        for c in 0..self.n() {
            let x = self.vi[t][c].sub_mul(&mq, &self.vi[j][c])?;
            self.vi[t][c] = x;
        }
        Some(())
    }

    fn negate_row(&mut self, t: usize) -> Option<()> {
        for j in 0..self.n() {
            self.a[t][j] = self.a[t][j].neg()?;
        }
        for j in 0..self.m() {
            self.u[t][j] = self.u[t][j].neg()?;
        }
        for r in 0..self.m() {
            self.ui[r][t] = self.ui[r][t].neg()?;
        }
        Some(())
    }

    fn run(&mut self) -> Option<usize> {
        let (m, n) = (self.m(), self.n());
        let mut t = 0;
        while t < m.min(n) {
            // smallest nonzero pivot in the trailing block
            let mut best: Option<(usize, usize)> = None;
            for i in t..m {
                for j in t..n {
                    if !self.a[i][j].ris_zero() {
                        match best {
                            Some((bi, bj)) if !self.a[i][j].abs_lt(&self.a[bi][bj]) => {}
                            _ => best = Some((i, j)),
                        }
                    }
                }
            }
            let Some((pi, pj)) = best else { break };
            self.swap_rows(t, pi);
            self.swap_cols(t, pj);
            loop {
                let mut dirty = false;
                for i in t + 1..m {
                    if !self.a[i][t].ris_zero() {
                        let q = self.a[i][t].quot(&self.a[t][t]);
                        self.row_sub(i, t, &q)?;
                        if !self.a[i][t].ris_zero() {
                            dirty = true;
                        }
                    }
                }
                for j in t + 1..n {
                    if !self.a[t][j].ris_zero() {
                        let q = self.a[t][j].quot(&self.a[t][t]);
                        self.col_sub(j, t, &q)?;
                        if !self.a[t][j].ris_zero() {
                            dirty = true;
                        }
                    }
                }
                if dirty {
                    let mut best = (t, t);
                    for i in t + 1..m {
                        if !self.a[i][t].ris_zero() && self.a[i][t].abs_lt(&self.a[best.0][best.1]) {
                            best = (i, t);
                        }
                    }
                    for j in t + 1..n {
                        if !self.a[t][j].ris_zero() && self.a[t][j].abs_lt(&self.a[best.0][best.1]) {
                            best = (t, j);
                        }
                    }
                    self.swap_rows(t, best.0);
                    self.swap_cols(t, best.1);
                    continue;
                }
                // divisibility of the trailing block by the pivot
                let mut bad_row = None;
                'outer: for i in t + 1..m {
                    for j in t + 1..n {
                        if self.a[i][j].rem_nonzero(&self.a[t][t]) {
                            bad_row = Some(i);
                            break 'outer;
                        }
                    }
                }
                match bad_row {
                    Some(i) => {
                        // row_t += row_i
                        let minus_one = T::rone().neg()?;
                        self.row_sub(t, i, &minus_one)?;
                    }
                    None => break,
                }
            }
            if self.a[t][t].is_negative() {
                self.negate_row(t)?;
            }
            t += 1;
        }
        Some(t)
    }
}

fn to_matrix<T: Ring>(rows: &[Vec<T>], r: usize, c: usize) -> IntegerMatrix {
    let mut m = IntegerMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            m.set(i, j, rows[i][j].to_big());
        }
    }
    m
}

fn snf_generic<T: Ring>(a: Vec<Vec<T>>, m: usize, n: usize) -> Option<SnfResult> {
    let mut w = Work { a, u: eye(m), ui: eye(m), v: eye(n), vi: eye(n) };
    let rank = w.run()?;
    let diagonal = (0..m.min(n)).map(|i| w.a[i][i].to_big()).collect();
    Some(SnfResult {
        diagonal,
        rank,
        u: to_matrix(&w.u, m, m),
        v: to_matrix(&w.v, n, n),
        u_inv: to_matrix(&w.ui, m, m),
        v_inv: to_matrix(&w.vi, n, n),
    })
}

/// Smith normal form over the integers. Runs a checked 64-bit pass first and
/// repeats in arbitrary precision if any intermediate overflows.
pub fn smith_normal_form(a: &IntegerMatrix) -> SnfResult {
    let (m, n) = (a.rows, a.cols);
    if let Some(rows) = a.to_i64_rows() {
        if let Some(r) = snf_generic(rows, m, n) {
            return r;
        }
    }
    let rows: Vec<Vec<BigInt>> =
        (0..m).map(|i| (0..n).map(|j| a.get(i, j).clone()).collect()).collect();
    snf_generic(rows, m, n).expect("arbitrary precision elimination cannot overflow")
}

/// Greatest common divisor helper used by callers that need exact residues.
pub fn big_mod(x: &BigInt, d: &BigInt) -> BigInt {
    x.mod_floor(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a: &IntegerMatrix) -> SnfResult {
        let r = smith_normal_form(a);
        let d = r.u.mul(a).mul(&r.v);
        assert_eq!(d, r.d_matrix(a.rows, a.cols));
        assert_eq!(r.u.mul(&r.u_inv), IntegerMatrix::identity(a.rows));
        assert_eq!(r.v.mul(&r.v_inv), IntegerMatrix::identity(a.cols));
        assert!(r.u.det().abs().is_one());
        assert!(r.v.det().abs().is_one());
        for i in 1..r.rank {
            assert!((&r.diagonal[i] % &r.diagonal[i - 1]).is_zero());
        }
        r
    }

    #[test]
    fn two_by_two_factors() {
        let r = check(&IntegerMatrix::from_rows(&[vec![2, 4], vec![6, 8]]));
        assert_eq!(r.diagonal, vec![BigInt::from(2), BigInt::from(4)]);
    }

    #[test]
    fn identity_and_zero() {
        let r = check(&IntegerMatrix::identity(3));
        assert!(r.diagonal.iter().all(|d| d.is_one()));
        let z = check(&IntegerMatrix::zeros(2, 3));
        assert_eq!(z.rank, 0);
    }

    #[test]
    fn overflow_escalates() {
        let big = i64::MAX / 2;
        let r = check(&IntegerMatrix::from_rows(&[vec![big, big - 1], vec![big - 3, big - 7]]));
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn bareiss_determinant() {
        let a = IntegerMatrix::from_rows(&[vec![2, -1, 0], vec![1, 3, 2], vec![0, 5, -4]]);
        // cofactor expansion along the first row
        let expected = 2 * (3 * -4 - 2 * 5) - (-1) * (1 * -4 - 0);
        assert_eq!(a.det(), BigInt::from(expected));
    }
}
