//! Banded LU factorization with partial pivoting (LAPACK *gbtrf/*gbtrs
//! band storage), sized for the ladder Jacobian: a few thousand unknowns
//! at half-bandwidth 4.

/// General banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Column-major band storage with `kl` extra super-diagonals of headroom
/// for pivoting fill-in: entry (i, j) lives at
/// `data[j·ldab + kl + ku + i − j]` for `j − ku − kl ≤ i ≤ j + kl`.
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
    ipiv: Vec<u32>,
    factored: bool,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, data: vec![0.0; n * ldab], ipiv: vec![0; n], factored: false }
    }

    /// Resets all entries to zero and clears the factorization.
    pub fn clear(&mut self) {
        self.data.fill(0.0);
        self.factored = false;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i + self.ku >= j && i <= j + self.kl);
        self.data[j * self.ldab + self.kl + self.ku + i - j] += v;
    }

    /// In-place LU factorization with partial pivoting. Returns `Err(j)`
    /// when column `j` has no usable pivot (structurally singular system).
    pub fn factor(&mut self) -> Result<(), usize> {
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = kl + self.ku;
        for j in 0..n {
            let nsub = kl.min(n - 1 - j);
            let diag_at = j * ldab + kv;
            // Pivot search over the column's subdiagonal window.
            let mut p = 0usize;
            let mut best = self.data[diag_at].abs();
            for t in 1..=nsub {
                let v = self.data[diag_at + t].abs();
                if v > best {
                    best = v;
                    p = t;
                }
            }
            if best == 0.0 {
                return Err(j);
            }
            self.ipiv[j] = (j + p) as u32;
            let j_max = (j + kv).min(n - 1);
            if p != 0 {
                let mut at = diag_at;
                for _ in j..=j_max {
                    self.data.swap(at, at + p);
                    at += ldab - 1;
                }
            }
            // Scale the subdiagonal of column j into L.
            let pivot = self.data[diag_at];
            let mut lvals = [0.0f64; 8];
            {
                let lcol = &mut self.data[diag_at + 1..diag_at + 1 + nsub];
                for (t, l) in lcol.iter_mut().enumerate() {
                    *l /= pivot;
                    lvals[t] = *l;
                }
            }
            // Rank-1 update of the trailing window; per column jj the
            // touched entries are contiguous.
            let mut base = diag_at + ldab - 1; // (j, j+1) position
            for _ in (j + 1)..=j_max {
                let u = self.data[base];
                if u != 0.0 {
                    let row = &mut self.data[base + 1..base + 1 + nsub];
                    for (t, r) in row.iter_mut().enumerate() {
                        *r -= lvals[t] * u;
                    }
                }
                base += ldab - 1;
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves A·x = b in place using the stored factorization.
    pub fn solve(&self, b: &mut [f64]) {
        debug_assert!(self.factored, "factor() must succeed before solve()");
        debug_assert_eq!(b.len(), self.n);
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = kl + self.ku;
        // Forward: row interchanges and L.
        for j in 0..n {
            let p = self.ipiv[j] as usize;
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            let nsub = kl.min(n - 1 - j);
            let lcol = &self.data[j * ldab + kv + 1..j * ldab + kv + 1 + nsub];
            let btail = &mut b[j + 1..j + 1 + nsub];
            for (t, x) in btail.iter_mut().enumerate() {
                *x -= lcol[t] * bj;
            }
        }
        // Backward: U·x = y, column-oriented over the (filled) upper band.
        for j in (0..n).rev() {
            let diag_at = j * ldab + kv;
            let x = b[j] / self.data[diag_at];
            b[j] = x;
            let lo = j.saturating_sub(kv);
            let ucol = &self.data[diag_at - (j - lo)..diag_at];
            let bhead = &mut b[lo..j];
            for (t, bi) in bhead.iter_mut().enumerate() {
                *bi -= ucol[t] * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for j in 0..n {
            let p = (j..n).max_by(|&r, &s| m[r][j].abs().total_cmp(&m[s][j].abs())).unwrap();
            m.swap(j, p);
            x.swap(j, p);
            for i in j + 1..n {
                let l = m[i][j] / m[j][j];
                for jj in j..n {
                    m[i][jj] -= l * m[j][jj];
                }
                x[i] -= l * x[j];
            }
        }
        for j in (0..n).rev() {
            for jj in j + 1..n {
                x[j] -= m[j][jj] * x[jj];
            }
            x[j] /= m[j][j];
        }
        x
    }

    #[test]
    fn matches_dense_solver_on_random_bands() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let mut unif =
            |lo: f64, hi: f64| lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (9, 4, 4), (40, 4, 4), (33, 2, 3)] {
            let mut band = BandedMatrix::new(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for j in 0..n {
                for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                    let v = unif(-1.0, 1.0) + if i == j { 3.0 } else { 0.0 };
                    band.add(i, j, v);
                    dense[i][j] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| unif(-2.0, 2.0)).collect();
            band.factor().unwrap();
            let mut x = b.clone();
            band.solve(&mut x);
            let want = dense_solve(&dense, &b);
            for i in 0..n {
                assert!(
                    (x[i] - want[i]).abs() < 1e-10 * (1.0 + want[i].abs()),
                    "n={n} kl={kl} ku={ku} i={i}: {} vs {}",
                    x[i],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn pivoting_handles_weak_diagonals() {
        // A matrix whose natural-order elimination would divide by a tiny
        // pivot without row exchanges.
        let n = 6;
        let mut band = BandedMatrix::new(n, 2, 2);
        let mut dense = vec![vec![0.0; n]; n];
        for j in 0..n {
            for i in j.saturating_sub(2)..=(j + 2).min(n - 1) {
                let v = if i == j { 1e-14 } else { 1.0 + (i * 7 + j) as f64 * 0.1 };
                band.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        band.factor().unwrap();
        let mut x = b.clone();
        band.solve(&mut x);
        let want = dense_solve(&dense, &b);
        for i in 0..n {
            assert!((x[i] - want[i]).abs() < 1e-8 * (1.0 + want[i].abs()));
        }
    }

    #[test]
    fn singular_matrix_reports_column() {
        let mut band = BandedMatrix::new(3, 1, 1);
        band.add(0, 0, 1.0);
        // column 1 left entirely zero
        band.add(2, 2, 1.0);
        assert!(band.factor().is_err());
    }
}
