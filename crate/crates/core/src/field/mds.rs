//! `(N, U)` MDS code built from a `U x N` Vandermonde matrix.
//!
//! Column `j` (1-based) is `(1, j, j^2, ..., j^(U-1))`. Encoding user-side
//! partitions `P_0..P_{U-1}` at point `j` yields `sum_r P_r * j^r`, and any `U`
//! distinct columns form an invertible matrix, so any `U` shares determine
//! the partitions. Decoding is exact Gauss-Jordan inversion over `F_q`.

use std::collections::BTreeSet;

use super::{FieldElement, FieldError, FieldVector, PrimeField};

/// The `rows x cols` Vandermonde matrix with evaluation points `1..=cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vandermonde {
    field: PrimeField,
    rows: usize,
    cols: usize,
}

impl Vandermonde {
    pub fn new(field: PrimeField, rows: usize, cols: usize) -> Result<Self, FieldError> {
        if cols as u64 >= field.modulus() {
            return Err(FieldError::IndexOutOfRange {
                index: cols as u64,
                max: field.modulus() - 1,
            });
        }
        Ok(Self { field, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `j^r mod q` for `j` in `1..=cols`, `r` in `0..rows`.
    pub fn entry(&self, r: usize, j: u64) -> FieldElement {
        self.field.pow(self.field.elem(j), r as u64)
    }

    pub fn column(&self, j: u64) -> Vec<FieldElement> {
        let x = self.field.elem(j);
        let mut out = Vec::with_capacity(self.rows);
        let mut p = FieldElement::ONE;
        for _ in 0..self.rows {
            out.push(p);
            p = self.field.mul(p, x);
        }
        out
    }
}

/// Encodes `partitions` at evaluation point `j`: `sum_r partitions[r] * j^r`.
pub fn mds_encode(field: &PrimeField, partitions: &[FieldVector], j: u64) -> Result<FieldVector, FieldError> {
    let first = partitions.first().ok_or(FieldError::Empty)?;
    let len = first.len();
    for p in partitions {
        if p.len() != len {
            return Err(FieldError::DimensionMismatch {
                expected: len,
                actual: p.len(),
            });
        }
    }
    if j == 0 || j >= field.modulus() {
        return Err(FieldError::IndexOutOfRange {
            index: j,
            max: field.modulus() - 1,
        });
    }
    let x = field.elem(j);
    // Horner from the highest-degree partition down.
    let mut acc = FieldVector::zeros(len);
    for p in partitions.iter().rev() {
        for (a, &v) in acc.iter_mut().zip(p.iter()) {
            *a = field.add(field.mul(*a, x), v);
        }
    }
    Ok(acc)
}

/// Inverts a square matrix in place by Gauss-Jordan elimination.
fn invert(field: &PrimeField, mut m: Vec<Vec<FieldElement>>) -> Result<Vec<Vec<FieldElement>>, FieldError> {
    let n = m.len();
    let mut inv: Vec<Vec<FieldElement>> = (0..n)
        .map(|i| {
            let mut row = vec![FieldElement::ZERO; n];
            row[i] = FieldElement::ONE;
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !m[r][col].is_zero()).ok_or(FieldError::Singular)?;
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = field.inv(m[col][col])?;
        for k in 0..n {
            m[col][k] = field.mul(m[col][k], scale);
            inv[col][k] = field.mul(inv[col][k], scale);
        }
        for r in 0..n {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col];
            for k in 0..n {
                let a = field.mul(factor, m[col][k]);
                m[r][k] = field.sub(m[r][k], a);
                let b = field.mul(factor, inv[col][k]);
                inv[r][k] = field.sub(inv[r][k], b);
            }
        }
    }
    Ok(inv)
}

/// Recovers the `U = shares.len()` partitions from shares at distinct points.
pub fn mds_decode(field: &PrimeField, shares: &[(u64, FieldVector)]) -> Result<Vec<FieldVector>, FieldError> {
    let (_, first) = shares.first().ok_or(FieldError::Empty)?;
    let len = first.len();
    let u = shares.len();
    let mut seen = BTreeSet::new();
    for (j, v) in shares {
        if *j == 0 || *j >= field.modulus() {
            return Err(FieldError::IndexOutOfRange {
                index: *j,
                max: field.modulus() - 1,
            });
        }
        if !seen.insert(*j) {
            return Err(FieldError::DuplicateIndex(*j));
        }
        if v.len() != len {
            return Err(FieldError::DimensionMismatch {
                expected: len,
                actual: v.len(),
            });
        }
    }

    // Row i of the system is the transposed column for point j_i: shares = A * P.
    let system: Vec<Vec<FieldElement>> = shares
        .iter()
        .map(|(j, _)| {
            let x = field.elem(*j);
            let mut row = Vec::with_capacity(u);
            let mut p = FieldElement::ONE;
            for _ in 0..u {
                row.push(p);
                p = field.mul(p, x);
            }
            row
        })
        .collect();
    let a_inv = invert(field, system)?;

    let mut out = Vec::with_capacity(u);
    for row in &a_inv {
        let mut part = FieldVector::zeros(len);
        for (&coef, (_, share)) in row.iter().zip(shares) {
            field.axpy(&mut part, coef, share)?;
        }
        out.push(part);
    }
    Ok(out)
}

/// An `(N, U)` code: `users` evaluation points, `symbols` partitions per message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdsCode {
    field: PrimeField,
    users: usize,
    symbols: usize,
}

impl MdsCode {
    pub fn new(field: PrimeField, users: usize, symbols: usize) -> Result<Self, FieldError> {
        if symbols == 0 || users == 0 {
            return Err(FieldError::Empty);
        }
        if symbols > users {
            return Err(FieldError::DimensionMismatch {
                expected: users,
                actual: symbols,
            });
        }
        Vandermonde::new(field, symbols, users)?;
        Ok(Self { field, users, symbols })
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn matrix(&self) -> Vandermonde {
        Vandermonde {
            field: self.field,
            rows: self.symbols,
            cols: self.users,
        }
    }

    fn check_partitions(&self, partitions: &[FieldVector]) -> Result<(), FieldError> {
        if partitions.len() != self.symbols {
            return Err(FieldError::DimensionMismatch {
                expected: self.symbols,
                actual: partitions.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, partitions: &[FieldVector], j: u64) -> Result<FieldVector, FieldError> {
        self.check_partitions(partitions)?;
        if j == 0 || j > self.users as u64 {
            return Err(FieldError::IndexOutOfRange {
                index: j,
                max: self.users as u64,
            });
        }
        mds_encode(&self.field, partitions, j)
    }

    /// All `N` shares; element `j-1` is the share for evaluation point `j`.
    pub fn encode_all(&self, partitions: &[FieldVector]) -> Result<Vec<FieldVector>, FieldError> {
        (1..=self.users as u64).map(|j| self.encode(partitions, j)).collect()
    }

    /// Decodes from exactly `U` shares.
    pub fn decode(&self, shares: &[(u64, FieldVector)]) -> Result<Vec<FieldVector>, FieldError> {
        if shares.len() != self.symbols {
            return Err(FieldError::DimensionMismatch {
                expected: self.symbols,
                actual: shares.len(),
            });
        }
        if let Some((j, _)) = shares.iter().find(|(j, _)| *j == 0 || *j > self.users as u64) {
            return Err(FieldError::IndexOutOfRange {
                index: *j,
                max: self.users as u64,
            });
        }
        mds_decode(&self.field, shares)
    }
}
