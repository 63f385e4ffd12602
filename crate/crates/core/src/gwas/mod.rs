//! Genomic case/control matching.
//!
//! A control sample `z` (its genotype row, normalized) is accepted when its
//! residual against the case basis `U` is small, `‖(I - UUᵀ)z‖ ≤ τ`, and the
//! accepted batch is then checked for Hardy–Weinberg inflation through `λ`.

mod data;
mod pipeline;
mod secure;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

pub use data::{
    random_orthonormal_basis, read_basis_csv, synth_controls_for_basis, synth_genotypes,
    write_basis_csv, GenotypeMatrix,
};
pub use pipeline::{
    filter_controls_plain, AcceptRule, Control, FilterOutcome, LambdaReport, PipelineConfig,
    PipelineInputs, Report, SecurePipeline,
};
pub use secure::{
    filter_controls, residual_norm_sq, secure_inflation_factor, secure_inflation_terms,
    BlindedLambda, SharedBasis,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allele {
    Ref,
    Alt,
}

impl FromStr for Allele {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ref" => Ok(Allele::Ref),
            "alt" => Ok(Allele::Alt),
            other => Err(Error::Parse(format!("unknown allele {other:?}"))),
        }
    }
}

/// `(Ref,Ref) → 0`, mixed → 1, `(Alt,Alt) → 2`.
pub fn encode_genotype(pair: (Allele, Allele)) -> u8 {
    (pair.0 == Allele::Alt) as u8 + (pair.1 == Allele::Alt) as u8
}

/// Genotype tallies of the case (`r`) and control (`s`) groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContingencyCounts {
    pub r: [u64; 3],
    pub s: [u64; 3],
}

impl ContingencyCounts {
    pub fn new(r: [u64; 3], s: [u64; 3]) -> Self {
        ContingencyCounts { r, s }
    }

    /// `n_i = r_i + s_i`.
    pub fn n(&self) -> [u64; 3] {
        [self.r[0] + self.s[0], self.r[1] + self.s[1], self.r[2] + self.s[2]]
    }

    pub fn cases(&self) -> u64 {
        self.r.iter().sum()
    }

    pub fn controls(&self) -> u64 {
        self.s.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.cases() + self.controls()
    }
}

/// `λ` as an exact rational.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lambda(BigRational);

impl Lambda {
    /// Fails on a zero denominator.
    pub fn from_parts(num: BigInt, den: BigInt) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::DegenerateTable);
        }
        Ok(Lambda(BigRational::new(num, den)))
    }

    /// Reduced numerator; the sign lives here.
    pub fn num(&self) -> &BigInt {
        self.0.numer()
    }

    /// Reduced, positive denominator.
    pub fn den(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn value(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `|λ| ≤ bound`, with `bound` read as the decimal it prints as.
    pub fn within(&self, bound: f64) -> bool {
        match decimal_ratio(bound) {
            Some(b) => self.0.abs() <= b,
            None => false,
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num(), self.den())
    }
}

/// The exact value of the shortest decimal that round-trips to `x`.
pub fn decimal_ratio(x: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, scale);
    Some(if x < 0.0 { -r } else { r })
}

/// `4n0n2 - n1²` and `(n1 + 2n2)(n1 + 2n0)`.
pub fn lambda_terms(n: [u64; 3]) -> (BigInt, BigInt) {
    let [n0, n1, n2] = n.map(BigInt::from);
    let num = BigInt::from(4) * &n0 * &n2 - &n1 * &n1;
    let den = (&n1 + BigInt::from(2) * &n2) * (&n1 + BigInt::from(2) * &n0);
    (num, den)
}

pub fn inflation_factor_plain(c: &ContingencyCounts) -> Result<Lambda> {
    let (num, den) = lambda_terms(c.n());
    Lambda::from_parts(num, den)
}

/// Orthonormal columns `U` (`dim × rank`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct CaseBasis {
    dim: usize,
    rank: usize,
    entries: Vec<f64>,
}

impl CaseBasis {
    pub fn new(dim: usize, rank: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || rank == 0 || rank > dim {
            return Err(Error::Shape(format!("basis {dim}×{rank}")));
        }
        if entries.len() != dim * rank {
            return Err(Error::Shape(format!(
                "{} entries for a {dim}×{rank} basis",
                entries.len()
            )));
        }
        Ok(CaseBasis { dim, rank, entries })
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let rank = cols.len();
        let dim = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("ragged basis columns".into()));
        }
        let mut entries = vec![0.0; dim * rank];
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                entries[i * rank + j] = *v;
            }
        }
        Self::new(dim, rank, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.rank + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Largest deviation of `UᵀU` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.rank {
            for b in 0..self.rank {
                let dot: f64 = (0..self.dim).map(|i| self.get(i, a) * self.get(i, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Fails when `UᵀU` is off the identity by more than `tol` anywhere.
    pub fn check_orthonormal(&self, tol: f64) -> Result<()> {
        let err = self.orthonormality_error();
        if err > tol {
            return Err(Error::Validation(format!(
                "basis columns are not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(())
    }

    /// `Uᵀz`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        (0..self.rank)
            .map(|j| (0..self.dim).map(|i| self.get(i, j) * z[i]).sum())
            .collect()
    }

    /// `‖z‖² - ‖Uᵀz‖²` in double precision.
    pub fn residual_norm_sq_plain(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Shape(format!("vector of {} for basis of {}", z.len(), self.dim)));
        }
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let w = self.project(z);
        Ok(zz - w.iter().map(|v| v * v).sum::<f64>())
    }

    /// `‖(I - UUᵀ)z‖²` by materializing the residual vector.
    pub fn residual_vector_norm_sq(&self, z: &[f64]) -> f64 {
        let w = self.project(z);
        (0..self.dim)
            .map(|i| {
                let proj: f64 = (0..self.rank).map(|j| self.get(i, j) * w[j]).sum();
                (z[i] - proj).powi(2)
            })
            .sum()
    }
}

/// Unit vector along `row`; the zero row stays zero.
pub fn normalize_row(row: &[u8]) -> Vec<f64> {
    let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; row.len()];
    }
    row.iter().map(|&v| v as f64 / norm).collect()
}

/// Tally of 0/1/2 entries.
pub fn genotype_histogram<'a>(rows: impl IntoIterator<Item = &'a [u8]>) -> [u64; 3] {
    let mut h = [0u64; 3];
    for row in rows {
        for &v in row {
            h[v as usize] += 1;
        }
    }
    h
}
