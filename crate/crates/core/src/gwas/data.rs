//! Genotype matrices, case bases and synthetic test data.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{genotype_histogram, CaseBasis};
use crate::error::{Error, Result};

/// Samples × SNPs grid of genotype codes in `{0, 1, 2}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenotypeMatrix {
    snp_ids: Vec<String>,
    data: Vec<u8>,
}

impl GenotypeMatrix {
    pub fn new(snp_ids: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let snps = snp_ids.len();
        if snps == 0 {
            return Err(Error::Shape("genotype matrix without SNP columns".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * snps);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != snps {
                return Err(Error::Shape(format!(
                    "sample {i} has {} values for {snps} SNPs",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| **v > 2) {
                return Err(Error::Validation(format!("sample {i} has genotype {v}")));
            }
            data.extend(row);
        }
        Ok(GenotypeMatrix { snp_ids, data })
    }

    pub fn samples(&self) -> usize {
        self.data.len() / self.snp_ids.len()
    }

    pub fn snps(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let w = self.snps();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.snps())
    }

    /// Pooled genotype tally over every entry.
    pub fn histogram(&self) -> [u64; 3] {
        genotype_histogram(self.rows())
    }

    /// Header of SNP identifiers, then one row per sample.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let snp_ids: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<u8>()
                        .map_err(|_| Error::Parse(format!("sample {i}: genotype {v:?}")))
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::new(snp_ids, rows)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.snp_ids)?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Hardy–Weinberg genotypes: each SNP with alt frequency `q` yields 0, 1, 2
/// with probabilities `(1-q)²`, `2q(1-q)`, `q²`. `freqs` has one entry per SNP
/// or a single entry for all of them.
pub fn synth_genotypes(samples: usize, snps: usize, freqs: &[f64], seed: u64) -> Result<GenotypeMatrix> {
    if snps == 0 {
        return Err(Error::Parameter("zero SNPs".into()));
    }
    if freqs.len() != 1 && freqs.len() != snps {
        return Err(Error::Parameter(format!("{} frequencies for {snps} SNPs", freqs.len())));
    }
    if let Some(q) = freqs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::Parameter(format!("allele frequency {q} outside (0, 1)")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = (0..samples)
        .map(|_| {
            (0..snps)
                .map(|j| {
                    let q = if freqs.len() == 1 { freqs[0] } else { freqs[j] };
                    let p0 = (1.0 - q) * (1.0 - q);
                    let p1 = 2.0 * q * (1.0 - q);
                    let u: f64 = rng.gen();
                    if u < p0 {
                        0
                    } else if u < p0 + p1 {
                        1
                    } else {
                        2
                    }
                })
                .collect()
        })
        .collect();
    let ids = (1..=snps).map(|j| format!("snp{j}")).collect();
    GenotypeMatrix::new(ids, rows)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Removes the components along `basis` (twice, for stability).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn random_direction(dim: usize, against: &[Vec<f64>], rng: &mut ChaCha20Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, against);
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
}

/// Gram–Schmidt over `anchors` (in order, skipping any already in the span
/// built so far), topped up with random directions.
pub fn random_orthonormal_basis(dim: usize, rank: usize, anchors: &[Vec<f64>], seed: u64) -> Result<CaseBasis> {
    if rank == 0 || rank > dim {
        return Err(Error::Shape(format!("basis {dim}×{rank}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for a in anchors {
        if cols.len() == rank {
            break;
        }
        if a.len() != dim {
            return Err(Error::Shape(format!("anchor of {} for dimension {dim}", a.len())));
        }
        let scale = dot(a, a).sqrt();
        let mut v = a.clone();
        orthogonalize(&mut v, &cols);
        if normalize(&mut v) > 1e-9 * scale.max(1.0) {
            cols.push(v);
        }
    }
    while cols.len() < rank {
        let v = random_direction(dim, &cols, &mut rng);
        cols.push(v);
    }
    CaseBasis::from_columns(&cols)
}

/// Headerless CSV, one row per coordinate, one column per basis vector.
pub fn read_basis_csv(r: impl Read) -> Result<CaseBasis> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rank = None;
    let mut entries = Vec::new();
    let mut dim = 0;
    for rec in rdr.records() {
        let rec = rec?;
        match rank {
            None => rank = Some(rec.len()),
            Some(r) if r != rec.len() => {
                return Err(Error::Shape(format!("basis row {dim} has {} columns, expected {r}", rec.len())))
            }
            _ => {}
        }
        for v in rec.iter() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Parse(format!("basis row {dim}: {v:?}")))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("basis row {dim}: {v:?}")));
            }
            entries.push(x);
        }
        dim += 1;
    }
    CaseBasis::new(dim, rank.unwrap_or(0), entries)
}

pub fn write_basis_csv(basis: &CaseBasis, w: impl Write) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in basis.entries().chunks(basis.rank()) {
        wtr.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Unit vectors whose squared residual against `basis` sits either in
/// `[0, τ² - guard]` or in `[τ² + guard, 1]`, chosen by a fair coin.
pub fn synth_controls_for_basis(
    basis: &CaseBasis,
    n: usize,
    tau: f64,
    guard: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let t2 = tau * tau;
    if guard < 0.0 || t2 - guard < 0.0 || t2 + guard > 1.0 {
        return Err(Error::Parameter(format!("guard {guard} does not fit around τ² = {t2}")));
    }
    if basis.rank() >= basis.dim() {
        return Err(Error::Parameter("basis spans the whole space".into()));
    }
    let dim = basis.dim();
    let cols: Vec<Vec<f64>> = (0..basis.rank())
        .map(|j| (0..dim).map(|i| basis.get(i, j)).collect())
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let alpha: Vec<f64> = loop {
            let a: Vec<f64> = (0..basis.rank()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if dot(&a, &a) > 1e-6 {
                break a;
            }
        };
        let mut inside: Vec<f64> = (0..dim)
            .map(|i| (0..basis.rank()).map(|j| basis.get(i, j) * alpha[j]).sum())
            .collect();
        normalize(&mut inside);
        let outside = random_direction(dim, &cols, &mut rng);
        let res2 = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..=t2 - guard)
        } else {
            rng.gen_range(t2 + guard..=1.0)
        };
        let (c, s) = ((1.0 - res2).sqrt(), res2.sqrt());
        out.push(inside.iter().zip(&outside).map(|(a, b)| c * a + s * b).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let g = synth_genotypes(7, 5, &[0.3], 11).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("snp1,snp2,snp3,snp4,snp5\n"));
        assert_eq!(GenotypeMatrix::read_csv(&buf[..]).unwrap(), g);
        assert!(GenotypeMatrix::read_csv("a,b\n0,3\n".as_bytes()).is_err());
        assert!(GenotypeMatrix::read_csv("a,b\n0\n".as_bytes()).is_err());
    }

    #[test]
    fn hwe_sampling() {
        let g = synth_genotypes(4000, 1, &[0.5], 3).unwrap();
        let h = g.histogram();
        let frac = h[1] as f64 / 4000.0;
        assert!((frac - 0.5).abs() < 0.05, "het fraction {frac}");
        let zeros = synth_genotypes(50, 20, &[1e-12], 4).unwrap();
        assert_eq!(zeros.histogram(), [1000, 0, 0]);
        assert_eq!(synth_genotypes(9, 4, &[0.2, 0.4, 0.6, 0.8], 5).unwrap(), synth_genotypes(9, 4, &[0.2, 0.4, 0.6, 0.8], 5).unwrap());
        assert!(matches!(synth_genotypes(3, 2, &[0.0], 1), Err(Error::Parameter(_))));
        assert!(matches!(synth_genotypes(3, 2, &[0.5, 0.5, 0.5], 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn basis_generation_and_csv() {
        let anchor: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let twice: Vec<f64> = anchor.iter().map(|v| 2.0 * v).collect();
        let u = random_orthonormal_basis(12, 4, &[anchor.clone(), twice], 9).unwrap();
        assert!(u.orthonormality_error() < 1e-12);
        let first: Vec<f64> = (0..12).map(|i| u.get(i, 0)).collect();
        let n = dot(&anchor, &anchor).sqrt();
        assert!(first.iter().zip(&anchor).all(|(a, b)| (a - b / n).abs() < 1e-12));
        let mut buf = Vec::new();
        write_basis_csv(&u, &mut buf).unwrap();
        assert_eq!(read_basis_csv(&buf[..]).unwrap(), u);
        assert!(read_basis_csv("1,0\n0\n".as_bytes()).is_err());
        // A dependent anchor is skipped, so the rest is random and orthogonal.
        assert_eq!(u.rank(), 4);
    }

    #[test]
    fn synthetic_controls_respect_the_guard() {
        let u = random_orthonormal_basis(50, 10, &[], 1).unwrap();
        let zs = synth_controls_for_basis(&u, 200, 0.3, 0.01, 2).unwrap();
        let mut sides = [0, 0];
        for z in &zs {
            assert!((dot(z, z) - 1.0).abs() < 1e-9);
            let r = u.residual_norm_sq_plain(z).unwrap();
            assert!((r - u.residual_vector_norm_sq(z)).abs() < 1e-10);
            assert!((r - 0.09).abs() >= 0.01 - 1e-9, "residual {r}");
            sides[(r > 0.09) as usize] += 1;
        }
        assert!(sides[0] > 50 && sides[1] > 50);
        assert!(synth_controls_for_basis(&u, 1, 0.3, 0.5, 2).is_err());
    }
}
