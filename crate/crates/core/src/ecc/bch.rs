//! Narrow-sense primitive binary BCH codes with systematic encoding.
//!
//! Bit layout: `bits[i]` is the coefficient of `x^(c-1-i)`, so the first `k`
//! bits carry the message and the trailing `c-k` bits are parity.

use std::collections::BTreeSet;

use super::field::{poly_degree, poly_mul, FieldSpec, Gf2m};
use crate::error::{Error, Result};

/// Largest message length for which exhaustive enumeration is allowed.
pub const EXHAUSTIVE_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpec {
    pub field: FieldSpec,
    pub c: usize,
    pub k: usize,
    /// Designed error-correcting capability; designed distance is `2t + 1`.
    pub t: usize,
    /// Generator polynomial coefficients indexed by degree, length `c - k + 1`.
    pub generator_poly: Vec<bool>,
}

impl CodeSpec {
    pub fn designed_distance(&self) -> usize {
        2 * self.t + 1
    }

    pub fn parity_len(&self) -> usize {
        self.c - self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub bits: Vec<bool>,
    pub bipolar: Vec<f64>,
}

impl Codeword {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let bipolar = to_bipolar(&bits);
        Codeword { bits, bipolar }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// 0 maps to +1, 1 maps to -1.
pub fn to_bipolar(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { -1.0 } else { 1.0 }).collect()
}

/// Union of the cyclotomic cosets of `1..=2t`, i.e. the roots of the
/// generator polynomial, listed by coset representative.
fn root_cosets(field: &Gf2m, t: usize) -> BTreeSet<usize> {
    let mut reps = BTreeSet::new();
    for i in 1..=2 * t {
        let coset = field.cyclotomic_coset(i);
        reps.insert(*coset.iter().min().unwrap());
    }
    reps
}

fn generator_degree(field: &Gf2m, t: usize) -> usize {
    root_cosets(field, t)
        .into_iter()
        .map(|r| field.cyclotomic_coset(r).len())
        .sum()
}

/// Generator polynomial: LCM of the minimal polynomials of `alpha^1..alpha^2t`.
/// Distinct minimal polynomials are coprime, so the LCM is their product.
pub fn generator_polynomial(field: &Gf2m, t: usize) -> Vec<bool> {
    root_cosets(field, t)
        .into_iter()
        .fold(vec![true], |acc, r| {
            poly_mul(&acc, &field.minimal_polynomial(r))
        })
}

/// BCH code of length `2^m - 1` with the smallest dimension `k >= k_min`,
/// taking the largest `t` that yields that dimension.
pub fn build_code(m: usize, k_min: usize) -> Result<CodeSpec> {
    let field_spec = FieldSpec::new(m)?;
    let field = Gf2m::new(field_spec);
    let c = field_spec.code_length();
    if k_min == 0 {
        return Err(Error::InvalidArgument("k_min must be at least 1".into()));
    }

    let mut best = None;
    for t in 1..=(c - 1) / 2 {
        let k = c - generator_degree(&field, t);
        if k < k_min {
            break;
        }
        best = Some(t);
    }
    let t = best.ok_or(Error::NoValidCode { c, k_min })?;
    let generator_poly = generator_polynomial(&field, t);
    let k = c - poly_degree(&generator_poly).unwrap();
    Ok(CodeSpec {
        field: field_spec,
        c,
        k,
        t,
        generator_poly,
    })
}

/// Every `(k, t)` pair reachable for this field degree, `t` maximal per `k`.
pub fn available_dimensions(m: usize) -> Result<Vec<(usize, usize)>> {
    let field = Gf2m::new(FieldSpec::new(m)?);
    let c = field.spec().code_length();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for t in 1..=(c - 1) / 2 {
        let k = c - generator_degree(&field, t);
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 = t,
            _ => out.push((k, t)),
        }
    }
    Ok(out)
}

/// Systematic encoding: message bits first, then the remainder of
/// `message(x) * x^(c-k)` modulo the generator.
pub fn encode(spec: &CodeSpec, message: &[bool]) -> Result<Codeword> {
    if message.len() != spec.k {
        return Err(Error::LengthMismatch {
            expected: spec.k,
            actual: message.len(),
        });
    }
    let r = spec.parity_len();
    let g = &spec.generator_poly;
    // LFSR division; rem[j] is the coefficient of x^j.
    let mut rem = vec![false; r];
    for &bit in message {
        let feedback = bit ^ rem[r - 1];
        for j in (1..r).rev() {
            rem[j] = rem[j - 1] ^ (feedback && g[j]);
        }
        rem[0] = feedback && g[0];
    }
    let mut bits = Vec::with_capacity(spec.c);
    bits.extend_from_slice(message);
    bits.extend(rem.iter().rev());
    Ok(Codeword::from_bits(bits))
}

pub fn hamming_distance(a: &[bool], b: &[bool]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// True minimum distance by enumerating every nonzero codeword. The code is
/// linear, so this is the minimum nonzero weight.
pub fn min_distance_exhaustive(spec: &CodeSpec) -> Result<usize> {
    if spec.k > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            k: spec.k,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    // Gray-code walk over messages, XOR-ing packed basis codewords.
    let words = spec.c.div_ceil(64);
    let basis: Vec<Vec<u64>> = (0..spec.k)
        .map(|i| {
            let mut msg = vec![false; spec.k];
            msg[i] = true;
            pack(
                &encode(spec, &msg).expect("basis message has length k").bits,
                words,
            )
        })
        .collect();
    let mut current = vec![0u64; words];
    let mut best = usize::MAX;
    for step in 1u64..(1u64 << spec.k) {
        let flip = step.trailing_zeros() as usize;
        for (w, b) in current.iter_mut().zip(&basis[flip]) {
            *w ^= b;
        }
        let weight: usize = current.iter().map(|w| w.count_ones() as usize).sum();
        best = best.min(weight);
    }
    Ok(best)
}

fn pack(bits: &[bool], words: usize) -> Vec<u64> {
    let mut out = vec![0u64; words];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

/// Whether `bits` (in codeword layout) is a multiple of the generator.
pub fn is_codeword(spec: &CodeSpec, bits: &[bool]) -> bool {
    if bits.len() != spec.c {
        return false;
    }
    let poly: Vec<bool> = bits.iter().rev().copied().collect();
    let rem = super::field::poly_rem(&poly, &spec.generator_poly);
    poly_degree(&rem).is_none()
}
