//! Arithmetic in GF(2^m) via exp/log tables, plus cyclotomic cosets and
//! minimal polynomials over GF(2).

use crate::error::{Error, Result};

/// Primitive polynomials for m = 3..=10, as bitmasks including the x^m term.
const PRIMITIVE_POLYS: [(usize, u32); 8] = [
    (3, 0b1011),           // x^3 + x + 1
    (4, 0b1_0011),         // x^4 + x + 1
    (5, 0b10_0101),        // x^5 + x^2 + 1
    (6, 0b100_0011),       // x^6 + x + 1
    (7, 0b1000_1001),      // x^7 + x^3 + 1
    (8, 0b1_0001_1101),    // x^8 + x^4 + x^3 + x^2 + 1
    (9, 0b10_0001_0001),   // x^9 + x^4 + 1
    (10, 0b100_0000_1001), // x^10 + x^3 + 1
];

pub const MIN_DEGREE: usize = 3;
pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub m: usize,
    pub primitive_poly: u32,
}

impl FieldSpec {
    /// Field of degree `m` using the built-in primitive polynomial.
    pub fn new(m: usize) -> Result<Self> {
        PRIMITIVE_POLYS
            .iter()
            .find(|(deg, _)| *deg == m)
            .map(|&(m, primitive_poly)| FieldSpec { m, primitive_poly })
            .ok_or(Error::UnsupportedField(m))
    }

    pub fn order(&self) -> usize {
        1 << self.m
    }

    /// Code length `2^m - 1`, also the multiplicative order of the field.
    pub fn code_length(&self) -> usize {
        self.order() - 1
    }
}

/// GF(2^m) with log/antilog tables. Elements are integers in `0..2^m`.
#[derive(Debug, Clone)]
pub struct Gf2m {
    spec: FieldSpec,
    exp: Vec<u32>,
    log: Vec<u32>,
}

impl Gf2m {
    pub fn new(spec: FieldSpec) -> Self {
        let n = spec.code_length();
        let mut exp = vec![0u32; 2 * n];
        let mut log = vec![0u32; spec.order()];
        let mut x = 1u32;
        for (i, e) in exp.iter_mut().take(n).enumerate() {
            *e = x;
            log[x as usize] = i as u32;
            x <<= 1;
            if x & (1 << spec.m) != 0 {
                x ^= spec.primitive_poly;
            }
        }
        for i in n..2 * n {
            exp[i] = exp[i - n];
        }
        Gf2m { spec, exp, log }
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    /// `alpha^i` for any non-negative exponent.
    pub fn alpha_pow(&self, i: usize) -> u32 {
        self.exp[i % self.spec.code_length()]
    }

    pub fn mul(&self, a: u32, b: u32) -> u32 {
        if a == 0 || b == 0 {
            return 0;
        }
        self.exp[(self.log[a as usize] + self.log[b as usize]) as usize]
    }

    /// Multiplicative order of a nonzero element, by repeated multiplication.
    pub fn element_order(&self, a: u32) -> Option<usize> {
        if a == 0 {
            return None;
        }
        let mut x = a;
        for k in 1..=self.spec.code_length() {
            if x == 1 {
                return Some(k);
            }
            x = self.mul(x, a);
        }
        None
    }

    /// The cyclotomic coset `{i, 2i, 4i, ...} mod 2^m - 1` containing `i`.
    pub fn cyclotomic_coset(&self, i: usize) -> Vec<usize> {
        let n = self.spec.code_length();
        let start = i % n;
        let mut coset = vec![start];
        let mut j = (2 * start) % n;
        while j != start {
            coset.push(j);
            j = (2 * j) % n;
        }
        coset
    }

    /// Minimal polynomial of `alpha^i` over GF(2), as coefficient bits
    /// indexed by degree.
    pub fn minimal_polynomial(&self, i: usize) -> Vec<bool> {
        // Product of (x + alpha^j) over the coset, computed in GF(2^m)[x].
        let mut poly: Vec<u32> = vec![1];
        for j in self.cyclotomic_coset(i) {
            let root = self.alpha_pow(j);
            let mut next = vec![0u32; poly.len() + 1];
            for (d, &coef) in poly.iter().enumerate() {
                next[d + 1] ^= coef;
                next[d] ^= self.mul(coef, root);
            }
            poly = next;
        }
        poly.into_iter()
            .map(|c| {
                debug_assert!(c <= 1, "minimal polynomial must have binary coefficients");
                c == 1
            })
            .collect()
    }
}

/// Degree of a GF(2) polynomial given as coefficient bits; `None` for zero.
pub fn poly_degree(p: &[bool]) -> Option<usize> {
    p.iter().rposition(|&b| b)
}

pub fn poly_mul(a: &[bool], b: &[bool]) -> Vec<bool> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![false; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        if ai {
            for (j, &bj) in b.iter().enumerate() {
                out[i + j] ^= bj;
            }
        }
    }
    out
}

/// Remainder of `a` modulo `b` over GF(2).
pub fn poly_rem(a: &[bool], b: &[bool]) -> Vec<bool> {
    let db = poly_degree(b).expect("division by zero polynomial");
    let mut r = a.to_vec();
    while let Some(dr) = poly_degree(&r) {
        if dr < db {
            break;
        }
        let shift = dr - db;
        for (j, &bj) in b.iter().enumerate().take(db + 1) {
            r[j + shift] ^= bj;
        }
    }
    r.truncate(db.max(1));
    r
}

/// Brute-force irreducibility test over GF(2) by trial division with every
/// polynomial of degree 1..=deg/2.
pub fn is_irreducible(mask: u32) -> bool {
    let deg = 31 - mask.leading_zeros() as usize;
    if deg == 0 {
        return false;
    }
    let p = mask_to_poly(mask);
    for d in 1..=deg / 2 {
        for low in 0..(1u32 << d) {
            let q = mask_to_poly((1 << d) | low);
            if poly_degree(&poly_rem(&p, &q)).is_none() {
                return false;
            }
        }
    }
    true
}

fn mask_to_poly(mask: u32) -> Vec<bool> {
    (0..32).map(|i| mask >> i & 1 == 1).collect()
}
