//! Secret codeword assignment.
//!
//! The server hands every user a unique base vector. Each user appends a
//! private random suffix and encodes the result, so codewords are distinct
//! (distinct messages) and at least `d_min` apart, while the server only ever
//! holds the base vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ecc::{bits_to_hex, encode, hamming_distance, hex_to_bits, CodeSpec, Codeword};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

pub const DEFAULT_BASE_BITS: usize = 32;

const BASE_HEADER: &str = "#base-vectors";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseVectorAssignment {
    pub user_index: usize,
    pub base_bits: Vec<bool>,
}

/// A user's private secret. Lives on the client only; there is deliberately
/// no serializer for it in the server-side file formats.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretAssignment {
    pub base: BaseVectorAssignment,
    pub random_bits: Vec<bool>,
    pub codeword: Codeword,
}

impl SecretAssignment {
    pub fn user_index(&self) -> usize {
        self.base.user_index
    }

    pub fn bipolar(&self) -> &[f64] {
        &self.codeword.bipolar
    }
}

fn counter_bits(value: u64, len: usize) -> Vec<bool> {
    (0..len)
        .map(|i| {
            let shift = len - 1 - i;
            shift < 64 && (value >> shift) & 1 == 1
        })
        .collect()
}

/// Unique `base_bits`-long prefixes for `users` users: the counters
/// `0..users` in an order fixed by `server_seed`. Prefixes `>= users` stay
/// free for users added later.
pub fn assign_base_vectors(
    users: usize,
    base_bits: usize,
    server_seed: u64,
) -> Result<Vec<BaseVectorAssignment>> {
    let capacity_ok = base_bits >= 64 || (users as u128) <= (1u128 << base_bits);
    if !capacity_ok || base_bits == 0 {
        return Err(Error::PrefixSpaceExhausted {
            users,
            bits: base_bits,
        });
    }
    let mut counters: Vec<u64> = (0..users as u64).collect();
    counters.shuffle(&mut seeded_rng(server_seed));
    Ok(counters
        .into_iter()
        .enumerate()
        .map(|(user_index, value)| BaseVectorAssignment {
            user_index,
            base_bits: counter_bits(value, base_bits),
        })
        .collect())
}

/// Client-side: draw the random suffix from `client_seed` and encode
/// `base || random`.
pub fn derive_secret(
    spec: &CodeSpec,
    base: &BaseVectorAssignment,
    client_seed: u64,
) -> Result<SecretAssignment> {
    let base_len = base.base_bits.len();
    if spec.k <= base_len {
        return Err(Error::CodeTooShort {
            k: spec.k,
            base_bits: base_len,
        });
    }
    let mut rng = seeded_rng(client_seed);
    let random_bits: Vec<bool> = (0..spec.k - base_len).map(|_| rng.random()).collect();
    let mut message = base.base_bits.clone();
    message.extend_from_slice(&random_bits);
    let codeword = encode(spec, &message)?;
    Ok(SecretAssignment {
        base: base.clone(),
        random_bits,
        codeword,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniquenessReport {
    /// `None` when fewer than two codewords were audited.
    pub min_distance: Option<usize>,
    /// Index pairs (into the audited list) with identical codewords.
    pub collisions: Vec<(usize, usize)>,
}

impl UniquenessReport {
    pub fn is_unique(&self) -> bool {
        self.collisions.is_empty()
    }
}

/// Simulation-only audit of pairwise separation. A real server never sees
/// codewords; this exists for the test harness.
pub fn audit_uniqueness<'a, I>(codewords: I) -> UniquenessReport
where
    I: IntoIterator<Item = &'a Codeword>,
{
    let codewords: Vec<&Codeword> = codewords.into_iter().collect();
    let mut min_distance = None;
    let mut collisions = Vec::new();
    for i in 0..codewords.len() {
        for j in i + 1..codewords.len() {
            let d = hamming_distance(&codewords[i].bits, &codewords[j].bits)
                .expect("audited codewords share a code length");
            if d == 0 {
                collisions.push((i, j));
            }
            min_distance = Some(min_distance.map_or(d, |m: usize| m.min(d)));
        }
    }
    UniquenessReport {
        min_distance,
        collisions,
    }
}

pub fn audit_secrets(secrets: &[SecretAssignment]) -> UniquenessReport {
    audit_uniqueness(secrets.iter().map(|s| &s.codeword))
}

/// Server assignment file: `#base-vectors l_b=<n>` then `user_index,hex` lines.
pub fn render_assignments(assignments: &[BaseVectorAssignment]) -> String {
    let base_bits = assignments.first().map_or(0, |a| a.base_bits.len());
    let mut out = format!("{BASE_HEADER} l_b={base_bits}\n");
    for a in assignments {
        writeln!(out, "{},{}", a.user_index, bits_to_hex(&a.base_bits)).unwrap();
    }
    out
}

pub fn parse_assignments(text: &str, path: &Path) -> Result<Vec<BaseVectorAssignment>> {
    let corrupt = |detail: String| Error::CorruptFile {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    let base_bits: usize = header
        .strip_prefix(BASE_HEADER)
        .and_then(|rest| rest.trim().strip_prefix("l_b="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt(format!("bad header '{header}'")))?;
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (user, hex) = line
                .split_once(',')
                .ok_or_else(|| corrupt(format!("bad record '{line}'")))?;
            Ok(BaseVectorAssignment {
                user_index: user
                    .trim()
                    .parse()
                    .map_err(|_| corrupt(format!("bad user index '{user}'")))?,
                base_bits: hex_to_bits(hex.trim(), base_bits)
                    .ok_or_else(|| corrupt(format!("bad hex '{hex}'")))?,
            })
        })
        .collect()
}

pub fn write_assignments(path: &Path, assignments: &[BaseVectorAssignment]) -> Result<()> {
    fs::write(path, render_assignments(assignments))?;
    Ok(())
}

pub fn read_assignments(path: &Path) -> Result<Vec<BaseVectorAssignment>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    parse_assignments(&fs::read_to_string(path)?, path)
}
