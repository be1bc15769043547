//! Codeword files: a header line `#codewords c=<c> k=<k> m=<m>` followed by
//! `user_index,hex` records. The most significant bit of the first hex digit
//! is bit 0; the final digit is zero-padded on the right.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::bch::Codeword;
use crate::error::{Error, Result};

pub const CODEWORD_HEADER: &str = "#codewords";

pub fn bits_to_hex(bits: &[bool]) -> String {
    let mut out = String::with_capacity(bits.len().div_ceil(4));
    for chunk in bits.chunks(4) {
        let nibble = chunk
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &b)| acc | (b as u8) << (3 - i));
        write!(out, "{nibble:x}").unwrap();
    }
    out
}

pub fn hex_to_bits(hex: &str, len: usize) -> Option<Vec<bool>> {
    if hex.len() != len.div_ceil(4) {
        return None;
    }
    let mut bits = Vec::with_capacity(hex.len() * 4);
    for ch in hex.chars() {
        let nibble = ch.to_digit(16)?;
        bits.extend((0..4).map(|i| nibble >> (3 - i) & 1 == 1));
    }
    if bits[len..].iter().any(|&b| b) {
        return None;
    }
    bits.truncate(len);
    Some(bits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodewordFile {
    pub c: usize,
    pub k: usize,
    pub m: usize,
    pub records: Vec<(usize, Codeword)>,
}

impl CodewordFile {
    pub fn render(&self) -> String {
        let mut out = format!("{CODEWORD_HEADER} c={} k={} m={}\n", self.c, self.k, self.m);
        for (user, cw) in &self.records {
            writeln!(out, "{user},{}", bits_to_hex(&cw.bits)).unwrap();
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let corrupt = |detail: String| Error::CorruptFile {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(CODEWORD_HEADER) {
            return Err(corrupt(format!("bad header '{header}'")));
        }
        let mut get = |name: &str| -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.strip_prefix(name))
                .and_then(|f| f.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(format!("header is missing {name}")))
        };
        let (c, k, m) = (get("c")?, get("k")?, get("m")?);
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (user, hex) = line
                .split_once(',')
                .ok_or_else(|| corrupt(format!("bad record '{line}'")))?;
            let user = user
                .trim()
                .parse()
                .map_err(|_| corrupt(format!("bad user index '{user}'")))?;
            let bits =
                hex_to_bits(hex.trim(), c).ok_or_else(|| corrupt(format!("bad hex '{hex}'")))?;
            records.push((user, Codeword::from_bits(bits)));
        }
        Ok(CodewordFile { c, k, m, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?, path)
    }
}
