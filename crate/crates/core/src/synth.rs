//! Procedural per-user data: every user is a cluster around a Gaussian
//! prototype, with noise passed through a fixed nonlinear warp and a
//! per-user random rotation. Users `0..k_train` take part in training;
//! users `k_train..k_train + k_unknown` are held out entirely.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub k_train: usize,
    pub k_unknown: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub intra_sigma: f64,
    pub inter_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            k_train: 50,
            k_unknown: 20,
            dim: 32,
            n_train: 20,
            n_val: 10,
            n_test: 10,
            intra_sigma: 1.0,
            inter_scale: 6.0,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_train", self.k_train),
            ("k_unknown", self.k_unknown),
            ("dim", self.dim),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::BadSpec(format!("{name} must be at least 1")));
        }
        if !(self.intra_sigma > 0.0) || !self.intra_sigma.is_finite() {
            return Err(Error::BadSpec("intra_sigma must be positive".into()));
        }
        if !(self.inter_scale >= 0.0) || !self.inter_scale.is_finite() {
            return Err(Error::BadSpec("inter_scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    pub user_index: usize,
    pub known: bool,
    pub train: Vec<Vec<f64>>,
    pub val: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl UserDataset {
    pub fn dim(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .next()
            .map_or(0, Vec::len)
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random orthogonal matrix (row-major) by Gram-Schmidt on Gaussian rows.
fn random_rotation(rng: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian_vec(rng, dim);
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

/// Coordinate-coupling warp, `O(sigma)` in magnitude.
fn warp(noise: &[f64], sigma: f64) -> Vec<f64> {
    let d = noise.len();
    (0..d)
        .map(|i| noise[i] + 0.75 * sigma * (noise[(i + 1) % d] / sigma).sin())
        .collect()
}

fn generate_user(spec: &DatasetSpec, user_index: usize, known: bool) -> UserDataset {
    let mut rng = stream_rng(spec.seed, &[user_index as u64]);
    let prototype: Vec<f64> = gaussian_vec(&mut rng, spec.dim)
        .into_iter()
        .map(|x| x * spec.inter_scale)
        .collect();
    let rotation = random_rotation(&mut rng, spec.dim);
    let mut sample = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let noise: Vec<f64> = gaussian_vec(&mut rng, spec.dim)
                    .into_iter()
                    .map(|x| x * spec.intra_sigma)
                    .collect();
                let warped = warp(&noise, spec.intra_sigma);
                rotation
                    .iter()
                    .zip(&prototype)
                    .map(|(row, mu)| mu + row.iter().zip(&warped).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let train = sample(spec.n_train);
    let val = sample(spec.n_val);
    let test = sample(spec.n_test);
    UserDataset {
        user_index,
        known,
        train,
        val,
        test,
    }
}

/// Returns `(known users, unknown users)`.
pub fn generate(spec: &DatasetSpec) -> Result<(Vec<UserDataset>, Vec<UserDataset>)> {
    spec.validate()?;
    let known = (0..spec.k_train)
        .map(|u| generate_user(spec, u, true))
        .collect();
    let unknown = (spec.k_train..spec.k_train + spec.k_unknown)
        .map(|u| generate_user(spec, u, false))
        .collect();
    Ok((known, unknown))
}

const DATA_MAGIC: &[u8; 8] = b"FEDUVDAT";
pub const DATA_VERSION: u32 = 1;

/// Layout (little-endian): magic, version u32, user_index u32, dim u32,
/// n_train u32, n_val u32, n_test u32, known u8, then f64 rows for train,
/// val and test in order.
pub fn encode_user(data: &UserDataset) -> Vec<u8> {
    let dim = data.dim();
    let rows = data.train.len() + data.val.len() + data.test.len();
    let mut out = Vec::with_capacity(33 + 8 * dim * rows);
    out.extend_from_slice(DATA_MAGIC);
    for v in [
        DATA_VERSION as usize,
        data.user_index,
        dim,
        data.train.len(),
        data.val.len(),
        data.test.len(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(data.known as u8);
    for x in data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .flatten()
    {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_user(bytes: &[u8], path: &Path) -> Result<UserDataset> {
    let corrupt = |detail: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != DATA_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |i: usize| -> Result<usize> {
        let at = 8 + 4 * i;
        bytes
            .get(at..at + 4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .ok_or_else(|| corrupt("truncated header"))
    };
    let version = word(0)? as u32;
    if version != DATA_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATA_VERSION,
        });
    }
    let (user_index, dim, n_train, n_val, n_test) =
        (word(1)?, word(2)?, word(3)?, word(4)?, word(5)?);
    let known = match bytes.get(32) {
        Some(0) => false,
        Some(1) => true,
        Some(_) => return Err(corrupt("bad known flag")),
        None => return Err(corrupt("truncated header")),
    };
    let payload = &bytes[33..];
    let rows = n_train + n_val + n_test;
    if payload.len() != rows * dim * 8 {
        return Err(corrupt("payload length does not match header"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| values.by_ref().take(dim).collect())
            .collect()
    };
    let train = take(n_train);
    let val = take(n_val);
    let test = take(n_test);
    Ok(UserDataset {
        user_index,
        known,
        train,
        val,
        test,
    })
}

pub fn save_user(path: &Path, data: &UserDataset) -> Result<()> {
    fs::write(path, encode_user(data))?;
    Ok(())
}

pub fn load_user(path: &Path) -> Result<UserDataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_user(&fs::read(path)?, path)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn user_file(dir: &Path, user_index: usize) -> PathBuf {
    dir.join(format!("user_{user_index:04}")).join("data.bin")
}

/// Writes one file per user under `dir/user_NNNN/` plus a manifest.
pub fn save_dataset(dir: &Path, known: &[UserDataset], unknown: &[UserDataset]) -> Result<()> {
    let mut manifest = String::from("user_index,known,n_train,n_val,n_test,path\n");
    for data in known.iter().chain(unknown) {
        let path = user_file(dir, data.user_index);
        fs::create_dir_all(path.parent().unwrap())?;
        save_user(&path, data)?;
        writeln!(
            manifest,
            "{},{},{},{},{},{}",
            data.user_index,
            data.known as u8,
            data.train.len(),
            data.val.len(),
            data.test.len(),
            path.strip_prefix(dir).unwrap().display()
        )
        .unwrap();
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads every user listed in the manifest; returns `(known, unknown)`.
pub fn load_dataset(dir: &Path) -> Result<(Vec<UserDataset>, Vec<UserDataset>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let rel = line.rsplit(',').next().unwrap();
        let data = load_user(&dir.join(rel))?;
        if data.known {
            known.push(data);
        } else {
            unknown.push(data);
        }
    }
    Ok((known, unknown))
}
