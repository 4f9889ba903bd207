//! Solved kernel sets and their binary sidecar files.
//!
//! Layout: 8 magic bytes, `u32` version, `u64` cell count, 32-byte key, then
//! the blocks `aa, ab, ba, bb` of `P`, `R`, `K`, `L` in that order, each a
//! row-major lower triangle of little-endian `f64`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{tri_len, Profile, UniformGrid};
use crate::params::{PlantParams, SampledPlant};

use super::{invert_kernel, solve_controller_kernels, solve_observer_kernels, Block, KernelTable, SolveReport, SolverOptions};

const MAGIC: &[u8; 8] = b"PETCKERN";
const VERSION: u32 = 1;
/// Acceptance threshold for the discrete inverse identity.
pub const INVERSE_TOL: f64 = 1e-9;

/// The four kernels of one plant on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    /// Error-coordinate kernel and its inverse.
    pub p: KernelTable,
    pub r: KernelTable,
    /// Observer-state kernel and its inverse.
    pub k: KernelTable,
    pub l: KernelTable,
}

impl KernelSet {
    pub fn solve(plant: &SampledPlant, opts: &SolverOptions) -> Result<(Self, [SolveReport; 2])> {
        let (p, rep_p) = solve_observer_kernels(plant, opts)?;
        log::info!("observer kernel: {} iterations, residual {:e}", rep_p.iterations, rep_p.final_residual());
        let (k, rep_k) = solve_controller_kernels(plant, opts)?;
        log::info!("controller kernel: {} iterations, residual {:e}", rep_k.iterations, rep_k.final_residual());
        let r = invert_kernel(&p, INVERSE_TOL)?;
        let l = invert_kernel(&k, INVERSE_TOL)?;
        Ok((Self { p, r, k, l }, [rep_p, rep_k]))
    }

    pub fn cells(&self) -> usize {
        self.p.cells()
    }

    fn tables(&self) -> [&KernelTable; 4] {
        [&self.p, &self.r, &self.k, &self.l]
    }
}

fn hash_profile(h: &mut Sha256, p: &Profile) {
    match p {
        Profile::Constant(v) => {
            h.update([0u8]);
            h.update(v.to_le_bytes());
        }
        Profile::Table { x, value } => {
            h.update([1u8]);
            h.update((x.len() as u64).to_le_bytes());
            for v in x.iter().chain(value) {
                h.update(v.to_le_bytes());
            }
        }
    }
}

/// Key identifying a kernel set: plant coefficients, grid size, tolerance.
pub fn cache_key(plant: &PlantParams, cells: usize, tol: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MAGIC);
    h.update(VERSION.to_le_bytes());
    for p in [&plant.lambda1, &plant.lambda2, &plant.c1, &plant.c2] {
        hash_profile(&mut h, p);
    }
    h.update(plant.q.to_le_bytes());
    h.update(plant.rho.to_le_bytes());
    h.update((cells as u64).to_le_bytes());
    h.update(tol.to_le_bytes());
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_kernel_file(path: &Path, key: &[u8; 32], set: &KernelSet) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Cache { path: path.to_path_buf(), reason: e.to_string() };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(set.cells() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(key).map_err(io_err)?;
        for t in set.tables() {
            for b in Block::ALL {
                for v in t.block(b) {
                    w.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
        w.flush().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn read_kernel_file(path: &Path, key: &[u8; 32], cells: usize) -> Result<KernelSet> {
    let fail = |reason: String| Error::Cache { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path).map_err(|e| fail(e.to_string()))?);
    let mut header = [0u8; 8 + 4 + 8 + 32];
    r.read_exact(&mut header).map_err(|e| fail(format!("short header: {e}")))?;
    if &header[..8] != MAGIC {
        return Err(fail("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes")) as usize;
    if n != cells {
        return Err(fail(format!("grid size {n}, expected {cells}")));
    }
    if &header[20..52] != key {
        return Err(fail("configuration hash mismatch".into()));
    }
    let len = tri_len(cells + 1);
    let mut buf = vec![0u8; len * 8];
    let mut read_table = || -> Result<KernelTable> {
        let mut blocks: [Vec<f64>; 4] = Default::default();
        for block in blocks.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| fail(format!("truncated data: {e}")))?;
            *block = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        }
        KernelTable::from_blocks(cells, blocks)
    };
    let p = read_table()?;
    let rr = read_table()?;
    let k = read_table()?;
    let l = read_table()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| fail(e.to_string()))? != 0 {
        return Err(fail("trailing bytes".into()));
    }
    Ok(KernelSet { p, r: rr, k, l })
}

/// A directory of kernel files keyed by [`cache_key`].
#[derive(Debug, Clone)]
pub struct KernelCache {
    dir: PathBuf,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("kernels-{}.bin", &hex(key)[..32]))
    }

    /// Loads the kernels for `plant` on `cells` cells, solving and storing
    /// them when no valid file exists.
    pub fn load_or_solve(&self, plant: &PlantParams, cells: usize, opts: &SolverOptions) -> Result<KernelSet> {
        let key = cache_key(plant, cells, opts.tol);
        let path = self.path_for(&key);
        if path.exists() {
            match read_kernel_file(&path, &key, cells) {
                Ok(set) => {
                    log::info!("loaded kernels from {}", path.display());
                    return Ok(set);
                }
                Err(e) => log::warn!("ignoring unusable kernel cache: {e}"),
            }
        }
        let sampled = plant.sample(&UniformGrid::new(cells)?)?;
        let (set, _) = KernelSet::solve(&sampled, opts)?;
        if let Err(e) = write_kernel_file(&path, &key, &set) {
            log::warn!("could not write kernel cache: {e}");
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let plant = PlantParams::reference();
        let sampled = plant.sample(&UniformGrid::new(16).unwrap()).unwrap();
        let (set, _) = KernelSet::solve(&sampled, &SolverOptions::default()).unwrap();
        let key = cache_key(&plant, 16, 1e-10);
        let path = dir.path().join("k.bin");
        write_kernel_file(&path, &key, &set).unwrap();
        assert_eq!(read_kernel_file(&path, &key, 16).unwrap(), set);

        let other = cache_key(&PlantParams { q: 0.25, ..plant }, 16, 1e-10);
        assert!(matches!(read_kernel_file(&path, &other, 16), Err(Error::Cache { .. })));
        assert!(read_kernel_file(&path, &key, 32).is_err());
    }

    #[test]
    fn cache_reuses_files() {
        let dir = tempfile::tempdir().unwrap();
        let cache = KernelCache::new(dir.path());
        let plant = PlantParams::reference();
        let a = cache.load_or_solve(&plant, 16, &SolverOptions::default()).unwrap();
        let path = cache.path_for(&cache_key(&plant, 16, 1e-10));
        assert!(path.exists());
        let b = cache.load_or_solve(&plant, 16, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"PETCKERN\x01\x00").unwrap();
        assert!(matches!(read_kernel_file(&path, &[0; 32], 16), Err(Error::Cache { .. })));
    }
}
