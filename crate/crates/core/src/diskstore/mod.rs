//! Page-aligned full-precision vector store with a bounded asynchronous read
//! queue.
//!
//! File layout: a 4096-byte header (`SKDV`, version, n, dim, record size,
//! zero padding) followed by one record per vector, each padded to a whole
//! number of pages. All integers are little-endian.

mod aligned;
mod queue;

pub use queue::{Completion, ReadQueue};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::{FileExt, OpenOptionsExt};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use crossbeam_channel::Sender;

use crate::dataio::VectorDataset;
use crate::error::{Error, Result};
use aligned::AlignedBuf;

pub const ALIGNMENT: usize = 4096;
pub const HEADER_SIZE: usize = 4096;
pub const STORE_MAGIC: [u8; 4] = *b"SKDV";
pub const STORE_VERSION: u32 = 1;
/// Worker threads serving the real backend.
pub const DEFAULT_IO_THREADS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiskLayout {
    pub path: PathBuf,
    pub n: usize,
    pub dim: usize,
    pub record_size: usize,
}

impl DiskLayout {
    pub fn new(path: PathBuf, n: usize, dim: usize) -> Self {
        DiskLayout {
            path,
            n,
            dim,
            record_size: record_size_for(dim),
        }
    }

    #[inline]
    pub fn offset(&self, id: usize) -> u64 {
        (HEADER_SIZE + id * self.record_size) as u64
    }

    pub fn file_size(&self) -> u64 {
        self.offset(self.n)
    }
}

/// Bytes per record: `4 * dim` rounded up to the page size.
pub fn record_size_for(dim: usize) -> usize {
    (4 * dim).div_ceil(ALIGNMENT).max(1) * ALIGNMENT
}

/// Per-query I/O counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IoStats {
    pub reads_issued: u64,
    pub reads_completed: u64,
    pub bytes_read: u64,
    /// Candidates skipped by filtering, recorded by the searcher.
    pub skip_count: u64,
    /// Reads served inline after a direct read was refused.
    pub sync_fallbacks: u64,
}

/// Fixed plus exponentially distributed latency per read, on a virtual clock.
/// The compute costs are charged by the searcher so that overlap of I/O and
/// traversal is modeled deterministically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub fixed_ns: u64,
    pub jitter_mean_ns: u64,
    pub seed: u64,
    /// Cost of one ADC table lookup.
    pub ns_per_lookup: f64,
    /// Cost per dimension of an exact or lower-bound distance.
    pub ns_per_dim: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            fixed_ns: 80_000,
            jitter_mean_ns: 20_000,
            seed: 0x5EED,
            ns_per_lookup: 0.5,
            ns_per_dim: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IoBackend {
    /// Thread-pool positional reads, direct when the filesystem allows it.
    Real,
    Simulated(SimConfig),
}

impl IoBackend {
    pub fn is_simulated(&self) -> bool {
        matches!(self, IoBackend::Simulated(_))
    }
}

pub fn write_store(dataset: &VectorDataset, path: impl AsRef<Path>) -> Result<DiskLayout> {
    let path = path.as_ref();
    let layout = DiskLayout::new(path.to_path_buf(), dataset.len(), dataset.dim());
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    let mut header = vec![0u8; HEADER_SIZE];
    header[0..4].copy_from_slice(&STORE_MAGIC);
    header[4..8].copy_from_slice(&STORE_VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(layout.n as u64).to_le_bytes());
    header[16..20].copy_from_slice(&(layout.dim as u32).to_le_bytes());
    header[20..24].copy_from_slice(&(layout.record_size as u32).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = vec![0u8; layout.record_size];
    for row in dataset.rows() {
        for (dst, x) in rec.chunks_exact_mut(4).zip(row) {
            dst.copy_from_slice(&x.to_le_bytes());
        }
        w.write_all(&rec)?;
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(layout)
}

struct Files {
    layout: DiskLayout,
    buffered: File,
    direct: Option<File>,
}

impl Files {
    fn decode(&self, bytes: &[u8]) -> Vec<f32> {
        bytes[..4 * self.layout.dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }

    fn read_buffered(&self, id: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; 4 * self.layout.dim];
        self.buffered.read_exact_at(&mut buf, self.layout.offset(id))?;
        Ok(self.decode(&buf))
    }

    /// Direct read when available; the flag reports a buffered fallback.
    fn read(&self, id: usize) -> Result<(Vec<f32>, bool)> {
        if let Some(f) = &self.direct {
            let mut buf = AlignedBuf::new(self.layout.record_size, ALIGNMENT);
            match f.read_exact_at(buf.as_mut_slice(), self.layout.offset(id)) {
                Ok(()) => return Ok((self.decode(buf.as_slice()), false)),
                Err(e) if e.raw_os_error() == Some(libc::EINVAL) => {
                    return Ok((self.read_buffered(id)?, true));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok((self.read_buffered(id)?, false))
    }
}

struct Job {
    id: u32,
    reply: Sender<Completion>,
}

/// Read-only handle to a store file; cheap to clone and shareable across
/// threads. Each query opens its own [`ReadQueue`].
#[derive(Clone)]
pub struct DiskStore {
    files: Arc<Files>,
    pool: Arc<Mutex<Option<Sender<Job>>>>,
    io_threads: usize,
}

impl std::fmt::Debug for DiskStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiskStore")
            .field("layout", &self.files.layout)
            .field("direct", &self.files.direct.is_some())
            .finish()
    }
}

impl DiskStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, true)
    }

    /// Opens the store, optionally refusing direct I/O.
    pub fn open_with(path: impl AsRef<Path>, allow_direct: bool) -> Result<Self> {
        let path = path.as_ref();
        let buffered = File::open(path)?;
        let mut header = [0u8; 24];
        buffered
            .read_exact_at(&mut header, 0)
            .map_err(|_| Error::format("store file shorter than its header"))?;
        if header[0..4] != STORE_MAGIC {
            return Err(Error::format("not a vector store (bad magic)"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(Error::VersionMismatch {
                expected: STORE_VERSION,
                found: version,
            });
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let record_size = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
        let layout = DiskLayout::new(path.to_path_buf(), n, dim);
        if dim == 0 || record_size != layout.record_size {
            return Err(Error::format("store header has an inconsistent record size"));
        }
        if buffered.metadata()?.len() < layout.file_size() {
            return Err(Error::format("store file is truncated"));
        }
        let direct = if allow_direct { open_direct(path, &layout) } else { None };
        Ok(DiskStore {
            files: Arc::new(Files {
                layout,
                buffered,
                direct,
            }),
            pool: Arc::new(Mutex::new(None)),
            io_threads: DEFAULT_IO_THREADS,
        })
    }

    pub fn with_io_threads(mut self, threads: usize) -> Self {
        self.io_threads = threads.max(1);
        self
    }

    pub fn layout(&self) -> &DiskLayout {
        &self.files.layout
    }

    pub fn len(&self) -> usize {
        self.files.layout.n
    }

    pub fn is_empty(&self) -> bool {
        self.files.layout.n == 0
    }

    pub fn dim(&self) -> usize {
        self.files.layout.dim
    }

    /// `"direct"` or `"buffered"`, the mode used by the real backend.
    pub fn io_mode(&self) -> &'static str {
        if self.files.direct.is_some() {
            "direct"
        } else {
            "buffered"
        }
    }

    fn check_id(&self, id: u32) -> Result<()> {
        if id as usize >= self.len() {
            return Err(Error::InvalidId { id, n: self.len() });
        }
        Ok(())
    }

    /// Blocking read of one record.
    pub fn read_sync(&self, id: u32) -> Result<Vec<f32>> {
        self.check_id(id)?;
        self.files.read_buffered(id as usize)
    }

    /// Reads every record in order.
    pub fn read_all(&self) -> Result<VectorDataset> {
        let l = &self.files.layout;
        let mut data = Vec::with_capacity(l.n * l.dim);
        let chunk = (1usize << 24) / l.record_size + 1;
        let mut buf = Vec::new();
        let mut start = 0;
        while start < l.n {
            let end = (start + chunk).min(l.n);
            buf.resize((end - start) * l.record_size, 0);
            self.files.buffered.read_exact_at(&mut buf, l.offset(start))?;
            for rec in buf.chunks_exact(l.record_size) {
                data.extend(self.files.decode(rec));
            }
            start = end;
        }
        VectorDataset::new(l.dim, data)
    }

    /// Opens a read queue of depth `depth` over this store.
    pub fn queue(&self, backend: IoBackend, depth: usize) -> Result<ReadQueue> {
        if depth == 0 {
            return Err(Error::param("queue depth must be at least 1"));
        }
        Ok(match backend {
            IoBackend::Real => ReadQueue::real(self.clone(), self.job_sender(), depth),
            IoBackend::Simulated(cfg) => ReadQueue::simulated(self.clone(), cfg, depth),
        })
    }

    fn job_sender(&self) -> Sender<Job> {
        let mut pool = self.pool.lock().unwrap();
        if let Some(tx) = pool.as_ref() {
            return tx.clone();
        }
        let (tx, rx) = crossbeam_channel::unbounded::<Job>();
        for i in 0..self.io_threads {
            let rx = rx.clone();
            let files = Arc::clone(&self.files);
            thread::Builder::new()
                .name(format!("skipdisk-io-{i}"))
                .spawn(move || {
                    // exits once every sender is gone
                    for job in rx {
                        let data = files.read(job.id as usize);
                        let _ = job.reply.send(Completion::from_read(job.id, data));
                    }
                })
                .expect("spawn I/O worker");
        }
        *pool = Some(tx.clone());
        tx
    }
}

fn open_direct(path: &Path, layout: &DiskLayout) -> Option<File> {
    let f = OpenOptions::new()
        .read(true)
        .custom_flags(libc::O_DIRECT)
        .open(path)
        .ok()?;
    if layout.n == 0 {
        return Some(f);
    }
    // some filesystems accept the flag but reject the reads
    let mut buf = AlignedBuf::new(layout.record_size, ALIGNMENT);
    f.read_exact_at(buf.as_mut_slice(), layout.offset(0)).ok()?;
    Some(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic, SyntheticModel};

    #[test]
    fn record_sizes() {
        assert_eq!(record_size_for(768), 4096);
        assert_eq!(record_size_for(1536), 8192);
        assert_eq!(record_size_for(1025), 8192);
        assert_eq!(record_size_for(1), 4096);
    }

    #[test]
    fn round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.skvec");
        let d = gen_synthetic(37, 20, 1, SyntheticModel::Gaussian).unwrap();
        let layout = write_store(&d, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 4096 + 37 * 4096);
        let s = DiskStore::open(&p).unwrap();
        assert_eq!(s.layout(), &layout);
        assert_eq!(s.read_sync(0).unwrap(), d.row(0));
        for i in 0..37 {
            let got = s.read_sync(i).unwrap();
            assert!(got.iter().zip(d.row(i as usize)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(s.read_all().unwrap(), d);
        assert!(matches!(s.read_sync(37), Err(Error::InvalidId { .. })));
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, b"XXXX").unwrap();
        assert!(DiskStore::open(&p).is_err());
        let d = gen_synthetic(3, 4, 1, SyntheticModel::Gaussian).unwrap();
        write_store(&d, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(DiskStore::open(&p), Err(Error::VersionMismatch { found: 9, .. })));
        bytes[4] = 1;
        bytes.truncate(4096 + 4096);
        std::fs::write(&p, &bytes).unwrap();
        assert!(DiskStore::open(&p).is_err());
    }
}
