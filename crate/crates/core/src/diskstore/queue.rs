use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use crossbeam_channel::{Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use super::{DiskStore, IoStats, Job, SimConfig};
use crate::error::{Error, Result};

/// A finished read. Errors surface on the ticket that caused them.
#[derive(Debug)]
pub struct Completion {
    pub id: u32,
    pub data: Result<Vec<f32>>,
    fallback: bool,
}

impl Completion {
    pub(super) fn from_read(id: u32, r: Result<(Vec<f32>, bool)>) -> Self {
        match r {
            Ok((data, fallback)) => Completion {
                id,
                data: Ok(data),
                fallback,
            },
            Err(e) => Completion {
                id,
                data: Err(e),
                fallback: false,
            },
        }
    }
}

enum Backend {
    Real {
        jobs: Sender<Job>,
        tx: Sender<Completion>,
        rx: Receiver<Completion>,
        start: Instant,
    },
    Sim {
        cfg: SimConfig,
        rng: ChaCha8Rng,
        now: f64,
        seq: u64,
        /// (completion time in ns, issue sequence, id)
        heap: BinaryHeap<Reverse<(u64, u64, u32)>>,
    },
}

/// Bounded queue of in-flight reads owned by one query.
pub struct ReadQueue {
    store: DiskStore,
    depth: usize,
    pending: usize,
    max_pending: usize,
    stats: IoStats,
    backend: Backend,
}

impl ReadQueue {
    pub(super) fn real(store: DiskStore, jobs: Sender<Job>, depth: usize) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded();
        ReadQueue {
            store,
            depth,
            pending: 0,
            max_pending: 0,
            stats: IoStats::default(),
            backend: Backend::Real {
                jobs,
                tx,
                rx,
                start: Instant::now(),
            },
        }
    }

    pub(super) fn simulated(store: DiskStore, cfg: SimConfig, depth: usize) -> Self {
        ReadQueue {
            store,
            depth,
            pending: 0,
            max_pending: 0,
            stats: IoStats::default(),
            backend: Backend::Sim {
                cfg,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
                now: 0.0,
                seq: 0,
                heap: BinaryHeap::new(),
            },
        }
    }

    /// Restarts the simulated latency stream and clock; no effect on the real
    /// backend beyond resetting the timer.
    pub fn reset_clock(&mut self, seed: u64) {
        match &mut self.backend {
            Backend::Sim { cfg, rng, now, .. } => {
                *rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ seed);
                *now = 0.0;
            }
            Backend::Real { start, .. } => *start = Instant::now(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn is_full(&self) -> bool {
        self.pending >= self.depth
    }

    /// Largest number of simultaneously pending reads seen.
    pub fn max_pending(&self) -> usize {
        self.max_pending
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    pub fn record_skip(&mut self) {
        self.stats.skip_count += 1;
    }

    pub fn reset_stats(&mut self) {
        self.stats = IoStats::default();
        self.max_pending = self.pending;
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self.backend, Backend::Sim { .. })
    }

    pub fn sim_config(&self) -> Option<SimConfig> {
        match &self.backend {
            Backend::Sim { cfg, .. } => Some(*cfg),
            Backend::Real { .. } => None,
        }
    }

    /// Elapsed time since the last clock reset: virtual for the simulated
    /// backend, wall-clock otherwise.
    pub fn now_ns(&self) -> u64 {
        match &self.backend {
            Backend::Sim { now, .. } => *now as u64,
            Backend::Real { start, .. } => start.elapsed().as_nanos() as u64,
        }
    }

    /// Advances the virtual clock by modeled compute time.
    #[inline]
    pub fn charge(&mut self, ns: f64) {
        if let Backend::Sim { now, .. } = &mut self.backend {
            *now += ns;
        }
    }

    /// Submits a read. Fails with [`Error::QueueFull`] when `depth` reads are
    /// already pending.
    pub fn issue(&mut self, id: u32) -> Result<()> {
        if id as usize >= self.store.len() {
            return Err(Error::InvalidId { id, n: self.store.len() });
        }
        if self.pending >= self.depth {
            return Err(Error::QueueFull(self.depth));
        }
        match &mut self.backend {
            Backend::Real { jobs, tx, .. } => {
                let job = Job { id, reply: tx.clone() };
                if let Err(e) = jobs.send(job) {
                    // pool gone; serve inline
                    let job = e.into_inner();
                    let r = self.store.files.read(job.id as usize);
                    self.stats.sync_fallbacks += 1;
                    let _ = tx.send(Completion::from_read(id, r));
                }
            }
            Backend::Sim {
                cfg, rng, now, seq, heap,
            } => {
                let jitter = if cfg.jitter_mean_ns > 0 {
                    rng.sample(Exp::new(1.0 / cfg.jitter_mean_ns as f64).unwrap())
                } else {
                    0.0
                };
                let done = (*now + cfg.fixed_ns as f64 + jitter).ceil() as u64;
                heap.push(Reverse((done, *seq, id)));
                *seq += 1;
            }
        }
        self.pending += 1;
        self.max_pending = self.max_pending.max(self.pending);
        assert!(self.pending <= self.depth);
        self.stats.reads_issued += 1;
        Ok(())
    }

    fn finish(&mut self, mut c: Completion) -> Completion {
        self.pending -= 1;
        self.stats.reads_completed += 1;
        if c.data.is_ok() {
            self.stats.bytes_read += self.store.layout().record_size as u64;
        }
        if c.fallback {
            self.stats.sync_fallbacks += 1;
            c.fallback = false;
        }
        c
    }

    fn sim_ready(&mut self, out: &mut Vec<Completion>) {
        let Backend::Sim { now, heap, .. } = &mut self.backend else {
            return;
        };
        let mut ids = Vec::new();
        while let Some(&Reverse((t, _, id))) = heap.peek() {
            if t as f64 > *now {
                break;
            }
            heap.pop();
            ids.push(id);
        }
        for id in ids {
            let r = self.store.files.read_buffered(id as usize).map(|d| (d, false));
            let c = self.finish(Completion::from_read(id, r));
            out.push(c);
        }
    }

    /// Non-blocking: every read that has completed since the last poll.
    pub fn poll(&mut self) -> Vec<Completion> {
        let mut out = Vec::new();
        if self.pending == 0 {
            return out;
        }
        match &self.backend {
            Backend::Real { rx, .. } => {
                let got: Vec<Completion> = rx.try_iter().collect();
                for c in got {
                    let c = self.finish(c);
                    out.push(c);
                }
            }
            Backend::Sim { .. } => self.sim_ready(&mut out),
        }
        out
    }

    /// Blocks until at least one pending read completes (returns immediately
    /// when nothing is pending). The simulated clock jumps forward.
    pub fn wait(&mut self) -> Vec<Completion> {
        if self.pending == 0 {
            return Vec::new();
        }
        match &mut self.backend {
            Backend::Real { rx, .. } => {
                let first = rx.recv().expect("completion channel closed");
                let mut got = vec![first];
                got.extend(rx.try_iter());
                got.into_iter().map(|c| self.finish(c)).collect()
            }
            Backend::Sim { now, heap, .. } => {
                if let Some(&Reverse((t, _, _))) = heap.peek() {
                    if (t as f64) > *now {
                        *now = t as f64;
                    }
                }
                let mut out = Vec::new();
                self.sim_ready(&mut out);
                out
            }
        }
    }

    /// Waits for every pending read.
    pub fn drain(&mut self) -> Vec<Completion> {
        let mut out = Vec::new();
        while self.pending > 0 {
            out.extend(self.wait());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::{write_store, IoBackend};
    use super::*;
    use crate::dataio::{gen_synthetic, SyntheticModel};

    fn store() -> (tempfile::TempDir, DiskStore, crate::dataio::VectorDataset) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s");
        let d = gen_synthetic(200, 12, 3, SyntheticModel::Gaussian).unwrap();
        write_store(&d, &p).unwrap();
        let s = DiskStore::open(&p).unwrap();
        (dir, s, d)
    }

    fn backends() -> [IoBackend; 2] {
        [IoBackend::Real, IoBackend::Simulated(SimConfig::default())]
    }

    #[test]
    fn issue_then_wait_matches_sync() {
        let (_dir, s, d) = store();
        for b in backends() {
            let mut q = s.queue(b, 4).unwrap();
            assert!(q.poll().is_empty());
            q.issue(17).unwrap();
            let c = q.drain();
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].id, 17);
            assert_eq!(c[0].data.as_ref().unwrap(), &s.read_sync(17).unwrap());
            assert_eq!(c[0].data.as_ref().unwrap(), d.row(17));
            assert!(q.poll().is_empty());
            assert!(q.wait().is_empty());
            let st = q.stats();
            assert_eq!((st.reads_issued, st.reads_completed), (1, 1));
        }
    }

    #[test]
    fn full_queue_is_distinct_error() {
        let (_dir, s, _) = store();
        for b in backends() {
            let mut q = s.queue(b, 2).unwrap();
            q.issue(0).unwrap();
            q.issue(1).unwrap();
            assert!(matches!(q.issue(2), Err(Error::QueueFull(2))));
            assert!(matches!(q.issue(999), Err(Error::InvalidId { .. })));
            assert_eq!(q.drain().len(), 2);
            assert_eq!(q.max_pending(), 2);
        }
        assert!(s.queue(IoBackend::Real, 0).is_err());
    }

    #[test]
    fn depth_b_back_to_back() {
        let (_dir, s, _) = store();
        for b in backends() {
            let mut q = s.queue(b, 32).unwrap();
            for i in 0..32 {
                q.issue(i).unwrap();
            }
            let mut ids: Vec<u32> = q.drain().into_iter().map(|c| c.id).collect();
            ids.sort();
            assert_eq!(ids, (0..32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn simulated_clock_orders_completions() {
        let (_dir, s, _) = store();
        let cfg = SimConfig {
            fixed_ns: 1000,
            jitter_mean_ns: 0,
            ..SimConfig::default()
        };
        let mut q = s.queue(IoBackend::Simulated(cfg), 4).unwrap();
        q.issue(3).unwrap();
        q.charge(500.0);
        q.issue(4).unwrap();
        assert!(q.poll().is_empty());
        q.charge(500.0);
        let c = q.poll();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].id, 3);
        let c = q.wait();
        assert_eq!(c[0].id, 4);
        assert_eq!(q.now_ns(), 1500);
    }
}
