//! Query execution: traversal over PQ codes, lower-bound filtering of disk
//! candidates, and overlapped reads with exact re-ranking.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{SearchParams, SkipDiskIndex, Variant};
use crate::bitset::BitSet;
use crate::dataio::Neighbor;
use crate::diskstore::{Completion, ReadQueue, SimConfig};
use crate::error::{check_dim, Error, Result};
use crate::graph::NeighborGraph;
use crate::quantizer::{PqCodes, QueryLut};
use crate::transforms::distance::l2_sq;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryStats {
    /// Points popped from the search list.
    pub popped: u64,
    /// Points that entered the disk-candidate set.
    pub candidates: u64,
    /// Candidates skipped by the filter rule during traversal.
    pub filtered: u64,
    /// Candidates discarded at once when the drain phase stopped early.
    pub drain_discarded: u64,
    pub reads_issued: u64,
    pub reads_completed: u64,
    pub bytes_read: u64,
    pub sync_fallbacks: u64,
    pub exact_distances: u64,
    pub lb_computations: u64,
    pub adc_computations: u64,
    pub max_pending: usize,
    /// Virtual nanoseconds for the simulated backend, wall-clock otherwise.
    pub latency_ns: u64,
    /// Every value taken by tau once finite.
    pub tau_trace: Vec<f32>,
}

impl QueryStats {
    pub fn skipped(&self) -> u64 {
        self.filtered + self.drain_discarded
    }

    /// `candidates = filtered + reads_issued + drain_discarded`.
    pub fn counter_identity_holds(&self) -> bool {
        self.candidates == self.filtered + self.reads_issued + self.drain_discarded
    }
}

/// A skipped candidate with the threshold it failed against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkipAudit {
    pub id: u32,
    pub lb: f32,
    pub tau: f32,
    /// `epsilon * tau` for the estimation rule, `tau` for the strict rule.
    pub threshold: f32,
    pub during_drain: bool,
}

#[derive(Clone, Debug)]
pub struct SearchOutput {
    /// Ascending by exact distance (true, not squared), ties by id.
    pub neighbors: Vec<Neighbor>,
    pub stats: QueryStats,
    pub audit: Vec<SkipAudit>,
}

impl SearchOutput {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

/// Fixed-capacity list of the best PQ-scored points; each is popped once.
struct SearchList {
    cap: usize,
    items: Vec<(Neighbor, bool)>,
    cursor: usize,
}

impl SearchList {
    fn new(cap: usize) -> Self {
        SearchList {
            cap,
            items: Vec::with_capacity(cap + 1),
            cursor: 0,
        }
    }

    #[inline]
    fn insert(&mut self, nb: Neighbor) {
        if self.items.len() == self.cap && nb.cmp_key(&self.items[self.cap - 1].0) != Ordering::Less {
            return;
        }
        let at = self.items.partition_point(|(x, _)| x.cmp_key(&nb) == Ordering::Less);
        self.items.insert(at, (nb, false));
        self.items.truncate(self.cap);
        if at < self.cursor {
            self.cursor = at;
        }
    }

    fn pop_unchecked(&mut self) -> Option<u32> {
        while self.cursor < self.items.len() && self.items[self.cursor].1 {
            self.cursor += 1;
        }
        let item = self.items.get_mut(self.cursor)?;
        item.1 = true;
        Some(item.0.id)
    }
}

/// Disk candidate keyed by lower bound, popped smallest first.
#[derive(Clone, Copy, PartialEq)]
struct Cand {
    lb: f32,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lb.total_cmp(&other.lb).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Popped ids of a PQ-only traversal; no reads, no filtering.
pub(crate) fn traverse_candidates(graph: &NeighborGraph, codes: &PqCodes, lut: &QueryLut, l: usize) -> Vec<u32> {
    let mut seen = BitSet::new(graph.len());
    let mut list = SearchList::new(l);
    let entry = graph.entry();
    seen.set(entry as usize);
    list.insert(Neighbor::new(entry, lut.distance(codes.get(entry as usize))));
    let mut popped = Vec::new();
    while let Some(p) = list.pop_unchecked() {
        popped.push(p);
        for &v in graph.neighbors(p as usize) {
            if seen.insert(v as usize) {
                list.insert(Neighbor::new(v, lut.distance(codes.get(v as usize))));
            }
        }
    }
    popped
}

/// Modeled compute costs charged to the simulated clock.
struct Costs {
    adc: f64,
    lb: f64,
    exact: f64,
}

impl Costs {
    fn new(cfg: Option<SimConfig>, m: usize, d_lb: usize, dim: usize) -> Self {
        match cfg {
            None => Costs {
                adc: 0.0,
                lb: 0.0,
                exact: 0.0,
            },
            Some(c) => Costs {
                adc: m as f64 * c.ns_per_lookup,
                lb: d_lb as f64 * c.ns_per_dim,
                exact: dim as f64 * c.ns_per_dim,
            },
        }
    }
}

/// Seed for the simulated latency stream, derived from the query bytes.
fn query_seed(q: &[f32]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for x in q {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Exact top-K with a running threshold.
struct Results {
    k: usize,
    heap: BinaryHeap<Neighbor>,
    tau_trace: Vec<f32>,
}

impl Results {
    fn new(k: usize) -> Self {
        Results {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            tau_trace: Vec::new(),
        }
    }

    fn tau(&self) -> f32 {
        if self.heap.len() < self.k {
            f32::INFINITY
        } else {
            self.heap.peek().unwrap().distance
        }
    }

    fn offer(&mut self, nb: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(nb);
        } else if nb < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(nb);
        } else {
            return;
        }
        let t = self.tau();
        if t.is_finite() && self.tau_trace.last() != Some(&t) {
            self.tau_trace.push(t);
        }
    }

    fn into_sorted(self) -> (Vec<Neighbor>, Vec<f32>) {
        (self.heap.into_sorted_vec(), self.tau_trace)
    }
}

#[derive(Clone, Copy)]
enum Rule {
    /// Every candidate is read.
    None,
    /// Skip iff `LB >= tau`.
    Strict,
    /// Skip iff `LB > epsilon * tau`.
    Estimate(f32),
}

impl Rule {
    #[inline]
    fn threshold(self, tau: f32) -> f32 {
        match self {
            Rule::None | Rule::Strict => tau,
            Rule::Estimate(eps) => eps * tau,
        }
    }

    #[inline]
    fn skips(self, lb: f32, tau: f32) -> bool {
        match self {
            Rule::None => false,
            Rule::Strict => lb >= tau,
            Rule::Estimate(eps) => lb > eps * tau,
        }
    }
}

struct Query<'a> {
    index: &'a SkipDiskIndex,
    query: &'a [f32],
    reduced: Vec<f32>,
    lut: QueryLut,
    costs: Costs,
    results: Results,
    stats: QueryStats,
}

impl<'a> Query<'a> {
    fn new(index: &'a SkipDiskIndex, query: &'a [f32], k: usize, queue: &mut ReadQueue) -> Result<Self> {
        check_dim(index.dim(), query.len())?;
        if let Some(i) = query.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        queue.reset_clock(query_seed(query));
        queue.reset_stats();
        let d_pq = index.pq().dim();
        let d_piv = index.pivots().d_prefix();
        let reduced = index.pca().apply(query, d_pq.max(d_piv))?;
        let lut = index.pq().build_lut(&reduced[..d_pq])?;
        let sim = queue.sim_config();
        if let Some(c) = sim {
            let d = index.dim() as f64;
            queue.charge(d * reduced.len() as f64 * c.ns_per_dim + 256.0 * d_pq as f64 * c.ns_per_dim);
        }
        Ok(Query {
            index,
            query,
            lut,
            costs: Costs::new(sim, index.pq().m(), d_piv, index.dim()),
            reduced,
            results: Results::new(k),
            stats: QueryStats::default(),
        })
    }

    #[inline]
    fn adc(&mut self, queue: &mut ReadQueue, v: u32) -> Neighbor {
        self.stats.adc_computations += 1;
        queue.charge(self.costs.adc);
        Neighbor::new(v, self.lut.distance(self.index.codes().get(v as usize)))
    }

    fn absorb(&mut self, queue: &mut ReadQueue, done: Vec<Completion>) -> Result<()> {
        for c in done {
            let data = c.data?;
            self.stats.exact_distances += 1;
            queue.charge(self.costs.exact);
            let d = l2_sq(self.query, &data).sqrt();
            self.results.offer(Neighbor::new(c.id, d));
        }
        Ok(())
    }

    fn finish(mut self, queue: &ReadQueue, audit: Vec<SkipAudit>) -> SearchOutput {
        let io = queue.stats();
        self.stats.reads_issued = io.reads_issued;
        self.stats.reads_completed = io.reads_completed;
        self.stats.bytes_read = io.bytes_read;
        self.stats.sync_fallbacks = io.sync_fallbacks;
        self.stats.max_pending = queue.max_pending();
        self.stats.latency_ns = queue.now_ns();
        let (neighbors, trace) = self.results.into_sorted();
        self.stats.tau_trace = trace;
        SearchOutput {
            neighbors,
            stats: self.stats,
            audit,
        }
    }
}

impl SkipDiskIndex {
    fn rule(&self, params: &SearchParams) -> Result<Rule> {
        if !params.filter {
            return Ok(Rule::None);
        }
        Ok(match self.variant() {
            Variant::Est => {
                let eps = params
                    .epsilon_override
                    .or(self.calibration().map(|c| c.epsilon))
                    .ok_or_else(|| Error::param("estimation variant without epsilon"))?;
                Rule::Estimate(eps)
            }
            _ => Rule::Strict,
        })
    }

    /// Runs one query on a fresh queue from the index's I/O backend.
    pub fn search(&self, query: &[f32], params: &SearchParams) -> Result<SearchOutput> {
        params.validate()?;
        let mut queue = self.store().queue(self.io(), params.b)?;
        self.search_with_queue(query, params, &mut queue)
    }

    /// Like [`search`](Self::search), reusing a caller-owned queue whose depth
    /// must equal `params.b`.
    pub fn search_with_queue(&self, query: &[f32], params: &SearchParams, queue: &mut ReadQueue) -> Result<SearchOutput> {
        params.validate()?;
        if queue.depth() != params.b || queue.pending() != 0 {
            return Err(Error::param("queue depth must equal B and the queue must be idle"));
        }
        let rule = self.rule(params)?;
        let mut st = Query::new(self, query, params.k, queue)?;
        let graph = self.graph();
        let pivots = self.pivots();
        let d_piv = pivots.d_prefix();
        let mut seen = BitSet::new(self.len());
        let mut list = SearchList::new(params.l);
        let mut cands: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut audit = Vec::new();

        let entry = graph.entry();
        seen.set(entry as usize);
        let nb = st.adc(queue, entry);
        list.insert(nb);

        while let Some(p) = list.pop_unchecked() {
            st.stats.popped += 1;
            let done = queue.poll();
            st.absorb(queue, done)?;

            while !queue.is_full() {
                let Some(&Reverse(c)) = cands.peek() else { break };
                cands.pop();
                let tau = st.results.tau();
                if rule.skips(c.lb, tau) {
                    st.stats.filtered += 1;
                    queue.record_skip();
                    if params.audit {
                        audit.push(SkipAudit {
                            id: c.id,
                            lb: c.lb,
                            tau,
                            threshold: rule.threshold(tau),
                            during_drain: false,
                        });
                    }
                    break;
                }
                queue.issue(c.id)?;
            }

            for &v in graph.neighbors(p as usize) {
                if seen.insert(v as usize) {
                    let nb = st.adc(queue, v);
                    list.insert(nb);
                }
            }

            let lb = match rule {
                Rule::None => 0.0,
                _ => {
                    st.stats.lb_computations += 1;
                    queue.charge(st.costs.lb);
                    pivots.lower_bound_unchecked(&st.reduced[..d_piv], p as usize)
                }
            };
            st.stats.candidates += 1;
            cands.push(Reverse(Cand { lb, id: p }));
        }

        // drain: issue while the smallest bound passes, then empty the queue
        loop {
            let done = queue.poll();
            st.absorb(queue, done)?;
            while !queue.is_full() {
                let Some(&Reverse(c)) = cands.peek() else { break };
                let tau = st.results.tau();
                if rule.skips(c.lb, tau) {
                    // bounds are sorted and tau only shrinks: nothing left can pass
                    st.stats.drain_discarded += cands.len() as u64;
                    for Reverse(c) in cands.drain() {
                        queue.record_skip();
                        if params.audit {
                            audit.push(SkipAudit {
                                id: c.id,
                                lb: c.lb,
                                tau,
                                threshold: rule.threshold(tau),
                                during_drain: true,
                            });
                        }
                    }
                    break;
                }
                cands.pop();
                queue.issue(c.id)?;
            }
            if queue.pending() == 0 {
                if cands.is_empty() {
                    break;
                }
                continue;
            }
            let done = queue.wait();
            st.absorb(queue, done)?;
        }

        Ok(st.finish(queue, audit))
    }

    /// Synchronous traversal that reads every popped point before moving on.
    pub fn search_baseline(&self, query: &[f32], params: &SearchParams) -> Result<SearchOutput> {
        params.validate()?;
        let mut queue = self.store().queue(self.io(), 1)?;
        let mut st = Query::new(self, query, params.k, &mut queue)?;
        let graph = self.graph();
        let mut seen = BitSet::new(self.len());
        let mut list = SearchList::new(params.l);
        let entry = graph.entry();
        seen.set(entry as usize);
        let nb = st.adc(&mut queue, entry);
        list.insert(nb);
        while let Some(p) = list.pop_unchecked() {
            st.stats.popped += 1;
            st.stats.candidates += 1;
            queue.issue(p)?;
            let done = queue.drain();
            st.absorb(&mut queue, done)?;
            for &v in graph.neighbors(p as usize) {
                if seen.insert(v as usize) {
                    let nb = st.adc(&mut queue, v);
                    list.insert(nb);
                }
            }
        }
        Ok(st.finish(&queue, Vec::new()))
    }
}
