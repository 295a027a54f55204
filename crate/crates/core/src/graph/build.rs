//! Vamana construction: greedy search plus alpha-robust pruning.

use std::cmp::Ordering;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{NeighborGraph, MAX_DEGREE_LIMIT};
use crate::dataio::{Neighbor, VectorDataset};
use crate::error::{Error, Result};
use crate::transforms::distance::l2_sq;

/// Points considered when locating the medoid.
pub const MEDOID_SAMPLE: usize = 100_000;
/// Insertions searched and pruned against the same snapshot.
const BATCH: usize = 256;
const PASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildParams {
    pub max_degree: usize,
    pub l_build: usize,
    pub alpha: f32,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            max_degree: 64,
            l_build: 200,
            alpha: 1.2,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 2 || self.max_degree > MAX_DEGREE_LIMIT {
            return Err(Error::param(format!("R = {} outside 2..=255", self.max_degree)));
        }
        if self.l_build < self.max_degree {
            return Err(Error::param(format!(
                "L_build = {} is smaller than R = {}",
                self.l_build, self.max_degree
            )));
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return Err(Error::param(format!("alpha = {} must be >= 1", self.alpha)));
        }
        Ok(())
    }
}

/// Point closest to the centroid of an evenly strided sample of at most
/// [`MEDOID_SAMPLE`] points; ties go to the lowest id.
pub fn medoid(dataset: &VectorDataset) -> Result<u32> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::param("medoid of an empty dataset"));
    }
    let step = n.div_ceil(MEDOID_SAMPLE);
    let sample: Vec<usize> = (0..n).step_by(step).collect();
    let dim = dataset.dim();
    let mut sum = vec![0.0f64; dim];
    for &i in &sample {
        for (s, &x) in sum.iter_mut().zip(dataset.row(i)) {
            *s += x as f64;
        }
    }
    let centroid: Vec<f64> = sum.iter().map(|s| s / sample.len() as f64).collect();
    let mut best = (sample[0], f64::INFINITY);
    for &i in &sample {
        let d: f64 = dataset
            .row(i)
            .iter()
            .zip(&centroid)
            .map(|(&x, c)| (x as f64 - c).powi(2))
            .sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0 as u32)
}

/// Alpha-robust pruning. `candidates` carry squared distances to the target
/// and must be sorted ascending; the target itself must not be among them.
pub fn robust_prune(data: &VectorDataset, candidates: &[Neighbor], alpha: f32, max_degree: usize) -> Vec<u32> {
    let a2 = alpha * alpha;
    let mut removed = vec![false; candidates.len()];
    let mut kept = Vec::with_capacity(max_degree);
    for i in 0..candidates.len() {
        if removed[i] {
            continue;
        }
        let c = candidates[i].id;
        kept.push(c);
        if kept.len() == max_degree {
            break;
        }
        let cv = data.row(c as usize);
        for j in i + 1..candidates.len() {
            if !removed[j] {
                let d = l2_sq(cv, data.row(candidates[j].id as usize));
                if a2 * d <= candidates[j].distance {
                    removed[j] = true;
                }
            }
        }
    }
    kept
}

/// Per-thread visit marks reused across searches.
struct Marks {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Marks {
    fn new(n: usize) -> Self {
        Marks {
            stamp: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn insert(&mut self, i: usize) -> bool {
        let fresh = self.stamp[i] != self.epoch;
        self.stamp[i] = self.epoch;
        fresh
    }
}

fn by_dist(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.cmp_key(b)
}

/// Beam search with exact distances. Returns the final list (at most `l`
/// entries) and every expanded node, both with squared distances.
fn beam_search<'a, F>(
    neighbors: F,
    data: &VectorDataset,
    start: u32,
    query: &[f32],
    l: usize,
    marks: &mut Marks,
) -> (Vec<Neighbor>, Vec<Neighbor>)
where
    F: Fn(usize) -> &'a [u32],
{
    marks.reset();
    marks.insert(start as usize);
    let mut list: Vec<(Neighbor, bool)> = vec![(Neighbor::new(start, l2_sq(query, data.row(start as usize))), false)];
    let mut expanded = Vec::new();
    while let Some(pos) = list.iter().position(|(_, done)| !done) {
        list[pos].1 = true;
        let p = list[pos].0;
        expanded.push(p);
        for &v in neighbors(p.id as usize) {
            if !marks.insert(v as usize) {
                continue;
            }
            let nb = Neighbor::new(v, l2_sq(query, data.row(v as usize)));
            if list.len() == l && by_dist(&nb, &list[l - 1].0) != Ordering::Less {
                continue;
            }
            let at = list.partition_point(|(x, _)| by_dist(x, &nb) == Ordering::Less);
            list.insert(at, (nb, false));
            list.truncate(l);
        }
    }
    (list.into_iter().map(|(nb, _)| nb).collect(), expanded)
}

/// Greedy search over a built graph with exact distances; returns up to `l`
/// nearest points found, by squared distance.
pub fn greedy_search(graph: &NeighborGraph, data: &VectorDataset, query: &[f32], l: usize) -> Result<Vec<Neighbor>> {
    if graph.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            got: data.len(),
        });
    }
    crate::error::check_dim(data.dim(), query.len())?;
    if l == 0 || graph.is_empty() {
        return Ok(Vec::new());
    }
    let mut marks = Marks::new(graph.len());
    Ok(beam_search(|i| graph.neighbors(i), data, graph.entry(), query, l, &mut marks).0)
}

fn sorted_candidates(data: &VectorDataset, target: usize, ids: impl Iterator<Item = u32>) -> Vec<Neighbor> {
    let t = data.row(target);
    let mut c: Vec<Neighbor> = ids
        .filter(|&v| v as usize != target)
        .map(|v| Neighbor::new(v, l2_sq(t, data.row(v as usize))))
        .collect();
    c.sort_by(by_dist);
    c.dedup_by_key(|nb| nb.id);
    c
}

pub fn build_vamana(dataset: &VectorDataset, params: BuildParams, seed: u64) -> Result<NeighborGraph> {
    params.validate()?;
    let n = dataset.len();
    if n < 2 {
        return Err(Error::param(format!("graph build needs at least 2 points, got {n}")));
    }
    let r = params.max_degree;
    let entry = medoid(dataset)?;
    if n - 1 <= r {
        let lists: Vec<Vec<u32>> = (0..n as u32)
            .map(|i| (0..n as u32).filter(|&j| j != i).collect())
            .collect();
        return NeighborGraph::from_lists(&lists, r, entry);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            index::sample(&mut rng, n - 1, r)
                .into_iter()
                .map(|j| if j >= i { j as u32 + 1 } else { j as u32 })
                .collect()
        })
        .collect();

    for _ in 0..PASSES {
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(BATCH) {
            let snapshot = &adj;
            let updates: Vec<(u32, Vec<u32>)> = batch
                .par_iter()
                .map_init(
                    || Marks::new(n),
                    |marks, &p| {
                        let (_, visited) =
                            beam_search(|i| &snapshot[i], dataset, entry, dataset.row(p as usize), params.l_build, marks);
                        let ids = visited.iter().map(|nb| nb.id).chain(snapshot[p as usize].iter().copied());
                        let cand = sorted_candidates(dataset, p as usize, ids);
                        (p, robust_prune(dataset, &cand, params.alpha, r))
                    },
                )
                .collect();

            let mut reverse: Vec<(u32, u32)> = Vec::new();
            for (p, list) in updates {
                reverse.extend(list.iter().map(|&t| (t, p)));
                adj[p as usize] = list;
            }
            reverse.sort_unstable();
            let groups: Vec<&[(u32, u32)]> = reverse.chunk_by(|a, b| a.0 == b.0).collect();
            let snapshot = &adj;
            let merged: Vec<(u32, Vec<u32>)> = groups
                .par_iter()
                .filter_map(|g| {
                    let t = g[0].0;
                    let cur = &snapshot[t as usize];
                    let mut list = cur.clone();
                    for &(_, s) in g.iter() {
                        if !list.contains(&s) {
                            list.push(s);
                        }
                    }
                    if list.len() == cur.len() {
                        return None;
                    }
                    if list.len() > r {
                        let cand = sorted_candidates(dataset, t as usize, list.into_iter());
                        list = robust_prune(dataset, &cand, params.alpha, r);
                    }
                    Some((t, list))
                })
                .collect();
            for (t, list) in merged {
                adj[t as usize] = list;
            }
        }
    }
    repair_reachability(dataset, &mut adj, entry, params.l_build);
    NeighborGraph::from_lists(&adj, r, entry)
}

fn bfs_marks(adj: &[Vec<u32>], from: u32, seen: &mut [bool]) {
    let mut stack = vec![from];
    seen[from as usize] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v as usize] {
            if !seen[u as usize] {
                seen[u as usize] = true;
                stack.push(u);
            }
        }
    }
}

/// Links every node unreachable from `entry` into the graph. Pruning keeps
/// only the closest points, so nodes that are nobody's near neighbor can end
/// up with no in-edges. Each such node takes the slot of the farthest
/// redundant out-edge of its nearest reachable node.
fn repair_reachability(dataset: &VectorDataset, adj: &mut [Vec<u32>], entry: u32, l: usize) {
    let n = adj.len();
    for _ in 0..4 {
        let mut seen = vec![false; n];
        bfs_marks(adj, entry, &mut seen);
        if seen.iter().all(|&s| s) {
            return;
        }
        let mut indeg = vec![0u32; n];
        for list in adj.iter() {
            for &v in list {
                indeg[v as usize] += 1;
            }
        }
        let mut marks = Marks::new(n);
        for u in 0..n {
            if seen[u] {
                continue;
            }
            let (_, expanded) = beam_search(|i| &adj[i], dataset, entry, dataset.row(u), l, &mut marks);
            let mut parents: Vec<Neighbor> = expanded.into_iter().filter(|nb| seen[nb.id as usize]).collect();
            parents.sort_by(by_dist);
            let slot = parents.iter().find_map(|p| {
                let list = &adj[p.id as usize];
                let pv = dataset.row(p.id as usize);
                list.iter()
                    .enumerate()
                    .filter(|&(_, &w)| indeg[w as usize] > 1 && w as usize != u)
                    .max_by(|a, b| l2_sq(pv, dataset.row(*a.1 as usize)).total_cmp(&l2_sq(pv, dataset.row(*b.1 as usize))))
                    .map(|(k, _)| (p.id as usize, k))
            });
            let Some((p, k)) = slot else { continue };
            if adj[p].contains(&(u as u32)) {
                continue;
            }
            let w = adj[p][k];
            indeg[w as usize] -= 1;
            indeg[u] += 1;
            adj[p][k] = u as u32;
            bfs_marks(adj, u as u32, &mut seen);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{brute_force_knn, gen_synthetic, SyntheticModel};
    use crate::graph::indegree_counts;
    use proptest::prelude::*;

    fn ds(rows: &[&[f32]]) -> VectorDataset {
        VectorDataset::from_rows(rows).unwrap()
    }

    #[test]
    fn medoid_small_cases() {
        assert_eq!(medoid(&ds(&[&[0.0, 0.0], &[10.0, 0.0], &[5.0, 0.0]])).unwrap(), 2);
        assert_eq!(medoid(&ds(&[&[3.0]])).unwrap(), 0);
    }

    #[test]
    fn medoid_matches_exhaustive_scan() {
        let d = gen_synthetic(3000, 8, 5, SyntheticModel::Gaussian).unwrap();
        let mut c = vec![0.0f64; 8];
        for r in d.rows() {
            for (a, &x) in c.iter_mut().zip(r) {
                *a += x as f64 / 3000.0;
            }
        }
        let mut best = (0, f64::INFINITY);
        for (i, r) in d.rows().enumerate() {
            let dist: f64 = r.iter().zip(&c).map(|(&x, m)| (x as f64 - m).powi(2)).sum();
            if dist < best.1 {
                best = (i, dist);
            }
        }
        assert_eq!(medoid(&d).unwrap() as usize, best.0);
    }

    #[test]
    fn params_validation() {
        let ok = BuildParams {
            max_degree: 4,
            l_build: 4,
            alpha: 1.0,
        };
        assert!(ok.validate().is_ok());
        assert!(BuildParams { max_degree: 1, ..ok }.validate().is_err());
        assert!(BuildParams { l_build: 3, ..ok }.validate().is_err());
        assert!(BuildParams { alpha: 0.9, ..ok }.validate().is_err());
        assert!(BuildParams { alpha: f32::NAN, ..ok }.validate().is_err());
    }

    #[test]
    fn tiny_instance_is_complete() {
        let d = ds(&[&[0.0], &[1.0], &[2.0]]);
        let p = BuildParams {
            max_degree: 2,
            l_build: 2,
            alpha: 1.2,
        };
        let g = build_vamana(&d, p, 1).unwrap();
        assert_eq!(indegree_counts(&g), vec![2, 2, 2]);
        for i in 0..3 {
            assert_eq!(g.degree(i), 2);
        }
    }

    #[test]
    fn prune_far_candidates_all_kept() {
        let d = ds(&[&[0.0, 0.0], &[10.0, 0.0], &[0.0, 10.0], &[-10.0, 0.0]]);
        let cand = sorted_candidates(&d, 0, 1..4);
        assert_eq!(robust_prune(&d, &cand, 1.2, 3).len(), 3);
    }

    #[test]
    fn prune_drops_duplicates() {
        let d = ds(&[&[0.0], &[1.0], &[1.0]]);
        let cand = sorted_candidates(&d, 0, 1..3);
        assert_eq!(robust_prune(&d, &cand, 1.0, 2), vec![1]);
    }

    proptest! {
        #[test]
        fn prune_subset_and_keeps_nearest(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f32..5.0, 3), 2..30),
            r in 1usize..8,
            alpha in 1.0f32..2.0,
        ) {
            let d = VectorDataset::from_rows(&pts).unwrap();
            let cand = sorted_candidates(&d, 0, 1..pts.len() as u32);
            let kept = robust_prune(&d, &cand, alpha, r);
            prop_assert!(kept.len() <= r);
            prop_assert_eq!(kept[0], cand[0].id);
            for k in &kept {
                prop_assert!(cand.iter().any(|c| c.id == *k));
            }
        }
    }

    #[test]
    fn build_invariants_and_determinism() {
        let d = gen_synthetic(1500, 16, 3, SyntheticModel::Gaussian).unwrap();
        let p = BuildParams {
            max_degree: 12,
            l_build: 24,
            alpha: 1.2,
        };
        let a = build_vamana(&d, p, 9).unwrap();
        let b = build_vamana(&d, p, 9).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let reach = a.reachable_from_entry();
        assert!(reach as f64 >= 0.99 * 1500.0, "{reach}");
    }

    #[test]
    fn greedy_search_finds_near_points() {
        let all = gen_synthetic(10_100, 32, 11, SyntheticModel::Gaussian).unwrap();
        let base = all.select(&(0..10_000).collect::<Vec<_>>()).unwrap();
        let p = BuildParams {
            max_degree: 32,
            l_build: 64,
            alpha: 1.2,
        };
        let g = build_vamana(&base, p, 4).unwrap();
        let mut hits = 0;
        for qi in 10_000..10_100 {
            let q = all.row(qi);
            let truth: Vec<u32> = brute_force_knn(&base, q, 100).unwrap().iter().map(|nb| nb.id).collect();
            let found = greedy_search(&g, &base, q, 64).unwrap();
            if truth.contains(&found[0].id) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}");
    }
}
