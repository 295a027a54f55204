//! Index file: a header with a section table, then one section per
//! structure. Each section starts with its own magic and payload length.
//! Integers and floats are little-endian.

use std::sync::Arc;

use super::{Core, IndexConfig, SkipDiskIndex, Variant};
use crate::codec::{Reader, Writer};
use crate::diskstore::{DiskStore, IoBackend, SimConfig};
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::pivot::{EstimationCalibration, PivotStore};
use crate::quantizer::{PqCodebook, PqCodes, PQ_CENTROIDS};
use crate::transforms::{Bf16, PcaModel};

pub const INDEX_MAGIC: [u8; 4] = *b"SKIX";
pub const INDEX_VERSION: u32 = 1;

const CONFIG: [u8; 4] = *b"SKCF";
const PCA: [u8; 4] = *b"SKPC";
const PQ: [u8; 4] = *b"SKPQ";
const GRAPH: [u8; 4] = *b"SKGR";
const PIVOTS: [u8; 4] = *b"SKPV";
const CALIB: [u8; 4] = *b"SKEC";
const ORDER: [[u8; 4]; 6] = [CONFIG, PCA, PQ, GRAPH, PIVOTS, CALIB];

fn encode_config(c: &IndexConfig) -> Vec<u8> {
    let mut w = Writer::default();
    for v in [c.d_pq, c.d_lb, c.d_dade, c.pq_sub_dim, c.pq_iters, c.max_degree, c.l_build] {
        w.u64(v as u64);
    }
    w.f32(c.alpha);
    w.u8(c.variant.code());
    w.f64(c.keep_fraction);
    w.f32(c.p_s);
    w.buf
}

fn decode_config(b: &[u8]) -> Result<IndexConfig> {
    let mut r = Reader::new(b);
    let mut v = [0usize; 7];
    for x in &mut v {
        *x = r.usize()?;
    }
    let alpha = r.f32()?;
    let variant = Variant::from_code(r.u8()?).ok_or_else(|| Error::format("unknown variant code"))?;
    let keep_fraction = r.f64()?;
    let p_s = r.f32()?;
    r.finish()?;
    Ok(IndexConfig {
        d_pq: v[0],
        d_lb: v[1],
        d_dade: v[2],
        pq_sub_dim: v[3],
        pq_iters: v[4],
        max_degree: v[5],
        l_build: v[6],
        alpha,
        variant,
        keep_fraction,
        p_s,
    })
}

fn encode_pca(p: &PcaModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(p.dim() as u32);
    w.f32s(p.mean());
    w.f32s(p.eigenvalues());
    w.f32s(p.rotation());
    w.buf
}

fn decode_pca(b: &[u8]) -> Result<PcaModel> {
    let mut r = Reader::new(b);
    let d = r.u32()? as usize;
    let mean = r.f32s(d)?;
    let eig = r.f32s(d)?;
    let rot = r.f32s(d.checked_mul(d).ok_or_else(|| Error::format("PCA dimension overflow"))?)?;
    r.finish()?;
    PcaModel::from_parts(mean, rot, eig)
}

fn encode_pq(pq: &PqCodebook, codes: &PqCodes) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(pq.m() as u32);
    w.u32(pq.sub_dim() as u32);
    w.f32s(pq.centroids());
    w.u64(codes.len() as u64);
    w.bytes(codes.as_bytes());
    w.buf
}

fn decode_pq(b: &[u8]) -> Result<(PqCodebook, PqCodes)> {
    let mut r = Reader::new(b);
    let m = r.u32()? as usize;
    let sub = r.u32()? as usize;
    let cents = r.f32s(m * PQ_CENTROIDS * sub)?;
    let n = r.usize()?;
    let codes = r.take(n.checked_mul(m).ok_or_else(|| Error::format("PQ code overflow"))?)?.to_vec();
    r.finish()?;
    Ok((PqCodebook::from_parts(m, sub, cents)?, PqCodes::from_parts(m, codes)?))
}

fn encode_graph(g: &NeighborGraph) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(g.len() as u64);
    w.u32(g.max_degree() as u32);
    w.u32(g.entry());
    let r = g.max_degree();
    for i in 0..g.len() {
        // row: length byte padded to a word, then R ids
        w.u32(g.degree(i) as u32);
        w.u32s(&g.id_table()[i * r..(i + 1) * r]);
    }
    w.buf
}

fn decode_graph(b: &[u8]) -> Result<NeighborGraph> {
    let mut rd = Reader::new(b);
    let n = rd.usize()?;
    let r = rd.u32()? as usize;
    let entry = rd.u32()?;
    let mut ids = Vec::with_capacity(n.saturating_mul(r).min(b.len() / 4));
    let mut lens = Vec::with_capacity(n.min(b.len()));
    for _ in 0..n {
        let len = rd.u32()?;
        if len as usize > r {
            return Err(Error::format("graph row longer than R"));
        }
        lens.push(len as u8);
        ids.extend(rd.u32s(r)?);
    }
    rd.finish()?;
    NeighborGraph::from_parts(r, ids, lens, entry)
}

fn encode_pivots(p: &PivotStore) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(p.len() as u64);
    w.u32(p.d_prefix() as u32);
    w.u64(p.resident_count() as u64);
    w.u8(p.bf16_pivots().is_some() as u8);
    match p.resident_words() {
        Some(words) => {
            w.u8(1);
            for &x in words {
                w.u64(x);
            }
        }
        None => w.u8(0),
    }
    match p.bf16_pivots() {
        Some(piv) => {
            w.f32s(p.residuals());
            for b in piv {
                w.buf.extend_from_slice(&b.to_bits().to_le_bytes());
            }
        }
        None => w.f32s(p.f32_pivots().unwrap()),
    }
    w.buf
}

fn decode_pivots(b: &[u8]) -> Result<PivotStore> {
    let mut r = Reader::new(b);
    let n = r.usize()?;
    let d = r.u32()? as usize;
    let resident = r.usize()?;
    let is_bf16 = r.u8()? == 1;
    let words = match r.u8()? {
        0 => None,
        _ => Some((0..n.div_ceil(64)).map(|_| r.u64()).collect::<Result<Vec<u64>>>()?),
    };
    let count = resident.checked_mul(d).ok_or_else(|| Error::format("pivot size overflow"))?;
    let store = if is_bf16 {
        let residuals = r.f32s(resident)?;
        let raw = r.take(count * 2)?;
        let piv = raw
            .chunks_exact(2)
            .map(|c| Bf16::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        PivotStore::from_parts(n, d, words, None, Some((piv, residuals)))?
    } else {
        PivotStore::from_parts(n, d, words, Some(r.f32s(count)?), None)?
    };
    r.finish()?;
    if store.resident_count() != resident {
        return Err(Error::format("resident count disagrees with bitmap"));
    }
    Ok(store)
}

fn encode_calibration(c: Option<&EstimationCalibration>) -> Vec<u8> {
    let mut w = Writer::default();
    match c {
        None => w.u8(0),
        Some(c) => {
            w.u8(1);
            w.f32(c.epsilon);
            w.f32(c.p_s);
            w.u32(c.d_prefix as u32);
            w.u64(c.sample_size as u64);
        }
    }
    w.buf
}

fn decode_calibration(b: &[u8]) -> Result<Option<EstimationCalibration>> {
    let mut r = Reader::new(b);
    let c = match r.u8()? {
        0 => None,
        _ => {
            let eps = r.f32()?;
            let p_s = r.f32()?;
            let d = r.u32()? as usize;
            let s = r.usize()?;
            Some(EstimationCalibration::new(eps, p_s, d, s)?)
        }
    };
    r.finish()?;
    Ok(c)
}

pub(super) fn encode_index(index: &SkipDiskIndex) -> Vec<u8> {
    let sections = [
        encode_config(&index.config()),
        encode_pca(index.pca()),
        encode_pq(index.pq(), index.codes()),
        encode_graph(index.graph()),
        encode_pivots(index.pivots()),
        encode_calibration(index.calibration()),
    ];
    let header_len = 4 + 4 + 8 + 4 + 4 + ORDER.len() * (4 + 8 + 8);
    let mut w = Writer::default();
    w.bytes(&INDEX_MAGIC);
    w.u32(INDEX_VERSION);
    w.u64(index.len() as u64);
    w.u32(index.dim() as u32);
    w.u32(ORDER.len() as u32);
    let mut offset = header_len as u64;
    for (magic, body) in ORDER.iter().zip(&sections) {
        w.bytes(magic);
        w.u64(offset);
        w.u64(body.len() as u64 + 12);
        offset += body.len() as u64 + 12;
    }
    for (magic, body) in ORDER.iter().zip(&sections) {
        w.bytes(magic);
        w.u64(body.len() as u64);
        w.bytes(body);
    }
    w.buf
}

pub(super) fn decode_index(bytes: &[u8], store: DiskStore) -> Result<SkipDiskIndex> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| Error::format("index file too short"))? != INDEX_MAGIC {
        return Err(Error::format("not an index file (bad magic)"));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::VersionMismatch {
            expected: INDEX_VERSION,
            found: version,
        });
    }
    let n = r.usize()?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut bodies: Vec<&[u8]> = Vec::with_capacity(ORDER.len());
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        table.push((magic, r.usize()?, r.usize()?));
    }
    for want in ORDER {
        let &(_, off, len) = table
            .iter()
            .find(|(m, _, _)| *m == want)
            .ok_or_else(|| Error::format(format!("missing section {}", String::from_utf8_lossy(&want))))?;
        let sec = off
            .checked_add(len)
            .and_then(|end| bytes.get(off..end))
            .ok_or_else(|| Error::format("section out of bounds"))?;
        let mut sr = Reader::new(sec);
        if sr.take(4)? != want || sr.usize()? + 12 != len {
            return Err(Error::format("corrupt section header"));
        }
        bodies.push(&sec[12..]);
    }
    let config = decode_config(bodies[0])?;
    let pca = decode_pca(bodies[1])?;
    let (pq, codes) = decode_pq(bodies[2])?;
    let graph = decode_graph(bodies[3])?;
    let pivots = decode_pivots(bodies[4])?;
    let calibration = decode_calibration(bodies[5])?;
    if pca.dim() != dim || store.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if pca.dim() != dim { pca.dim() } else { store.dim() },
        });
    }
    if graph.len() != n || codes.len() != n || pivots.len() != n || store.len() != n {
        return Err(Error::format("index structures disagree on the number of points"));
    }
    if pq.dim() > dim || pivots.d_prefix() > dim {
        return Err(Error::format("prefix longer than the dimension"));
    }
    Ok(SkipDiskIndex {
        variant: config.variant,
        core: Arc::new(Core {
            config,
            pca,
            pq,
            codes,
            graph,
            calibration,
            store,
        }),
        pivots: Arc::new(pivots),
        io: IoBackend::Simulated(SimConfig::default()),
    })
}
