use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use skipdisk::analysis::{io_vs_epsilon, sample_pairs, tightness_curve};
use skipdisk::dataio::{gen_synthetic, read_vectors, split_queries, write_fvecs, SyntheticModel};
use skipdisk::search::{batch_bench, build_index, BenchMode, BenchReport};
use skipdisk::{GroundTruth, MemoryReport, SkipDiskIndex, Variant, VectorDataset};

use crate::config::RunConfig;
use crate::{AnalyzeArgs, CliError, GenArgs};

fn load_vectors(cfg: &RunConfig, key: &str, p: &Option<PathBuf>) -> Result<VectorDataset, CliError> {
    Ok(read_vectors(cfg.input(key, p)?)?)
}

fn load_index(cfg: &RunConfig) -> Result<SkipDiskIndex, CliError> {
    let path = cfg.input("index", &cfg.index_path)?;
    let store = cfg.store_for(&path);
    if !store.exists() {
        return Err(CliError::Config(format!("store path {} does not exist", store.display())));
    }
    Ok(SkipDiskIndex::load(&path, &store)?.with_io(cfg.io_backend()))
}

fn variant_index(index: &SkipDiskIndex, v: Variant) -> Result<SkipDiskIndex, CliError> {
    Ok(index.with_variant(v)?)
}

pub fn gen(args: &GenArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let model = match args.model.as_str() {
        "gaussian" => SyntheticModel::Gaussian,
        "clustered" => SyntheticModel::Clustered { k: args.clusters },
        m => return Err(CliError::Config(format!("model must be gaussian or clustered, got '{m}'"))),
    };
    let data = gen_synthetic(args.n, args.dim, cfg.seed, model)?;
    let path = cfg.output()?;
    write_fvecs(&data, &path)?;
    writeln!(out, "wrote {} x {} to {}", data.len(), data.dim(), path.display())?;
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn split(nq: usize, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_vectors(cfg, "dataset", &cfg.dataset)?;
    let (base, queries) = split_queries(&data, nq, cfg.seed)?;
    let prefix = cfg.output()?;
    let (bp, qp) = (with_suffix(&prefix, ".base.fvecs"), with_suffix(&prefix, ".queries.fvecs"));
    write_fvecs(&base, &bp)?;
    write_fvecs(&queries, &qp)?;
    writeln!(out, "base {} rows -> {}", base.len(), bp.display())?;
    writeln!(out, "queries {} rows -> {}", queries.len(), qp.display())?;
    Ok(())
}

pub fn truth(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let base = load_vectors(cfg, "dataset", &cfg.dataset)?;
    let queries = load_vectors(cfg, "queries", &cfg.queries)?;
    let t = GroundTruth::compute(&base, &queries, cfg.search.k)?;
    let path = cfg.output()?;
    t.write_ivecs(&path)?;
    writeln!(out, "truth for {} queries at k = {} -> {}", t.len(), t.k(), path.display())?;
    Ok(())
}

const MEMORY_ROWS: [&str; 8] = [
    "graph",
    "pq_codes",
    "pq_codebook",
    "pivots",
    "residuals",
    "resident_bitmap",
    "pca",
    "total",
];

fn memory_values(m: &MemoryReport) -> [usize; 8] {
    [
        m.graph,
        m.pq_codes,
        m.pq_codebook,
        m.pivots,
        m.residuals,
        m.resident_bitmap,
        m.pca,
        m.total(),
    ]
}

fn memory_json(m: &MemoryReport) -> Value {
    let mut obj = serde_json::Map::new();
    for (name, v) in MEMORY_ROWS.iter().zip(memory_values(m)) {
        obj.insert(name.to_string(), json!(v));
    }
    Value::Object(obj)
}

pub fn build(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_vectors(cfg, "dataset", &cfg.dataset)?;
    let index_path = cfg.output()?;
    let store_path = cfg.store_for(&index_path);
    let t = Instant::now();
    let index = build_index(&data, &cfg.index, cfg.seed, &store_path)?;
    index.save(&index_path)?;
    let c = index.config();
    writeln!(
        out,
        "built {} x {} as {} in {:.1}s: R = {}, L_build = {}, d_pq = {}, d_lb = {}, d_dade = {}",
        index.len(),
        index.dim(),
        index.variant(),
        t.elapsed().as_secs_f64(),
        c.max_degree,
        c.l_build,
        c.d_pq,
        c.d_lb,
        c.d_dade
    )?;
    writeln!(out, "resident pivots: {}", index.pivots().resident_count())?;
    if let Some(cal) = index.calibration() {
        writeln!(
            out,
            "estimation: epsilon = {:.4} at p_s = {} over {} pairs (prefix {})",
            cal.epsilon, cal.p_s, cal.sample_size, cal.d_prefix
        )?;
    }
    writeln!(out, "index -> {}\nstore -> {}", index_path.display(), store_path.display())?;

    let mut columns: Vec<(Variant, MemoryReport)> = Vec::new();
    for v in Variant::ALL {
        if v == Variant::Est && index.calibration().is_none() {
            continue;
        }
        columns.push((v, variant_index(&index, v)?.memory_report()));
    }
    write!(out, "\n{:<16}", "bytes")?;
    for (v, _) in &columns {
        write!(out, "{:>14}", v.name())?;
    }
    writeln!(out)?;
    let values: Vec<[usize; 8]> = columns.iter().map(|(_, m)| memory_values(m)).collect();
    for (row, name) in MEMORY_ROWS.iter().enumerate() {
        write!(out, "{name:<16}")?;
        for v in &values {
            write!(out, "{:>14}", v[row])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn search(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let mut index = load_index(cfg)?;
    if let Some(&v) = cfg.variants.first() {
        index = variant_index(&index, v)?;
    }
    let queries = load_vectors(cfg, "queries", &cfg.queries)?;
    let mut file;
    let sink: &mut dyn Write = match &cfg.out {
        Some(p) => {
            file = std::io::BufWriter::new(std::fs::File::create(p)?);
            &mut file
        }
        None => out,
    };
    for &l in &cfg.l_values {
        let params = skipdisk::SearchParams { l, ..cfg.search };
        for i in 0..queries.len() {
            let res = index.search(queries.row(i), &params)?;
            let pairs: Vec<String> = res
                .neighbors
                .iter()
                .map(|n| format!("{}:{:.6}", n.id, n.distance))
                .collect();
            writeln!(sink, "query {i} L={l}: {}", pairs.join(" "))?;
            let s = &res.stats;
            writeln!(
                sink,
                "stats {i} L={l}: candidates={} reads={} filtered={} drain_discarded={} exact={} latency_us={:.1}",
                s.candidates,
                s.reads_issued,
                s.filtered,
                s.drain_discarded,
                s.exact_distances,
                s.latency_ns as f64 / 1e3
            )?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn report_json(r: &BenchReport, variant: Variant) -> Value {
    json!({
        "label": r.label,
        "variant": variant.name(),
        "k": r.k,
        "l": r.l,
        "b": r.b,
        "queries": r.queries,
        "recall": r.recall,
        "latency_mean_us": r.latency.mean_ns / 1e3,
        "latency_p50_us": r.latency.p50_ns as f64 / 1e3,
        "latency_p99_us": r.latency.p99_ns as f64 / 1e3,
        "latency_p999_us": r.latency.p999_ns as f64 / 1e3,
        "mean_reads": r.mean_reads,
        "mean_candidates": r.mean_candidates,
        "mean_filtered": r.mean_filtered,
        "filtered_fraction": r.filtered_fraction,
        "mean_exact_distances": r.mean_exact_distances,
        "memory": memory_json(&r.memory),
        "memory_total": r.memory.total(),
        "io_mode": r.io_mode,
        "throughput_mode": r.throughput_mode,
    })
}

pub fn bench(with_baseline: bool, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let index = load_index(cfg)?;
    let queries = load_vectors(cfg, "queries", &cfg.queries)?;
    let truth = GroundTruth::read_ivecs(cfg.input("truth", &cfg.truth)?)?;
    let variants = if cfg.variants.is_empty() {
        vec![index.variant()]
    } else {
        cfg.variants.clone()
    };
    let mut jsonl = match &cfg.out {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    writeln!(
        out,
        "{:<11}{:>6}{:>9}{:>11}{:>11}{:>11}{:>12}{:>10}{:>9}{:>14}  io",
        "label", "L", "recall", "mean_us", "p50_us", "p99_us", "p99.9_us", "reads", "filt", "mem_bytes"
    )?;
    for (vi, &v) in variants.iter().enumerate() {
        let idx = variant_index(&index, v)?;
        for &l in &cfg.l_values {
            let params = skipdisk::SearchParams { l, ..cfg.search };
            let mut modes = vec![BenchMode::Filtered];
            if vi == 0 {
                modes.push(BenchMode::Unfiltered);
                if with_baseline {
                    modes.push(BenchMode::Baseline);
                }
            }
            for mode in modes {
                let r = batch_bench(&idx, &queries, &params, &truth, mode, cfg.threads)?;
                writeln!(
                    out,
                    "{:<11}{:>6}{:>9.4}{:>11.1}{:>11.1}{:>11.1}{:>12.1}{:>10.1}{:>9.3}{:>14}  {}{}",
                    r.label,
                    r.l,
                    r.recall,
                    r.latency.mean_ns / 1e3,
                    r.latency.p50_ns as f64 / 1e3,
                    r.latency.p99_ns as f64 / 1e3,
                    r.latency.p999_ns as f64 / 1e3,
                    r.mean_reads,
                    r.filtered_fraction,
                    r.memory.total(),
                    r.io_mode,
                    if r.throughput_mode { " (throughput)" } else { "" }
                )?;
                if let Some(w) = jsonl.as_mut() {
                    writeln!(w, "{}", report_json(&r, v))?;
                }
            }
        }
    }
    if let Some(mut w) = jsonl {
        w.flush()?;
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let index = load_index(cfg)?;
    let queries = load_vectors(cfg, "queries", &cfg.queries)?;
    let data = index.store().read_all()?;
    let dim = index.dim();
    let prefixes: Vec<usize> = match &args.prefixes {
        Some(p) => p
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("bad prefix '{s}': {e}"))))
            .collect::<Result<_, _>>()?,
        None => {
            let mut v: Vec<usize> = [dim / 8, dim / 4, dim / 2, dim].into_iter().filter(|&d| d > 0).collect();
            v.dedup();
            v
        }
    };
    let pairs = sample_pairs(&data, &queries, args.pairs, cfg.seed);
    let rows = tightness_curve(index.pca(), &data, &queries, &prefixes, &pairs, cfg.seed)?;
    writeln!(out, "lower-bound tightness over {} pairs (mean LB / distance)", pairs.len())?;
    writeln!(out, "{:>8}{:>12}{:>12}", "prefix", "bf16", "cluster256")?;
    for r in &rows {
        writeln!(out, "{:>8}{:>12.4}{:>12.4}", r.d_prefix, r.bf16_ratio, r.cluster_ratio)?;
    }

    match index.calibration() {
        Some(c) => writeln!(
            out,
            "\nestimation calibration: epsilon = {:.4}, p_s = {}, prefix = {}, pairs = {}",
            c.epsilon, c.p_s, c.d_prefix, c.sample_size
        )?,
        None => {
            writeln!(out, "\nestimation calibration: none stored")?;
            return Ok(());
        }
    }
    let eps: Vec<f32> = args
        .eps
        .split(',')
        .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("bad epsilon '{s}': {e}"))))
        .collect::<Result<_, _>>()?;
    let truth = match &cfg.truth {
        Some(_) => Some(GroundTruth::read_ivecs(cfg.input("truth", &cfg.truth)?)?),
        None => None,
    };
    let table = io_vs_epsilon(&index, &queries, &cfg.search, &eps, truth.as_ref())?;
    writeln!(out, "{:>8}{:>12}{:>12}{:>14}{:>10}", "epsilon", "reads", "filtered", "io_reduction", "recall")?;
    for r in table {
        let rec = r.recall.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:>8.3}{:>12.1}{:>12.3}{:>14.3}{:>10}",
            r.epsilon, r.mean_reads, r.filtered_fraction, r.io_reduction, rec
        )?;
    }
    Ok(())
}

pub fn dims(fraction: f64, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let data = load_vectors(cfg, "dataset", &cfg.dataset)?;
    let pca = skipdisk::transforms::fit_pca(&data)?;
    writeln!(
        out,
        "{} of {} dimensions explain {:.0}% of the variance",
        pca.dims_for_variance(fraction),
        pca.dim(),
        fraction * 100.0
    )?;
    Ok(())
}
