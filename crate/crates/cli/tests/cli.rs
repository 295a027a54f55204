use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skipdisk::dataio::{brute_force_knn, read_fvecs};

fn skipdisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skipdisk"))
        .args(args)
        .env_remove("SKIPDISK_K")
        .output()
        .expect("run skipdisk")
}

fn ok(args: &[&str]) -> String {
    let out = skipdisk(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small clustered dataset split into base and queries, with truth and an index.
struct Small {
    dir: tempfile::TempDir,
    base: PathBuf,
    queries: PathBuf,
    truth: PathBuf,
    index: PathBuf,
}

fn small() -> Small {
    let dir = tempfile::tempdir().unwrap();
    let all = dir.path().join("all.fvecs");
    ok(&["gen", "--n", "2040", "--dim", "16", "--model", "clustered", "--clusters", "8", "--seed", "3", "--out", s(&all)]);
    let prefix = dir.path().join("d");
    ok(&["split", "--dataset", s(&all), "--nq", "40", "--seed", "4", "--out", s(&prefix)]);
    let base = dir.path().join("d.base.fvecs");
    let queries = dir.path().join("d.queries.fvecs");
    let truth = dir.path().join("truth.ivecs");
    ok(&["truth", "--dataset", s(&base), "--queries", s(&queries), "--k", "10", "--out", s(&truth)]);
    let index = dir.path().join("idx");
    let report = ok(&[
        "build", "--dataset", s(&base), "--out", s(&index), "--r", "12", "--l-build", "24", "--dlb", "12", "--ddade", "8",
    ]);
    assert!(report.contains("graph"), "{report}");
    Small {
        dir,
        base,
        queries,
        truth,
        index,
    }
}

#[test]
fn build_search_bench_analyze() {
    let f = small();
    let data = read_fvecs(&f.base).unwrap();
    let queries = read_fvecs(&f.queries).unwrap();

    // K = 1 with a dataset row as the query finds that row
    let self_q = f.dir.path().join("self.fvecs");
    skipdisk::dataio::write_fvecs(&data.select(&[123]).unwrap(), &self_q).unwrap();
    let out = ok(&["search", "--index", s(&f.index), "--queries", s(&self_q), "--k", "1", "--l", "10"]);
    assert!(out.lines().next().unwrap().ends_with(": 123:0.000000"), "{out}");

    let out = ok(&["search", "--index", s(&f.index), "--queries", s(&f.queries), "--k", "5", "--l", "30"]);
    let mut queries_seen = 0;
    for line in out.lines() {
        let (head, body) = line.split_once(": ").unwrap();
        let qi: usize = head.split_whitespace().nth(1).unwrap().parse().unwrap();
        if head.starts_with("query") {
            queries_seen += 1;
            // each printed distance is the exact distance to the printed id
            let mut prev = 0.0;
            for pair in body.split(' ') {
                let (id, d) = pair.split_once(':').unwrap();
                let (id, d): (usize, f64) = (id.parse().unwrap(), d.parse().unwrap());
                let exact = data
                    .row(id)
                    .iter()
                    .zip(queries.row(qi))
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - exact).abs() <= 1e-4 * exact + 1e-6, "{d} vs {exact}");
                assert!(d >= prev);
                prev = d;
            }
            let best = brute_force_knn(&data, queries.row(qi), 1).unwrap()[0].distance as f64;
            assert!(prev >= best.sqrt() - 1e-4);
        } else {
            let field = |name: &str| -> u64 {
                body.split(' ')
                    .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
                    .unwrap()
                    .parse()
                    .unwrap()
            };
            assert_eq!(
                field("candidates"),
                field("filtered") + field("reads") + field("drain_discarded")
            );
        }
    }
    assert_eq!(queries_seen, 40);

    let jsonl = f.dir.path().join("bench.jsonl");
    let table = ok(&[
        "bench", "--index", s(&f.index), "--queries", s(&f.queries), "--truth", s(&f.truth), "--k", "10", "--l", "20",
        "--l", "50", "--l", "100", "--b", "8", "--out", s(&jsonl),
    ]);
    assert!(table.contains("unfiltered"));
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(&jsonl)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 6);
    let pick = |label: &str| -> Vec<&serde_json::Value> { rows.iter().filter(|r| r["label"] == label).collect() };
    let (pb, unf) = (pick("pb"), pick("unfiltered"));
    assert_eq!(pb.len(), 3);
    for w in pb.windows(2) {
        assert!(w[1]["recall"].as_f64().unwrap() >= w[0]["recall"].as_f64().unwrap() - 0.002);
    }
    for (a, b) in pb.iter().zip(&unf) {
        assert_eq!(a["l"], b["l"]);
        assert!(a["mean_reads"].as_f64().unwrap() <= b["mean_reads"].as_f64().unwrap());
        let ff = a["filtered_fraction"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&ff));
        assert_eq!(a["io_mode"], "sim");
    }

    let out = ok(&[
        "analyze", "--index", s(&f.index), "--queries", s(&f.queries), "--pairs", "3000", "--prefixes", "4,8,16",
        "--eps", "1.0,0.8", "--truth", s(&f.truth), "--l", "30",
    ]);
    let ratios: Vec<(f64, f64)> = out
        .lines()
        .filter_map(|l| {
            let v: Vec<&str> = l.split_whitespace().collect();
            (v.len() == 3 && v[0].parse::<usize>().is_ok()).then(|| (v[1].parse().unwrap(), v[2].parse().unwrap()))
        })
        .collect();
    assert_eq!(ratios.len(), 3, "{out}");
    for w in ratios.windows(2) {
        assert!(w[1].0 >= w[0].0 - 1e-9);
    }
    assert!(ratios[2].0 >= 0.99);
    assert!(ratios.iter().all(|(bf, cl)| bf > cl));
    assert!(out.contains("epsilon"));

    let out = ok(&["dims", "--dataset", s(&f.base), "--fraction", "0.8"]);
    assert!(out.contains("of 16 dimensions"));

    if let Some(py) = python() {
        let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/plot_bench.py");
        let st = Command::new(py)
            .arg(&script)
            .arg("--roundtrip")
            .arg(&jsonl)
            .status()
            .unwrap();
        assert!(st.success());
    }
}

fn python() -> Option<&'static str> {
    Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| "python3")
}

#[test]
fn config_file_and_environment() {
    let f = small();
    let cfg = f.dir.path().join("run.cfg");
    let inc = f.dir.path().join("paths.cfg");
    std::fs::write(&inc, format!("index = {}\nqueries = {}\n", s(&f.index), s(&f.queries))).unwrap();
    std::fs::write(&cfg, "include = paths.cfg\nk = 4\nl = 20\n").unwrap();
    let out = ok(&["search", "--config", s(&cfg)]);
    assert_eq!(out.lines().next().unwrap().split(": ").nth(1).unwrap().split(' ').count(), 4);

    let out = Command::new(env!("CARGO_BIN_EXE_skipdisk"))
        .args(["search", "--config", s(&cfg)])
        .env("SKIPDISK_K", "2")
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap().split(": ").nth(1).unwrap().split(' ').count(), 2);

    // flags beat the environment
    let out = Command::new(env!("CARGO_BIN_EXE_skipdisk"))
        .args(["search", "--config", s(&cfg), "--k", "3"])
        .env("SKIPDISK_K", "2")
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap().split(": ").nth(1).unwrap().split(' ').count(), 3);
}

#[test]
fn exit_codes() {
    let f = small();
    let code = |args: &[&str]| skipdisk(args).status.code().unwrap();
    assert_eq!(code(&["build", "--dataset", "/nonexistent.fvecs", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["search", "--index", s(&f.index), "--queries", s(&f.queries), "--k", "20", "--l", "10"]), 2);
    assert_eq!(code(&["search", "--bogus"]), 2);
    let cfg = f.dir.path().join("bad.cfg");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(code(&["search", "--config", s(&cfg)]), 2);

    // wrong query dimension
    let wrong = f.dir.path().join("wrong.fvecs");
    ok(&["gen", "--n", "3", "--dim", "5", "--out", s(&wrong)]);
    assert_eq!(code(&["search", "--index", s(&f.index), "--queries", s(&wrong)]), 3);

    // future index version
    let mut bytes = std::fs::read(&f.index).unwrap();
    bytes[4] = 7;
    let bad = f.dir.path().join("bad.idx");
    std::fs::write(&bad, &bytes).unwrap();
    let store = format!("{}.vectors", s(&f.index));
    assert_eq!(code(&["search", "--index", s(&bad), "--store", &store, "--queries", s(&f.queries)]), 3);

    // missing store file
    assert_eq!(code(&["search", "--index", s(&f.index), "--store", "/nonexistent.vectors", "--queries", s(&f.queries)]), 2);
}

#[test]
fn default_build_is_deterministic_and_keeps_half_for_pbc() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.fvecs");
    ok(&["gen", "--n", "10000", "--dim", "64", "--seed", "1", "--out", s(&data)]);
    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let idx = dir.path().join(name);
        let out = ok(&["build", "--dataset", s(&data), "--out", s(&idx), "--variant", "pbc", "--seed", "5"]);
        assert!(out.contains("resident pivots: 5000"), "{out}");
        hashes.push((std::fs::read(&idx).unwrap(), std::fs::read(format!("{}.vectors", s(&idx))).unwrap()));
    }
    assert!(hashes[0] == hashes[1]);
    let idx = skipdisk::SkipDiskIndex::load(dir.path().join("a"), dir.path().join("a.vectors")).unwrap();
    assert_eq!(idx.len(), 10000);
    assert_eq!(idx.pivots().resident_count(), 5000);
}
