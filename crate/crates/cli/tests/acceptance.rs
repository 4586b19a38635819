//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --test acceptance -- 2 3`.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::Rng;
use serde_json::json;
use tempfile::TempDir;
use triplet_tagger::corpus::{holdout_size, load_catalog, read_conll, save_catalog, split_holdout};
use triplet_tagger::metrics::{exact_match_rate, extract_spans, span_prf, token_accuracy, EntitySpan, MetricsReport};
use triplet_tagger::model::embed_sentences;
use triplet_tagger::objectives::{multitask_loss, ner_loss, sigmoid_score, triplet_loss, triplet_loss_from_scores};
use triplet_tagger::trainer::{encode_description, encode_title, sample_negative_index};
use triplet_tagger::{seed, Checkpoint, TagScheme, Tensor, TokenBatch, TripletScores};

use common::{code, path_str, run, stdout, write_config};

const GRAD_CHECK_SECONDS: f64 = 60.0;
const SEPARATION_MIN: f64 = 0.90;
const SEPARATION_SECONDS: f64 = 600.0;
const EXACT_MATCH_MARGIN: f64 = 0.02;
const REFERENCE_EXACT_MATCH_DELTA: f64 = 0.02;
const FORMULA_TOL: f64 = 1e-9;
const DATA_SEED: u64 = 2024;
const DATA_N: usize = 2000;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn workdir() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("read {}: {e}", p.display()))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = run(args);
    if code(&out) == 0 {
        Ok(stdout(&out))
    } else {
        Err(format!(
            "`{}` exited {}: {}",
            args.join(" "),
            code(&out),
            common::stderr(&out).trim()
        ))
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let out = run(&["grad-check"]);
    let secs = start.elapsed().as_secs_f64();
    let text = stdout(&out);
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.ends_with(" ok") || l.ends_with(" FAIL"))
        .collect();
    let failed = lines.iter().filter(|l| l.ends_with("FAIL")).count();
    let worst = lines
        .iter()
        .filter_map(|l| l.split_whitespace().nth(1)?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    let detail = format!("{} checks, {failed} failed, worst rel. error {worst:.2e} (limit 1e-4), {secs:.1} s (limit {GRAD_CHECK_SECONDS} s)", lines.len());
    ensure(
        code(&out) == 0 && failed == 0 && lines.len() == 26 && worst <= 1e-4,
        || detail.clone(),
    )?;
    ensure(secs < GRAD_CHECK_SECONDS, || detail.clone())?;
    Ok(detail)
}

fn c2_formulas() -> Outcome {
    let t = triplet_loss_from_scores(&TripletScores::new(0.25, 0.25));
    let (t2, _) = triplet_loss(&[1.0, 2.0], &[0.5, -1.0], &[0.5, -1.0]).map_err(|e| e.to_string())?;
    let ln2 = std::f64::consts::LN_2;
    ensure(
        (t - ln2).abs() <= FORMULA_TOL && (t2 - ln2).abs() <= FORMULA_TOL,
        || format!("triplet_loss(d=0) = {t}, {t2}"),
    )?;

    let logits = Tensor::zeros(&[3, 5]);
    let l = ner_loss(&logits, &[0, 2, 4], &[true; 3]).map_err(|e| e.to_string())?;
    ensure((l - 5f64.ln()).abs() <= FORMULA_TOL, || {
        format!("ner_loss(uniform, K=5) = {l}")
    })?;

    for (ner, trip) in [(l, 0.7), (0.123, 9.5), (2.0, 0.0)] {
        let m = multitask_loss(ner, trip, 0.0).map_err(|e| e.to_string())?;
        ensure(m.to_bits() == ner.to_bits(), || {
            format!("multitask_loss(λ=0) = {m}, ner = {ner}")
        })?;
    }
    let s = sigmoid_score(0.0);
    ensure(s == 0.5, || format!("sigmoid_score(0) = {s}"))?;
    Ok(format!(
        "|triplet(0) - ln 2| = {:.1e}, |ner - ln 5| = {:.1e}, multitask(λ=0) bitwise equal, σ(0) = 0.5",
        (t - ln2).abs(),
        (l - 5f64.ln()).abs()
    ))
}

fn random_bio(rng: &mut impl Rng) -> Vec<String> {
    const TYPES: [&str; 3] = ["ITEM", "BRAND", "ATTR"];
    let len = rng.gen_range(1..=12);
    let mut tags: Vec<String> = Vec::with_capacity(len);
    let mut prev: Option<&str> = None;
    for _ in 0..len {
        let ty = TYPES[rng.gen_range(0..3)];
        let tag = match rng.gen_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{ty}"),
            _ => match prev {
                Some(p) => format!("I-{p}"),
                None => format!("B-{ty}"),
            },
        };
        prev = tag
            .split_once('-')
            .map(|(_, t)| TYPES.iter().copied().find(|x| *x == t).unwrap());
        tags.push(tag);
    }
    tags
}

fn oracle_spans(tags: &[String]) -> HashSet<(usize, usize, String)> {
    let mut out = HashSet::new();
    for start in 0..tags.len() {
        let Some(ty) = tags[start].strip_prefix("B-") else {
            continue;
        };
        let inside = format!("I-{ty}");
        for end in start + 1..=tags.len() {
            if tags[start + 1..end].iter().all(|t| *t == inside) && (end == tags.len() || tags[end] != inside) {
                out.insert((start, end, ty.to_string()));
            }
        }
    }
    out
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn c3_metrics() -> Outcome {
    let mut rng = seed::stream(3, &[]);
    let mut discrepancies = 0;
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let g = random_bio(&mut rng);
        let p = random_bio(&mut rng);
        let spans = |t: &[String]| -> Vec<EntitySpan> { extract_spans(t).unwrap() };
        let (gs, ps) = (oracle_spans(&g), oracle_spans(&p));
        let hits = gs.intersection(&ps).count();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (pr, rc) = span_prf(&[spans(&g)], &[spans(&p)]).unwrap();
        if pr != ratio(hits, ps.len()) || rc != ratio(hits, gs.len()) {
            discrepancies += 1;
        }
        gold.push(g);
        pred.push(p);
    }
    let (mut n_g, mut n_p, mut n_h) = (0, 0, 0);
    for (g, p) in gold.iter().zip(&pred) {
        let (gs, ps) = (oracle_spans(g), oracle_spans(p));
        n_g += gs.len();
        n_p += ps.len();
        n_h += gs.intersection(&ps).count();
    }
    let all = |xs: &[Vec<String>]| xs.iter().map(|t| extract_spans(t).unwrap()).collect::<Vec<_>>();
    let (pr, rc) = span_prf(&all(&gold), &all(&pred)).unwrap();
    if pr != n_h as f64 / n_p as f64 || rc != n_h as f64 / n_g as f64 {
        discrepancies += 1;
    }
    ensure(discrepancies == 0, || {
        format!("{discrepancies} discrepancies against the brute-force oracle")
    })?;

    // Hand-scored: 4 of 10 sentences exact, 18 of 25 tokens right,
    // 13 correct spans of 19 predicted and 20 gold.
    let tags = |name: &str| -> Vec<Vec<String>> {
        read_conll(&fs::read_to_string(golden(name)).unwrap(), name)
            .unwrap()
            .into_iter()
            .map(|(_, _, t)| t)
            .collect()
    };
    let (g, p) = (tags("golden_gold.conll"), tags("golden_pred.conll"));
    let em = exact_match_rate(&g, &p).map_err(|e| e.to_string())?;
    let acc = token_accuracy(&g, &p).map_err(|e| e.to_string())?;
    ensure(em == 4.0 / 10.0 && acc == 18.0 / 25.0, || {
        format!("golden file: exact match {em}, token accuracy {acc}")
    })?;

    let out = workdir().join("golden-report.json");
    cli(&[
        "eval",
        "--predictions",
        path_str(&golden("golden_pred.conll")),
        "--data",
        path_str(&golden("golden_gold.conll")),
        "--out",
        path_str(&out),
    ])?;
    let r: MetricsReport = serde_json::from_slice(&read(&out)).map_err(|e| e.to_string())?;
    ensure(
        r.exact_match == 0.4
            && r.token_accuracy == 18.0 / 25.0
            && r.precision == 13.0 / 19.0
            && r.recall == 13.0 / 20.0,
        || format!("golden report via CLI: {r:?}"),
    )?;
    Ok("1000 random BIO pairs, 0 discrepancies; golden file exact match 40%, token accuracy 72% (CLI agrees)".into())
}

fn desk_catalog() -> &'static Path {
    static CATALOG: OnceLock<PathBuf> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let p = workdir().join("catalog.jsonl");
        cli(&[
            "gen-data",
            "--seed",
            &DATA_SEED.to_string(),
            "--n",
            &DATA_N.to_string(),
            "--out",
            path_str(&p),
        ])
        .expect("gen-data");
        p
    })
}

#[derive(Clone)]
struct RunResult {
    dir: PathBuf,
    report: MetricsReport,
    seconds: f64,
}

/// Trains and evaluates one desk-scale run, caching results by (seed, mode).
fn desk_run(seed: u64, mode: &str) -> Result<RunResult, String> {
    static RUNS: OnceLock<Mutex<BTreeMap<(u64, String), RunResult>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(r) = runs.lock().unwrap().get(&(seed, mode.to_string())) {
        return Ok(r.clone());
    }
    let name = format!("desk-{mode}-{seed}");
    let config = write_config(
        workdir(),
        &name,
        desk_catalog(),
        json!({"max_len": 48, "d_model": 64, "n_heads": 4, "n_layers": 2, "d_ff": 128}),
        json!({"epochs": 10, "batch_size": 16, "lr": 0.001, "lambda": 1.0, "seed": seed, "mode": mode}),
    );
    let dir = workdir().join(format!("{name}-out"));
    let start = Instant::now();
    cli(&["train", "--config", path_str(&config)])?;
    let report_path = dir.join("report.json");
    cli(&[
        "eval",
        "--checkpoint",
        path_str(&dir.join("checkpoint.json")),
        "--data",
        path_str(&dir.join("holdout.jsonl")),
        "--out",
        path_str(&report_path),
    ])?;
    let seconds = start.elapsed().as_secs_f64();
    let report = serde_json::from_slice(&read(&report_path)).map_err(|e| e.to_string())?;
    let r = RunResult { dir, report, seconds };
    runs.lock().unwrap().insert((seed, mode.to_string()), r.clone());
    Ok(r)
}

fn embed(ck: &Checkpoint, seqs: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(64) {
        let batch = TokenBatch::from_sequences(chunk).unwrap();
        let e = embed_sentences(&ck.params, &batch).unwrap();
        out.extend((0..e.rows()).map(|r| e.row(r).to_vec()));
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    triplet_tagger::objectives::cosine_similarity(a, b).unwrap()
}

fn c4_separation() -> Outcome {
    let run = desk_run(SEEDS[0], "multitask")?;
    let ck = Checkpoint::load(&run.dir.join("checkpoint.json")).map_err(|e| e.to_string())?;
    let holdout = load_catalog(&run.dir.join("holdout.jsonl"), &ck.scheme).map_err(|e| e.to_string())?;
    let max_len = ck.config().max_len;
    let titles: Vec<Vec<usize>> = holdout
        .iter()
        .map(|i| encode_title(i.title_tokens(), &ck.vocab, max_len).unwrap())
        .collect();
    let descs: Vec<Vec<usize>> = holdout
        .iter()
        .map(|i| encode_description(i.description(), &ck.vocab, max_len))
        .collect();
    let (t, d) = (embed(&ck, &titles), embed(&ck, &descs));
    let mut rng = seed::stream(SEEDS[0], &[4]);
    let mut separated = 0;
    for i in 0..holdout.len() {
        let j = sample_negative_index(&mut rng, i, holdout.len()).unwrap();
        if cosine(&t[i], &d[i]) > cosine(&t[i], &d[j]) {
            separated += 1;
        }
    }
    let rate = separated as f64 / holdout.len() as f64;
    let detail = format!(
        "{separated}/{} held-out triples separated = {:.1}% (need >= {:.0}%), train+eval {:.0} s (limit {SEPARATION_SECONDS:.0} s)",
        holdout.len(),
        100.0 * rate,
        100.0 * SEPARATION_MIN,
        run.seconds
    );
    ensure(rate >= SEPARATION_MIN && run.seconds < SEPARATION_SECONDS, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn c5_non_inferiority() -> Outcome {
    let mut mt = Vec::new();
    let mut bl = Vec::new();
    let mut curves = Vec::new();
    for s in SEEDS {
        let m = desk_run(s, "multitask")?;
        let b = desk_run(s, "baseline")?;
        let ck = Checkpoint::load(&m.dir.join("checkpoint.json")).map_err(|e| e.to_string())?;
        let history = ck.training.expect("training state").history;
        let curve: Vec<f64> = history
            .epoch_means(|r| r.loss_triplet)
            .into_iter()
            .map(|(_, l)| l)
            .collect();
        curves.push(curve);
        mt.push(m.report.exact_match);
        bl.push(b.report.exact_match);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (m, b) = (mean(&mt), mean(&bl));
    let epoch_mean: Vec<f64> = (0..3)
        .map(|e| mean(&curves.iter().map(|c| c[e]).collect::<Vec<_>>()))
        .collect();
    let decreasing = epoch_mean[0] > epoch_mean[1] && epoch_mean[1] > epoch_mean[2];
    let per_seed = curves.iter().filter(|c| c[0] > c[1] && c[1] > c[2]).count();
    let delta = m - b;
    let detail = format!(
        "exact match multitask {:.1}% vs baseline {:.1}% over {} seeds (delta {:+.1} pts, need >= {:+.0}; reference delta {:+.0}); \
         mean triplet loss epochs 1-3: {:.4} > {:.4} > {:.4} ({per_seed}/{} seeds strictly decreasing)",
        100.0 * m,
        100.0 * b,
        SEEDS.len(),
        100.0 * delta,
        -100.0 * EXACT_MATCH_MARGIN,
        100.0 * REFERENCE_EXACT_MATCH_DELTA,
        epoch_mean[0],
        epoch_mean[1],
        epoch_mean[2],
        SEEDS.len()
    );
    ensure(m >= b - EXACT_MATCH_MARGIN - 1e-12 && decreasing, || detail.clone())?;
    Ok(detail)
}

/// Small model trained twice with the same seed, for criteria 6 and 7.
fn small_runs() -> Result<&'static (PathBuf, PathBuf), String> {
    static RUNS: OnceLock<Result<(PathBuf, PathBuf), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let catalog = workdir().join("small.jsonl");
        cli(&["gen-data", "--seed", "7", "--n", "300", "--out", path_str(&catalog)])?;
        let mut dirs = Vec::new();
        for name in ["small-a", "small-b"] {
            let config = write_config(
                workdir(),
                name,
                &catalog,
                json!({"d_model": 16, "n_heads": 2, "n_layers": 2, "d_ff": 32}),
                json!({"epochs": 3, "seed": 11, "dropout": 0.1}),
            );
            cli(&["train", "--config", path_str(&config)])?;
            let dir = workdir().join(format!("{name}-out"));
            cli(&[
                "eval",
                "--checkpoint",
                path_str(&dir.join("checkpoint.json")),
                "--data",
                path_str(&dir.join("holdout.jsonl")),
                "--out",
                path_str(&dir.join("report.json")),
                "--write-predictions",
                path_str(&dir.join("predictions.conll")),
            ])?;
            dirs.push(dir);
        }
        Ok((dirs[0].clone(), dirs[1].clone()))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn c6_protocol() -> Outcome {
    for n in [1usize, 2, 3, 5, 7, 10, 15, 99, 100, 1000, 2000, 2001] {
        let want = (0.3 * n as f64).round() as usize;
        ensure(holdout_size(n, 0.3) == want, || {
            format!(
                "n = {n}: holdout_size {} but round(0.3n) = {want}",
                holdout_size(n, 0.3)
            )
        })?;
        if want == 0 || want == n {
            continue;
        }
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = split_holdout(&items, 0.3, 9).map_err(|e| e.to_string())?;
        ensure(test.len() == want && train.len() + test.len() == n, || {
            format!("n = {n}: holdout {} but round(0.3n) = {want}", test.len())
        })?;
    }
    let (a, b) = small_runs()?;
    for f in ["report.json", "predictions.conll", "checkpoint.json", "manifest.json"] {
        ensure(read(&a.join(f)) == read(&b.join(f)), || {
            format!("{f} differs between identical-seed runs")
        })?;
    }
    Ok("holdout = round(0.3n) for 12 sizes; two train+eval runs give byte-identical reports, predictions, checkpoints and manifests".into())
}

fn c7_title_only() -> Outcome {
    let (a, _) = small_runs()?;
    let scheme = TagScheme::default();
    let holdout = load_catalog(&a.join("holdout.jsonl"), &scheme).map_err(|e| e.to_string())?;
    let stripped: Vec<_> = holdout.iter().map(|i| i.without_description()).collect();
    ensure(stripped.iter().all(|i| i.description().is_empty()), || {
        "descriptions not stripped".into()
    })?;
    let stripped_path = workdir().join("stripped.jsonl");
    save_catalog(&stripped, &stripped_path).map_err(|e| e.to_string())?;
    let (report, preds) = (workdir().join("stripped-report.json"), workdir().join("stripped.conll"));
    cli(&[
        "eval",
        "--checkpoint",
        path_str(&a.join("checkpoint.json")),
        "--data",
        path_str(&stripped_path),
        "--out",
        path_str(&report),
        "--write-predictions",
        path_str(&preds),
    ])?;
    ensure(read(&preds) == read(&a.join("predictions.conll")), || {
        "predictions changed".into()
    })?;
    ensure(read(&report) == read(&a.join("report.json")), || {
        "report changed".into()
    })?;
    Ok(format!(
        "{} held-out items: predictions and report byte-identical without descriptions",
        holdout.len()
    ))
}

const REFERENCE_TABLE: &str = "\
Algorithm               Precision  Recall  Exact Matches  Accuracy
------------------------------------------------------------------
BERT-Multitask-Triplet  78%        63%     43%            85%
BERT-base               77%        62%     41%            84.7%
";

fn c8_table() -> Outcome {
    let rows = [
        ("BERT-Multitask-Triplet", 0.78, 0.63, 0.43, 0.85),
        ("BERT-base", 0.77, 0.62, 0.41, 0.847),
    ];
    let mut paths = Vec::new();
    for (i, (name, p, r, em, acc)) in rows.into_iter().enumerate() {
        let path = workdir().join(format!("reference-{i}.json"));
        let report = json!({"algorithm": name, "precision": p, "recall": r, "exact_match": em, "token_accuracy": acc});
        fs::write(&path, report.to_string()).unwrap();
        paths.push(path);
    }
    let json_out = workdir().join("table1.json");
    let table = cli(&[
        "compare",
        path_str(&paths[0]),
        path_str(&paths[1]),
        "--json",
        path_str(&json_out),
    ])?;
    ensure(table == REFERENCE_TABLE, || format!("table differs:\n{table}"))?;
    let back: Vec<MetricsReport> = serde_json::from_slice(&read(&json_out)).map_err(|e| e.to_string())?;
    ensure(back.len() == 2 && back[1].token_accuracy == 0.847, || {
        "JSON rows differ".into()
    })?;
    Ok("compare reproduces both rows and all five columns of the reference results table".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "gradient correctness", c1_gradients),
        (2, "loss-formula fidelity", c2_formulas),
        (3, "metric oracle equivalence", c3_metrics),
        (4, "desk-scale separation", c4_separation),
        (5, "desk-scale NER non-inferiority", c5_non_inferiority),
        (6, "protocol fidelity", c6_protocol),
        (7, "title-only inference", c7_title_only),
        (8, "table rendering", c8_table),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
