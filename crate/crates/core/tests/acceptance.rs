//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use qbe::embed::EmbeddingTable;
use qbe::fusion::{combmnz, combsum, isr, rrf, two_step_fuse, Fusion, FusionMethod};
use qbe::index::{build_index, idf, Bm25Params, Document};
use qbe::metrics::{evaluate_run, ndcg_at_k, precision_at_k, recall_at_k};
use qbe::numeric::{grad_check, Array, Tape};
use qbe::pipeline::synth::{make_synthetic_corpus, SynthSpec};
use qbe::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use qbe::ranked::{Component, Entry, RankedList, Stage};
use qbe::rankers::{kernel_pool, Arch, KernelBank, Ranker, RankerConfig};
use qbe::text::{Lang, TokenSequence};
use qbe::train::{listnet_graph, listnet_loss, ListNetObjective, TrainConfig, TrainData, TrainGroup};
use qbe::trec::{Qrels, Run};
use qbe::Exec;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fusion matches per-document brute force", fusion_oracle),
        ("rrf literal value", rrf_literal),
        ("listnet graphs pass gradient check", gradient_validity),
        ("kernel pooling closed forms", kernel_closed_forms),
        ("listnet closed form", listnet_closed_form),
        ("bm25 hand oracle", bm25_oracle),
        ("metric oracles", metric_oracles),
        ("end-to-end synthetic run", end_to_end),
        ("determinism", determinism),
        ("fusion beats complementary inputs", complementary_fusion),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

// --- 1 ---------------------------------------------------------------------

fn random_lists(rng: &mut ChaCha8Rng) -> Vec<RankedList> {
    let d = rng.random_range(1..=6);
    (0..d)
        .map(|_| {
            let n = rng.random_range(1..=25);
            let mut ids: Vec<usize> = (0..40).collect();
            ids.shuffle(rng);
            let scored = ids[..n]
                .iter()
                // coarse scores so ties occur
                .map(|i| (format!("d{i:02}"), (rng.random_range(-20..20) as f64) / 4.0))
                .collect();
            RankedList::from_scores("t", Component::Title, Stage::Bm25, scored)
        })
        .collect()
}

/// Position of `doc` in `list` by linear scan, 1-based.
fn rank_of(list: &RankedList, doc: &str) -> Option<usize> {
    list.entries().iter().position(|e| e.doc == doc).map(|p| p + 1)
}

fn oracle_minmax(list: &RankedList, doc: &str) -> Option<f64> {
    let scores: Vec<f64> = list.entries().iter().map(|e| e.score).collect();
    let s = list.entries().iter().find(|e| e.doc == doc)?.score;
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some(if hi == lo { 0.5 } else { (s - lo) / (hi - lo) })
}

fn check_fused(name: &str, got: &RankedList, want: &BTreeMap<String, f64>, tol: f64) -> Result<(), String> {
    ensure!(got.len() == want.len(), "{name}: {} docs, expected {}", got.len(), want.len());
    for (i, e) in got.entries().iter().enumerate() {
        ensure!(e.rank == i + 1, "{name}: rank gap at {}", e.doc);
        if i > 0 {
            ensure!(got.entries()[i - 1].score >= e.score, "{name}: scores increase at {}", e.doc);
        }
        let w = want.get(&e.doc).ok_or(format!("{name}: unexpected doc {}", e.doc))?;
        if tol == 0.0 {
            ensure!(e.score == *w, "{name}: {} scored {} expected {w}", e.doc, e.score);
        } else {
            ensure!((e.score - w).abs() <= tol, "{name}: {} scored {} expected {w}", e.doc, e.score);
        }
    }
    Ok(())
}

fn fusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let lists = random_lists(&mut rng);
        let union: BTreeSet<String> = lists.iter().flat_map(|l| l.docs().map(str::to_owned)).collect();
        let mut want_rrf = BTreeMap::new();
        let mut want_isr = BTreeMap::new();
        let mut want_sum = BTreeMap::new();
        let mut want_mnz = BTreeMap::new();
        for d in &union {
            let ranks: Vec<usize> = lists.iter().filter_map(|l| rank_of(l, d)).collect();
            let mut s_rrf = 0.0;
            let mut s_isr = 0.0;
            for &r in &ranks {
                s_rrf += 1.0 / (r as f64 + 10.0);
                s_isr += 1.0 / (r as f64 * r as f64);
            }
            let norm: f64 = lists.iter().filter_map(|l| oracle_minmax(l, d)).sum();
            want_rrf.insert(d.clone(), s_rrf);
            want_isr.insert(d.clone(), ranks.len() as f64 * s_isr);
            want_sum.insert(d.clone(), norm);
            want_mnz.insert(d.clone(), norm * ranks.len() as f64);
        }
        check_fused("rrf", &rrf(&lists, 10.0).map_err(|e| e.to_string())?, &want_rrf, 0.0)?;
        check_fused("isr", &isr(&lists).map_err(|e| e.to_string())?, &want_isr, 0.0)?;
        check_fused("combsum", &combsum(&lists).map_err(|e| e.to_string())?, &want_sum, 1e-12)?;
        check_fused("combmnz", &combmnz(&lists).map_err(|e| e.to_string())?, &want_mnz, 1e-12)?;
    }
    within(Duration::from_secs(5), start, "200 fixtures")?;
    Ok("200 fixtures, rank-based exact, score-based within 1e-12".into())
}

// --- 2 ---------------------------------------------------------------------

fn ranked(docs: &[&str]) -> RankedList {
    let n = docs.len();
    RankedList::from_ordered(
        "t",
        Component::Title,
        Stage::Bm25,
        docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect(),
    )
    .unwrap()
}

fn rrf_literal() -> Outcome {
    let fused = rrf(&[ranked(&["d", "x", "y"]), ranked(&["x", "y", "d"])], 10.0).map_err(|e| e.to_string())?;
    let s = fused.entries().iter().find(|e| e.doc == "d").unwrap().score;
    let want = 1.0 / 11.0 + 1.0 / 13.0;
    ensure!(s == want, "S_d = {s}, expected {want}");
    Ok(format!("S_d = {s}"))
}

// --- 3 ---------------------------------------------------------------------

fn grad_fixture(seed: u64, list_size: usize) -> (TrainData, Vec<qbe::train::CandidateList>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 6;
    let vocab = 30;
    let emb = EmbeddingTable::from_rows(
        dim,
        (0..vocab).map(|i| (format!("w{i}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())),
    )
    .unwrap();
    let mut docs = BTreeMap::new();
    for i in 0..12 {
        let len = rng.random_range(3..=8);
        let toks: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect();
        docs.insert(format!("d{i:02}"), TokenSequence::from_tokens(toks, Lang::Ar));
    }
    let qlen = rng.random_range(3..=5);
    let query = TokenSequence::from_tokens((0..qlen).map(|_| format!("w{}", rng.random_range(0..vocab))), Lang::En);
    let pool = RankedList::from_scores(
        "t",
        Component::Title,
        Stage::Bm25,
        docs.keys().skip(1).map(|d| (d.clone(), 1.0)).collect(),
    );
    let cfg = TrainConfig {
        list_size,
        lists_per_example_per_epoch: 1,
        ..Default::default()
    };
    let groups = vec![TrainGroup {
        topic: "t".into(),
        component: Component::Title,
        query,
        positives: vec!["d00".into()],
        pool,
    }];
    let data = TrainData::new(groups, &docs, &emb, &cfg, Exec::default()).unwrap();
    let lists = data.sample_epoch(&cfg, &mut rng);
    (data, lists, dim)
}

/// Finite-difference step per architecture. The exact-match kernel
/// (σ = 1e-3) curves sharply wherever two convolved n-grams sit near
/// cos = 1, so ConvKNRM needs a small step. MatchPyramid sits between relu
/// kinks, which favour a small step, and padding-only parameters whose exact
/// gradient is zero, where one ulp of loss over the step is measured against
/// the 1e-8 floor and favours a large one.
fn step(arch: Arch) -> f64 {
    match arch {
        Arch::Knrm => 1e-4,
        Arch::ConvKnrm => 1e-5,
        Arch::MatchPyramid => 3e-5,
    }
}

fn gradient_validity() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(Arch, f64, f64)> = Vec::new();
    for arch in [Arch::Knrm, Arch::ConvKnrm, Arch::MatchPyramid] {
        let t0 = Instant::now();
        let config = RankerConfig {
            // smallest canvas that survives three conv/pool blocks
            canvas: (22, 22),
            ..RankerConfig::new(arch)
        };
        for seed in 0..5u64 {
            let (data, lists, dim) = grad_fixture(seed, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut ranker = Ranker::init(config.clone(), dim, &mut rng).unwrap();
            // non-zero biases and a larger output weight keep the check away
            // from dead units and flat tanh regions
            for (name, a) in ranker.params.iter_mut() {
                if name.ends_with("bias") {
                    *a = Array::uniform(a.shape(), -0.1, 0.1, &mut rng);
                }
            }
            let obj = ListNetObjective {
                ranker: &ranker,
                data: &data,
                lists: &lists[..1],
            };
            ensure!(lists[0].docs.len() >= 5, "list of {}", lists[0].docs.len());
            let err = grad_check(&obj, &ranker.params, step(arch), Exec::default()).map_err(|e| e.to_string())?;
            ensure!(err < 1e-3, "{arch} seed {seed}: max relative error {err:.3e}");
            match worst.last_mut() {
                Some((a, w, _)) if *a == arch => *w = w.max(err),
                _ => worst.push((arch, err, 0.0)),
            }
        }
        worst.last_mut().unwrap().2 = t0.elapsed().as_secs_f64();
    }
    within(Duration::from_secs(60), start, "gradient checks")?;
    let parts: Vec<String> = worst.iter().map(|(a, e, t)| format!("{a} {e:.1e} (h={:e}, {t:.1}s)", step(*a))).collect();
    Ok(format!("5 seeds each, L=5, worst: {}", parts.join(", ")))
}

// --- 4 ---------------------------------------------------------------------

fn kernel_closed_forms() -> Outcome {
    let bank = KernelBank::default();
    for (k, kern) in bank.kernels().iter().enumerate() {
        let phi = kernel_pool(&Array::new(vec![1, 1], vec![kern.mu]).unwrap(), &bank);
        ensure!(phi[k] == 0.0, "kernel {k}: φ = {} at cos = μ", phi[k]);
    }
    let at07 = bank.kernels().iter().position(|k| (k.mu - 0.7).abs() < 1e-12).unwrap();
    let phi = kernel_pool(&Array::new(vec![1, 1], vec![0.9]).unwrap(), &bank)[at07];
    // 0.9 and 0.7 are not binary fractions; allow the rounding of the operands
    ensure!((phi + 2.0).abs() <= 4.0 * f64::EPSILON, "φ = {phi:e}, expected -2");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..9));
        let a = Array::uniform(&[n, m], -1.0, 1.0, &mut rng);
        let got = kernel_pool(&a, &bank);
        for (k, kern) in bank.kernels().iter().enumerate() {
            let mut want = 0.0;
            for i in 0..n {
                let mut mass = 0.0;
                for j in 0..m {
                    let x = a.at(i, j);
                    mass += (-(x - kern.mu) * (x - kern.mu) / (2.0 * kern.sigma * kern.sigma)).exp();
                }
                want += mass.max(1e-10).ln();
            }
            ensure!((got[k] - want).abs() <= 1e-12, "kernel {k}: {} vs {want}", got[k]);
        }
    }
    Ok(format!("φ(0.9 | μ=0.7) = {phi}; 100 random matrices within 1e-12"))
}

// --- 5 ---------------------------------------------------------------------

fn listnet_closed_form() -> Outcome {
    let mut labels = vec![0.0; 50];
    labels[0] = 1.0;
    let loss = listnet_loss(&[0.25; 50], &labels).map_err(|e| e.to_string())?;
    ensure!((loss - 50f64.ln()).abs() <= 1e-9, "uniform loss {loss}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let scores: Vec<f64> = (0..50).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut labels = vec![0.0; 50];
        labels[rng.random_range(0..50)] = 1.0;
        let softmax = |x: &[f64]| -> Vec<f64> {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
            x.iter().map(|v| (v - m).exp() / z).collect()
        };
        let (q, p) = (softmax(&scores), softmax(&labels));
        let mut tape = Tape::new();
        let s = tape.param(Array::vector(scores.clone()));
        let l = listnet_graph(&mut tape, s, &labels).map_err(|e| e.to_string())?;
        let g = tape.backward(l).map_err(|e| e.to_string())?;
        for (i, gi) in g.get(s).unwrap().data().iter().enumerate() {
            worst = worst.max((gi - (q[i] - p[i])).abs());
        }
    }
    ensure!(worst <= 1e-9, "gradient deviates by {worst:e}");
    Ok(format!("ln 50 − loss = {:.1e}; gradient deviation {worst:.1e}", 50f64.ln() - loss))
}

// --- 6 ---------------------------------------------------------------------

fn doc(id: &str, toks: &[&str]) -> Document {
    Document {
        id: id.into(),
        tokens: TokenSequence::from_tokens(toks.iter().copied(), Lang::Ar),
    }
}

fn bm25_oracle() -> Outcome {
    let docs = [doc("d1", &["a", "b"]), doc("d2", &["a"]), doc("d3", &["c"])];
    let ix = build_index(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    let (k1, b, avgdl) = (1.2, 0.75, 4.0 / 3.0);
    let hand = |df: f64, tf: f64, dl: f64| {
        let idf = (1.0 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
    };
    let q = |t: &[&str]| TokenSequence::from_tokens(t.iter().copied(), Lang::Ar);
    let cases = [
        (q(&["a"]), "d2", hand(2.0, 1.0, 1.0)),
        (q(&["a"]), "d1", hand(2.0, 1.0, 2.0)),
        (q(&["a", "b"]), "d1", hand(2.0, 1.0, 2.0) + hand(1.0, 1.0, 2.0)),
        (q(&["c"]), "d3", hand(1.0, 1.0, 1.0)),
        (q(&["b"]), "d2", 0.0),
    ];
    for (query, d, want) in &cases {
        let got = ix.bm25_score(query, d).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-9, "score({:?}, {d}) = {got}, hand {want}", query.tokens());
    }

    for n in 0..=200 {
        for df in 0..=n {
            ensure!(idf(n, df) >= 0.0, "idf({n}, {df}) < 0");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let docs: Vec<Document> = (0..rng.random_range(5..60))
            .map(|i| {
                let len = rng.random_range(1..12);
                Document {
                    id: format!("d{i}"),
                    tokens: TokenSequence::from_tokens((0..len).map(|_| format!("t{}", rng.random_range(0..15))), Lang::Ar),
                }
            })
            .collect();
        let ix = build_index(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
        let query = q(&["t1", "t3", "t3", "t7"]);
        let full = ix.preselect("t", Component::Title, &query, usize::MAX);
        for k in [1, 5, 10] {
            let top = ix.preselect("t", Component::Title, &query, k);
            ensure!(top.len() == k.min(full.len()), "preselect k={k} returned {}", top.len());
            ensure!(top.entries() == &full.entries()[..top.len()], "k={k} is not a prefix");
        }
    }
    Ok("5 hand scores within 1e-9, idf ≥ 0 for N ≤ 200, prefix property on 50 corpora".into())
}

// --- 7 ---------------------------------------------------------------------

fn entries(docs: &[&str]) -> Vec<Entry> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| Entry {
            doc: d.to_string(),
            rank: i + 1,
            score: (docs.len() - i) as f64,
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut qrels = Qrels::new();
    for d in ["a1", "a3", "a-unretrieved"] {
        qrels.insert("A", d, 1);
    }
    qrels.insert("A", "a2", 0);
    qrels.insert("B", "b2", 1);
    let list = |t: &str, docs: &[&str]| {
        RankedList::from_ordered(t, Component::Fused, Stage::Final,
            entries(docs).into_iter().map(|e| (e.doc, e.score)).collect()).unwrap()
    };
    let mut run = Run::new();
    run.insert("A".into(), list("A", &["a1", "a2", "a3", "x4", "x5", "x6", "x7", "x8", "x9", "x10", "a11"]));
    run.insert("B".into(), list("B", &["b1", "b2", "b3"]));
    let report = evaluate_run(&run, &qrels, 10).map_err(|e| e.to_string())?;
    let l2 = |x: f64| x.log2();
    let ndcg_a = (1.0 + 1.0 / l2(4.0)) / (1.0 + 1.0 / l2(3.0) + 1.0 / l2(4.0));
    let ndcg_b = 1.0 / l2(3.0);
    let want = [("A", 0.2, 2.0 / 3.0, ndcg_a), ("B", 0.1, 1.0, ndcg_b)];
    for (row, (t, p, r, n)) in report.rows.iter().zip(want) {
        ensure!(row.topic == t, "row order {}", row.topic);
        ensure!(row.scores.precision == p && row.scores.recall == r, "{t}: P {} R {}", row.scores.precision, row.scores.recall);
        ensure!((row.scores.ndcg - n).abs() <= 1e-15, "{t}: nDCG {} vs {n}", row.scores.ndcg);
    }
    ensure!((report.mean.ndcg - (ndcg_a + ndcg_b) / 2.0).abs() <= 1e-15, "macro nDCG {}", report.mean.ndcg);
    ensure!((report.mean.precision - 0.15).abs() <= 1e-15, "macro P {}", report.mean.precision);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = rng.random_range(2..25);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let grades: BTreeMap<String, u32> =
            ids.iter().filter(|_| rng.random_bool(0.4)).map(|d| (d.clone(), 1)).collect();
        let mut grades = grades;
        if grades.is_empty() {
            grades.insert(ids[0].clone(), 1);
        }
        let mut ideal: Vec<&str> = ids.iter().map(String::as_str).collect();
        ideal.sort_by_key(|d| !grades.contains_key(*d));
        ensure!(ndcg_at_k(&entries(&ideal), &grades, 10) == Some(1.0), "ideal ordering nDCG ≠ 1 (trial {trial})");

        let mut order: Vec<&str> = ids.iter().map(String::as_str).collect();
        order.shuffle(&mut rng);
        let rel_pos: Vec<usize> = (1..n).filter(|&i| grades.contains_key(order[i])).collect();
        let Some(&i) = rel_pos.choose(&mut rng) else { continue };
        let j = rng.random_range(0..i);
        let before = entries(&order);
        let mut swapped = order.clone();
        swapped.swap(i, j);
        let after = entries(&swapped);
        for k in [1, 5, 10] {
            let m = |e: &[Entry]| {
                (precision_at_k(e, &grades, k), recall_at_k(e, &grades, k).unwrap(), ndcg_at_k(e, &grades, k).unwrap())
            };
            let (p0, r0, n0) = m(&before);
            let (p1, r1, n1) = m(&after);
            ensure!(p1 >= p0 && r1 >= r0 && n1 >= n0 - 1e-15, "trial {trial}, k={k}: swap lowered a metric");
        }
    }
    ensure!(report.to_string() == evaluate_run(&run, &qrels, 10).unwrap().to_string(), "report not reproducible");
    Ok("hand rows exact, ideal nDCG = 1, 100 upward swaps monotone".into())
}

// --- 8, 9 ------------------------------------------------------------------

struct SynthRun {
    _dir: tempfile::TempDir,
    output: PathBuf,
    result: PipelineOutput,
    elapsed: Duration,
    qrels: Qrels,
}

fn synth_config(data: &Path, output: &Path) -> PipelineConfig {
    PipelineConfig {
        qrels: Some("qrels.txt".into()),
        output: output.to_path_buf(),
        threshold: 1000,
        model: Arch::Knrm,
        fusion: FusionMethod::Rrf,
        seed: 7,
        ..Default::default()
    }
    .resolve(Some(data))
}

fn run_synthetic(tag: &str) -> SynthRun {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_synthetic_corpus(&SynthSpec {
        docs: 1000,
        topics: 5,
        relevant_per_topic: 20,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    corpus.save(dir.path()).unwrap();
    let output = dir.path().join(tag);
    let cfg = synth_config(dir.path(), &output);
    let start = Instant::now();
    let result = run_pipeline(&cfg, Exec::default()).unwrap();
    SynthRun {
        elapsed: start.elapsed(),
        qrels: corpus.qrels,
        output,
        result,
        _dir: dir,
    }
}

fn first_run() -> &'static SynthRun {
    static RUN: OnceLock<SynthRun> = OnceLock::new();
    RUN.get_or_init(|| run_synthetic("a"))
}

fn end_to_end() -> Outcome {
    let run = first_run();
    ensure!(run.elapsed < Duration::from_secs(600), "pipeline took {:?}", run.elapsed);
    let report = run.result.report.as_ref().ok_or("no report")?;
    let get = |s| report.stage(s).unwrap().mean;
    let (fin, bm, nn) = (get(Stage::Final), get(Stage::Bm25Fused), get(Stage::NeuralFused));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut samples = Vec::with_capacity(100);
    for _ in 0..100 {
        let shuffled: Run = run
            .result
            .fused
            .final_run
            .iter()
            .map(|(t, l)| {
                let mut docs: Vec<String> = l.docs().map(str::to_owned).collect();
                docs.shuffle(&mut rng);
                let n = docs.len();
                let scored = docs.into_iter().enumerate().map(|(i, d)| (d, (n - i) as f64)).collect();
                (t.clone(), RankedList::from_ordered(t.clone(), Component::Fused, Stage::Final, scored).unwrap())
            })
            .collect();
        samples.push(evaluate_run(&shuffled, &run.qrels, 10).unwrap().mean.ndcg);
    }
    let mean = samples.iter().sum::<f64>() / 100.0;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let margin = (fin.ndcg - mean) / sd;
    ensure!(margin > 5.0, "final nDCG@10 {:.4} vs random {mean:.4} ± {sd:.4} ({margin:.1} sd)", fin.ndcg);
    let floor = bm.recall.max(nn.recall) - 0.05;
    ensure!(fin.recall >= floor, "final R@10 {:.4} < {floor:.4} (bm25 {:.4}, neural {:.4})", fin.recall, bm.recall, nn.recall);
    Ok(format!(
        "nDCG@10 final {:.4} / bm25 {:.4} / neural {:.4}, random {mean:.4} ± {sd:.4} ({margin:.0} sd); R@10 final {:.4} bm25 {:.4} neural {:.4}; {:.1}s",
        fin.ndcg,
        bm.ndcg,
        nn.ndcg,
        fin.recall,
        bm.recall,
        nn.recall,
        run.elapsed.as_secs_f64()
    ))
}

fn artifact_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "train_log.jsonl") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let a = artifact_files(&first_run().output);
    let second = run_synthetic("b");
    let b = artifact_files(&second.output);
    let names: Vec<&PathBuf> = a.keys().collect();
    ensure!(names == b.keys().collect::<Vec<_>>(), "different file sets");
    for (p, bytes) in &a {
        ensure!(&b[p] == bytes, "{} differs", p.display());
    }
    let runs = names.iter().filter(|p| p.extension().is_some_and(|e| e == "run")).count();
    let cks = names.iter().filter(|p| p.starts_with("checkpoints")).count();
    ensure!(runs > 0 && cks == 8 && a.contains_key(Path::new("report.txt")), "{runs} runs, {cks} checkpoints");
    Ok(format!("{} files identical ({runs} run files, {cks} checkpoints, report)", a.len()))
}

// --- 10 --------------------------------------------------------------------

fn complementary_fusion() -> Outcome {
    let mut qrels = Qrels::new();
    for i in 0..20 {
        qrels.insert("t", format!("r{i:02}"), 1);
    }
    let mk = |c: Component, stage: Stage, rel: std::ops::Range<usize>, noise: &str| {
        let mut docs: Vec<String> = rel.map(|i| format!("r{i:02}")).collect();
        docs.extend((0..15).map(|i| format!("{noise}{i:02}")));
        let n = docs.len();
        RankedList::from_ordered("t", c, stage, docs.into_iter().enumerate().map(|(i, d)| (d, (n - i) as f64)).collect())
            .unwrap()
    };
    let bm25 = mk(Component::Title, Stage::Bm25, 0..5, "a");
    let neural = mk(Component::Title, Stage::Neural, 5..10, "b");
    let grades = qrels.topic("t").unwrap();
    let recall = |l: &RankedList| recall_at_k(l.entries(), grades, 10).unwrap();
    let mut parts = Vec::new();
    for method in [FusionMethod::Rrf, FusionMethod::CombSum, FusionMethod::CombMnz, FusionMethod::Isr] {
        let out = two_step_fuse(&[bm25.clone()], &[neural.clone()], &Fusion::new(method)).map_err(|e| e.to_string())?;
        let (f, b, n) = (recall(&out.final_run), recall(&out.bm25_fused), recall(&out.neural_fused));
        ensure!(f > b && f > n, "{method}: fused R@10 {f} vs inputs {b}, {n}");
        parts.push(format!("{method} {f:.2}"));
    }
    Ok(format!("inputs R@10 0.25 each; fused {}", parts.join(", ")))
}
