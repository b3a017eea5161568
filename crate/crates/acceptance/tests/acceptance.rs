//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trustvote::bicm::{self, BicmModel, BipartiteGraph, SolverOptions};
use trustvote::classify::{self, ScoringOptions};
use trustvote::ingest::{Corpus, KnowledgeBase, PostKind, RawPost, TrustLabel};
use trustvote::nec::{self, LouvainOptions, Partition};
use trustvote::pipeline::{Pipeline, PipelineConfig, RunReport};
use trustvote::projection::{self, PairTest, ValidatedNetwork};
use trustvote::synth::{self, SyntheticCorpus, SyntheticSpec};
use trustvote::voters::{self, StrategyKind, VoterProfile};

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Degree reproduction on random graphs up to 1000 x 5000 at ~1% density.
fn degree_reproduction() -> Outcome {
    let (mut worst, mut slowest) = (0.0f64, Duration::ZERO);
    for g in 0..50u64 {
        let scale = (g + 1) as f64 / 50.0;
        let (n, m) = (((1000.0 * scale) as usize).max(20), ((5000.0 * scale) as usize).max(100));
        let links = random_links(n, m, 0.01, g % 2 == 1, 1000 + g);
        let graph = BipartiteGraph::from_links(labels("u", n), labels("a", m), links).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let model = bicm::solve(&graph, SolverOptions::default()).map_err(|e| format!("graph {g} ({n}x{m}): {e}"))?;
        let elapsed = t.elapsed();
        let err = model.max_relative_degree_error();
        ensure(err <= 1e-6, || format!("graph {g} ({n}x{m}): relative degree error {err:e}"))?;
        ensure(elapsed < Duration::from_secs(60), || format!("graph {g} took {elapsed:?}"))?;
        worst = worst.max(err);
        slowest = slowest.max(elapsed);
    }
    Ok(format!("50 graphs, worst relative error {worst:.2e}, slowest solve {slowest:.2?}"))
}

fn probability_matrix(model: &BicmModel) -> Vec<Vec<f64>> {
    (0..model.n_users())
        .map(|i| (0..model.n_urls()).map(|a| model.link_probability(i, a).unwrap()).collect())
        .collect()
}

// 2. Exhaustive ensemble enumeration for n * m <= 12.
fn ensemble_oracle() -> Outcome {
    let opts = SolverOptions { tol: 1e-12, max_iter: 10_000 };
    let (mut graphs, mut worst_mass, mut worst_deg) = (0, 0.0f64, 0.0f64);
    for n in 1..=12usize {
        for m in 1..=12 / n {
            for seed in 0..8u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 131 + (n * 13 + m) as u64);
                let density = [0.2, 0.5, 0.8][seed as usize % 3];
                let links: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| (0..m).map(move |a| (i, a)))
                    .filter(|_| rng.random::<f64>() < density)
                    .collect();
                let graph = BipartiteGraph::from_links(labels("u", n), labels("a", m), links).unwrap();
                let model = bicm::solve(&graph, opts).map_err(|e| format!("{n}x{m} seed {seed}: {e}"))?;
                let (total, ku, ka) = enumerate_ensemble(&probability_matrix(&model));
                let mass_err = (total - 1.0).abs();
                ensure(mass_err <= 1e-10, || format!("{n}x{m} seed {seed}: total mass {total}"))?;
                let deg_err = ku
                    .iter()
                    .zip(graph.user_degrees().iter())
                    .chain(ka.iter().zip(graph.url_degrees().iter()))
                    .map(|(e, o)| (e - *o as f64).abs())
                    .fold(0.0, f64::max);
                ensure(deg_err <= 1e-8, || format!("{n}x{m} seed {seed}: mean degree off by {deg_err:e}"))?;
                worst_mass = worst_mass.max(mass_err);
                worst_deg = worst_deg.max(deg_err);
                graphs += 1;
            }
        }
    }
    Ok(format!("{graphs} graphs, mass error {worst_mass:.1e}, degree error {worst_deg:.1e}"))
}

// 3. Poisson-binomial tails against enumeration and model sampling.
fn poisson_binomial_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for n in 1..=15usize {
        for trial in 0..6 {
            let probs: Vec<f64> = (0..n)
                .map(|_| match trial {
                    0 => rng.random::<f64>() * 1e-3,
                    1 => [0.0, 1.0, rng.random()][rng.random_range(0..3)],
                    _ => rng.random(),
                })
                .collect();
            let oracle = enumerate_tails(&probs);
            for k in 0..=n + 1 {
                let got = projection::poisson_binomial_tail(&probs, k).map_err(|e| e.to_string())?;
                let want = oracle.get(k).copied().unwrap_or(0.0);
                let err = (got - want).abs();
                ensure(err <= 1e-12, || format!("n={n} k={k}: {got} vs {want}"))?;
                worst = worst.max(err);
            }
        }
    }

    // n = 200 users, pair of URLs, co-occurrence counted on sampled graphs
    let mut frng = ChaCha8Rng::seed_from_u64(17);
    let users: Vec<f64> = (0..200).map(|_| 0.2 + 2.0 * frng.random::<f64>()).collect();
    let model = BicmModel::from_fitness(users, vec![0.8, 1.1]).map_err(|e| e.to_string())?;
    let probs: Vec<f64> = (0..200)
        .map(|i| model.link_probability(i, 0).unwrap() * model.link_probability(i, 1).unwrap())
        .collect();
    let samples = 200_000u64;
    let mut hist = vec![0u64; 201];
    for s in 0..samples {
        let g = model.sample(s);
        let both = g.cols()[0].iter().filter(|i| g.has_link(**i, 1)).count();
        hist[both] += 1;
    }
    let mean: f64 = probs.iter().sum();
    let mut checked = Vec::new();
    for k in [mean.floor() as usize - 5, mean.floor() as usize, mean.ceil() as usize + 5] {
        let exact = projection::poisson_binomial_tail(&probs, k).unwrap();
        let mc = hist[k..].iter().sum::<u64>() as f64 / samples as f64;
        let se = (exact * (1.0 - exact) / samples as f64).sqrt();
        ensure((mc - exact).abs() <= 3.0 * se, || {
            format!("Monte Carlo k={k}: {mc} vs exact {exact} (se {se:e})")
        })?;
        checked.push(format!("k={k} {:.2}se", (mc - exact).abs() / se));
    }
    Ok(format!(
        "enumeration n<=15 worst {worst:.1e}; Monte Carlo n=200 {}",
        checked.join(", ")
    ))
}

fn bh_trial(pvalues: &[f64], alpha: f64) -> Result<bool, String> {
    let m = pvalues.len();
    let urls = labels("a", m + 1);
    let tests: Vec<PairTest> = pvalues
        .iter()
        .enumerate()
        .map(|(i, &p)| PairTest {
            url_a: 0,
            url_b: i + 1,
            observed: 1,
            pvalue: p,
        })
        .collect();
    let net = projection::bh_validate(&tests, alpha, m as u64, &urls).map_err(|e| e.to_string())?;
    let got: BTreeSet<usize> = net
        .edges
        .iter()
        .map(|e| urls.iter().position(|u| *u == e.url_b).unwrap() - 1)
        .collect();
    let want = brute_force_bh(pvalues, alpha, m);
    ensure(got == want, || format!("validated {} vs brute force {}", got.len(), want.len()))?;
    Ok(!want.is_empty())
}

// 4. Benjamini-Hochberg against the brute-force definition.
fn bh_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let pvalues: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        bh_trial(&pvalues, 0.05).map_err(|e| format!("uniform trial {trial}: {e}"))?;
    }
    let mut nonempty = 0;
    for trial in 0..100 {
        let signal = rng.random_range(0..200);
        let pvalues: Vec<f64> = (0..1000)
            .map(|i| {
                let u: f64 = rng.random();
                if i < signal {
                    u.powi(6) * 1e-2
                } else {
                    u
                }
            })
            .collect();
        nonempty += bh_trial(&pvalues, 0.05).map_err(|e| format!("mixture trial {trial}: {e}"))? as usize;
    }
    Ok(format!("100 uniform trials and 100 signal-mixture trials ({nonempty} non-empty) match"))
}

fn clique_edges(offset: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (offset + i, offset + j)))
        .collect()
}

// 5. Louvain on two K5 cliques; monotone pass modularity.
fn louvain_sanity() -> Outcome {
    let mut edges = clique_edges(0, 5);
    edges.extend(clique_edges(5, 5));
    let r = nec::louvain_graph(10, &edges, LouvainOptions::default());
    let n_comm = r.membership.iter().collect::<BTreeSet<_>>().len();
    ensure(n_comm == 2, || format!("{n_comm} communities"))?;
    ensure((r.modularity - 0.5).abs() <= 1e-9, || format!("Q = {}", r.modularity))?;

    let urls = labels("https://x.example/", 10);
    let mut net = ValidatedNetwork::default();
    for &(a, b) in &edges {
        net.nodes.insert(urls[a].clone());
        net.nodes.insert(urls[b].clone());
        net.edges.push(projection::ValidatedEdge {
            url_a: urls[a].clone(),
            url_b: urls[b].clone(),
            pvalue: 0.0,
        });
    }
    let p = nec::louvain(&net, urls.iter().map(String::as_str), LouvainOptions::default());
    ensure(p.n_communities() == 2 && (p.modularity - 0.5).abs() <= 1e-9, || {
        format!("labelled network: {} communities, Q = {}", p.n_communities(), p.modularity)
    })?;

    let mut graphs: Vec<(usize, Vec<(usize, usize)>)> = vec![(10, edges)];
    let ring: Vec<(usize, usize)> = (0..6)
        .flat_map(|c| {
            let mut e = clique_edges(4 * c, 4);
            e.push((4 * c, (4 * c + 4) % 24));
            e
        })
        .collect();
    graphs.push((24, ring));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for g in 0..30 {
        let n = rng.random_range(5..200);
        let (p_in, p_out, blocks) = if g % 2 == 0 { (0.05, 0.05, 1) } else { (0.3, 0.02, 4) };
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if i % blocks == j % blocks { p_in } else { p_out };
                if rng.random::<f64>() < p {
                    e.push((i, j));
                }
            }
        }
        graphs.push((n, e));
    }
    for (idx, (n, e)) in graphs.iter().enumerate() {
        for seed in 0..3 {
            let r = nec::louvain_graph(*n, e, LouvainOptions { seed, resolution: 1.0 });
            ensure(r.pass_modularity.windows(2).all(|w| w[1] >= w[0]), || {
                format!("graph {idx} seed {seed}: passes {:?}", r.pass_modularity)
            })?;
            ensure(r.modularity >= r.pass_modularity[0], || format!("graph {idx}: below singleton"))?;
        }
    }
    Ok(format!("2 communities, Q = {:.12}; {} graphs monotone across passes", r.modularity, graphs.len()))
}

fn shares(pairs: &[(&str, &str)]) -> Vec<RawPost> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (user, url))| RawPost {
            post_id: format!("p{i}"),
            user_id: user.to_string(),
            timestamp: i as i64,
            urls: vec![url.to_string()],
            kind: PostKind::Original,
        })
        .collect()
}

// 6. Purity hand cases.
fn purity_formulas() -> Outcome {
    let urls = [
        ("https://t1.example/a", 0),
        ("https://t2.example/a", 0),
        ("https://t3.example/a", 0),
        ("https://n1.example/a", 0),
        ("https://u1.example/a", 0),
        ("https://t1.example/b", 1),
        ("https://n1.example/b", 1),
        ("https://n2.example/c", -1),
        ("https://u1.example/c", -1),
    ];
    let pairs: Vec<(&str, &str)> = urls.iter().map(|(u, _)| ("user", *u)).collect();
    let corpus = Corpus::build(&shares(&pairs), &PostKind::default_included());
    let mut kb = KnowledgeBase::new();
    for (d, s) in [("t1.example", 80), ("t2.example", 60), ("t3.example", 95), ("n1.example", 59), ("n2.example", 10)] {
        kb.insert(d, Some(s)).unwrap();
    }
    let partition = Partition::from_assignment(urls.iter().map(|(u, c)| (u.to_string(), *c)).collect());
    let e = |r: trustvote::Result<f64>| r.map_err(|e| e.to_string());
    let (t0, n0) = (
        e(nec::purity(&partition, &corpus, &kb, 0, TrustLabel::T))?,
        e(nec::purity(&partition, &corpus, &kb, 0, TrustLabel::N))?,
    );
    ensure(t0 == 0.6 && n0 == 0.2, || format!("community 0: {t0}/{n0}"))?;
    let (pt, pn) = (
        e(nec::overall_purity(&partition, &corpus, &kb, TrustLabel::T))?,
        e(nec::overall_purity(&partition, &corpus, &kb, TrustLabel::N))?,
    );
    ensure(pt == 4.0 / 7.0 && pn == 2.0 / 7.0, || format!("pooled: {pt}/{pn}"))?;
    let (ut, un) = (
        e(nec::unclustered_purity(&partition, &corpus, &kb, TrustLabel::T))?,
        e(nec::unclustered_purity(&partition, &corpus, &kb, TrustLabel::N))?,
    );
    ensure(ut == 0.0 && un == 0.5, || format!("unclustered: {ut}/{un}"))?;
    Ok(format!("3T+1N+1UNC -> {t0}/{n0}; pooled {pt:.4}/{pn:.4}; unclustered {ut}/{un}"))
}

// 7. Worked arithmetic: voter value and publisher score.
fn worked_arithmetic() -> Outcome {
    let mut pairs = Vec::new();
    let urls: Vec<String> = (0..5)
        .map(|i| format!("https://sixty.example/{i}"))
        .chain((0..5).map(|i| format!("https://ninety.example/{i}")))
        .collect();
    for u in &urls {
        pairs.push(("voter", u.as_str()));
    }
    let corpus = Corpus::build(&shares(&pairs), &PostKind::default_included());
    let mut kb = KnowledgeBase::new();
    kb.insert("sixty.example", Some(60)).unwrap();
    kb.insert("ninety.example", Some(90)).unwrap();
    let value = voters::characterize("voter", StrategyKind::UsersAll, &corpus, &ValidatedNetwork::default(), &kb);
    ensure(value == Some(75.0), || format!("voter value {value:?}"))?;

    let ids: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
    let pairs: Vec<(&str, &str)> = ids.iter().map(|v| (v.as_str(), "https://pub.example/x")).collect();
    let corpus = Corpus::build(&shares(&pairs), &PostKind::default_included());
    let profiles: Vec<VoterProfile> = ids
        .iter()
        .enumerate()
        .map(|(i, v)| VoterProfile {
            user_id: v.clone(),
            strategy: StrategyKind::UsersAll,
            articles: BTreeSet::new(),
            value: Some(if i < 5 { 75.0 } else { 60.0 }),
            diet: 1,
        })
        .collect();
    let scores = classify::publisher_scores(&profiles, &corpus, &KnowledgeBase::new(), ScoringOptions::default());
    ensure(scores.len() == 1 && scores[0].score == 67.5, || format!("publisher scores {scores:?}"))?;
    Ok("voter value 75, publisher score 67.5".into())
}

struct SyntheticRun {
    dir: tempfile::TempDir,
    corpus: SyntheticCorpus,
    config: PipelineConfig,
    report: RunReport,
    elapsed: Duration,
}

fn synthetic_spec() -> SyntheticSpec {
    SyntheticSpec {
        users_per_block: 200,
        publishers_per_pool: 15,
        urls_per_publisher: 10,
        p_in: 0.05,
        p_out: 0.005,
        unc_fraction: 0.2,
        seed: 2024,
        ..SyntheticSpec::default()
    }
}

fn synthetic_run() -> Result<SyntheticRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = synth::generate_synthetic(&synthetic_spec()).map_err(|e| e.to_string())?;
    let (posts, kb) = (dir.path().join("posts.jsonl"), dir.path().join("knowledge_base.csv"));
    corpus.write_posts(&posts).map_err(|e| e.to_string())?;
    corpus.write_knowledge_base(&kb).map_err(|e| e.to_string())?;
    let config = PipelineConfig {
        posts,
        knowledge_base: kb,
        output: dir.path().join("run"),
        ..Default::default()
    };
    let t = Instant::now();
    let report = Pipeline::new(config.clone())
        .and_then(|p| p.run())
        .map_err(|e| e.to_string())?;
    Ok(SyntheticRun {
        elapsed: t.elapsed(),
        dir,
        corpus,
        config,
        report,
    })
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn oracle_label(score: Option<u8>) -> TrustLabel {
    match score {
        Some(s) if s >= 60 => TrustLabel::T,
        Some(_) => TrustLabel::N,
        None => TrustLabel::Unc,
    }
}

// 8. Planted corpus end to end.
fn synthetic_end_to_end(run: &Result<SyntheticRun, String>) -> Outcome {
    let run = run.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let out = &run.config.output;
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // purity of the dominant level per block-aligned community
    let pool_of: BTreeMap<&str, usize> = run.corpus.publishers.iter().map(|p| (p.domain.as_str(), p.pool)).collect();
    let (_, partition_rows) = read_rows(&out.join("nec/partition.csv"))?;
    let (_, purity_rows) = read_rows(&out.join("nec/purity.csv"))?;
    let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &partition_rows {
        if r[1] != "-1" {
            members.entry(r[1].clone()).or_default().push(r[0].clone());
        }
    }
    let mut aligned = 0;
    for (id, urls) in &members {
        let pools: Vec<usize> = urls
            .iter()
            .map(|u| pool_of[oracle_canonical(u).unwrap().1.as_str()])
            .collect();
        let t_share = pools.iter().filter(|&&p| p == 0).count() as f64 / pools.len() as f64;
        if t_share == 0.5 {
            continue;
        }
        aligned += 1;
        let row = purity_rows.iter().find(|r| &r[0] == id).ok_or(format!("no purity row for {id}"))?;
        let dominant: f64 = if t_share > 0.5 { row[1].parse().unwrap() } else { row[2].parse().unwrap() };
        if dominant < 0.9 {
            failures.push(format!("community {id} dominant purity {dominant:.3}"));
        }
    }
    if aligned == 0 {
        failures.push(format!(
            "no block-aligned community: {} validated edges among {} tested pairs (BH threshold needs p <= {:.2e})",
            run.report.validation.n_edges,
            run.report.validation.n_tests,
            0.05 / run.report.validation.n_hypotheses as f64
        ));
    } else {
        notes.push(format!("{aligned} block-aligned communities"));
    }

    // coverage recount for every strategy and theta
    let recount = Recount::from_posts(&run.corpus.posts);
    let kb: BTreeMap<String, Option<u8>> = run
        .corpus
        .publishers
        .iter()
        .map(|p| (p.domain.clone(), (!p.withheld).then_some(p.score)))
        .collect();
    let label_of = |d: &str| oracle_label(kb.get(d).copied().flatten());
    let (_, edge_rows) = read_rows(&out.join("validation/edges.csv"))?;
    let validated: BTreeSet<&str> = edge_rows.iter().flat_map(|r| [r[0].as_str(), r[1].as_str()]).collect();
    let all_users: BTreeSet<&String> = recount.user_articles.keys().collect();
    let ds: BTreeSet<&String> = all_users
        .iter()
        .copied()
        .filter(|u| recount.user_articles[*u].iter().any(|a| validated.contains(a.as_str())))
        .collect();
    let universe: BTreeSet<&str> = recount.domain_of.values().map(String::as_str).collect();
    for row in &run.report.sweep {
        let base: BTreeSet<&String> = match row.strategy {
            StrategyKind::DsUrlNec | StrategyKind::DsAll => ds.clone(),
            StrategyKind::DsAllWoUsrNec => all_users.difference(&ds).copied().collect(),
            StrategyKind::UsersAll => all_users.clone(),
        };
        let v: Vec<&String> = base.into_iter().filter(|u| recount.diet(u) >= row.theta).collect();
        let reached = recount.publishers_of(v.iter().copied());
        for l in TrustLabel::ALL {
            let covered = reached.iter().filter(|d| label_of(d) == l).count();
            let total = universe.iter().filter(|d| label_of(d) == l).count();
            if row.coverage(l) != (covered, total) {
                return Err(format!(
                    "coverage {} theta {} level {l}: {:?} vs recount {:?}",
                    row.strategy,
                    row.theta,
                    row.coverage(l),
                    (covered, total)
                ));
            }
        }
        ensure(row.n_voters == v.len(), || format!("{} theta {}: voter count", row.strategy, row.theta))?;
    }
    notes.push(format!("coverage recount matches {} sweep rows", run.report.sweep.len()));

    // classification quality for USERS-ALL
    let users_all = run
        .report
        .strategies
        .iter()
        .find(|s| s.strategy == StrategyKind::UsersAll)
        .ok_or("USERS-ALL missing")?;
    match &users_all.cv {
        Some(cv) if cv.mean_balanced_accuracy >= 0.9 => {
            notes.push(format!("USERS-ALL balanced accuracy {:.3}", cv.mean_balanced_accuracy))
        }
        Some(cv) => failures.push(format!("USERS-ALL balanced accuracy {:.3}", cv.mean_balanced_accuracy)),
        None => failures.push(format!("USERS-ALL not evaluable: {:?}", users_all.cv_error)),
    }
    if run.elapsed >= Duration::from_secs(300) {
        failures.push(format!("run took {:?}", run.elapsed));
    }
    notes.push(format!("run {:.2?}", run.elapsed));
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{} | passed: {}", failures.join("; "), notes.join("; ")))
    }
}

// 9. Shuffled knowledge-base labels give chance-level accuracy.
fn null_label_control(run: &Result<SyntheticRun, String>) -> Outcome {
    let run = run.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let path = run.config.output.join("classify/scores_USERS-ALL.csv");
    let (_, rows) = read_rows(&path)?;
    let samples: Vec<(f64, TrustLabel)> = rows
        .iter()
        .filter(|r| r[3] != "UNC")
        .map(|r| (r[1].parse().unwrap(), if r[3] == "T" { TrustLabel::T } else { TrustLabel::N }))
        .collect();
    let null = classify::label_permutation_null(&samples, 10, 9, 500).map_err(|e| e.to_string())?;
    let mean = null.mean_balanced_accuracy;
    ensure((mean - 0.5).abs() <= 0.05, || format!("mean balanced accuracy {mean:.4} over 500 shuffles"))?;
    Ok(format!(
        "USERS-ALL, 500 label shuffles: balanced accuracy {mean:.4} (spread {:.3})",
        null.std_balanced_accuracy
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn expect_header(run: &Path, file: &str, header: &[&str]) -> Result<(), String> {
    let (got, _) = read_rows(&run.join(file))?;
    ensure(got == header, || format!("{file}: header {got:?}"))
}

// 10. Report formats and byte-identical reruns.
fn formats_and_determinism(run: &Result<SyntheticRun, String>) -> Outcome {
    let run = run.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let out = &run.config.output;
    expect_header(out, "nec/partition.csv", &["url", "community"])?;
    expect_header(out, "nec/summary.csv", &["nec", "n_users", "n_distinct_urls", "n_publishers", "n_shares"])?;
    expect_header(out, "nec/purity.csv", &["community", "purity_T", "purity_N"])?;
    expect_header(out, "validation/edges.csv", &["url_a", "url_b", "pvalue"])?;
    expect_header(out, "classify/coverage.csv", &["strategy", "T", "N", "UNC"])?;
    for k in StrategyKind::ALL {
        expect_header(out, &format!("classify/scores_{k}.csv"), &["domain", "score", "n_voters", "kb_label", "predicted"])?;
        expect_header(out, &format!("classify/worthy_{k}.csv"), &["rank", "domain", "score", "n_voters", "predicted"])?;
        for theta in 0..=30 {
            expect_header(
                out,
                &format!("voters/{k}_theta{theta:02}.csv"),
                &["user_id", "strategy", "value", "diet", "n_articles"],
            )?;
        }
    }
    let (_, purity) = read_rows(&out.join("nec/purity.csv"))?;
    ensure(purity.iter().any(|r| r[0] == "-1"), || "purity table lacks the unclustered row".into())?;
    let (_, coverage) = read_rows(&out.join("classify/coverage.csv"))?;
    ensure(coverage.len() == 4, || "coverage table needs one row per strategy".into())?;
    for fig in ["fig2_purity", "fig3_voters", "fig4_coverage", "fig5_accuracy", "fig6_knowledge"] {
        let (_, rows) = read_rows(&out.join(format!("figures/{fig}.csv")))?;
        ensure(!rows.is_empty(), || format!("{fig} empty"))?;
    }
    let (_, fig3) = read_rows(&out.join("figures/fig3_voters.csv"))?;
    for col in 1..=4 {
        let vals: Vec<usize> = fig3.iter().map(|r| r[col].parse().unwrap()).collect();
        ensure(vals.windows(2).all(|w| w[1] <= w[0]), || format!("fig3 column {col} increases"))?;
    }
    let (_, fig6) = read_rows(&out.join("figures/fig6_knowledge.csv"))?;
    ensure(fig6.iter().all(|r| r[1] == fig6[0][1]), || "DS-URL-NEC knowledge varies with theta".into())?;
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for key in ["config", "config_hash", "ingest", "bicm", "validation", "nec", "strategies", "sweep"] {
        ensure(report.get(key).is_some(), || format!("report.json lacks {key}"))?;
    }

    let first = snapshot(out);
    Pipeline::new(run.config.clone()).and_then(|p| p.run()).map_err(|e| e.to_string())?;
    let warm = snapshot(out);
    ensure(first == warm, || "rerun with cached stages differs".into())?;
    fs::remove_dir_all(out).map_err(|e| e.to_string())?;
    Pipeline::new(run.config.clone()).and_then(|p| p.run()).map_err(|e| e.to_string())?;
    let cold = snapshot(out);
    let differing: Vec<_> = first
        .iter()
        .filter(|(k, v)| cold.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty() && first.len() == cold.len(), || format!("fresh rerun differs: {differing:?}"))?;
    let _ = &run.dir;
    Ok(format!("all table formats present; {} files byte-identical across reruns", first.len()))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut check = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail}");
        results.push((n, name, outcome));
    };
    check(1, "BiCM degree reproduction", &degree_reproduction);
    check(2, "BiCM ensemble enumeration", &ensemble_oracle);
    check(3, "Poisson-binomial exactness", &poisson_binomial_exactness);
    check(4, "Benjamini-Hochberg oracle", &bh_oracle);
    check(5, "Louvain sanity", &louvain_sanity);
    check(6, "purity formulas", &purity_formulas);
    check(7, "worked arithmetic", &worked_arithmetic);
    let run = synthetic_run();
    check(8, "synthetic end-to-end", &|| synthetic_end_to_end(&run));
    check(9, "null-label control", &|| null_label_control(&run));
    check(10, "report formats and determinism", &|| formats_and_determinism(&run));

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
