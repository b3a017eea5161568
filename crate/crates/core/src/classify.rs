//! Publisher scores from voter values, publisher coverage, and the depth-one
//! decision tree evaluated with stratified cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, KnowledgeBase, TrustLabel};
use crate::voters::{mean_article_score, VoterProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherScore {
    pub domain: String,
    pub score: f64,
    pub n_voters: usize,
    pub kb_label: TrustLabel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Recompute each voter's value without their own articles of the
    /// publisher being scored.
    pub exclude_self_votes: bool,
}

/// Mean voter value per publisher.
///
/// A voter votes on every publisher they shared at least one article of in
/// the corpus, once per publisher. Voters without a value are ignored.
/// Publishers without votes are omitted.
pub fn publisher_scores<'a>(
    voters: impl IntoIterator<Item = &'a VoterProfile>,
    corpus: &Corpus,
    kb: &KnowledgeBase,
    opts: ScoringOptions,
) -> Vec<PublisherScore> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for voter in voters {
        let Some(value) = voter.value else { continue };
        for publisher in corpus.publishers_of(&voter.user_id) {
            let vote = if opts.exclude_self_votes {
                let others = voter
                    .articles
                    .iter()
                    .map(String::as_str)
                    .filter(|u| corpus.publisher_of(u) != Some(publisher));
                match mean_article_score(others, corpus, kb) {
                    Some(v) => v,
                    None => continue,
                }
            } else {
                value
            };
            let slot = acc.entry(publisher).or_default();
            slot.0 += vote;
            slot.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(domain, (sum, n))| PublisherScore {
            domain: domain.to_string(),
            score: sum / n as f64,
            n_voters: n,
            kb_label: kb.label(domain),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub label: TrustLabel,
    pub covered: usize,
    pub universe: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// T, N and UNC, in that order.
    pub levels: Vec<LevelCoverage>,
    pub covered: usize,
}

impl CoverageReport {
    pub fn level(&self, label: TrustLabel) -> &LevelCoverage {
        self.levels.iter().find(|l| l.label == label).expect("all levels present")
    }
}

/// Distinct corpus publishers reached by the voters, split by label.
pub fn coverage<'a>(
    voters: impl IntoIterator<Item = &'a str>,
    corpus: &Corpus,
    kb: &KnowledgeBase,
) -> CoverageReport {
    let reached: BTreeSet<&str> = voters
        .into_iter()
        .flat_map(|v| corpus.publishers_of(v))
        .collect();
    let universe = corpus.publishers();
    let levels: Vec<LevelCoverage> = TrustLabel::ALL
        .iter()
        .map(|&label| {
            let total = universe.iter().filter(|p| kb.label(p) == label).count();
            let covered = reached.iter().filter(|p| kb.label(p) == label).count();
            LevelCoverage {
                label,
                covered,
                universe: total,
                percentage: if total == 0 { 0.0 } else { 100.0 * covered as f64 / total as f64 },
            }
        })
        .collect();
    CoverageReport {
        covered: levels.iter().map(|l| l.covered).sum(),
        levels,
    }
}

/// Single-threshold classifier: scores `<= threshold` get `left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub threshold: f64,
    pub left: TrustLabel,
    pub right: TrustLabel,
}

impl Stump {
    pub fn predict(&self, score: f64) -> TrustLabel {
        if score <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

fn gini(t: usize, n: usize) -> f64 {
    let total = (t + n) as f64;
    if total == 0.0 {
        return 0.0;
    }
    let (pt, pn) = (t as f64 / total, n as f64 / total);
    1.0 - pt * pt - pn * pn
}

fn majority(t: usize, n: usize) -> TrustLabel {
    if t > n {
        TrustLabel::T
    } else {
        TrustLabel::N
    }
}

fn check_samples(samples: &[(f64, TrustLabel)]) -> Result<(usize, usize)> {
    let mut counts = (0, 0);
    for &(score, label) in samples {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite score {score}")));
        }
        match label {
            TrustLabel::T => counts.0 += 1,
            TrustLabel::N => counts.1 += 1,
            TrustLabel::Unc => {
                return Err(Error::InvalidArgument("UNC samples cannot be used for training".into()))
            }
        }
    }
    Ok(counts)
}

/// Fits a depth-one tree by minimizing weighted Gini impurity over the
/// midpoints between consecutive distinct scores. Ties go to the smallest
/// threshold; each side predicts its majority class (ties predict N).
pub fn fit_stump(samples: &[(f64, TrustLabel)]) -> Result<Stump> {
    let (n_t, n_n) = check_samples(samples)?;
    if n_t == 0 || n_n == 0 {
        return Err(Error::InvalidArgument("both classes are required".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = sorted.len() as f64;

    let mut best: Option<(f64, usize, usize, f64)> = None; // impurity, left T, left N, threshold
    let (mut lt, mut ln) = (0, 0);
    for i in 0..sorted.len() - 1 {
        match sorted[i].1 {
            TrustLabel::T => lt += 1,
            _ => ln += 1,
        }
        let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
        if lo == hi {
            continue;
        }
        let (rt, rn) = (n_t - lt, n_n - ln);
        let impurity = ((lt + ln) as f64 * gini(lt, ln) + (rt + rn) as f64 * gini(rt, rn)) / total;
        if best.is_none_or(|b| impurity < b.0 - 1e-12) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some((impurity, lt, ln, threshold));
        }
    }

    Ok(match best {
        Some((_, lt, ln, threshold)) => Stump {
            threshold,
            left: majority(lt, ln),
            right: majority(n_t - lt, n_n - ln),
        },
        None => {
            let label = majority(n_t, n_n);
            Stump {
                threshold: sorted[sorted.len() - 1].0,
                left: label,
                right: label,
            }
        }
    })
}

/// Confusion counts with T as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: TrustLabel, predicted: TrustLabel) {
        match (truth, predicted) {
            (TrustLabel::T, TrustLabel::T) => self.tp += 1,
            (TrustLabel::T, _) => self.fn_ += 1,
            (_, TrustLabel::T) => self.fp += 1,
            _ => self.tn += 1,
        }
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn tnr(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }

    /// `(TPR + TNR) / 2`.
    pub fn balanced_accuracy(&self) -> f64 {
        (self.tpr() + self.tnr()) / 2.0
    }
}

pub fn evaluate(stump: &Stump, samples: &[(f64, TrustLabel)]) -> Confusion {
    let mut c = Confusion::default();
    for &(score, label) in samples {
        c.record(label, stump.predict(score));
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub n_samples: usize,
    pub n_t: usize,
    pub n_n: usize,
    pub confusions: Vec<Confusion>,
    pub fold_balanced_accuracy: Vec<f64>,
    pub mean_balanced_accuracy: f64,
    /// Population standard deviation across folds.
    pub std_balanced_accuracy: f64,
    pub baseline: f64,
}

/// Stratified k-fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[TrustLabel], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [TrustLabel::T, TrustLabel::N] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

/// Stratified cross-validation of the stump. Fold count drops to the
/// minority class size when that is smaller than `folds`.
pub fn stratified_cv(samples: &[(f64, TrustLabel)], folds: usize, seed: u64) -> Result<CvReport> {
    let (n_t, n_n) = check_samples(samples)?;
    let minority = n_t.min(n_n);
    if minority < 2 {
        return Err(Error::InvalidArgument(format!(
            "minority class has {minority} samples, need at least 2"
        )));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let k = folds.min(minority);
    let labels: Vec<TrustLabel> = samples.iter().map(|s| s.1).collect();
    let fold_of = stratified_folds(&labels, k, seed);

    let mut confusions = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train): (Vec<_>, Vec<_>) = samples
            .iter()
            .zip(&fold_of)
            .partition(|(_, &fold)| fold == f);
        let train: Vec<(f64, TrustLabel)> = train.into_iter().map(|(s, _)| *s).collect();
        let test: Vec<(f64, TrustLabel)> = test.into_iter().map(|(s, _)| *s).collect();
        let stump = fit_stump(&train)?;
        confusions.push(evaluate(&stump, &test));
    }
    let bas: Vec<f64> = confusions.iter().map(Confusion::balanced_accuracy).collect();
    let mean = bas.iter().sum::<f64>() / k as f64;
    let var = bas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / k as f64;
    Ok(CvReport {
        folds: k,
        n_samples: samples.len(),
        n_t,
        n_n,
        confusions,
        fold_balanced_accuracy: bas,
        mean_balanced_accuracy: mean,
        std_balanced_accuracy: var.sqrt(),
        baseline: 0.5,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullControl {
    pub permutations: usize,
    pub mean_balanced_accuracy: f64,
    pub std_balanced_accuracy: f64,
}

/// Cross-validated balanced accuracy after randomly permuting the labels
/// across samples, averaged over `permutations` shuffles.
pub fn label_permutation_null(
    samples: &[(f64, TrustLabel)],
    folds: usize,
    seed: u64,
    permutations: usize,
) -> Result<NullControl> {
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<TrustLabel> = samples.iter().map(|s| s.1).collect();
    let mut means = Vec::with_capacity(permutations);
    for i in 0..permutations {
        labels.shuffle(&mut rng);
        let shuffled: Vec<(f64, TrustLabel)> =
            samples.iter().zip(&labels).map(|(s, &l)| (s.0, l)).collect();
        let report = stratified_cv(&shuffled, folds, seed.wrapping_add(i as u64 + 1))?;
        means.push(report.mean_balanced_accuracy);
    }
    let mean = means.iter().sum::<f64>() / permutations as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / permutations as f64;
    Ok(NullControl {
        permutations,
        mean_balanced_accuracy: mean,
        std_balanced_accuracy: var.sqrt(),
    })
}

/// Labeled publishers as classifier samples.
pub fn training_samples(scores: &[PublisherScore]) -> Vec<(f64, TrustLabel)> {
    scores
        .iter()
        .filter(|s| s.kb_label != TrustLabel::Unc)
        .map(|s| (s.score, s.kb_label))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorthyEntry {
    pub domain: String,
    pub score: f64,
    pub n_voters: usize,
    pub predicted: Option<TrustLabel>,
}

/// Unclassified publishers reached by voters, most engaged first and, among
/// equals, lowest score first. Predictions come from a stump fit on every
/// labeled publisher; they are absent when both classes are not present.
pub fn worthy_list(scores: &[PublisherScore]) -> Vec<WorthyEntry> {
    let stump = fit_stump(&training_samples(scores)).ok();
    let mut out: Vec<WorthyEntry> = scores
        .iter()
        .filter(|s| s.kb_label == TrustLabel::Unc)
        .map(|s| WorthyEntry {
            domain: s.domain.clone(),
            score: s.score,
            n_voters: s.n_voters,
            predicted: stump.map(|st| st.predict(s.score)),
        })
        .collect();
    out.sort_by(|a, b| {
        b.n_voters
            .cmp(&a.n_voters)
            .then(a.score.total_cmp(&b.score))
            .then(a.domain.cmp(&b.domain))
    });
    out
}

fn label_or_empty(l: Option<TrustLabel>) -> String {
    l.map(|l| l.to_string()).unwrap_or_default()
}

/// `domain,score,n_voters,kb_label,predicted`.
pub fn write_scores(path: impl AsRef<Path>, scores: &[PublisherScore], stump: Option<&Stump>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["domain", "score", "n_voters", "kb_label", "predicted"])?;
    for s in scores {
        w.write_record([
            s.domain.as_str(),
            &s.score.to_string(),
            &s.n_voters.to_string(),
            &s.kb_label.to_string(),
            &label_or_empty(stump.map(|st| st.predict(s.score))),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_worthy(path: impl AsRef<Path>, entries: &[WorthyEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "domain", "score", "n_voters", "predicted"])?;
    for (i, e) in entries.iter().enumerate() {
        w.write_record([
            &(i + 1).to_string(),
            e.domain.as_str(),
            &e.score.to_string(),
            &e.n_voters.to_string(),
            &label_or_empty(e.predicted),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
