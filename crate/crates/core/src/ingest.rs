//! Post corpora, URL normalization and the trust knowledge base.
//!
//! Posts arrive as JSON Lines. Every URL is canonicalized into an article
//! identity (lowercase host without a leading `www.`, no port, query or
//! fragment) and mapped onto its publisher domain. The knowledge base is a
//! two-column CSV of `domain,score`; an empty score marks the publisher as
//! unclassified.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};

/// Trust scores at or above this value are labeled trustworthy.
pub const TRUST_THRESHOLD: u8 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Original,
    Retweet,
    Quote,
    Reply,
}

impl PostKind {
    /// Kinds that enter the corpus when nothing else is configured.
    pub fn default_included() -> BTreeSet<PostKind> {
        [PostKind::Original, PostKind::Retweet, PostKind::Reply]
            .into_iter()
            .collect()
    }
}

impl FromStr for PostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(PostKind::Original),
            "retweet" => Ok(PostKind::Retweet),
            "quote" => Ok(PostKind::Quote),
            "reply" => Ok(PostKind::Reply),
            other => Err(Error::InvalidArgument(format!("unknown post kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub post_id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub urls: Vec<String>,
    pub kind: PostKind,
}

/// Posts read from a file, with the number of records that were skipped.
#[derive(Debug, Clone, Default)]
pub struct LoadedPosts {
    pub posts: Vec<RawPost>,
    pub malformed: usize,
}

/// Reads newline-delimited JSON posts.
///
/// Blank lines are ignored. Lines that fail to parse, carry an empty
/// `post_id`, or repeat an earlier `post_id` are skipped and counted.
pub fn load_posts(path: impl AsRef<Path>) -> Result<LoadedPosts> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LoadedPosts::default();
    let mut seen = HashSet::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawPost>(&line) {
            Ok(post) if post.post_id.is_empty() => {
                warn!("{}:{}: empty post_id", path.display(), lineno + 1);
                out.malformed += 1;
            }
            Ok(post) => {
                if seen.insert(post.post_id.clone()) {
                    out.posts.push(post);
                } else {
                    warn!("{}:{}: duplicate post_id {}", path.display(), lineno + 1, post.post_id);
                    out.malformed += 1;
                }
            }
            Err(e) => {
                warn!("{}:{}: {e}", path.display(), lineno + 1);
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

/// How a URL host is reduced to a publisher domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    /// Lowercase host with a single leading `www.` removed.
    #[default]
    Host,
    /// Registrable domain (public suffix plus one label).
    Registrable,
}

fn parse_absolute(url: &str) -> Result<Url> {
    let parsed = Url::parse(url.trim()).map_err(|e| Error::InvalidUrl {
        url: url.to_string(),
        reason: e.to_string(),
    })?;
    match parsed.host_str() {
        Some(h) if !h.is_empty() => Ok(parsed),
        _ => Err(Error::InvalidUrl {
            url: url.to_string(),
            reason: "no host".into(),
        }),
    }
}

fn normalized_host(parsed: &Url) -> String {
    let host = parsed.host_str().unwrap_or_default().to_ascii_lowercase();
    match host.strip_prefix("www.") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => host,
    }
}

/// Publisher domain of an absolute URL.
pub fn extract_domain(url: &str) -> Result<String> {
    extract_domain_with(url, DomainMode::Host)
}

pub fn extract_domain_with(url: &str, mode: DomainMode) -> Result<String> {
    let parsed = parse_absolute(url)?;
    let host = normalized_host(&parsed);
    Ok(match mode {
        DomainMode::Host => host,
        DomainMode::Registrable => psl::domain_str(&host).map(str::to_string).unwrap_or(host),
    })
}

/// Article identity of a URL: scheme, normalized host and path. `http` is
/// folded into `https`.
pub fn canonical_url(url: &str) -> Result<String> {
    let parsed = parse_absolute(url)?;
    let scheme = match parsed.scheme() {
        "http" => "https",
        other => other,
    };
    Ok(format!("{scheme}://{}{}", normalized_host(&parsed), parsed.path()))
}

/// One post sharing one article, kept for audit and share counts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ShareEvent {
    pub user_id: String,
    pub url: String,
    pub post_id: String,
}

/// Deduplicated user-article interactions.
///
/// `user_articles` is the interaction set: a user appears once per distinct
/// article, however many posts carried it. Share events keep multiplicity.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    articles: BTreeMap<String, String>,
    user_articles: BTreeMap<String, BTreeSet<String>>,
    share_events: Vec<ShareEvent>,
    skipped_urls: usize,
}

impl Corpus {
    /// Assembles a corpus from posts. Quote posts never contribute.
    pub fn build(posts: &[RawPost], include_kinds: &BTreeSet<PostKind>) -> Corpus {
        Self::build_with(posts, include_kinds, DomainMode::Host)
    }

    pub fn build_with(
        posts: &[RawPost],
        include_kinds: &BTreeSet<PostKind>,
        mode: DomainMode,
    ) -> Corpus {
        let mut corpus = Corpus::default();
        for post in posts {
            if post.kind == PostKind::Quote || !include_kinds.contains(&post.kind) {
                continue;
            }
            for raw in &post.urls {
                let resolved = canonical_url(raw).and_then(|u| Ok((extract_domain_with(raw, mode)?, u)));
                let (domain, url) = match resolved {
                    Ok(pair) => pair,
                    Err(e) => {
                        warn!("post {}: {e}", post.post_id);
                        corpus.skipped_urls += 1;
                        continue;
                    }
                };
                corpus.articles.entry(url.clone()).or_insert(domain);
                corpus
                    .user_articles
                    .entry(post.user_id.clone())
                    .or_default()
                    .insert(url.clone());
                corpus.share_events.push(ShareEvent {
                    user_id: post.user_id.clone(),
                    url,
                    post_id: post.post_id.clone(),
                });
            }
        }
        corpus.share_events.sort();
        corpus
    }

    pub fn is_empty(&self) -> bool {
        self.user_articles.is_empty()
    }

    /// Article URL to publisher domain.
    pub fn articles(&self) -> &BTreeMap<String, String> {
        &self.articles
    }

    pub fn publisher_of(&self, url: &str) -> Option<&str> {
        self.articles.get(url).map(String::as_str)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_articles.keys().map(String::as_str)
    }

    pub fn n_users(&self) -> usize {
        self.user_articles.len()
    }

    pub fn n_articles(&self) -> usize {
        self.articles.len()
    }

    pub fn publishers(&self) -> BTreeSet<&str> {
        self.articles.values().map(String::as_str).collect()
    }

    /// Distinct articles shared by a user (empty for unknown users).
    pub fn articles_of(&self, user: &str) -> impl Iterator<Item = &str> {
        self.user_articles
            .get(user)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn user_articles(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.user_articles
    }

    /// Distinct publishers a user shared: the user's information diet.
    pub fn publishers_of(&self, user: &str) -> BTreeSet<&str> {
        self.articles_of(user)
            .filter_map(|u| self.publisher_of(u))
            .collect()
    }

    /// `(user, url, domain)` triples in sorted order.
    pub fn interactions(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.user_articles.iter().flat_map(move |(user, urls)| {
            urls.iter()
                .map(move |u| (user.as_str(), u.as_str(), self.articles[u].as_str()))
        })
    }

    pub fn n_interactions(&self) -> usize {
        self.user_articles.values().map(BTreeSet::len).sum()
    }

    pub fn share_events(&self) -> &[ShareEvent] {
        &self.share_events
    }

    /// URLs that failed to parse while building.
    pub fn skipped_urls(&self) -> usize {
        self.skipped_urls
    }
}

/// Binary trust label plus the unclassified marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrustLabel {
    T,
    N,
    #[serde(rename = "UNC")]
    Unc,
}

impl TrustLabel {
    pub fn from_score(score: Option<u8>) -> TrustLabel {
        match score {
            Some(s) if s >= TRUST_THRESHOLD => TrustLabel::T,
            Some(_) => TrustLabel::N,
            None => TrustLabel::Unc,
        }
    }

    pub const ALL: [TrustLabel; 3] = [TrustLabel::T, TrustLabel::N, TrustLabel::Unc];
}

impl fmt::Display for TrustLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustLabel::T => "T",
            TrustLabel::N => "N",
            TrustLabel::Unc => "UNC",
        })
    }
}

/// Publisher domain to trust score; `None` marks an explicit UNC row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, Option<u8>>,
    duplicates: usize,
}

#[derive(Deserialize)]
struct KbRow {
    domain: String,
    score: Option<String>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, domain: &str, score: Option<u8>) -> Result<()> {
        if let Some(s) = score {
            if s > 100 {
                return Err(Error::InvalidArgument(format!("trust score {s} > 100")));
            }
        }
        if self.entries.insert(normalize_domain(domain), score).is_some() {
            self.duplicates += 1;
        }
        Ok(())
    }

    /// Loads a `domain,score` CSV with a header row.
    ///
    /// Duplicate domains keep the last row. Scores must be integers in
    /// `0..=100`; anything else aborts with the offending line number.
    pub fn load(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        if !(headers.iter().any(|h| h == "domain") && headers.iter().any(|h| h == "score")) {
            return Err(Error::KnowledgeBase {
                line: 1,
                reason: "header must contain `domain,score`".into(),
            });
        }

        let mut kb = KnowledgeBase::new();
        for (i, row) in reader.deserialize::<KbRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::KnowledgeBase {
                line,
                reason: e.to_string(),
            })?;
            let score = match row.score.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(raw) => {
                    let value: i64 = raw.parse().map_err(|_| Error::KnowledgeBase {
                        line,
                        reason: format!("score {raw:?} is not an integer"),
                    })?;
                    if !(0..=100).contains(&value) {
                        return Err(Error::KnowledgeBase {
                            line,
                            reason: format!("score {value} outside 0..100"),
                        });
                    }
                    Some(value as u8)
                }
            };
            let domain = normalize_domain(&row.domain);
            if kb.entries.contains_key(&domain) {
                warn!("{}:{line}: duplicate domain {domain}, keeping last", path.display());
            }
            kb.insert(&domain, score)?;
        }
        Ok(kb)
    }

    pub fn score(&self, domain: &str) -> Option<u8> {
        self.entries.get(domain).copied().flatten()
    }

    pub fn label(&self, domain: &str) -> TrustLabel {
        TrustLabel::from_score(self.score(domain))
    }

    pub fn entries(&self) -> &BTreeMap<String, Option<u8>> {
        &self.entries
    }

    /// Rows that overwrote an earlier entry for the same domain.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalize_domain(domain: &str) -> String {
    let d = domain.trim().to_ascii_lowercase();
    match d.strip_prefix("www.") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => d,
    }
}
