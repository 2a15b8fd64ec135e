//! Severity-level corpus examination: n-gram uniqueness (normalized entropy
//! over the two severity groups) and sentiment coverage.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{SeverityGroup, SlSample};

const LEXICON_POSITIVE: &str = include_str!("data/lexicon_positive.txt");
const LEXICON_NEGATIVE: &str = include_str!("data/lexicon_negative.txt");

pub const DEFAULT_MIN_COUNT: u64 = 3;
pub const DEFAULT_SENTIMENT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

/// An n-gram with its per-group counts, severity entropy and sentiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramRecord {
    pub ngram: String,
    pub n: usize,
    pub count_normal: u64,
    pub count_abnormal: u64,
    pub entropy: f64,
    pub sentiment: Sentiment,
}

impl NGramRecord {
    pub fn total(&self) -> u64 {
        self.count_normal + self.count_abnormal
    }
}

/// Five-number summary of an entropy distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EntropyStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Per-sentiment-category split of n-grams across the severity groups.
/// Categories with no records are absent rather than zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub positive: Option<CategoryCoverage>,
    pub negative: Option<CategoryCoverage>,
    pub neutral: Option<CategoryCoverage>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CategoryCoverage {
    pub fraction_normal: f64,
    pub fraction_abnormal: f64,
    pub fraction_shared: f64,
    pub records: u64,
}

/// Extracts size-`n` windows over every sample, accumulating counts per
/// severity group. Records whose total count is at most `min_count` are
/// dropped. Output is sorted by n-gram for determinism; sentiment starts out
/// neutral until assigned.
pub fn extract_ngrams(samples: &[SlSample], n: usize, min_count: u64) -> Vec<NGramRecord> {
    assert!(n >= 1, "n must be at least 1");
    let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
    for sample in samples {
        if sample.tokens.len() < n {
            continue;
        }
        for window in sample.tokens.windows(n) {
            let entry = counts.entry(window.join(" ")).or_insert((0, 0));
            match sample.group {
                SeverityGroup::Normal => entry.0 += 1,
                SeverityGroup::Abnormal => entry.1 += 1,
            }
        }
    }
    let mut records: Vec<NGramRecord> = counts
        .into_iter()
        .filter(|(_, (a, b))| a + b > min_count)
        .map(|(ngram, (count_normal, count_abnormal))| NGramRecord {
            ngram,
            n,
            count_normal,
            count_abnormal,
            entropy: ngram_entropy(count_normal, count_abnormal).expect("nonzero total"),
            sentiment: Sentiment::Neutral,
        })
        .collect();
    records.sort_by(|a, b| a.ngram.cmp(&b.ngram));
    records
}

/// Normalized Shannon entropy of an n-gram's severity association.
///
/// Two outcomes in base 2, so the normalization factor is one: the result is
/// 0 when the n-gram sits in a single group and 1 when the counts are equal.
pub fn ngram_entropy(count_normal: u64, count_abnormal: u64) -> Result<f64> {
    let total = count_normal + count_abnormal;
    if total == 0 {
        return Err(Error::invalid("entropy of an n-gram with zero total count"));
    }
    let p = count_normal as f64 / total as f64;
    let term = |x: f64| if x > 0.0 { x * x.log2() } else { 0.0 };
    Ok(-(term(p) + term(1.0 - p)))
}

/// Type-7 (linear interpolation) quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary over the records' entropies.
pub fn entropy_stats(records: &[NGramRecord]) -> Result<EntropyStats> {
    if records.is_empty() {
        return Err(Error::invalid("entropy stats over an empty record list"));
    }
    let mut entropies: Vec<f64> = records.iter().map(|r| r.entropy).collect();
    entropies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EntropyStats {
        min: entropies[0],
        q1: quantile_sorted(&entropies, 0.25),
        median: quantile_sorted(&entropies, 0.5),
        q3: quantile_sorted(&entropies, 0.75),
        max: entropies[entropies.len() - 1],
    })
}

/// Maps a token list to a polarity score; pluggable so a model-backed scorer
/// can stand in for the lexicon.
pub trait SentimentScorer {
    fn score(&self, tokens: &[&str]) -> f64;
}

/// Word-polarity lexicon scorer: score = (sum of per-token polarities) /
/// (number of tokens).
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl Default for LexiconScorer {
    fn default() -> Self {
        let parse = |text: &str| {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.to_lowercase())
                .collect()
        };
        LexiconScorer {
            positive: parse(LEXICON_POSITIVE),
            negative: parse(LEXICON_NEGATIVE),
        }
    }
}

impl LexiconScorer {
    pub fn new(positive: HashSet<String>, negative: HashSet<String>) -> Self {
        LexiconScorer { positive, negative }
    }
}

impl SentimentScorer for LexiconScorer {
    fn score(&self, tokens: &[&str]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let sum: i64 = tokens
            .iter()
            .map(|t| {
                if self.positive.contains(*t) {
                    1
                } else if self.negative.contains(*t) {
                    -1
                } else {
                    0
                }
            })
            .sum();
        sum as f64 / tokens.len() as f64
    }
}

/// Buckets an n-gram into positive / negative / neutral around `tau`.
pub fn classify_sentiment(ngram: &str, scorer: &dyn SentimentScorer, tau: f64) -> Sentiment {
    let tokens: Vec<&str> = ngram.split_whitespace().collect();
    let score = scorer.score(&tokens);
    if score > tau {
        Sentiment::Positive
    } else if score < -tau {
        Sentiment::Negative
    } else {
        Sentiment::Neutral
    }
}

pub fn assign_sentiment(records: &mut [NGramRecord], scorer: &dyn SentimentScorer, tau: f64) {
    for record in records {
        record.sentiment = classify_sentiment(&record.ngram, scorer, tau);
    }
}

/// Within each sentiment category, splits n-grams into group-exclusive and
/// shared: normal-only when the abnormal count is zero, abnormal-only when
/// the normal count is zero, shared otherwise.
pub fn coverage_report(records: &[NGramRecord]) -> CoverageReport {
    let mut per: BTreeMap<Sentiment, (u64, u64, u64)> = BTreeMap::new();
    for r in records {
        let entry = per.entry(r.sentiment).or_insert((0, 0, 0));
        if r.count_abnormal == 0 {
            entry.0 += 1;
        } else if r.count_normal == 0 {
            entry.1 += 1;
        } else {
            entry.2 += 1;
        }
    }
    let category = |s: Sentiment| {
        per.get(&s).map(|&(normal, abnormal, shared)| {
            let total = (normal + abnormal + shared) as f64;
            CategoryCoverage {
                fraction_normal: normal as f64 / total,
                fraction_abnormal: abnormal as f64 / total,
                fraction_shared: shared as f64 / total,
                records: normal + abnormal + shared,
            }
        })
    };
    CoverageReport {
        positive: category(Sentiment::Positive),
        negative: category(Sentiment::Negative),
        neutral: category(Sentiment::Neutral),
    }
}

/// Full study report as emitted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub sample_count: usize,
    pub per_n: BTreeMap<usize, NGramSummary>,
    pub pooled_entropy: Option<EntropyStats>,
    pub coverage: CoverageReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramSummary {
    pub records: usize,
    pub entropy: Option<EntropyStats>,
}

/// Runs the full examination: n-grams for each requested `n`, entropy
/// distributions per n and pooled, sentiment coverage over all records.
pub fn run_study(
    samples: &[SlSample],
    ns: &[usize],
    min_count: u64,
    scorer: &dyn SentimentScorer,
    tau: f64,
) -> (StudyReport, Vec<NGramRecord>) {
    let mut all_records = Vec::new();
    let mut per_n = BTreeMap::new();
    for &n in ns {
        let mut records = extract_ngrams(samples, n, min_count);
        assign_sentiment(&mut records, scorer, tau);
        per_n.insert(
            n,
            NGramSummary {
                records: records.len(),
                entropy: entropy_stats(&records).ok(),
            },
        );
        all_records.extend(records);
    }
    let report = StudyReport {
        sample_count: samples.len(),
        pooled_entropy: entropy_stats(&all_records).ok(),
        coverage: coverage_report(&all_records),
        per_n,
    };
    (report, all_records)
}
