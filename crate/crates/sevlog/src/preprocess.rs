//! Normalization of raw log text into fixed-length token-index sequences.
//!
//! Raw messages pass through an ordered pipeline: filesystem paths are
//! deleted, the text is split on whitespace, tokens containing digits are
//! dropped (runtime parameters), ASCII special characters are stripped,
//! everything is lowercased, and stopwords are removed. Encoded sequences are
//! prepended with `[LME]`, padded with `[PD]`, and unseen tokens map to
//! `[UNK]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::SlSample;

pub const LME_TOKEN: &str = "[LME]";
pub const PAD_TOKEN: &str = "[PD]";
pub const UNK_TOKEN: &str = "[UNK]";

pub const LME_INDEX: usize = 0;
pub const PAD_INDEX: usize = 1;
pub const UNK_INDEX: usize = 2;

/// Environment variable holding a path that overrides the shipped stopword
/// list.
pub const STOPWORDS_ENV: &str = "SEVLOG_STOPWORDS";

const DEFAULT_STOPWORDS: &str = include_str!("data/stopwords.txt");

fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

/// Substrings that look like filesystem paths: two or more `/`-separated
/// segments, e.g. `/home/user/data/blk_123`.
fn path_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(/[^\s/]+){2,}/?").unwrap())
}

fn placeholder_regexes() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        [
            // printf-style, including named (%(key)s) and length modifiers
            r"%\([^)\s]*\)[a-zA-Z]",
            r"%[-+ #0]*[0-9*]*(?:\.[0-9*]+)?(?:hh|ll|[hlLqjzt])?[a-zA-Z%]",
            // brace-style: {}, {name}, {0}, {:.2f}
            r"\{[^{}]*\}",
            // shell-style: ${VAR}, $VAR
            r"\$\{[^}\s]*\}",
            r"\$[A-Za-z_][A-Za-z0-9_]*",
        ]
        .iter()
        .map(|p| Regex::new(p).unwrap())
        .collect()
    })
}

/// Removes format placeholders from a log instruction's static text.
///
/// Covers printf-style (`%s`, `%.2f`, `%(name)s`), brace-style (`{}`,
/// `{name}`, `{0}`) and shell-style (`$VAR`, `${VAR}`) syntaxes.
pub fn strip_placeholders(raw: &str) -> String {
    let mut text = raw.to_string();
    for re in placeholder_regexes() {
        text = re.replace_all(&text, " ").into_owned();
    }
    text
}

/// Text normalizer carrying the stopword list.
#[derive(Debug, Clone)]
pub struct Normalizer {
    stopwords: HashSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            stopwords: parse_word_list(DEFAULT_STOPWORDS),
        }
    }
}

impl Normalizer {
    pub fn with_stopwords(stopwords: HashSet<String>) -> Self {
        Normalizer { stopwords }
    }

    /// Uses the stopword file named by `SEVLOG_STOPWORDS` when set, the
    /// shipped list otherwise.
    pub fn from_env() -> Result<Self> {
        match std::env::var(STOPWORDS_ENV) {
            Ok(path) if !path.is_empty() => Self::from_stopword_file(Path::new(&path)),
            _ => Ok(Self::default()),
        }
    }

    pub fn from_stopword_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::with_stopwords(parse_word_list(&text)))
    }

    /// Normalizes one log message into tokens.
    ///
    /// Pipeline order: (1) delete path-like substrings, (2) split on
    /// whitespace, (3) drop tokens containing any digit, (4) strip ASCII
    /// special characters and drop tokens that become empty, (5) lowercase,
    /// (6) drop stopwords.
    pub fn normalize(&self, raw: &str) -> Vec<String> {
        let no_paths = path_regex().replace_all(raw, " ");
        no_paths
            .split_whitespace()
            .filter(|t| !t.chars().any(|c| c.is_ascii_digit()))
            .map(|t| {
                t.chars()
                    .filter(|c| !c.is_ascii() || c.is_ascii_alphanumeric())
                    .collect::<String>()
            })
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

fn default_normalizer() -> &'static Normalizer {
    static NORM: OnceLock<Normalizer> = OnceLock::new();
    NORM.get_or_init(Normalizer::default)
}

/// Normalizes with the shipped stopword list.
pub fn normalize_text(raw: &str) -> Vec<String> {
    default_normalizer().normalize(raw)
}

/// Token-to-index mapping with the three reserved entries at indices 0..3.
///
/// Frozen after pretraining; unseen tokens encode to `[UNK]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    size: usize,
}

impl Vocabulary {
    /// Builds a vocabulary over the pretraining corpus.
    ///
    /// Tokens are ordered by descending frequency, ties broken
    /// lexicographically, after the three reserved entries. Tokens equal to a
    /// reserved literal (as appear in masked samples) are not re-added.
    pub fn build(corpus: &[Vec<String>]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for tokens in corpus {
            for tok in tokens {
                if tok == LME_TOKEN || tok == PAD_TOKEN || tok == UNK_TOKEN {
                    continue;
                }
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ordered: Vec<(&str, u64)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut token_to_index = HashMap::with_capacity(ordered.len() + 3);
        token_to_index.insert(LME_TOKEN.to_string(), LME_INDEX);
        token_to_index.insert(PAD_TOKEN.to_string(), PAD_INDEX);
        token_to_index.insert(UNK_TOKEN.to_string(), UNK_INDEX);
        for (i, (tok, _)) in ordered.iter().enumerate() {
            token_to_index.insert((*tok).to_string(), 3 + i);
        }
        let size = token_to_index.len();
        Ok(Vocabulary { token_to_index, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_index.contains_key(token)
    }

    /// Deterministically ordered view for serialization.
    pub fn to_sorted_map(&self) -> BTreeMap<String, usize> {
        self.token_to_index
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    pub fn from_map(map: BTreeMap<String, usize>) -> Result<Self> {
        let size = map.len();
        let mut seen = vec![false; size];
        for (tok, &idx) in &map {
            if idx >= size || seen[idx] {
                return Err(Error::invalid(format!(
                    "vocabulary indices not contiguous at token {tok:?}"
                )));
            }
            seen[idx] = true;
        }
        for (tok, idx) in [(LME_TOKEN, LME_INDEX), (PAD_TOKEN, PAD_INDEX), (UNK_TOKEN, UNK_INDEX)] {
            if map.get(tok) != Some(&idx) {
                return Err(Error::invalid(format!("reserved token {tok} missing or misplaced")));
            }
        }
        Ok(Vocabulary {
            token_to_index: map.into_iter().collect(),
            size,
        })
    }
}

/// One encoded log: `[LME]` at position 0, then tokens, `[PD]`-padded to
/// `max_len + 1` total. The mask is true at `[LME]` and real-token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Encodes a token list to a fixed-length index sequence.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut indices = Vec::with_capacity(max_len + 1);
    let mut mask = Vec::with_capacity(max_len + 1);
    indices.push(LME_INDEX);
    mask.push(true);
    for tok in tokens.iter().take(max_len) {
        indices.push(vocab.index_of(tok));
        mask.push(true);
    }
    while indices.len() < max_len + 1 {
        indices.push(PAD_INDEX);
        mask.push(false);
    }
    TokenSequence { indices, mask }
}

/// Replaces tokens with the literal `[UNK]` in a random subset of samples so
/// pretraining sees contexts with missing words.
///
/// Each sample is selected independently with probability `sample_frac`; in a
/// selected sample, `ceil(token_frac * len)` positions are chosen uniformly
/// without replacement. Deterministic given `seed`.
pub fn mask_for_pretraining(
    samples: &[SlSample],
    sample_frac: f64,
    token_frac: f64,
    seed: u64,
) -> Vec<SlSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut sample = sample.clone();
        let selected = rand::Rng::random::<f64>(&mut rng) < sample_frac;
        if selected && !sample.tokens.is_empty() {
            let len = sample.tokens.len();
            let k = ((token_frac * len as f64).ceil() as usize).min(len);
            if k > 0 {
                for pos in rand::seq::index::sample(&mut rng, len, k) {
                    sample.tokens[pos] = UNK_TOKEN.to_string();
                }
            }
        }
        out.push(sample);
    }
    out
}
