//! Mining log instructions out of source code.
//!
//! Extraction is pattern-based, not AST-based: per-language idiom tables
//! recognize common logging calls (`logging.<level>`, `LOG.<level>`,
//! `spdlog::<level>`, `LOG(LEVEL) <<`, ...) and pull out the string-literal
//! message and the log level. Unrecognizable files simply yield nothing.
//!
//! Levels fold into two severity groups: `info` is *normal*; `error`,
//! `fatal` and `critical` are *abnormal*. Everything else (warn, debug,
//! trace, ...) is excluded from the severity-level dataset.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::preprocess::{strip_placeholders, Normalizer};

/// Source-language idiom table to apply during extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageProfile {
    Python,
    Java,
    Cpp,
}

impl LanguageProfile {
    /// Picks a profile from a file extension; unknown extensions are skipped.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext {
            "py" => Some(LanguageProfile::Python),
            "java" => Some(LanguageProfile::Java),
            "cpp" | "cc" | "cxx" | "hpp" | "h" => Some(LanguageProfile::Cpp),
            _ => None,
        }
    }
}

/// The two severity groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityGroup {
    Normal,
    Abnormal,
}

impl fmt::Display for SeverityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeverityGroup::Normal => write!(f, "normal"),
            SeverityGroup::Abnormal => write!(f, "abnormal"),
        }
    }
}

/// Maps a canonical lowercase level name to its severity group.
///
/// `info` is normal; `error`, `fatal`, `critical` are abnormal; intermediate
/// levels (warn, debug, trace, notice, ...) map to `None` and are excluded.
pub fn map_severity(level_name: &str) -> Option<SeverityGroup> {
    match level_name {
        "info" => Some(SeverityGroup::Normal),
        "error" | "fatal" | "critical" => Some(SeverityGroup::Abnormal),
        _ => None,
    }
}

/// Folds level-name aliases into canonical names; unknown names pass through
/// lowercased (and fall out at severity mapping).
fn canonical_level(raw: &str) -> String {
    let lower = raw.to_lowercase();
    match lower.as_str() {
        "err" | "exception" | "severe" => "error".to_string(),
        "crit" => "critical".to_string(),
        "warning" => "warn".to_string(),
        _ => lower,
    }
}

/// One recognized log call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInstruction {
    /// Literal message portion, concatenated pieces joined by single spaces.
    pub static_text: String,
    /// Canonical lowercase level name as mapped from the source.
    pub level_name: String,
    /// `path:line` locator.
    pub source_locator: String,
    pub profile: LanguageProfile,
}

/// One record of the severity-level dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlSample {
    pub tokens: Vec<String>,
    pub group: SeverityGroup,
    pub source: String,
}

#[derive(Clone, Copy)]
enum CallStyle {
    /// `recv.level(args...)`: message literals come from the first argument.
    Paren,
    /// `MACRO(LEVEL) << parts...`: literals come from the streamed parts.
    Stream,
}

struct LogPattern {
    regex: Regex,
    style: CallStyle,
    single_quotes: bool,
}

fn patterns_for(profile: LanguageProfile) -> &'static [LogPattern] {
    static PYTHON: OnceLock<Vec<LogPattern>> = OnceLock::new();
    static JAVA: OnceLock<Vec<LogPattern>> = OnceLock::new();
    static CPP: OnceLock<Vec<LogPattern>> = OnceLock::new();

    let build = |defs: &[(&str, CallStyle, bool)]| -> Vec<LogPattern> {
        defs.iter()
            .map(|(pat, style, single_quotes)| LogPattern {
                regex: Regex::new(pat).unwrap(),
                style: *style,
                single_quotes: *single_quotes,
            })
            .collect()
    };

    match profile {
        LanguageProfile::Python => PYTHON.get_or_init(|| {
            build(&[(
                r"\b(?i:logger|logging|log)\s*\.\s*(?P<level>debug|info|warning|warn|error|critical|fatal|exception)\s*\(",
                CallStyle::Paren,
                true,
            )])
        }),
        LanguageProfile::Java => JAVA.get_or_init(|| {
            build(&[(
                r"\b(?i:logger|log)\s*\.\s*(?P<level>trace|debug|info|warning|warn|error|fatal|severe|config|finest|finer|fine)\s*\(",
                CallStyle::Paren,
                false,
            )])
        }),
        LanguageProfile::Cpp => CPP.get_or_init(|| {
            build(&[
                (
                    r"\bD?LOG\s*\(\s*(?P<level>INFO|WARNING|ERROR|FATAL)\s*\)\s*<<",
                    CallStyle::Stream,
                    false,
                ),
                (
                    r"\bBOOST_LOG_TRIVIAL\s*\(\s*(?P<level>trace|debug|info|warning|error|fatal)\s*\)\s*<<",
                    CallStyle::Stream,
                    false,
                ),
                (
                    r"\bspdlog\s*::\s*(?P<level>trace|debug|info|warn|error|critical)\s*\(",
                    CallStyle::Paren,
                    false,
                ),
                (
                    r"\b(?i:logger|log)\s*->\s*(?P<level>trace|debug|info|warn|error|critical)\s*\(",
                    CallStyle::Paren,
                    false,
                ),
                (
                    r"\bSPDLOG_(?P<level>TRACE|DEBUG|INFO|WARN|ERROR|CRITICAL)\s*\(",
                    CallStyle::Paren,
                    false,
                ),
            ])
        }),
    }
}

/// Returns the first top-level argument of a call, scanning from just after
/// the opening parenthesis. Parentheses and commas inside string literals are
/// ignored; unclosed calls take the rest of the line.
fn first_argument(rest: &str, single_quotes: bool) -> &str {
    let mut depth = 1usize;
    let mut in_string: Option<char> = None;
    let mut escaped = false;
    for (i, c) in rest.char_indices() {
        if let Some(quote) = in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == quote {
                in_string = None;
            }
            continue;
        }
        match c {
            '"' => in_string = Some('"'),
            '\'' if single_quotes => in_string = Some('\''),
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return &rest[..i];
                }
            }
            ',' if depth == 1 => return &rest[..i],
            _ => {}
        }
    }
    rest
}

/// For stream-style calls: everything up to the statement-ending `;` (outside
/// strings) or the end of the line.
fn stream_region(rest: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in rest.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            ';' => return &rest[..i],
            _ => {}
        }
    }
    rest
}

/// Collects the contents of every string literal in `region`, resolving the
/// common escape sequences.
fn collect_literals(region: &str, single_quotes: bool) -> Vec<String> {
    let mut literals = Vec::new();
    let mut current: Option<(char, String)> = None;
    let mut escaped = false;
    for c in region.chars() {
        match &mut current {
            Some((quote, buf)) => {
                if escaped {
                    match c {
                        'n' | 't' | 'r' => buf.push(' '),
                        other => buf.push(other),
                    }
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == *quote {
                    literals.push(std::mem::take(buf));
                    current = None;
                } else {
                    buf.push(c);
                }
            }
            None => {
                if c == '"' || (single_quotes && c == '\'') {
                    current = Some((c, String::new()));
                    escaped = false;
                }
            }
        }
    }
    literals
}

/// Extracts every recognized log call from one source file's content.
///
/// Best-effort pattern matching: calls whose message holds no string literal
/// are skipped, and concatenated literal pieces are joined with a single
/// space. `file_label` seeds the `path:line` locators.
pub fn extract_instructions(
    source_text: &str,
    profile: LanguageProfile,
    file_label: &str,
) -> Vec<RawInstruction> {
    let mut out = Vec::new();
    for (line_idx, line) in source_text.lines().enumerate() {
        for pattern in patterns_for(profile) {
            for caps in pattern.regex.captures_iter(line) {
                let level = canonical_level(&caps["level"]);
                let rest = &line[caps.get(0).unwrap().end()..];
                let region = match pattern.style {
                    CallStyle::Paren => first_argument(rest, pattern.single_quotes),
                    CallStyle::Stream => stream_region(rest),
                };
                let pieces = collect_literals(region, pattern.single_quotes);
                let static_text = pieces
                    .iter()
                    .map(|p| p.trim())
                    .filter(|p| !p.is_empty())
                    .collect::<Vec<_>>()
                    .join(" ");
                if static_text.is_empty() {
                    continue;
                }
                out.push(RawInstruction {
                    static_text,
                    level_name: level,
                    source_locator: format!("{file_label}:{}", line_idx + 1),
                    profile,
                });
            }
        }
    }
    out
}

/// Builds severity-level samples from extracted instructions.
///
/// Instructions with excluded levels are dropped; static texts lose their
/// format placeholders and run through the same normalization chain as target
/// logs. Samples whose token list comes out empty are dropped. Input order is
/// preserved.
pub fn build_sl_dataset(instructions: &[RawInstruction], normalizer: &Normalizer) -> Vec<SlSample> {
    instructions
        .iter()
        .filter_map(|inst| {
            let group = map_severity(&inst.level_name)?;
            let tokens = normalizer.normalize(&strip_placeholders(&inst.static_text));
            if tokens.is_empty() {
                return None;
            }
            Some(SlSample {
                tokens,
                group,
                source: inst.source_locator.clone(),
            })
        })
        .collect()
}

/// Walks a source tree and mines it into a severity-level dataset.
///
/// Files are visited in path order so the result is deterministic. Files with
/// unknown extensions, unreadable files and invalid UTF-8 are skipped.
pub fn mine_tree(root: &Path, normalizer: &Normalizer) -> Result<Vec<SlSample>> {
    if !root.exists() {
        return Err(Error::invalid(format!("source directory {} does not exist", root.display())));
    }
    let mut samples = Vec::new();
    for entry in WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
    {
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let Some(profile) = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(LanguageProfile::from_extension)
        else {
            continue;
        };
        let Ok(bytes) = fs::read(path) else { continue };
        let text = String::from_utf8_lossy(&bytes);
        let label = path.display().to_string();
        let instructions = extract_instructions(&text, profile, &label);
        samples.extend(build_sl_dataset(&instructions, normalizer));
    }
    Ok(samples)
}

/// Writes SL samples as line-delimited JSON.
pub fn write_sl_file(path: &Path, samples: &[SlSample]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for sample in samples {
        serde_json::to_writer(&mut file, sample)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a line-delimited JSON SL dataset.
pub fn read_sl_file(path: &Path) -> Result<Vec<SlSample>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SlSample = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: bad SL record: {e}", path.display(), idx + 1))
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
