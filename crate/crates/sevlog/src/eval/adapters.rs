//! Dataset adapters. Each adapter strips headers (timestamps, hostnames,
//! severity columns) so downstream normalization only sees message content.
//!
//! Formats:
//! - `bgl`: space-separated lines whose first field is `-` for normal logs
//!   and an alert tag otherwise; epoch seconds in the second field; message
//!   content from field 9 on.
//! - `hdfs`: raw log lines (`yymmdd hhmmss pid LEVEL component: content`)
//!   paired with a block-id label table (`BlockId,Label` CSV); block ids
//!   double as sequence group keys.
//! - `generic`: configurable field positions, for synthetic and in-house
//!   formats.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::LabeledLog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Bgl,
    Hdfs,
    Generic,
}

/// Per-dataset adapter configuration, loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    pub log_path: PathBuf,
    /// Block-id label table (hdfs format).
    #[serde(default)]
    pub label_path: Option<PathBuf>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    /// Regex extracting a sequence group key from the raw line.
    #[serde(default)]
    pub group_key_regex: Option<String>,
    /// Fixed time-window size for sequence grouping.
    #[serde(default)]
    pub window_seconds: Option<i64>,
    /// Column overrides; each format has defaults.
    #[serde(default)]
    pub timestamp_field: Option<usize>,
    #[serde(default)]
    pub label_field: Option<usize>,
    #[serde(default)]
    pub message_start_field: Option<usize>,
}

fn default_train_frac() -> f64 {
    0.8
}

impl DatasetConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: DatasetConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn group_regex(&self) -> Result<Option<Regex>> {
        match &self.group_key_regex {
            None => Ok(None),
            Some(pat) => Regex::new(pat)
                .map(Some)
                .map_err(|e| Error::invalid(format!("bad group key regex: {e}"))),
        }
    }
}

pub const HDFS_BLOCK_ID_PATTERN: &str = r"blk_-?[0-9]+";

/// Loads and time-orders a dataset according to its adapter config.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<Vec<LabeledLog>> {
    let text = fs::read_to_string(&cfg.log_path)?;
    let mut logs = match cfg.format {
        DatasetFormat::Bgl => parse_bgl(&text, cfg)?,
        DatasetFormat::Hdfs => parse_hdfs(&text, cfg)?,
        DatasetFormat::Generic => parse_generic(&text, cfg)?,
    };
    logs.sort_by_key(|l| l.timestamp);
    if logs.is_empty() {
        return Err(Error::invalid(format!(
            "no parseable logs in {}",
            cfg.log_path.display()
        )));
    }
    Ok(logs)
}

fn group_key_for(line: &str, regex: &Option<Regex>) -> Option<String> {
    regex
        .as_ref()
        .and_then(|re| re.find(line))
        .map(|m| m.as_str().to_string())
}

fn parse_bgl(text: &str, cfg: &DatasetConfig) -> Result<Vec<LabeledLog>> {
    let label_field = cfg.label_field.unwrap_or(0);
    let ts_field = cfg.timestamp_field.unwrap_or(1);
    let msg_start = cfg.message_start_field.unwrap_or(9);
    let group_regex = cfg.group_regex()?;
    let mut logs = Vec::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() <= msg_start.max(ts_field).max(label_field) {
            continue;
        }
        let Ok(timestamp) = fields[ts_field].parse::<i64>() else { continue };
        logs.push(LabeledLog {
            timestamp,
            message: fields[msg_start..].join(" "),
            label: Some(fields[label_field] != "-"),
            group_key: group_key_for(line, &group_regex),
        });
    }
    Ok(logs)
}

/// Days from the civil epoch for a Gregorian date; no leap seconds.
fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn hdfs_timestamp(date: &str, time: &str) -> Option<i64> {
    if date.len() != 6 || time.len() != 6 {
        return None;
    }
    let yy: i64 = date[0..2].parse().ok()?;
    let month: u32 = date[2..4].parse().ok()?;
    let day: u32 = date[4..6].parse().ok()?;
    let hour: i64 = time[0..2].parse().ok()?;
    let minute: i64 = time[2..4].parse().ok()?;
    let second: i64 = time[4..6].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    let year = if yy < 70 { 2000 + yy } else { 1900 + yy };
    Some(days_from_civil(year, month, day) * 86_400 + hour * 3_600 + minute * 60 + second)
}

fn parse_hdfs_labels(path: &Path) -> Result<HashMap<String, bool>> {
    let text = fs::read_to_string(path)?;
    let mut labels = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.to_ascii_lowercase().starts_with("blockid") {
            continue;
        }
        let Some((block, label)) = line.split_once(',') else { continue };
        labels.insert(block.trim().to_string(), label.trim().eq_ignore_ascii_case("anomaly"));
    }
    Ok(labels)
}

fn parse_hdfs(text: &str, cfg: &DatasetConfig) -> Result<Vec<LabeledLog>> {
    let msg_start = cfg.message_start_field.unwrap_or(5);
    let labels = match &cfg.label_path {
        Some(path) => Some(parse_hdfs_labels(path)?),
        None => None,
    };
    let block_regex = Regex::new(
        cfg.group_key_regex.as_deref().unwrap_or(HDFS_BLOCK_ID_PATTERN),
    )
    .map_err(|e| Error::invalid(format!("bad group key regex: {e}")))?;
    let mut logs = Vec::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() <= msg_start {
            continue;
        }
        let Some(timestamp) = hdfs_timestamp(fields[0], fields[1]) else { continue };
        let group_key = block_regex.find(line).map(|m| m.as_str().to_string());
        let label = match (&labels, &group_key) {
            (Some(table), Some(key)) => table.get(key).copied(),
            _ => None,
        };
        logs.push(LabeledLog {
            timestamp,
            message: fields[msg_start..].join(" "),
            label,
            group_key,
        });
    }
    Ok(logs)
}

fn parse_generic(text: &str, cfg: &DatasetConfig) -> Result<Vec<LabeledLog>> {
    let ts_field = cfg.timestamp_field.unwrap_or(0);
    let label_field = cfg.label_field;
    let msg_start = cfg.message_start_field.unwrap_or_else(|| {
        1 + ts_field.max(label_field.unwrap_or(0))
    });
    let group_regex = cfg.group_regex()?;
    let mut logs = Vec::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() <= msg_start.max(ts_field) {
            continue;
        }
        let Ok(timestamp) = fields[ts_field].parse::<i64>() else { continue };
        let label = match label_field {
            Some(i) => match fields.get(i).map(|f| f.parse::<u8>()) {
                Some(Ok(v)) => Some(v != 0),
                _ => None,
            },
            None => None,
        };
        logs.push(LabeledLog {
            timestamp,
            message: fields[msg_start..].join(" "),
            label,
            group_key: group_key_for(line, &group_regex),
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str, name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn bgl_lines_parse_labels_and_content() {
        let text = "\
- 1117838570 2005.06.03 R02-M1-N0 2005-06-03-15.42.50.363779 R02-M1-N0 RAS KERNEL INFO instruction cache parity error corrected\n\
KERNDTLB 1117838573 2005.06.03 R23-M0-NE 2005-06-03-15.42.53.631849 R23-M0-NE RAS KERNEL FATAL data TLB error interrupt\n";
        let (_dir, path) = write_temp(text, "bgl.log");
        let cfg = DatasetConfig {
            format: DatasetFormat::Bgl,
            log_path: path,
            label_path: None,
            train_frac: 0.8,
            group_key_regex: None,
            window_seconds: Some(21_600),
            timestamp_field: None,
            label_field: None,
            message_start_field: None,
        };
        let logs = load_dataset(&cfg).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].label, Some(false));
        assert_eq!(logs[0].message, "instruction cache parity error corrected");
        assert_eq!(logs[1].label, Some(true));
        assert_eq!(logs[1].timestamp, 1117838573);
    }

    #[test]
    fn hdfs_lines_pair_with_block_labels() {
        let log_text = "\
081109 203615 148 INFO dfs.DataNode$PacketResponder: PacketResponder 1 for block blk_38865049064139660 terminating\n\
081109 203807 222 INFO dfs.DataNode$PacketResponder: PacketResponder 2 for block blk_-6952295868487656571 terminating\n";
        let labels = "BlockId,Label\nblk_38865049064139660,Normal\nblk_-6952295868487656571,Anomaly\n";
        let (_d1, log_path) = write_temp(log_text, "hdfs.log");
        let (_d2, label_path) = write_temp(labels, "labels.csv");
        let cfg = DatasetConfig {
            format: DatasetFormat::Hdfs,
            log_path,
            label_path: Some(label_path),
            train_frac: 0.8,
            group_key_regex: None,
            window_seconds: None,
            timestamp_field: None,
            label_field: None,
            message_start_field: None,
        };
        let logs = load_dataset(&cfg).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].group_key.as_deref(), Some("blk_38865049064139660"));
        assert_eq!(logs[0].label, Some(false));
        assert_eq!(logs[1].label, Some(true));
        assert!(logs[0].message.starts_with("PacketResponder 1"));
        assert!(logs[1].timestamp > logs[0].timestamp);
    }

    #[test]
    fn hdfs_block_grouping_matches_hand_count() {
        let mut text = String::new();
        // 50 lines over 3 blocks: 20 of A, 18 of B, 12 of C
        for i in 0..50 {
            let block = if i % 5 < 2 {
                "blk_100"
            } else if i % 5 < 4 && i < 45 {
                "blk_-200"
            } else {
                "blk_300"
            };
            text.push_str(&format!(
                "081109 20{:04} 35 INFO dfs.FSNamesystem: BLOCK* ask {block} to replicate\n",
                i
            ));
        }
        let (_dir, path) = write_temp(&text, "hdfs.log");
        let cfg = DatasetConfig {
            format: DatasetFormat::Hdfs,
            log_path: path,
            label_path: None,
            train_frac: 0.8,
            group_key_regex: None,
            window_seconds: None,
            timestamp_field: None,
            label_field: None,
            message_start_field: None,
        };
        let logs = load_dataset(&cfg).unwrap();
        let groups = super::super::group_by_key(&logs).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups["blk_100"].len(), 20);
        assert_eq!(groups["blk_-200"].len(), 18);
        assert_eq!(groups["blk_300"].len(), 12);
    }

    #[test]
    fn generic_format_reads_labels_and_groups() {
        let text = "1000 0 blk_1 service started cleanly\n1060 1 blk_2 fatal crash loop detected\n";
        let (_dir, path) = write_temp(text, "generic.log");
        let cfg = DatasetConfig {
            format: DatasetFormat::Generic,
            log_path: path,
            label_path: None,
            train_frac: 0.8,
            group_key_regex: Some("blk_[0-9]+".to_string()),
            window_seconds: None,
            timestamp_field: Some(0),
            label_field: Some(1),
            message_start_field: Some(2),
        };
        let logs = load_dataset(&cfg).unwrap();
        assert_eq!(logs[0].label, Some(false));
        assert_eq!(logs[1].label, Some(true));
        assert_eq!(logs[0].group_key.as_deref(), Some("blk_1"));
        assert_eq!(logs[0].message, "blk_1 service started cleanly");
    }

    #[test]
    fn hdfs_timestamps_are_monotone_over_a_day_boundary() {
        let a = hdfs_timestamp("081109", "235959").unwrap();
        let b = hdfs_timestamp("081110", "000001").unwrap();
        assert_eq!(b - a, 2);
    }
}
