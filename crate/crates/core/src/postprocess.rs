//! OCR text cleanup, domain extraction and cross-frame repair.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_SMOOTH_RADIUS: usize = 2;
pub const DEFAULT_SMOOTH_EDIT: usize = 2;
/// Minimum number of neighboring frames that must agree on a replacement.
pub const MIN_SUPPORT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NoBrowser,
    OcrFailed,
    Unparseable,
    Smoothed,
}

impl Status {
    /// Whether the record carries a usable domain.
    pub fn is_resolved(self) -> bool {
        matches!(self, Status::Ok | Status::Smoothed)
    }
}

/// One frame's extraction result. Serializes to the records JSONL line shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrlRecord {
    #[serde(rename = "t")]
    pub timestamp_s: f64,
    #[serde(rename = "browser")]
    pub browser_id: String,
    #[serde(rename = "raw")]
    pub raw_text: String,
    #[serde(rename = "cleaned")]
    pub cleaned_url: String,
    pub domain: String,
    pub status: Status,
}

pub const NO_BROWSER_ID: &str = "none";

impl UrlRecord {
    pub fn no_browser(timestamp_s: f64) -> Self {
        Self {
            timestamp_s,
            browser_id: NO_BROWSER_ID.to_string(),
            raw_text: String::new(),
            cleaned_url: String::new(),
            domain: String::new(),
            status: Status::NoBrowser,
        }
    }

    pub fn ocr_failed(timestamp_s: f64, browser_id: &str) -> Self {
        Self {
            timestamp_s,
            browser_id: browser_id.to_string(),
            raw_text: String::new(),
            cleaned_url: String::new(),
            domain: String::new(),
            status: Status::OcrFailed,
        }
    }

    /// Cleans `raw` and classifies it as `ok` or `unparseable`.
    pub fn from_text(timestamp_s: f64, browser_id: &str, raw: &str) -> Self {
        let cleaned = clean_ocr_text(raw);
        let (domain, status) = match extract_domain(&cleaned) {
            Some(d) => (d, Status::Ok),
            None => (String::new(), Status::Unparseable),
        };
        Self {
            timestamp_s,
            browser_id: browser_id.to_string(),
            raw_text: raw.to_string(),
            cleaned_url: cleaned,
            domain,
            status,
        }
    }
}

fn allowed(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || "._-~:/?#@%&=+".contains(c)
}

/// Lowercases, drops characters outside the URL alphabet, collapses repeated
/// dots and trims junk before the first alphanumeric. Trailing characters
/// other than alphanumerics and `/` are trimmed as well.
pub fn clean_ocr_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.to_lowercase().chars().filter(|&c| allowed(c)) {
        if c == '.' && out.ends_with('.') {
            continue;
        }
        out.push(c);
    }
    let start = out
        .find(|c: char| c.is_ascii_alphanumeric())
        .unwrap_or(out.len());
    let trimmed = out[start..].trim_end_matches(|c: char| !(c.is_ascii_alphanumeric() || c == '/'));
    trimmed.to_string()
}

fn strip_scheme(s: &str) -> &str {
    s.strip_prefix("https://")
        .or_else(|| s.strip_prefix("http://"))
        .unwrap_or(s)
}

/// The host portion of a cleaned URL with one leading `www.` removed, before
/// any validity check.
pub fn host_candidate(cleaned: &str) -> &str {
    let rest = strip_scheme(cleaned);
    let end = rest.find(['/', '?', '#', ':']).unwrap_or(rest.len());
    let host = &rest[..end];
    host.strip_prefix("www.").unwrap_or(host)
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !label.starts_with('-')
        && !label.ends_with('-')
}

/// Host of a cleaned URL, `www.` dropped, if it is a dotted label sequence.
pub fn extract_domain(cleaned: &str) -> Option<String> {
    let host = host_candidate(cleaned);
    let labels: Vec<&str> = host.split('.').collect();
    (labels.len() >= 2 && labels.iter().all(|l| valid_label(l))).then(|| host.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothParams {
    pub radius: usize,
    pub max_edit: usize,
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_SMOOTH_RADIUS,
            max_edit: DEFAULT_SMOOTH_EDIT,
        }
    }
}

/// Repairs isolated misreads from the surrounding frames.
///
/// A record is a candidate when it is `unparseable`, or `ok` with a domain
/// that matches neither adjacent record. It takes the domain most frequent
/// among resolved records within `radius` frames (itself excluded) when that
/// domain has at least two supporters and is within `max_edit` edits of the
/// record's domain (or host candidate, if unparseable). Equal-count candidates
/// are separated by edit distance; a remaining tie leaves the record alone.
/// Windows are read from the input, so repairs never cascade.
pub fn consensus_smooth(records: &[UrlRecord], params: SmoothParams) -> Vec<UrlRecord> {
    let mut out = records.to_vec();
    for (i, rec) in records.iter().enumerate() {
        let candidate = match rec.status {
            Status::Unparseable => true,
            Status::Ok => {
                let differs = |j: Option<usize>| {
                    j.and_then(|j| records.get(j))
                        .is_none_or(|n| n.domain != rec.domain)
                };
                differs(i.checked_sub(1)) && differs(Some(i + 1))
            }
            _ => false,
        };
        if !candidate {
            continue;
        }

        let lo = i.saturating_sub(params.radius);
        let hi = (i + params.radius).min(records.len() - 1);
        let mut support: HashMap<&str, usize> = HashMap::new();
        for (j, n) in records.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i && n.status.is_resolved() && !n.domain.is_empty() {
                *support.entry(n.domain.as_str()).or_default() += 1;
            }
        }
        let Some(&top) = support.values().max() else {
            continue;
        };
        if top < MIN_SUPPORT {
            continue;
        }

        let probe = if rec.status == Status::Ok {
            rec.domain.as_str()
        } else {
            host_candidate(&rec.cleaned_url)
        };
        let mut ranked: Vec<(usize, &str)> = support
            .iter()
            .filter(|&(_, &c)| c == top)
            .map(|(&d, _)| (strsim::levenshtein(probe, d), d))
            .collect();
        ranked.sort_unstable();
        let (dist, winner) = ranked[0];
        if ranked.get(1).is_some_and(|&(d, _)| d == dist) {
            continue;
        }
        if dist == 0 || dist > params.max_edit {
            continue;
        }
        out[i].domain = winner.to_string();
        out[i].status = Status::Smoothed;
    }
    out
}
