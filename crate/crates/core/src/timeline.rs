//! Dwell-time distributions, browsing paths, and their CSV/JSONL/SVG forms.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::postprocess::{Status, UrlRecord};

pub const NO_BROWSER_LABEL: &str = "(no-browser)";
pub const UNREADABLE_LABEL: &str = "(unreadable)";
pub const DEFAULT_MAX_GAP: usize = 2;

pub const DWELL_HEADER: [&str; 3] = ["domain", "seconds", "frames"];
pub const PATH_HEADER: [&str; 3] = ["domain", "start_s", "end_s"];

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DwellEntry {
    pub domain: String,
    pub seconds: f64,
    pub frame_count: usize,
}

impl DwellEntry {
    fn new(domain: &str, frame_count: usize, fps: f64) -> Self {
        Self {
            domain: domain.to_string(),
            seconds: frame_count as f64 / fps,
            frame_count,
        }
    }

    pub fn is_pseudo(&self) -> bool {
        self.domain == NO_BROWSER_LABEL || self.domain == UNREADABLE_LABEL
    }
}

/// Per-domain dwell plus the frames that resolved to no domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DwellReport {
    /// Sorted by seconds descending, then domain ascending.
    pub entries: Vec<DwellEntry>,
    pub no_browser: DwellEntry,
    pub unreadable: DwellEntry,
}

impl DwellReport {
    /// Domain rows followed by the non-empty pseudo-domain rows.
    pub fn rows(&self) -> Vec<DwellEntry> {
        let mut rows = self.entries.clone();
        for pseudo in [&self.no_browser, &self.unreadable] {
            if pseudo.frame_count > 0 {
                rows.push(pseudo.clone());
            }
        }
        rows
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.frame_count).sum::<usize>()
            + self.no_browser.frame_count
            + self.unreadable.frame_count
    }
}

pub fn aggregate_dwell(records: &[UrlRecord], fps: f64) -> DwellReport {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let (mut no_browser, mut unreadable) = (0, 0);
    for r in records {
        match r.status {
            s if s.is_resolved() => *counts.entry(r.domain.as_str()).or_default() += 1,
            Status::NoBrowser => no_browser += 1,
            _ => unreadable += 1,
        }
    }
    let mut entries: Vec<DwellEntry> = counts
        .into_iter()
        .map(|(d, n)| DwellEntry::new(d, n, fps))
        .collect();
    entries.sort_by(|a, b| {
        b.frame_count
            .cmp(&a.frame_count)
            .then_with(|| a.domain.cmp(&b.domain))
    });
    DwellReport {
        entries,
        no_browser: DwellEntry::new(NO_BROWSER_LABEL, no_browser, fps),
        unreadable: DwellEntry::new(UNREADABLE_LABEL, unreadable, fps),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSegment {
    pub domain: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Run-length encodes resolved domains over time.
///
/// Up to `max_gap` unresolved frames between two frames of the same domain
/// are absorbed into its run; longer gaps end the run.
pub fn path_segments(records: &[UrlRecord], max_gap: usize) -> Vec<PathSegment> {
    let mut segments: Vec<PathSegment> = Vec::new();
    let mut gap = 0;
    for r in records {
        if !r.status.is_resolved() {
            gap += 1;
            continue;
        }
        match segments.last_mut() {
            Some(last) if last.domain == r.domain && gap <= max_gap => {
                last.end_s = r.timestamp_s;
            }
            _ => {
                segments.push(PathSegment {
                    domain: r.domain.clone(),
                    start_s: r.timestamp_s,
                    end_s: r.timestamp_s,
                });
            }
        }
        gap = 0;
    }
    segments
}

pub fn write_records<W: Write>(mut out: W, records: &[UrlRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses records JSONL; blank lines are skipped, errors carry 1-based line numbers.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<UrlRecord>, TimelineError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| TimelineError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_dwell_csv<W: Write>(out: W, rows: &[DwellEntry]) -> Result<(), TimelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DWELL_HEADER)?;
    for e in rows {
        w.write_record([
            e.domain.clone(),
            e.seconds.to_string(),
            e.frame_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_path_csv<W: Write>(out: W, segments: &[PathSegment]) -> Result<(), TimelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_HEADER)?;
    for s in segments {
        w.write_record([s.domain.clone(), s.start_s.to_string(), s.end_s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<T, TimelineError> {
    rec.get(idx)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| TimelineError::Malformed {
            line,
            reason: format!("bad or missing column {}", idx + 1),
        })
}

fn csv_rows<R: io::Read>(
    input: R,
    header: [&str; 3],
) -> Result<Vec<(usize, csv::StringRecord)>, TimelineError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let found = r.headers()?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(TimelineError::Malformed {
            line: 1,
            reason: format!("expected header `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        rows.push((i + 2, rec?));
    }
    Ok(rows)
}

pub fn read_dwell_csv<R: io::Read>(input: R) -> Result<Vec<DwellEntry>, TimelineError> {
    csv_rows(input, DWELL_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(DwellEntry {
                domain: parse_field(&rec, 0, line)?,
                seconds: parse_field(&rec, 1, line)?,
                frame_count: parse_field(&rec, 2, line)?,
            })
        })
        .collect()
}

pub fn read_path_csv<R: io::Read>(input: R) -> Result<Vec<PathSegment>, TimelineError> {
    csv_rows(input, PATH_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            Ok(PathSegment {
                domain: parse_field(&rec, 0, line)?,
                start_s: parse_field(&rec, 1, line)?,
                end_s: parse_field(&rec, 2, line)?,
            })
        })
        .collect()
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];
const PSEUDO_FILL: &str = "#bab0ac";
const LABEL_W: f64 = 260.0;
const PLOT_W: f64 = 600.0;
const ROW_H: f64 = 28.0;
const BAR_H: f64 = 20.0;
const TOP: f64 = 40.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
}

fn svg_empty(title: &str) -> Vec<u8> {
    let mut out = String::new();
    svg_open(&mut out, LABEL_W + PLOT_W, 80.0, title);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="45" text-anchor="middle">no data</text>"#,
        (LABEL_W + PLOT_W) / 2.0
    );
    out.push_str("</svg>\n");
    out.into_bytes()
}

/// Horizontal bar chart, one bar per row, bar length proportional to seconds.
pub fn render_dwell_svg(entries: &[DwellEntry]) -> Vec<u8> {
    const TITLE: &str = "Time per domain (s)";
    let max = entries.iter().map(|e| e.seconds).fold(0.0f64, f64::max);
    if entries.is_empty() {
        return svg_empty(TITLE);
    }
    let height = TOP + ROW_H * entries.len() as f64 + 20.0;
    let mut out = String::new();
    svg_open(&mut out, LABEL_W + PLOT_W + 80.0, height, TITLE);
    let _ = writeln!(out, r#"<text x="10" y="20">{TITLE}</text>"#);
    for (i, e) in entries.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        let width = if max > 0.0 {
            e.seconds * PLOT_W / max
        } else {
            0.0
        };
        let fill = if e.is_pseudo() {
            PSEUDO_FILL
        } else {
            PALETTE[i % PALETTE.len()]
        };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + 15.0,
            escape(&e.domain)
        );
        let _ = writeln!(
            out,
            r#"<rect class="bar" data-domain="{}" x="{LABEL_W}" y="{y}" width="{width}" height="{BAR_H}" fill="{fill}"/>"#,
            escape(&e.domain)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            LABEL_W + width + 6.0,
            y + 15.0,
            e.seconds
        );
    }
    out.push_str("</svg>\n");
    out.into_bytes()
}

/// Timeline with one lane per domain (in order of first visit); each
/// segment spans `[start_s, end_s]` on a shared time axis.
pub fn render_path_svg(segments: &[PathSegment]) -> Vec<u8> {
    const TITLE: &str = "Browsing path over time (s)";
    if segments.is_empty() {
        return svg_empty(TITLE);
    }
    let mut lanes: BTreeMap<usize, &str> = BTreeMap::new();
    let mut lane_of: HashMap<&str, usize> = HashMap::new();
    for s in segments {
        if !lane_of.contains_key(s.domain.as_str()) {
            let idx = lane_of.len();
            lane_of.insert(&s.domain, idx);
            lanes.insert(idx, &s.domain);
        }
    }
    let span = segments.iter().map(|s| s.end_s).fold(0.0f64, f64::max);
    let scale = if span > 0.0 { PLOT_W / span } else { 0.0 };
    let axis_y = TOP + ROW_H * lanes.len() as f64 + 4.0;
    let height = axis_y + 30.0;

    let mut out = String::new();
    svg_open(&mut out, LABEL_W + PLOT_W + 40.0, height, TITLE);
    let _ = writeln!(out, r#"<text x="10" y="20">{TITLE}</text>"#);
    for (&idx, &domain) in &lanes {
        let y = TOP + ROW_H * idx as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + 15.0,
            escape(domain)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{LABEL_W}" y1="{}" x2="{}" y2="{}" stroke="#eeeeee"/>"##,
            y + BAR_H / 2.0,
            LABEL_W + PLOT_W,
            y + BAR_H / 2.0
        );
    }
    for s in segments {
        let idx = lane_of[s.domain.as_str()];
        let y = TOP + ROW_H * idx as f64;
        let fill = PALETTE[idx % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect class="segment" data-domain="{}" x="{}" y="{y}" width="{}" height="{BAR_H}" fill="{fill}" stroke="{fill}" stroke-width="2"/>"#,
            escape(&s.domain),
            LABEL_W + s.start_s * scale,
            (s.end_s - s.start_s) * scale
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LABEL_W}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        LABEL_W + PLOT_W
    );
    for k in 0..=4 {
        let t = span * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LABEL_W + t * scale,
            axis_y + 16.0,
            (t * 100.0).round() / 100.0
        );
    }
    out.push_str("</svg>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, domain: Option<&str>) -> UrlRecord {
        match domain {
            Some(d) => UrlRecord::from_text(t, "chrome", d),
            None => UrlRecord::from_text(t, "chrome", "###"),
        }
    }

    fn seq(domains: &[Option<&str>]) -> Vec<UrlRecord> {
        domains
            .iter()
            .enumerate()
            .map(|(i, d)| rec(i as f64, *d))
            .collect()
    }

    fn entry(d: &str, s: f64, n: usize) -> DwellEntry {
        DwellEntry {
            domain: d.into(),
            seconds: s,
            frame_count: n,
        }
    }

    #[test]
    fn dwell_counts_and_orders() {
        let (a, b) = (Some("a.com"), Some("b.com"));
        let report = aggregate_dwell(&seq(&[a, a, a, b, b]), 1.0);
        assert_eq!(
            report.entries,
            vec![entry("a.com", 3.0, 3), entry("b.com", 2.0, 2)]
        );
        assert!(report.rows().len() == 2);

        let report = aggregate_dwell(&seq(&[b, b, a, a]), 2.0);
        assert_eq!(
            report.entries,
            vec![entry("a.com", 1.0, 2), entry("b.com", 1.0, 2)]
        );

        assert!(aggregate_dwell(&[], 1.0).rows().is_empty());
    }

    #[test]
    fn dwell_pseudo_domains() {
        let mut rs = seq(&[Some("a.com"), None, None]);
        rs.push(UrlRecord::no_browser(3.0));
        rs.push(UrlRecord::ocr_failed(4.0, "tor"));
        let report = aggregate_dwell(&rs, 1.0);
        assert_eq!(report.no_browser, entry(NO_BROWSER_LABEL, 1.0, 1));
        assert_eq!(report.unreadable, entry(UNREADABLE_LABEL, 3.0, 3));
        let rows = report.rows();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].domain, NO_BROWSER_LABEL);
        assert_eq!(report.total_frames(), 5);
    }

    #[test]
    fn path_examples() {
        let (a, b) = (Some("a.com"), Some("b.com"));
        let seg = |d: &str, s: f64, e: f64| PathSegment {
            domain: d.into(),
            start_s: s,
            end_s: e,
        };
        assert_eq!(
            path_segments(&seq(&[a, a, b, b, a]), DEFAULT_MAX_GAP),
            vec![
                seg("a.com", 0.0, 1.0),
                seg("b.com", 2.0, 3.0),
                seg("a.com", 4.0, 4.0)
            ]
        );
        assert_eq!(
            path_segments(&seq(&[a, None, a]), DEFAULT_MAX_GAP),
            vec![seg("a.com", 0.0, 2.0)]
        );
        assert_eq!(
            path_segments(&seq(&[a, None, None, None, a]), DEFAULT_MAX_GAP),
            vec![seg("a.com", 0.0, 0.0), seg("a.com", 4.0, 4.0)]
        );
        assert_eq!(
            path_segments(&seq(&[None, a, None, b, None]), DEFAULT_MAX_GAP),
            vec![seg("a.com", 1.0, 1.0), seg("b.com", 3.0, 3.0)]
        );
        assert!(path_segments(&[], DEFAULT_MAX_GAP).is_empty());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let good = serde_json::to_string(&rec(0.0, Some("a.com"))).unwrap();
        let text = format!("{good}\n\n{good}\n{{\"t\": 1.0, \"brow");
        let err = read_records(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 4:"), "{err}");
        let ok = read_records(format!("{good}\n{good}\n").as_bytes()).unwrap();
        assert_eq!(ok.len(), 2);
        let extra = good.replace("\"t\"", "\"x\":1,\"t\"");
        assert!(read_records(extra.as_bytes()).is_err());
    }

    #[test]
    fn csv_formats() {
        let mut buf = Vec::new();
        write_dwell_csv(&mut buf, &[entry("a.com", 3.0, 3), entry("b.com", 0.5, 1)]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "domain,seconds,frames\na.com,3,3\nb.com,0.5,1\n"
        );
        assert_eq!(read_dwell_csv(&buf[..]).unwrap()[1], entry("b.com", 0.5, 1));

        let mut buf = Vec::new();
        write_dwell_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"domain,seconds,frames\n");

        let segs = vec![PathSegment {
            domain: "x.onion".into(),
            start_s: 0.0,
            end_s: 2.5,
        }];
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &segs).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "domain,start_s,end_s\nx.onion,0,2.5\n"
        );
        assert_eq!(read_path_csv(&buf[..]).unwrap(), segs);
        assert!(read_path_csv(&b"a,b,c\n"[..]).is_err());
        let err = read_dwell_csv(&b"domain,seconds,frames\na.com,x,1\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn widths(svg: &[u8], class: &str) -> Vec<f64> {
        let text = String::from_utf8(svg.to_vec()).unwrap();
        text.lines()
            .filter(|l| l.contains(&format!("class=\"{class}\"")))
            .map(|l| {
                let w = l.split(" width=\"").nth(1).unwrap();
                w[..w.find('"').unwrap()].parse().unwrap()
            })
            .collect()
    }

    #[test]
    fn dwell_svg_contracts() {
        let empty = render_dwell_svg(&[]);
        assert!(String::from_utf8(empty).unwrap().contains("no data"));

        let rows = [entry("a.com", 3.0, 3), entry("b.com", 2.0, 2)];
        let svg = render_dwell_svg(&rows);
        let w = widths(&svg, "bar");
        assert_eq!(w[0] * 2.0, w[1] * 3.0);
        assert_eq!(svg, render_dwell_svg(&rows));
        let text = String::from_utf8(svg).unwrap();
        assert!(text.starts_with("<?xml") && text.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn path_svg_contracts() {
        assert!(String::from_utf8(render_path_svg(&[]))
            .unwrap()
            .contains("no data"));
        let segs = path_segments(
            &seq(&[
                Some("a.com"),
                Some("a.com"),
                Some("a.com"),
                Some("b.com"),
                Some("b.com"),
            ]),
            2,
        );
        let svg = render_path_svg(&segs);
        assert_eq!(widths(&svg, "segment"), vec![300.0, 150.0]);
        assert_eq!(svg, render_path_svg(&segs));
        let amp = render_path_svg(&[PathSegment {
            domain: "a&b".into(),
            start_s: 0.0,
            end_s: 0.0,
        }]);
        assert!(String::from_utf8(amp).unwrap().contains("a&amp;b"));
    }

    fn record_strategy() -> impl Strategy<Value = Vec<(u8, u8)>> {
        proptest::collection::vec((0u8..5, 0u8..3), 0..60)
    }

    fn build(items: &[(u8, u8)]) -> Vec<UrlRecord> {
        let pool = ["a.com", "b.org", "c.onion"];
        items
            .iter()
            .enumerate()
            .map(|(i, &(kind, d))| match kind {
                0 => UrlRecord::no_browser(i as f64),
                1 => rec(i as f64, None),
                _ => rec(i as f64, Some(pool[d as usize])),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn dwell_sums_to_session_length(items in record_strategy(), fps in prop_oneof![Just(1.0), Just(2.0), Just(4.0)]) {
            let rs = build(&items);
            let report = aggregate_dwell(&rs, fps);
            let total: f64 = report.rows().iter().map(|e| e.seconds).sum();
            prop_assert_eq!(total, rs.len() as f64 / fps);
            prop_assert_eq!(report.total_frames(), rs.len());
            let sorted = report.entries.windows(2).all(|w| {
                w[0].seconds > w[1].seconds || (w[0].seconds == w[1].seconds && w[0].domain < w[1].domain)
            });
            prop_assert!(sorted);
        }

        #[test]
        fn segments_expand_back_to_domains(items in record_strategy(), max_gap in 0usize..4) {
            let rs = build(&items);
            let segs = path_segments(&rs, max_gap);
            for r in rs.iter().filter(|r| r.status.is_resolved()) {
                let covering: Vec<_> = segs
                    .iter()
                    .filter(|s| s.start_s <= r.timestamp_s && r.timestamp_s <= s.end_s)
                    .collect();
                prop_assert_eq!(covering.len(), 1);
                prop_assert_eq!(&covering[0].domain, &r.domain);
            }
            for w in segs.windows(2) {
                prop_assert!(w[0].start_s <= w[0].end_s && w[0].end_s < w[1].start_s);
            }
        }
    }
}
