//! Institution profiles: mean topic shares per institution, rankings and exports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentSet;
use crate::ctm::DocumentTopicMatrix;
use crate::error::{Error, Result};
use crate::Warning;

/// Header line carried by every profile report.
pub const DISCLAIMER: &str =
    "Profiles describe only the selected programs of each institution, not the institution as a whole.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Documents are averaged per program, then programs per institution.
    #[default]
    TwoStage,
    /// Plain mean over an institution's documents.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionProfile {
    pub institution: String,
    pub shares: Vec<f64>,
    /// Topic indices by descending share, smaller index first on ties.
    pub ranking: Vec<usize>,
    pub programs: usize,
    pub documents: usize,
}

/// Optional human labels keyed by topic index.
pub type LabelMap = BTreeMap<usize, String>;

fn rank(shares: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b)));
    order
}

fn mean_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, k: usize) -> Vec<f64> {
    let mut acc = vec![0.0; k];
    let mut n = 0usize;
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
        n += 1;
    }
    acc.iter().map(|a| a / n as f64).collect()
}

/// One profile per institution, sorted by institution name.
pub fn institution_profiles(
    posteriors: &DocumentTopicMatrix,
    metadata: &DocumentSet,
    aggregation: Aggregation,
) -> Result<Vec<InstitutionProfile>> {
    let by_id: HashMap<&str, (&str, &str)> = metadata
        .iter()
        .map(|d| (d.id.as_str(), (d.institution.as_str(), d.program.as_str())))
        .collect();
    let k = posteriors.k;
    // institution -> program -> posterior rows, all in document order
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<&[f64]>>> = BTreeMap::new();
    for (id, row) in posteriors.rows() {
        let &(inst, prog) = by_id
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("posterior row {id:?} has no metadata record")))?;
        groups.entry(inst).or_default().entry(prog).or_default().push(row);
    }

    Ok(groups
        .into_iter()
        .map(|(inst, programs)| {
            let documents = programs.values().map(Vec::len).sum();
            let shares = match aggregation {
                Aggregation::TwoStage => {
                    let means: Vec<Vec<f64>> = programs
                        .values()
                        .map(|rows| mean_rows(rows.iter().copied(), k))
                        .collect();
                    mean_rows(means.iter().map(Vec::as_slice), k)
                }
                Aggregation::Flat => mean_rows(programs.values().flatten().copied(), k),
            };
            InstitutionProfile {
                institution: inst.to_string(),
                ranking: rank(&shares),
                shares,
                programs: programs.len(),
                documents,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedTopic {
    pub topic: usize,
    pub label: String,
}

/// Topics in descending share order, with labels substituted where known.
/// Unlabelled topics are shown as `t<index>`; when a label map is given, each
/// missing entry produces a warning.
pub fn rank_topics(profile: &InstitutionProfile, labels: Option<&LabelMap>) -> (Vec<RankedTopic>, Vec<Warning>) {
    let mut warnings = Vec::new();
    let ranked = rank(&profile.shares)
        .into_iter()
        .map(|topic| {
            let label = match labels.map(|m| m.get(&topic)) {
                Some(Some(l)) => l.clone(),
                Some(None) => {
                    warnings.push(Warning::new(
                        &profile.institution,
                        format!("no label for topic {topic}"),
                    ));
                    format!("t{topic}")
                }
                None => format!("t{topic}"),
            };
            RankedTopic { topic, label }
        })
        .collect();
    (ranked, warnings)
}

/// Institution names with their share vectors, as read back from a profile CSV.
pub type ShareTable = Vec<(String, Vec<f64>)>;

fn share_table(profiles: &[InstitutionProfile]) -> ShareTable {
    profiles
        .iter()
        .map(|p| (p.institution.clone(), p.shares.clone()))
        .collect()
}

/// Long-form `institution,topic,share` with shares in fixed 6-decimal notation,
/// preceded by the disclaimer as a `#` comment.
pub fn profiles_csv(profiles: &[InstitutionProfile]) -> String {
    shares_csv(&share_table(profiles))
}

pub fn shares_csv(table: &ShareTable) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["institution", "topic", "share"])
        .expect("in-memory write");
    for (inst, shares) in table {
        for (t, s) in shares.iter().enumerate() {
            w.write_record([inst.clone(), t.to_string(), format!("{s:.6}")])
                .expect("in-memory write");
        }
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8");
    format!("# {DISCLAIMER}\n{body}")
}

pub fn parse_profiles_csv(text: &str) -> Result<ShareTable> {
    let bad = |m: String| Error::InvalidInput(format!("profile csv: {m}"));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut table: ShareTable = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", row.len())));
        }
        let topic: usize = row[1].parse().map_err(|_| bad(format!("topic {:?}", &row[1])))?;
        let share: f64 = row[2].parse().map_err(|_| bad(format!("share {:?}", &row[2])))?;
        if table.last().is_none_or(|(inst, _)| inst != &row[0]) {
            table.push((row[0].to_string(), Vec::new()));
        }
        let shares = &mut table.last_mut().expect("just pushed").1;
        if shares.len() != topic {
            return Err(bad(format!("topics of {} out of order", &row[0])));
        }
        shares.push(share);
    }
    Ok(table)
}

/// `institution<TAB>rank<TAB>topic_label`, ranks 1-based.
pub fn rankings_tsv(profiles: &[InstitutionProfile], labels: Option<&LabelMap>) -> (String, Vec<Warning>) {
    let mut out = format!("# {DISCLAIMER}\ninstitution\trank\ttopic_label\n");
    let mut warnings = Vec::new();
    for p in profiles {
        let (ranked, w) = rank_topics(p, labels);
        warnings.extend(w);
        for (r, t) in ranked.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", p.institution, r + 1, t.label);
        }
    }
    (out, warnings)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// One bar chart per topic stacked vertically: bars are institutions, heights are
/// shares on a common axis from 0 to the largest share. Every bar carries its
/// value in a `data-share` attribute with 6 decimals, matching the CSV.
pub fn profiles_svg(profiles: &[InstitutionProfile], labels: Option<&LabelMap>) -> String {
    const PANEL_H: f64 = 240.0;
    const PLOT_H: f64 = 150.0;
    const LEFT: f64 = 70.0;
    const BAR_W: f64 = 28.0;
    const GAP: f64 = 12.0;
    const TOP: f64 = 40.0;

    let k = profiles.first().map_or(0, |p| p.shares.len());
    let max_share = profiles
        .iter()
        .flat_map(|p| p.shares.iter().copied())
        .fold(0.0_f64, f64::max);
    let scale = if max_share > 0.0 { PLOT_H / max_share } else { 0.0 };
    let width = LEFT + profiles.len() as f64 * (BAR_W + GAP) + 40.0;
    let height = TOP + k as f64 * PANEL_H;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<desc>{}</desc>", xml_escape(DISCLAIMER));
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-size="12">{}</text>"#,
        xml_escape(DISCLAIMER)
    );
    for t in 0..k {
        let title = labels
            .and_then(|m| m.get(&t))
            .cloned()
            .unwrap_or_else(|| format!("Topic {t}"));
        let y0 = TOP + t as f64 * PANEL_H;
        let base = y0 + 20.0 + PLOT_H;
        let _ = writeln!(s, r#"<g class="panel" data-topic="{t}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{:.1}" font-size="13" font-weight="bold">{}</text>"#,
            y0 + 12.0,
            xml_escape(&title)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{:.1}" x2="{LEFT}" y2="{base:.1}" stroke="black"/>"#,
            base - PLOT_H
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#,
            width - 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{base:.1}" text-anchor="end">0</text>"#,
            LEFT - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{max_share:.6}</text>"#,
            LEFT - 4.0,
            base - PLOT_H + 4.0
        );
        for (i, p) in profiles.iter().enumerate() {
            let share = p.shares[t];
            let h = share * scale;
            let x = LEFT + GAP + i as f64 * (BAR_W + GAP);
            let name = xml_escape(&p.institution);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.3}" width="{BAR_W}" height="{h:.3}" fill="steelblue" data-institution="{name}" data-share="{share:.6}"/>"#,
                base - h
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" transform="rotate(45 {:.1} {:.1})">{name}</text>"#,
                x + 4.0,
                base + 12.0,
                x + 4.0,
                base + 12.0
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Svg,
}

/// Writes the profiles to `path` in the chosen format.
pub fn export_profiles(
    profiles: &[InstitutionProfile],
    path: impl AsRef<Path>,
    format: ExportFormat,
    labels: Option<&LabelMap>,
) -> Result<()> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no profiles to export".into()));
    }
    let text = match format {
        ExportFormat::Csv => profiles_csv(profiles),
        ExportFormat::Svg => profiles_svg(profiles, labels),
    };
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("label map {}: {e}", path.display())))
}
