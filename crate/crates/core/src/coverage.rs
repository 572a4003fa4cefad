//! Coverage report ingestion, scoring and uncovered-item extraction.
//!
//! Two input formats are understood. The normalized format is one item per
//! line, tab separated:
//!
//! ```text
//! # run_label: baseline
//! LINE	UNCOVERED	toy_top.u_fsm	fsm.v:36
//! TOGGLE	PARTIAL	toy_top.u_hs	hs.v:6	ack	0->1 seen, 1->0 missing
//! ```
//!
//! The HTML dialect is any page holding `<table class="covtable">` tables
//! with the same columns. Field text in the normalized format escapes `\t`,
//! `\n`, `\r` and `\\`.

use crate::tracker::SeedSet;
use crate::verilog::{lexer, DesignModel, SignalRef, StatementKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Line,
    Branch,
    Condition,
    Toggle,
    /// Functional groups are carried along but never scored.
    Functional,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Self::Line,
        Self::Branch,
        Self::Condition,
        Self::Toggle,
        Self::Functional,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Line => "LINE",
            Self::Branch => "BRANCH",
            Self::Condition => "CONDITION",
            Self::Toggle => "TOGGLE",
            Self::Functional => "FUNCTIONAL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.keyword().eq_ignore_ascii_case(s))
            .or_else(|| {
                s.eq_ignore_ascii_case("FunctionalGroup")
                    .then_some(Self::Functional)
            })
    }

    pub fn is_scored(self) -> bool {
        self != Self::Functional
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Covered,
    Uncovered,
    Partial,
}

impl Status {
    pub fn keyword(self) -> &'static str {
        match self {
            Self::Covered => "COVERED",
            Self::Uncovered => "UNCOVERED",
            Self::Partial => "PARTIAL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Covered, Self::Uncovered, Self::Partial]
            .into_iter()
            .find(|k| k.keyword().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLoc {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageItem {
    pub id: usize,
    pub category: Category,
    pub hierarchical_name: String,
    pub source: SourceLoc,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CoverageItem {
    pub fn is_open(&self) -> bool {
        self.status != Status::Covered
    }

    /// Identity of the coverage point, ignoring id and status.
    pub fn key(&self) -> (Category, &str, &SourceLoc, Option<&str>) {
        (
            self.category,
            &self.hierarchical_name,
            &self.source,
            self.expression.as_deref(),
        )
    }

    /// One-line structured rendering without markup.
    pub fn render(&self) -> String {
        let mut s = format!(
            "#{} {} {} {} {}",
            self.id,
            self.category,
            self.status.keyword(),
            self.hierarchical_name,
            self.source
        );
        if let Some(e) = &self.expression {
            s.push_str(&format!(" expr=`{e}`"));
        }
        if let Some(d) = &self.detail {
            s.push_str(&format!(" ({d})"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Malformed {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub run_label: String,
    pub items: Vec<CoverageItem>,
    /// Aggregate score; 0 when nothing is scorable.
    pub score: f64,
    pub per_category_scores: BTreeMap<Category, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed: Vec<Malformed>,
}

#[derive(Debug, thiserror::Error)]
pub enum CoverageError {
    #[error("input is neither a normalized report nor a covtable HTML page")]
    UnrecognizedFormat,
    #[error("line {line}: {message}")]
    MalformedItem { line: usize, message: String },
    #[error("no scorable coverage items")]
    NoItems,
    #[error("coverage item {0} has no resolvable signal")]
    NoSeedsFound(usize),
    #[error("coverage item {0} is already covered")]
    AlreadyCovered(usize),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Per-category percentages and their unweighted mean. Partial items count
/// as uncovered; functional items are ignored.
pub fn compute_score(
    items: &[CoverageItem],
) -> Result<(f64, BTreeMap<Category, f64>), CoverageError> {
    compute_score_weighted(items, &BTreeMap::new())
}

/// Like [`compute_score`], with per-category weights for the aggregate.
/// Missing categories weigh 1.
pub fn compute_score_weighted(
    items: &[CoverageItem],
    weights: &BTreeMap<Category, f64>,
) -> Result<(f64, BTreeMap<Category, f64>), CoverageError> {
    let mut counts: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for it in items.iter().filter(|i| i.category.is_scored()) {
        let c = counts.entry(it.category).or_default();
        c.1 += 1;
        if it.status == Status::Covered {
            c.0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(CoverageError::NoItems);
    }
    let per: BTreeMap<Category, f64> = counts
        .into_iter()
        .map(|(c, (hit, total))| (c, round2(hit as f64 * 100.0 / total as f64)))
        .collect();
    let (sum, wsum) = per.iter().fold((0.0, 0.0), |(s, w), (c, v)| {
        let wt = weights.get(c).copied().unwrap_or(1.0);
        (s + v * wt, w + wt)
    });
    let score = if wsum > 0.0 { round2(sum / wsum) } else { 0.0 };
    Ok((score, per))
}

impl CoverageReport {
    /// Builds a report and computes its scores.
    pub fn from_items(run_label: impl Into<String>, items: Vec<CoverageItem>) -> Self {
        let (score, per_category_scores) = compute_score(&items).unwrap_or_default();
        Self {
            run_label: run_label.into(),
            items,
            score,
            per_category_scores,
            malformed: Vec::new(),
        }
    }

    pub fn rescore(&mut self) {
        let (score, per) = compute_score(&self.items).unwrap_or_default();
        self.score = score;
        self.per_category_scores = per;
    }

    pub fn item(&self, id: usize) -> Option<&CoverageItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn open_items(&self) -> impl Iterator<Item = &CoverageItem> {
        self.items.iter().filter(|i| i.is_open())
    }

    /// Marks items covered in `other` as covered here. Items are matched by
    /// category, hierarchy, source and expression. Returns the ids that
    /// changed.
    pub fn merge(&mut self, other: &CoverageReport) -> Vec<usize> {
        let hits: BTreeSet<_> = other
            .items
            .iter()
            .filter(|i| i.status == Status::Covered)
            .map(|i| i.key())
            .collect();
        let mut changed = Vec::new();
        for it in &mut self.items {
            if it.status != Status::Covered && hits.contains(&it.key()) {
                changed.push(it.id);
            }
        }
        for it in &mut self.items {
            if changed.contains(&it.id) {
                it.status = Status::Covered;
            }
        }
        self.rescore();
        changed
    }

    /// Serializes to the normalized format.
    pub fn to_normalized(&self) -> String {
        let mut out = format!("# run_label: {}\n", escape(&self.run_label));
        for it in &self.items {
            let mut cols = vec![
                it.category.keyword().to_string(),
                it.status.keyword().to_string(),
                escape(&it.hierarchical_name),
                format!("{}:{}", escape(&it.source.file), it.source.line),
                escape(it.expression.as_deref().unwrap_or("")),
            ];
            if let Some(d) = &it.detail {
                cols.push(escape(d));
            }
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Markup-free summary used in logs and prompts.
    pub fn render_text(&self) -> String {
        let mut s = format!("run {}: score {:.2}", self.run_label, self.score);
        for (c, v) in &self.per_category_scores {
            s.push_str(&format!(" {c}={v:.2}"));
        }
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(o) => out.push(o),
            None => out.push('\\'),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Normalized,
    Html,
}

pub fn detect_format(text: &str) -> Result<ReportFormat, CoverageError> {
    let head = text.trim_start();
    if head.starts_with('<') {
        return if text.contains("covtable") {
            Ok(ReportFormat::Html)
        } else {
            Err(CoverageError::UnrecognizedFormat)
        };
    }
    let first = head.lines().next().unwrap_or("");
    if first.is_empty()
        || first.starts_with('#')
        || first.split('\t').next().and_then(Category::parse).is_some()
    {
        Ok(ReportFormat::Normalized)
    } else {
        Err(CoverageError::UnrecognizedFormat)
    }
}

pub fn parse_report(text: &str) -> Result<CoverageReport, CoverageError> {
    match detect_format(text)? {
        ReportFormat::Normalized => Ok(parse_normalized(text)),
        ReportFormat::Html => Ok(parse_html(text)),
    }
}

pub fn read_report(path: &Path) -> Result<CoverageReport, CoverageError> {
    let text = std::fs::read_to_string(path).map_err(|source| CoverageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_report(&text)
}

/// Builds an item from the five (or six) columns.
fn item_from_columns(id: usize, cols: &[String]) -> Result<CoverageItem, String> {
    if cols.len() < 4 || cols.len() > 6 {
        return Err(format!("expected 5 or 6 columns, found {}", cols.len()));
    }
    let category =
        Category::parse(&cols[0]).ok_or_else(|| format!("unknown category `{}`", cols[0]))?;
    let status = Status::parse(&cols[1]).ok_or_else(|| format!("unknown status `{}`", cols[1]))?;
    if status == Status::Partial && category == Category::Line {
        return Err("line items cannot be partial".into());
    }
    let hier = cols[2].trim();
    if hier.is_empty() {
        return Err("empty hierarchical name".into());
    }
    let (file, line) = cols[3]
        .trim()
        .rsplit_once(':')
        .ok_or_else(|| format!("source `{}` is not FILE:LINE", cols[3]))?;
    let line: usize = line
        .parse()
        .map_err(|_| format!("bad line number in `{}`", cols[3]))?;
    let opt = |i: usize| cols.get(i).filter(|s| !s.is_empty()).cloned();
    Ok(CoverageItem {
        id,
        category,
        hierarchical_name: hier.to_string(),
        source: SourceLoc {
            file: file.to_string(),
            line,
        },
        status,
        expression: opt(4),
        detail: opt(5),
    })
}

pub fn parse_normalized(text: &str) -> CoverageReport {
    let mut run_label = String::new();
    let mut items = Vec::new();
    let mut malformed = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(label) = comment.trim_start().strip_prefix("run_label:") {
                run_label = unescape(label.strip_prefix(' ').unwrap_or(label));
            }
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(unescape).collect();
        match item_from_columns(items.len() + 1, &cols) {
            Ok(it) => items.push(it),
            Err(message) => {
                log::warn!("coverage report line {}: {message}", n + 1);
                malformed.push(Malformed {
                    line: n + 1,
                    message,
                });
            }
        }
    }
    let mut r = CoverageReport::from_items(run_label, items);
    r.malformed = malformed;
    r
}

const HTML_COLUMNS: [&str; 5] = ["category", "status", "hierarchy", "source", "expression"];

pub fn parse_html(text: &str) -> CoverageReport {
    use scraper::{Html, Selector};
    let doc = Html::parse_document(text);
    let sel = |s| Selector::parse(s).expect("static selector");
    let (table_sel, row_sel, cell_sel) = (sel("table.covtable"), sel("tr"), sel("th, td"));
    let run_label = doc
        .select(&sel(r#"meta[name="run_label"]"#))
        .next()
        .and_then(|m| m.value().attr("content"))
        .map(str::to_string)
        .or_else(|| {
            doc.select(&sel("title"))
                .next()
                .map(|t| t.text().collect::<String>().trim().to_string())
        })
        .unwrap_or_default();
    let mut items = Vec::new();
    let mut malformed = Vec::new();
    let mut row_no = 0;
    for table in doc.select(&table_sel) {
        for row in table.select(&row_sel) {
            row_no += 1;
            let header = row.select(&sel("th")).next().is_some();
            let cols: Vec<String> = row
                .select(&cell_sel)
                .map(|c| c.text().collect::<String>().trim().to_string())
                .collect();
            if header {
                let names: Vec<String> = cols.iter().map(|c| c.to_ascii_lowercase()).collect();
                if names.len() < 5 || names[..5] != HTML_COLUMNS {
                    malformed.push(Malformed {
                        line: row_no,
                        message: format!("unexpected header {cols:?}"),
                    });
                }
                continue;
            }
            match item_from_columns(items.len() + 1, &cols) {
                Ok(it) => items.push(it),
                Err(message) => {
                    log::warn!("coverage table row {row_no}: {message}");
                    malformed.push(Malformed {
                        line: row_no,
                        message,
                    })
                }
            }
        }
    }
    let mut r = CoverageReport::from_items(run_label, items);
    r.malformed = malformed;
    r
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncoveredGroup {
    pub category: Category,
    pub module: String,
    pub items: Vec<usize>,
    /// Items beyond the budget.
    pub omitted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncoveredSummary {
    pub groups: Vec<UncoveredGroup>,
    pub context_budget: usize,
}

impl UncoveredSummary {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flat_map(|g| g.items.iter().copied())
    }

    /// Compact structured text, one group header and one line per item.
    pub fn render_text(&self, report: &CoverageReport) -> String {
        let mut out = String::new();
        for g in &self.groups {
            out.push_str(&format!(
                "[{}] {} ({} open)\n",
                g.category,
                g.module,
                g.items.len() + g.omitted
            ));
            for id in &g.items {
                if let Some(it) = report.item(*id) {
                    out.push_str("  ");
                    out.push_str(&it.render());
                    out.push('\n');
                }
            }
            if g.omitted > 0 {
                out.push_str(&format!("  +{} more\n", g.omitted));
            }
        }
        out
    }
}

/// Groups open items by category and hierarchy, each group ordered by
/// source position and cut to `budget` items.
pub fn extract_uncovered(report: &CoverageReport, budget: usize) -> UncoveredSummary {
    let budget = budget.max(1);
    let mut groups: BTreeMap<(Category, &str), Vec<&CoverageItem>> = BTreeMap::new();
    for it in report.open_items() {
        groups
            .entry((it.category, &it.hierarchical_name))
            .or_default()
            .push(it);
    }
    UncoveredSummary {
        groups: groups
            .into_iter()
            .map(|((category, module), mut items)| {
                items.sort_by(|a, b| (&a.source, a.id).cmp(&(&b.source, b.id)));
                let omitted = items.len().saturating_sub(budget);
                UncoveredGroup {
                    category,
                    module: module.to_string(),
                    items: items.iter().take(budget).map(|i| i.id).collect(),
                    omitted,
                }
            })
            .collect(),
        context_budget: budget,
    }
}

fn identifiers(text: &str) -> Vec<String> {
    lexer::tokenize(text, Path::new("<expr>"))
        .map(|toks| {
            toks.iter()
                .filter(|t| t.is_ident() && !crate::verilog::is_keyword(t.text))
                .map(|t| t.text.to_string())
                .collect()
        })
        .unwrap_or_default()
}

/// Seed signals for an open coverage item.
///
/// With a design, names are checked against the module the item's
/// hierarchy resolves to and qualified with that module; line items use
/// the statement at the item's source line. Without one, identifiers are
/// taken from the item text and qualified with the hierarchy path.
pub fn seed_signals(
    item: &CoverageItem,
    model: Option<&DesignModel>,
) -> Result<SeedSet, CoverageError> {
    if item.status == Status::Covered {
        return Err(CoverageError::AlreadyCovered(item.id));
    }
    let module = model.and_then(|m| m.resolve_scope(&item.hierarchical_name));
    let scope = module
        .map(|m| m.name.clone())
        .unwrap_or_else(|| item.hierarchical_name.clone());
    let mut names: Vec<SignalRef> = Vec::new();
    match item.category {
        Category::Toggle => {
            let text = item.expression.as_deref().unwrap_or("");
            if let Some(mut r) = SignalRef::parse(text) {
                r.module = Some(scope.clone());
                names.push(r);
            }
        }
        Category::Line if module.is_some() => {
            let (model, m) = (
                model.expect("module implies model"),
                module.expect("checked"),
            );
            let line = item.source.line;
            let file_matches = |p: &Path| {
                p.file_name().and_then(|f| f.to_str())
                    == Path::new(&item.source.file)
                        .file_name()
                        .and_then(|f| f.to_str())
            };
            // Innermost statement covering the line; its signals are the seeds.
            let hit = m
                .statements
                .iter()
                .map(|&id| &model.statements[id])
                .filter(|s| {
                    file_matches(&s.span.file)
                        && s.span.line_start <= line
                        && line <= s.span.line_end
                        && s.kind != StatementKind::Declaration
                })
                .max_by_key(|s| (s.span.line_start, std::cmp::Reverse(s.span.line_end), s.id));
            if let Some(s) = hit {
                names.extend(
                    s.signals()
                        .map(|n| SignalRef::new(scope.clone(), n.clone())),
                );
            }
        }
        _ => {
            let text = match item.category {
                Category::Line => item.detail.as_deref().unwrap_or(""),
                _ => item.expression.as_deref().unwrap_or(""),
            };
            names.extend(
                identifiers(text)
                    .into_iter()
                    .map(|n| SignalRef::new(scope.clone(), n)),
            );
        }
    }
    if let Some(m) = module {
        names.retain(|r| m.has_signal(&r.name));
    }
    if names.is_empty() {
        return Err(CoverageError::NoSeedsFound(item.id));
    }
    Ok(SeedSet {
        signals: names.into_iter().collect(),
        origin: Some(item.id),
    })
}

/// Items whose hierarchy does not resolve in the design.
pub fn unresolved_hierarchy(report: &CoverageReport, model: &DesignModel) -> Vec<usize> {
    report
        .items
        .iter()
        .filter(|i| model.resolve_scope(&i.hierarchical_name).is_none())
        .map(|i| i.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, category: Category, status: Status) -> CoverageItem {
        CoverageItem {
            id,
            category,
            hierarchical_name: "top.u".into(),
            source: SourceLoc {
                file: "a.v".into(),
                line: id,
            },
            status,
            expression: None,
            detail: None,
        }
    }

    #[test]
    fn half_covered_lines() {
        let items = [
            item(1, Category::Line, Status::Covered),
            item(2, Category::Line, Status::Uncovered),
        ];
        let (score, per) = compute_score(&items).unwrap();
        assert_eq!(score, 50.0);
        assert_eq!(per[&Category::Line], 50.0);
    }

    #[test]
    fn everything_covered_is_full() {
        let items: Vec<_> = Category::ALL
            .iter()
            .enumerate()
            .map(|(i, c)| item(i, *c, Status::Covered))
            .collect();
        let (score, per) = compute_score(&items).unwrap();
        assert_eq!(score, 100.0);
        assert!(per.values().all(|v| *v == 100.0));
        assert!(!per.contains_key(&Category::Functional));
    }

    #[test]
    fn functional_only_has_no_score() {
        let items = [item(1, Category::Functional, Status::Uncovered)];
        assert!(matches!(compute_score(&items), Err(CoverageError::NoItems)));
        assert!(matches!(compute_score(&[]), Err(CoverageError::NoItems)));
    }

    #[test]
    fn weights_shift_the_mean() {
        let items = [
            item(1, Category::Line, Status::Covered),
            item(2, Category::Toggle, Status::Uncovered),
        ];
        let w = BTreeMap::from([(Category::Line, 3.0)]);
        assert_eq!(compute_score_weighted(&items, &w).unwrap().0, 75.0);
    }

    #[test]
    fn single_uncovered_line() {
        let r = parse_report("LINE\tUNCOVERED\ttop.u_fsm\tfsm.v:42\t\n").unwrap();
        assert_eq!(r.items.len(), 1);
        assert_eq!(r.items[0].category, Category::Line);
        assert_eq!(r.items[0].status, Status::Uncovered);
        assert_eq!(r.items[0].source.line, 42);
    }

    #[test]
    fn empty_body_has_no_items() {
        let r = parse_report("# run_label: empty\n").unwrap();
        assert!(r.items.is_empty());
        assert!(matches!(
            compute_score(&r.items),
            Err(CoverageError::NoItems)
        ));
    }

    #[test]
    fn malformed_lines_are_counted() {
        let r = parse_report(
            "# run_label: x\nLINE\tPARTIAL\tt\ta.v:1\t\nBRANCH\tCOVERED\tt\ta.v\t\nLINE\tCOVERED\tt\ta.v:3\t\n",
        )
        .unwrap();
        assert_eq!(r.items.len(), 1);
        assert_eq!(
            r.malformed.iter().map(|m| m.line).collect::<Vec<_>>(),
            [2, 3]
        );
    }

    #[test]
    fn unknown_text_is_rejected() {
        assert!(matches!(
            parse_report("hello world"),
            Err(CoverageError::UnrecognizedFormat)
        ));
        assert!(matches!(
            parse_report("<html><body>nothing</body></html>"),
            Err(CoverageError::UnrecognizedFormat)
        ));
    }

    #[test]
    fn truncation_annotates_rest() {
        let items: Vec<_> = (1..=3)
            .map(|i| item(i, Category::Branch, Status::Partial))
            .collect();
        let r = CoverageReport::from_items("t", items);
        let s = extract_uncovered(&r, 1);
        assert_eq!(s.groups.len(), 1);
        assert_eq!(s.groups[0].items, [1]);
        assert_eq!(s.groups[0].omitted, 2);
        assert!(s.render_text(&r).contains("+2 more"));
    }

    #[test]
    fn condition_seeds_are_identifiers() {
        let mut it = item(1, Category::Condition, Status::Partial);
        it.expression = Some("(req && !busy)".into());
        let names: Vec<String> = seed_signals(&it, None)
            .unwrap()
            .signals
            .into_iter()
            .map(|s| s.name)
            .collect();
        assert_eq!(names, ["busy", "req"]);
        let mut t = item(2, Category::Toggle, Status::Uncovered);
        t.expression = Some("grant".into());
        let s = seed_signals(&t, None).unwrap();
        assert_eq!(s.signals.iter().next().unwrap().name, "grant");
        t.expression = Some("4'b0".into());
        assert!(matches!(
            seed_signals(&t, None),
            Err(CoverageError::NoSeedsFound(2))
        ));
    }

    #[test]
    fn escapes_round_trip() {
        for s in ["plain", "a\tb", "x\\ny", "line\nbreak\r", "\\"] {
            assert_eq!(unescape(&escape(s)), s);
        }
    }
}
