//! Page geometry to Markdown.
//!
//! Text elements are split into two columns at the page's mid line, each
//! column is read top to bottom, and the page's tables follow the text as
//! pipe tables. Pages are separated by a blank line.

mod fixture;
#[cfg(feature = "pdf")]
mod pdf;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixture::FixtureSource;
#[cfg(feature = "pdf")]
pub use pdf::PdfSource;

/// Axis-aligned box in PDF points, origin bottom-left, y grows upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageElement {
    pub text: String,
    pub bbox: BBox,
    pub page_no: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedTable {
    /// First row is the header.
    pub rows: Vec<Vec<String>>,
    pub page_no: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PageModel {
    pub page_no: u32,
    pub elements: Vec<PageElement>,
    pub tables: Vec<ExtractedTable>,
}

impl PageModel {
    /// Checks page numbering and element geometry.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Layout {
            page_no: self.page_no,
            message,
        };
        if self.page_no < 1 {
            return Err(fail("page numbers start at 1".into()));
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.page_no != self.page_no {
                return Err(fail(format!("element {i} carries page {}", e.page_no)));
            }
            if !e.bbox.is_valid() {
                return Err(fail(format!(
                    "element {i} has an inverted bbox {:?}",
                    e.bbox
                )));
            }
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.page_no != self.page_no {
                return Err(fail(format!("table {i} carries page {}", t.page_no)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConversionStats {
    pub pages: usize,
    pub elements: usize,
    pub tables: usize,
    pub output_bytes: usize,
}

/// Loads the pages of one document.
pub trait PageSource {
    fn load_pages(&self, path: &Path) -> Result<Vec<PageModel>>;
}

/// Picks the page source for a path: `.json` fixtures, anything else as PDF.
pub fn source_for(path: &Path) -> Result<Box<dyn PageSource>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("json") => Ok(Box::new(FixtureSource)),
        #[cfg(feature = "pdf")]
        Some("pdf") => Ok(Box::new(PdfSource::default())),
        _ => Err(Error::Input {
            path: path.to_path_buf(),
            message: "unsupported input type".into(),
        }),
    }
}

/// The vertical line halfway between the leftmost left edge and the
/// rightmost right edge.
pub fn mid_line(elements: &[PageElement]) -> Option<f64> {
    let max_x1 = elements.iter().map(|e| e.bbox.x1).reduce(f64::max)?;
    let min_x0 = elements.iter().map(|e| e.bbox.x0).reduce(f64::min)?;
    Some((max_x1 + min_x0) / 2.0)
}

/// Splits elements into (left, right) by comparing each left edge with the
/// mid line. Full-width elements start left of the mid line and so land left.
pub fn partition_columns(elements: &[PageElement]) -> (Vec<PageElement>, Vec<PageElement>) {
    let Some(mid) = mid_line(elements) else {
        return (Vec::new(), Vec::new());
    };
    elements.iter().cloned().partition(|e| e.bbox.x0 < mid)
}

/// Top of page first; equal tops fall back to the left edge, then input order.
pub fn order_reading(mut column: Vec<PageElement>) -> Vec<PageElement> {
    column.sort_by(|a, b| {
        b.bbox
            .y0
            .total_cmp(&a.bbox.y0)
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
    });
    column
}

/// Normalizes extracted text: CRLF to LF, other control characters to a
/// space, runs of spaces collapsed, trailing whitespace removed per line.
pub fn clean_text(raw: &str) -> String {
    let normalized = raw.replace("\r\n", "\n");
    let mut out = String::with_capacity(normalized.len());
    for (i, line) in normalized.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut prev_space = false;
        let start = out.len();
        for c in line.chars() {
            let c = if c.is_control() { ' ' } else { c };
            if c == ' ' {
                if !prev_space {
                    out.push(' ');
                }
                prev_space = true;
            } else {
                out.push(c);
                prev_space = false;
            }
        }
        let kept = out[start..].trim_end().len();
        out.truncate(start + kept);
    }
    out
}

fn table_cell(cell: &str) -> String {
    clean_text(cell)
        .replace('\n', " ")
        .replace('|', "\\|")
        .trim()
        .to_string()
}

/// Renders a table as a pipe table: header row, separator, body rows.
pub fn render_table(table: &ExtractedTable) -> Result<String> {
    let fail = |message: String| Error::Layout {
        page_no: table.page_no,
        message,
    };
    let width = table.rows.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(fail("empty table".into()));
    }
    if let Some((i, row)) = table
        .rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != width)
    {
        return Err(fail(format!(
            "ragged table: row {i} has {} cells, header has {width}",
            row.len()
        )));
    }
    let mut out = String::new();
    for (i, row) in table.rows.iter().enumerate() {
        out.push('|');
        for cell in row {
            let _ = write!(out, " {} |", table_cell(cell));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            out.push_str(&"---|".repeat(width));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Renders one page: left column, right column, tables, then `"\n\n"`.
///
/// Each element contributes its cleaned text on its own line; elements that
/// clean to nothing are skipped.
pub fn render_page_markdown(page: &PageModel) -> Result<String> {
    let (left, right) = partition_columns(&page.elements);
    let mut out = String::new();
    for column in [order_reading(left), order_reading(right)] {
        for element in column {
            let cleaned = clean_text(&element.text);
            let cleaned = cleaned.trim_matches('\n');
            if cleaned.is_empty() {
                continue;
            }
            out.push_str(cleaned);
            out.push('\n');
        }
    }
    for table in &page.tables {
        out.push_str(&render_table(table)?);
    }
    out.push_str("\n\n");
    Ok(out)
}

/// Renders pages in page order.
pub fn render_document(pages: &[PageModel]) -> Result<(String, ConversionStats)> {
    let mut sorted: Vec<&PageModel> = pages.iter().collect();
    sorted.sort_by_key(|p| p.page_no);
    let mut out = String::new();
    let mut stats = ConversionStats::default();
    for page in sorted {
        page.validate()?;
        out.push_str(&render_page_markdown(page)?);
        stats.pages += 1;
        stats.elements += page.elements.len();
        stats.tables += page.tables.len();
    }
    stats.output_bytes = out.len();
    Ok((out, stats))
}

/// Loads `input` through the matching page source and writes its Markdown
/// to `output`.
pub fn convert_document(input: &Path, output: &Path) -> Result<ConversionStats> {
    let pages = source_for(input)?.load_pages(input)?;
    let (markdown, stats) = render_document(&pages)?;
    std::fs::write(output, markdown).map_err(|e| Error::io(output, e))?;
    Ok(stats)
}
