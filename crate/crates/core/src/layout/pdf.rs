//! Text-line extraction from PDF content streams.
//!
//! Walks each page's operators, tracking the text and transformation
//! matrices, and emits one element per visual line. Glyph widths are not
//! read from font programs; a run's width is estimated as half an em per
//! character, which is enough to separate lines from column gutters.
//! Strings are decoded as UTF-16BE when they carry a BOM and as Latin-1
//! otherwise; text set in CID-keyed or custom-encoded fonts comes out
//! garbled. Table detection is not performed here.

use std::path::Path;

use lopdf::content::Content;
use lopdf::{Document, Object};

use super::{BBox, PageElement, PageModel, PageSource};
use crate::error::{Error, Result};

const EM_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct PdfSource {
    /// Horizontal gap, in multiples of the font size, that splits a line.
    pub gap_factor: f64,
}

impl Default for PdfSource {
    fn default() -> Self {
        PdfSource { gap_factor: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Matrix([f64; 6]);

impl Matrix {
    const IDENTITY: Matrix = Matrix([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    fn translate(tx: f64, ty: f64) -> Matrix {
        Matrix([1.0, 0.0, 0.0, 1.0, tx, ty])
    }

    /// `self × rhs` in PDF row-vector convention.
    fn then(&self, rhs: &Matrix) -> Matrix {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = rhs.0;
        Matrix([
            a * a2 + b * c2,
            a * b2 + b * d2,
            c * a2 + d * c2,
            c * b2 + d * d2,
            e * a2 + f * c2 + e2,
            e * b2 + f * d2 + f2,
        ])
    }
}

#[derive(Debug, Clone)]
struct Run {
    text: String,
    x: f64,
    y: f64,
    size: f64,
    width: f64,
}

fn number(obj: &Object) -> Option<f64> {
    match obj {
        Object::Integer(i) => Some(*i as f64),
        Object::Real(r) => Some(*r as f64),
        _ => None,
    }
}

fn numbers<const N: usize>(operands: &[Object]) -> Option<[f64; N]> {
    if operands.len() < N {
        return None;
    }
    let mut out = [0.0; N];
    for (slot, obj) in out.iter_mut().zip(operands) {
        *slot = number(obj)?;
    }
    Some(out)
}

fn decode_string(bytes: &[u8]) -> String {
    if bytes.len() >= 2 && bytes[0] == 0xFE && bytes[1] == 0xFF {
        let units: Vec<u16> = bytes[2..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        String::from_utf16_lossy(&units)
    } else {
        bytes.iter().map(|&b| b as char).collect()
    }
}

#[derive(Debug)]
struct TextState {
    ctm: Matrix,
    stack: Vec<Matrix>,
    tm: Matrix,
    tlm: Matrix,
    font_size: f64,
    leading: f64,
    runs: Vec<Run>,
}

impl TextState {
    fn new() -> Self {
        TextState {
            ctm: Matrix::IDENTITY,
            stack: Vec::new(),
            tm: Matrix::IDENTITY,
            tlm: Matrix::IDENTITY,
            font_size: 12.0,
            leading: 0.0,
            runs: Vec::new(),
        }
    }

    fn next_line(&mut self, tx: f64, ty: f64) {
        self.tlm = Matrix::translate(tx, ty).then(&self.tlm);
        self.tm = self.tlm;
    }

    fn show(&mut self, text: String) {
        let chars = text.chars().count() as f64;
        let advance = chars * EM_WIDTH * self.font_size;
        let m = self.tm.then(&self.ctm);
        let [_, b, _, d, e, f] = m.0;
        let scale = (b * b + d * d).sqrt();
        if !text.trim().is_empty() {
            self.runs.push(Run {
                text,
                x: e,
                y: f,
                size: self.font_size * scale,
                width: advance * scale,
            });
        }
        self.tm = Matrix::translate(advance, 0.0).then(&self.tm);
    }

    fn apply(&mut self, operator: &str, operands: &[Object]) {
        match operator {
            "q" => self.stack.push(self.ctm),
            "Q" => {
                if let Some(m) = self.stack.pop() {
                    self.ctm = m;
                }
            }
            "cm" => {
                if let Some(m) = numbers::<6>(operands) {
                    self.ctm = Matrix(m).then(&self.ctm);
                }
            }
            "BT" => {
                self.tm = Matrix::IDENTITY;
                self.tlm = Matrix::IDENTITY;
            }
            "Tf" => {
                if let Some(size) = operands.get(1).and_then(number) {
                    self.font_size = size;
                }
            }
            "TL" => {
                if let Some([l]) = numbers::<1>(operands) {
                    self.leading = l;
                }
            }
            "Td" => {
                if let Some([tx, ty]) = numbers::<2>(operands) {
                    self.next_line(tx, ty);
                }
            }
            "TD" => {
                if let Some([tx, ty]) = numbers::<2>(operands) {
                    self.leading = -ty;
                    self.next_line(tx, ty);
                }
            }
            "Tm" => {
                if let Some(m) = numbers::<6>(operands) {
                    self.tm = Matrix(m);
                    self.tlm = self.tm;
                }
            }
            "T*" => self.next_line(0.0, -self.leading),
            "Tj" => {
                if let Some(Object::String(bytes, _)) = operands.first() {
                    self.show(decode_string(bytes));
                }
            }
            "'" => {
                self.next_line(0.0, -self.leading);
                if let Some(Object::String(bytes, _)) = operands.first() {
                    self.show(decode_string(bytes));
                }
            }
            "\"" => {
                self.next_line(0.0, -self.leading);
                if let Some(Object::String(bytes, _)) = operands.get(2) {
                    self.show(decode_string(bytes));
                }
            }
            "TJ" => {
                if let Some(Object::Array(items)) = operands.first() {
                    let mut text = String::new();
                    for item in items {
                        match item {
                            Object::String(bytes, _) => text.push_str(&decode_string(bytes)),
                            // Large negative kerning is an inter-word gap.
                            other => {
                                if number(other).is_some_and(|n| n < -200.0) {
                                    text.push(' ');
                                }
                            }
                        }
                    }
                    self.show(text);
                }
            }
            _ => {}
        }
    }
}

impl PdfSource {
    /// Merges runs into lines: same baseline and a horizontal gap below
    /// `gap_factor` font sizes.
    fn lines(&self, mut runs: Vec<Run>, page_no: u32) -> Vec<PageElement> {
        runs.sort_by(|a, b| b.y.total_cmp(&a.y).then(a.x.total_cmp(&b.x)));
        let mut lines: Vec<(Run, f64)> = Vec::new();
        for run in runs {
            if let Some((line, right)) = lines.last_mut() {
                let same_baseline = (line.y - run.y).abs() <= 0.3 * line.size.max(run.size);
                let gap = run.x - *right;
                if same_baseline && gap <= self.gap_factor * line.size.max(run.size) {
                    if gap > 0.1 * run.size && !line.text.ends_with(' ') {
                        line.text.push(' ');
                    }
                    line.text.push_str(&run.text);
                    *right = right.max(run.x + run.width);
                    line.size = line.size.max(run.size);
                    continue;
                }
            }
            let right = run.x + run.width;
            lines.push((run, right));
        }
        lines
            .into_iter()
            .map(|(line, right)| PageElement {
                text: line.text,
                bbox: BBox {
                    x0: line.x,
                    y0: line.y - 0.2 * line.size,
                    x1: right,
                    y1: line.y + 0.8 * line.size,
                },
                page_no,
            })
            .collect()
    }
}

impl PageSource for PdfSource {
    fn load_pages(&self, path: &Path) -> Result<Vec<PageModel>> {
        let input_err = |message: String| Error::Input {
            path: path.to_path_buf(),
            message,
        };
        let doc = Document::load(path).map_err(|e| input_err(format!("unreadable PDF: {e}")))?;
        if doc.is_encrypted() {
            return Err(input_err("encrypted PDF".into()));
        }
        let mut pages = Vec::new();
        for (page_no, page_id) in doc.get_pages() {
            let data = doc
                .get_page_content(page_id)
                .map_err(|e| input_err(format!("page {page_no}: {e}")))?;
            let content =
                Content::decode(&data).map_err(|e| input_err(format!("page {page_no}: {e}")))?;
            let mut state = TextState::new();
            for op in &content.operations {
                state.apply(&op.operator, &op.operands);
            }
            pages.push(PageModel {
                page_no,
                elements: self.lines(state.runs, page_no),
                tables: Vec::new(),
            });
        }
        Ok(pages)
    }
}
