use std::path::Path;

use serde::Deserialize;

use super::{BBox, ExtractedTable, PageElement, PageModel, PageSource};
use crate::error::{Error, Result};

/// Reads pages from JSON: either one page object or an array of them.
///
/// ```json
/// {"page_no": 1,
///  "elements": [{"text": "...", "bbox": [x0, y0, x1, y1]}],
///  "tables": [{"rows": [["h1", "h2"], ["a", "b"]]}]}
/// ```
#[derive(Debug, Default, Clone, Copy)]
pub struct FixtureSource;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixturePage {
    page_no: u32,
    #[serde(default)]
    elements: Vec<FixtureElement>,
    #[serde(default)]
    tables: Vec<FixtureTable>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureElement {
    text: String,
    bbox: BBox,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureTable {
    rows: Vec<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureFile {
    One(FixturePage),
    Many(Vec<FixturePage>),
}

impl From<FixturePage> for PageModel {
    fn from(p: FixturePage) -> Self {
        let page_no = p.page_no;
        PageModel {
            page_no,
            elements: p
                .elements
                .into_iter()
                .map(|e| PageElement {
                    text: e.text,
                    bbox: e.bbox,
                    page_no,
                })
                .collect(),
            tables: p
                .tables
                .into_iter()
                .map(|t| ExtractedTable {
                    rows: t.rows,
                    page_no,
                })
                .collect(),
        }
    }
}

impl FixtureSource {
    pub fn parse(json: &str) -> std::result::Result<Vec<PageModel>, serde_json::Error> {
        let pages = match serde_json::from_str::<FixtureFile>(json)? {
            FixtureFile::One(p) => vec![p],
            FixtureFile::Many(ps) => ps,
        };
        Ok(pages.into_iter().map(PageModel::from).collect())
    }
}

impl PageSource for FixtureSource {
    fn load_pages(&self, path: &Path) -> Result<Vec<PageModel>> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pages = Self::parse(&json).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            message: format!("not a page fixture: {e}"),
        })?;
        for page in &pages {
            page.validate()?;
        }
        Ok(pages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_multi_page() {
        let one = r#"{"page_no":2,"elements":[{"text":"t","bbox":[1,2,3,4]}],"tables":[{"rows":[["a"]]}]}"#;
        let pages = FixtureSource::parse(one).unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!(pages[0].elements[0].page_no, 2);
        assert_eq!(pages[0].tables[0].page_no, 2);
        assert_eq!(pages[0].elements[0].bbox.y1, 4.0);

        let many = r#"[{"page_no":1},{"page_no":2,"elements":[]}]"#;
        assert_eq!(FixtureSource::parse(many).unwrap().len(), 2);
    }

    #[test]
    fn rejects_garbage() {
        assert!(FixtureSource::parse("{\"pages\": 3}").is_err());
        assert!(FixtureSource::parse("not json").is_err());
    }
}
