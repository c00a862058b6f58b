//! Normalized document-element model and the element/crop file formats.
//!
//! Elements arrive as line-delimited JSON (one element per line) so any
//! upstream parser can feed the pipeline. Ingest validates records,
//! normalizes inverted bbox corners, and enforces per-document id
//! uniqueness. Table elements can be turned into crop requests for an
//! external renderer; the pipeline never rasterizes anything itself.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pad_region, transform_coords, BBox, DEFAULT_PAD_H, DEFAULT_PAD_V};

/// Layout category of a document element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Title,
    NarrativeText,
    Table,
    Image,
    Header,
    Footer,
    Other,
}

/// One layout unit of a parsed document: the pipeline's raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentElement {
    pub id: String,
    pub doc_id: String,
    pub kind: ElementKind,
    pub text: String,
    /// 1-based page number.
    pub page: u32,
    pub bbox: BBox<f64>,
    /// Points-per-unit scale of the bbox coordinate system.
    pub units: f64,
}

impl DocumentElement {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("element id must be non-empty".into()));
        }
        if self.doc_id.is_empty() {
            return Err(Error::Validation(format!(
                "element {}: doc_id must be non-empty",
                self.id
            )));
        }
        if self.page < 1 {
            return Err(Error::Validation(format!(
                "element {}: page must be >= 1",
                self.id
            )));
        }
        if self.units <= 0.0 {
            return Err(Error::Validation(format!(
                "element {}: units must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

/// A request to crop one padded table region, handed to an external renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRequest {
    pub doc_id: String,
    pub page: u32,
    /// Region in target units, already padded and clamped to the page.
    pub padded_bbox: BBox<f64>,
    pub context_note: String,
}

/// Loads elements from a JSONL file, in document reading order.
///
/// Inverted bbox corners are normalized; duplicate ids within a document
/// and malformed records are rejected.
pub fn load_elements(path: &Path) -> Result<Vec<DocumentElement>> {
    let raw = fs::read_to_string(path)?;
    load_elements_str(&raw, path)
}

/// Same as [`load_elements`] but over in-memory text; `path` is only used
/// in error messages.
pub fn load_elements_str(raw: &str, path: &Path) -> Result<Vec<DocumentElement>> {
    let mut elements = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: "blank line in element file".to_string(),
            });
        }
        let mut element: DocumentElement =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        element.bbox = element.bbox.normalized();
        element.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        if !seen.insert((element.doc_id.clone(), element.id.clone())) {
            return Err(Error::Validation(format!(
                "duplicate element id {} in document {} (line {})",
                element.id, element.doc_id, lineno
            )));
        }
        elements.push(element);
    }
    Ok(elements)
}

/// Canonical JSONL serialization: one compact record per line, trailing newline.
pub fn to_canonical_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes records in canonical JSONL form.
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_canonical_jsonl(records)?.as_bytes())?;
    Ok(())
}

/// Builds the crop request for one table element: rescale its bbox into
/// `target_units`, pad with the default margins, clamp to the page.
pub fn extract_table_region(
    element: &DocumentElement,
    target_units: f64,
    page_bounds: &BBox<f64>,
) -> Result<CropRequest> {
    if element.kind != ElementKind::Table {
        return Err(Error::InvalidArgument(format!(
            "extract_table_region: element {} is {:?}, not a table",
            element.id, element.kind
        )));
    }
    let scaled = transform_coords(&element.bbox, element.units, target_units)?;
    let padded = pad_region(&scaled, page_bounds, DEFAULT_PAD_H, DEFAULT_PAD_V);
    Ok(CropRequest {
        doc_id: element.doc_id.clone(),
        page: element.page,
        padded_bbox: padded,
        context_note: format!(
            "table region of element {} (page {}), padded to capture nearby titles and footnotes",
            element.id, element.page
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_page_bounds;

    fn table_element() -> DocumentElement {
        DocumentElement {
            id: "e1".into(),
            doc_id: "d1".into(),
            kind: ElementKind::Table,
            text: "Model | Pickup".into(),
            page: 2,
            bbox: BBox::new(100.0, 200.0, 300.0, 400.0),
            units: 1000.0,
        }
    }

    #[test]
    fn table_region_composes_transform_and_pad() {
        let crop = extract_table_region(&table_element(), 720.0, &default_page_bounds()).unwrap();
        assert_eq!(crop.padded_bbox, BBox::new(52.0, 44.0, 236.0, 388.0));
        assert_eq!(crop.page, 2);
        assert_eq!(crop.doc_id, "d1");
    }

    #[test]
    fn table_already_in_target_units_only_pads() {
        let mut el = table_element();
        el.units = 720.0;
        el.bbox = BBox::new(72.0, 144.0, 216.0, 288.0);
        let crop = extract_table_region(&el, 720.0, &default_page_bounds()).unwrap();
        assert_eq!(crop.padded_bbox, BBox::new(52.0, 44.0, 236.0, 388.0));
    }

    #[test]
    fn non_table_element_is_rejected() {
        let mut el = table_element();
        el.kind = ElementKind::NarrativeText;
        assert!(extract_table_region(&el, 720.0, &default_page_bounds()).is_err());
    }

    #[test]
    fn load_empty_file_gives_empty_list() {
        let got = load_elements_str("", Path::new("x.jsonl")).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn load_preserves_order_and_round_trips() {
        let a = r#"{"id":"e1","doc_id":"d1","kind":"title","text":"Relay guide","page":1,"bbox":{"x0":0.0,"y0":0.0,"x1":100.0,"y1":20.0},"units":72.0}"#;
        let b = r#"{"id":"e2","doc_id":"d1","kind":"narrative_text","text":"The relay trips the breaker.","page":1,"bbox":{"x0":0.0,"y0":30.0,"x1":100.0,"y1":60.0},"units":72.0}"#;
        let raw = format!("{a}\n{b}\n");
        let elements = load_elements_str(&raw, Path::new("x.jsonl")).unwrap();
        assert_eq!(elements.len(), 2);
        assert_eq!(elements[0].id, "e1");
        assert_eq!(elements[1].id, "e2");
        // canonical form is a fixed point of load -> serialize
        let out = to_canonical_jsonl(&elements).unwrap();
        assert_eq!(out, raw);
        let again = load_elements_str(&out, Path::new("x.jsonl")).unwrap();
        assert_eq!(to_canonical_jsonl(&again).unwrap(), out);
    }

    #[test]
    fn inverted_corners_are_normalized() {
        let a = r#"{"id":"e1","doc_id":"d1","kind":"other","text":"t","page":1,"bbox":{"x0":50.0,"y0":80.0,"x1":10.0,"y1":20.0},"units":72.0}"#;
        let raw = format!("{a}\n");
        let elements = load_elements_str(&raw, Path::new("x.jsonl")).unwrap();
        assert_eq!(elements[0].bbox, BBox::new(10.0, 20.0, 50.0, 80.0));
    }

    #[test]
    fn duplicate_id_in_document_is_rejected() {
        let a = r#"{"id":"e1","doc_id":"d1","kind":"other","text":"t","page":1,"bbox":{"x0":0.0,"y0":0.0,"x1":1.0,"y1":1.0},"units":72.0}"#;
        let raw = format!("{a}\n{a}\n");
        let err = load_elements_str(&raw, Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let raw = "{\"id\":\"e1\"\n";
        let err = load_elements_str(raw, Path::new("x.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
