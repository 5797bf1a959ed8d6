//! Annotation documents: one JSON file per video pairing feature files with
//! paragraph queries and their ground-truth spans.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// Paths to the three per-video feature streams, relative to the annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePaths {
    pub motion: String,
    pub appearance: String,
    pub subtitle: String,
}

/// One paragraph query: its token-feature file and ground-truth span in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphAnnotation {
    pub tokens_path: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// The on-disk annotation schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub video_id: String,
    pub duration_s: f64,
    pub features: FeaturePaths,
    pub paragraphs: Vec<ParagraphAnnotation>,
}

impl AnnotationDoc {
    /// Validates the document invariants: N >= 1, every interval inside
    /// [0, duration] with start <= end, positive duration.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::schema(format!(
                "duration_s {} must be positive and finite",
                self.duration_s
            )));
        }
        if self.paragraphs.is_empty() {
            return Err(Error::schema("annotation has no paragraphs (N == 0)"));
        }
        for (i, p) in self.paragraphs.iter().enumerate() {
            let iv = Interval::new(p.start_s, p.end_s)
                .map_err(|e| Error::schema(format!("paragraph {i}: {e}")))?;
            iv.check_within(self.duration_s)
                .map_err(|e| Error::schema(format!("paragraph {i}: {e}")))?;
        }
        Ok(())
    }

    /// Ground-truth intervals in paragraph order.
    pub fn intervals(&self) -> Vec<Interval> {
        self.paragraphs
            .iter()
            .map(|p| Interval {
                start: p.start_s,
                end: p.end_s,
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Parses and validates an annotation document. Paragraph order is preserved
/// exactly as written.
pub fn parse_annotation(bytes: &[u8]) -> Result<AnnotationDoc> {
    let doc: AnnotationDoc =
        serde_json::from_slice(bytes).map_err(|e| Error::schema(format!("bad annotation: {e}")))?;
    doc.validate()?;
    Ok(doc)
}

/// Resolves a feature path relative to the annotation file location.
pub fn resolve_path(annotation_file: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        annotation_file
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
