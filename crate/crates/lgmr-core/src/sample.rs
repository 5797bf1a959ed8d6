//! Core sample types: fused video features, paragraph token features, the
//! paired sample, and the ground-truth attention mask.

use std::path::Path;

use crate::annotation::{parse_annotation, resolve_path, AnnotationDoc};
use crate::error::{Error, Result};
use crate::featfile::{read_matrix_file, Matrix};
use crate::fusion::{align_and_fuse, FusionSpec};
use crate::interval::Interval;

/// Fused per-timestep video features with duration metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatureSequence {
    pub features: Matrix,
    pub duration: f64,
    pub source_dims: Vec<usize>,
}

impl VideoFeatureSequence {
    pub fn new(features: Matrix, duration: f64, source_dims: Vec<usize>) -> Result<Self> {
        if features.rows == 0 {
            return Err(Error::invalid("video feature sequence must have T >= 1"));
        }
        let dv: usize = source_dims.iter().sum();
        if dv != features.cols {
            return Err(Error::invalid(format!(
                "source_dims sum {dv} != feature width {}",
                features.cols
            )));
        }
        if !(duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !features.is_finite() {
            return Err(Error::numeric("video features contain non-finite values"));
        }
        Ok(Self {
            features,
            duration,
            source_dims,
        })
    }

    pub fn num_timesteps(&self) -> usize {
        self.features.rows
    }

    /// Center-of-bin time for feature index j: (j + 0.5) / T * duration.
    pub fn timestep_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.num_timesteps() as f64 * self.duration
    }
}

/// Token-level features of one paragraph query.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphTokenFeatures {
    pub tokens: Matrix,
}

impl ParagraphTokenFeatures {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows == 0 {
            return Err(Error::invalid("paragraph must have at least one token"));
        }
        if !tokens.is_finite() {
            return Err(Error::numeric("token features contain non-finite values"));
        }
        Ok(Self { tokens })
    }
}

/// One video paired with N ordered paragraph queries and their ground truth.
#[derive(Debug, Clone)]
pub struct SynopsisSample {
    pub video_id: String,
    pub video: VideoFeatureSequence,
    pub paragraphs: Vec<ParagraphTokenFeatures>,
    pub ground_truth: Vec<Interval>,
}

impl SynopsisSample {
    pub fn validate(&self) -> Result<()> {
        if self.paragraphs.is_empty() {
            return Err(Error::invalid("sample has no paragraphs"));
        }
        if self.paragraphs.len() != self.ground_truth.len() {
            return Err(Error::invalid(format!(
                "{} paragraphs but {} ground-truth intervals",
                self.paragraphs.len(),
                self.ground_truth.len()
            )));
        }
        for iv in &self.ground_truth {
            iv.check_within(self.video.duration)?;
        }
        Ok(())
    }

    pub fn num_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }
}

/// Binary N x T mask: mask[i][j] = 1 iff the center of timestep j lies inside
/// ground-truth interval i.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaskMatrix {
    pub n: usize,
    pub t: usize,
    pub mask: Vec<u8>,
}

impl AttentionMaskMatrix {
    pub fn row(&self, i: usize) -> &[u8] {
        &self.mask[i * self.t..(i + 1) * self.t]
    }

    /// Builds the mask from ground-truth intervals over T timestep bins.
    /// A ground truth shorter than one bin (no center inside) is widened to
    /// the bin nearest its midpoint so every row keeps at least one entry.
    pub fn from_ground_truth(gts: &[Interval], duration: f64, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("mask needs T >= 1"));
        }
        if !(duration > 0.0) {
            return Err(Error::invalid("mask needs positive duration"));
        }
        let n = gts.len();
        let mut mask = vec![0u8; n * t];
        for (i, iv) in gts.iter().enumerate() {
            let row = &mut mask[i * t..(i + 1) * t];
            let mut any = false;
            for (j, m) in row.iter_mut().enumerate() {
                let center = (j as f64 + 0.5) / t as f64 * duration;
                if center >= iv.start && center <= iv.end {
                    *m = 1;
                    any = true;
                }
            }
            if !any {
                let mid = (iv.start + iv.end) / 2.0;
                let j = ((mid / duration * t as f64).floor() as usize).min(t - 1);
                row[j] = 1;
            }
        }
        Ok(Self { n, t, mask })
    }
}

/// Loads a full sample: annotation, the three video streams (fused), and the
/// per-paragraph token-feature files.
pub fn load_sample(annotation_file: &Path, fusion: &FusionSpec) -> Result<SynopsisSample> {
    let bytes = std::fs::read(annotation_file).map_err(|e| {
        Error::schema(format!("cannot read {}: {e}", annotation_file.display()))
    })?;
    let doc = parse_annotation(&bytes)?;
    load_sample_with_doc(annotation_file, &doc, fusion)
}

pub fn load_sample_with_doc(
    annotation_file: &Path,
    doc: &AnnotationDoc,
    fusion: &FusionSpec,
) -> Result<SynopsisSample> {
    let motion = read_matrix_file(&resolve_path(annotation_file, &doc.features.motion))?;
    let appearance = read_matrix_file(&resolve_path(annotation_file, &doc.features.appearance))?;
    let subtitle = read_matrix_file(&resolve_path(annotation_file, &doc.features.subtitle))?;
    let video = align_and_fuse(&motion, &appearance, &subtitle, fusion, doc.duration_s)?;

    let mut paragraphs = Vec::with_capacity(doc.paragraphs.len());
    for p in &doc.paragraphs {
        let tokens = read_matrix_file(&resolve_path(annotation_file, &p.tokens_path))?;
        paragraphs.push(ParagraphTokenFeatures::new(tokens)?);
    }

    let sample = SynopsisSample {
        video_id: doc.video_id.clone(),
        video,
        paragraphs,
        ground_truth: doc.intervals(),
    };
    sample.validate()?;
    Ok(sample)
}

/// Reads the channel widths of an annotation's three feature files.
pub fn infer_fusion_spec(annotation_file: &Path) -> Result<FusionSpec> {
    let bytes = std::fs::read(annotation_file).map_err(|e| {
        Error::schema(format!("cannot read {}: {e}", annotation_file.display()))
    })?;
    let doc = parse_annotation(&bytes)?;
    let width = |rel: &str| -> Result<usize> {
        Ok(read_matrix_file(&resolve_path(annotation_file, rel))?.cols)
    };
    Ok(FusionSpec {
        motion_dim: width(&doc.features.motion)?,
        appearance_dim: width(&doc.features.appearance)?,
        subtitle_dim: width(&doc.features.subtitle)?,
    })
}

/// Lists the annotation files of a dataset directory in deterministic order.
pub fn dataset_annotations(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let ann_dir = if dir.join("annotations").is_dir() {
        dir.join("annotations")
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<_> = std::fs::read_dir(&ann_dir)
        .map_err(|e| Error::schema(format!("cannot read {}: {e}", ann_dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::schema(format!(
            "no annotation files found under {}",
            ann_dir.display()
        )));
    }
    Ok(files)
}

/// Loads a dataset, taking the channel widths from the first sample's files
/// and validating every other sample against them.
pub fn load_dataset_auto(dir: &Path) -> Result<(Vec<SynopsisSample>, FusionSpec)> {
    let files = dataset_annotations(dir)?;
    let fusion = infer_fusion_spec(&files[0])?;
    let samples = files
        .iter()
        .map(|f| load_sample(f, &fusion))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, fusion))
}

/// Loads every `*.json` annotation under `dir/annotations` (or `dir` itself),
/// sorted by file name for a deterministic order.
pub fn load_dataset(dir: &Path, fusion: &FusionSpec) -> Result<Vec<SynopsisSample>> {
    dataset_annotations(dir)?
        .iter()
        .map(|f| load_sample(f, fusion))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_marks_bins_inside_interval() {
        let gts = vec![Interval::new(0.0, 50.0).unwrap(), Interval::new(50.0, 100.0).unwrap()];
        let m = AttentionMaskMatrix::from_ground_truth(&gts, 100.0, 10).unwrap();
        assert_eq!(m.row(0), &[1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(m.row(1), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn short_interval_widens_to_nearest_bin() {
        // [42, 43] on duration 100 with T=10: bin centers at 5, 15, ..., no
        // center inside, midpoint 42.5 -> bin 4.
        let gts = vec![Interval::new(42.0, 43.0).unwrap()];
        let m = AttentionMaskMatrix::from_ground_truth(&gts, 100.0, 10).unwrap();
        assert_eq!(m.row(0), &[0, 0, 0, 0, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn timestep_center_mapping() {
        let v = VideoFeatureSequence::new(Matrix::zeros(4, 2), 8.0, vec![1, 1]).unwrap();
        assert_eq!(v.timestep_center(0), 1.0);
        assert_eq!(v.timestep_center(3), 7.0);
    }

    #[test]
    fn sample_validation_catches_mismatch() {
        let video = VideoFeatureSequence::new(Matrix::zeros(4, 2), 8.0, vec![1, 1]).unwrap();
        let sample = SynopsisSample {
            video_id: "x".into(),
            video,
            paragraphs: vec![ParagraphTokenFeatures::new(Matrix::zeros(2, 3)).unwrap()],
            ground_truth: vec![],
        };
        assert!(sample.validate().is_err());
    }
}
