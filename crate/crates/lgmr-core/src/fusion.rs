//! Multi-source feature alignment and fusion.
//!
//! The appearance and subtitle streams are resampled to the motion stream's
//! length by mean pooling over proportional bins, then the three streams are
//! concatenated at the channel dimension in the fixed order
//! motion | appearance | subtitle.

use crate::error::{Error, Result};
use crate::featfile::Matrix;
use crate::sample::VideoFeatureSequence;

/// Declared channel widths for the three feature streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionSpec {
    pub motion_dim: usize,
    pub appearance_dim: usize,
    pub subtitle_dim: usize,
}

impl Default for FusionSpec {
    fn default() -> Self {
        // SlowFast-style motion, image-embedding appearance, text-embedding subtitle.
        FusionSpec {
            motion_dim: 2304,
            appearance_dim: 768,
            subtitle_dim: 768,
        }
    }
}

impl FusionSpec {
    pub fn fused_dim(&self) -> usize {
        self.motion_dim + self.appearance_dim + self.subtitle_dim
    }

    pub fn source_dims(&self) -> Vec<usize> {
        vec![self.motion_dim, self.appearance_dim, self.subtitle_dim]
    }
}

/// Resamples `src` (T_src x D) to `t_out` rows by mean pooling over
/// proportional bins. Bin k covers source rows [round(k*r), round((k+1)*r))
/// with r = T_src / t_out; when upsampling, empty bins fall back to the
/// nearest source row.
pub fn adaptive_mean_pool(src: &Matrix, t_out: usize) -> Result<Matrix> {
    if src.rows == 0 || t_out == 0 {
        return Err(Error::invalid("adaptive pooling requires T >= 1"));
    }
    if src.rows == t_out {
        return Ok(src.clone());
    }
    let r = src.rows as f64 / t_out as f64;
    let mut out = Matrix::zeros(t_out, src.cols);
    for k in 0..t_out {
        let mut start = ((k as f64 * r) + 0.5).floor() as usize;
        let mut end = (((k + 1) as f64 * r) + 0.5).floor() as usize;
        start = start.min(src.rows - 1);
        end = end.min(src.rows).max(start + 1);
        let inv = 1.0 / (end - start) as f32;
        let dst = out.row_mut(k);
        for j in start..end {
            for (d, s) in dst.iter_mut().zip(src.row(j)) {
                *d += s * inv;
            }
        }
    }
    Ok(out)
}

/// Aligns appearance and subtitle streams to the motion stream's length and
/// concatenates the three at the channel dimension.
pub fn align_and_fuse(
    motion: &Matrix,
    appearance: &Matrix,
    subtitle: &Matrix,
    spec: &FusionSpec,
    duration: f64,
) -> Result<VideoFeatureSequence> {
    for (name, m) in [
        ("motion", motion),
        ("appearance", appearance),
        ("subtitle", subtitle),
    ] {
        if m.rows == 0 {
            return Err(Error::invalid(format!("{name} stream has T = 0")));
        }
        if !m.is_finite() {
            return Err(Error::numeric(format!("{name} stream has non-finite values")));
        }
    }
    let expect = [
        ("motion", motion.cols, spec.motion_dim),
        ("appearance", appearance.cols, spec.appearance_dim),
        ("subtitle", subtitle.cols, spec.subtitle_dim),
    ];
    for (name, got, want) in expect {
        if got != want {
            return Err(Error::invalid(format!(
                "{name} stream has {got} channels, config declares {want}"
            )));
        }
    }

    let t = motion.rows;
    let appearance = adaptive_mean_pool(appearance, t)?;
    let subtitle = adaptive_mean_pool(subtitle, t)?;

    let dv = spec.fused_dim();
    let mut fused = Matrix::zeros(t, dv);
    for i in 0..t {
        let dst = fused.row_mut(i);
        dst[..spec.motion_dim].copy_from_slice(motion.row(i));
        dst[spec.motion_dim..spec.motion_dim + spec.appearance_dim]
            .copy_from_slice(appearance.row(i));
        dst[spec.motion_dim + spec.appearance_dim..].copy_from_slice(subtitle.row(i));
    }

    VideoFeatureSequence::new(fused, duration, spec.source_dims())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FusionSpec {
        FusionSpec {
            motion_dim: 3,
            appearance_dim: 2,
            subtitle_dim: 2,
        }
    }

    fn constant_rows(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn equal_lengths_pure_concatenation() {
        let spec = small_spec();
        let motion = Matrix::zeros(8, 3);
        let mut appearance = Matrix::zeros(8, 2);
        appearance.data.fill(1.0);
        let mut subtitle = Matrix::zeros(8, 2);
        subtitle.data.fill(2.0);
        let fused = align_and_fuse(&motion, &appearance, &subtitle, &spec, 8.0).unwrap();
        assert_eq!(fused.features.rows, 8);
        assert_eq!(fused.features.cols, 7);
        assert_eq!(fused.features.row(3), &[0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(fused.source_dims, vec![3, 2, 2]);
    }

    #[test]
    fn halving_pools_constant_bins() {
        // appearance rows [a, a, b, b] pooled to T=2 become [a, b]
        let src = constant_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[5.0, 6.0], &[5.0, 6.0]]);
        let pooled = adaptive_mean_pool(&src, 2).unwrap();
        assert_eq!(pooled.row(0), &[1.0, 2.0]);
        assert_eq!(pooled.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn proportional_bins_three_from_five() {
        // Hand-computed oracle: 5 basis rows pooled to 3 use bins
        // {0,1}, {2}, {3,4} -> [(e1+e2)/2, e3, (e4+e5)/2].
        let mut src = Matrix::zeros(5, 5);
        for i in 0..5 {
            src.row_mut(i)[i] = 1.0;
        }
        let pooled = adaptive_mean_pool(&src, 3).unwrap();
        assert_eq!(pooled.row(0), &[0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(pooled.row(1), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(pooled.row(2), &[0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn pooling_preserves_mean_on_exact_multiples() {
        use rand::{Rng, RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut src = Matrix::zeros(12, 4);
        for v in src.data.iter_mut() {
            *v = rng.random::<f32>() * 4.0 - 2.0;
        }
        let pooled = adaptive_mean_pool(&src, 3).unwrap();
        let mean = |m: &Matrix| m.data.iter().map(|&v| v as f64).sum::<f64>() / m.data.len() as f64;
        assert!((mean(&src) - mean(&pooled)).abs() < 1e-5);
    }

    #[test]
    fn rejects_empty_stream() {
        let spec = small_spec();
        let empty = Matrix::zeros(0, 3);
        let a = Matrix::zeros(4, 2);
        let s = Matrix::zeros(4, 2);
        assert!(align_and_fuse(&empty, &a, &s, &spec, 4.0).is_err());
    }

    #[test]
    fn rejects_undeclared_channel_width() {
        let spec = small_spec();
        let motion = Matrix::zeros(4, 5); // declared 3
        let a = Matrix::zeros(4, 2);
        let s = Matrix::zeros(4, 2);
        let err = align_and_fuse(&motion, &a, &s, &spec, 4.0).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn upsampling_duplicates_nearest() {
        let src = constant_rows(&[&[1.0], &[3.0]]);
        let up = adaptive_mean_pool(&src, 4).unwrap();
        assert_eq!(up.rows, 4);
        // every output row equals one of the source rows
        for i in 0..4 {
            let v = up.row(i)[0];
            assert!(v == 1.0 || v == 3.0);
        }
        assert_eq!(up.row(0)[0], 1.0);
        assert_eq!(up.row(3)[0], 3.0);
    }
}
