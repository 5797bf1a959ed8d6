//! Fixed sinusoidal positional encodings over the video timeline.
//!
//! Encodings are added only to the inputs of query and key projections, never
//! to value projections.

use super::tensor::Tensor;

/// Sinusoidal encoding evaluated at arbitrary real positions (one row each):
/// pe[p, 2i] = sin(pos / 10000^(2i/d)), pe[p, 2i+1] = cos(pos / 10000^(2i/d)).
pub fn sinusoidal(positions: &[f64], d: usize) -> Tensor {
    let mut out = Tensor::zeros(positions.len(), d);
    for (r, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(r);
        let mut i = 0;
        while 2 * i < d {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = (pos * freq).sin();
            if 2 * i + 1 < d {
                row[2 * i + 1] = (pos * freq).cos();
            }
            i += 1;
        }
    }
    out
}

/// Encoding table for integer timesteps 0..t.
pub fn timeline(t: usize, d: usize) -> Tensor {
    let positions: Vec<f64> = (0..t).map(|j| j as f64).collect();
    sinusoidal(&positions, d)
}

/// One row per window, evaluated at each window's center position on the
/// flattened timeline: k*m + (m-1)/2.
pub fn window_centers(num_windows: usize, m: usize, d: usize) -> Tensor {
    let positions: Vec<f64> = (0..num_windows)
        .map(|k| (k * m) as f64 + (m as f64 - 1.0) / 2.0)
        .collect();
    sinusoidal(&positions, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_range() {
        let pe = timeline(7, 8);
        assert_eq!(pe.rows, 7);
        assert_eq!(pe.cols, 8);
        assert!(pe.data.iter().all(|v| v.abs() <= 1.0));
        // position 0: sin terms 0, cos terms 1
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
    }

    #[test]
    fn distinct_positions_distinct_rows() {
        let pe = timeline(16, 8);
        for i in 1..16 {
            assert_ne!(pe.row(0), pe.row(i));
        }
    }
}
