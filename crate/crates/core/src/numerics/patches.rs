//! Conversion between images and non-overlapping square patch tokens.
//!
//! Images are row-major `[frames, size, size, channels]`. Tokens are ordered
//! frame-major, then patch row, then patch column; each token lists its
//! pixels row by row with channels innermost.

use super::{NumericsError, Tensor};

fn check(len: usize, frames: usize, size: usize, channels: usize, patch: usize) -> Result<(), NumericsError> {
    if patch == 0 || size % patch != 0 {
        return Err(NumericsError::Shape(format!("patch {patch} does not tile size {size}")));
    }
    if len != frames * size * size * channels {
        return Err(NumericsError::Shape(format!(
            "{len} values for {frames} frames of {size}×{size}×{channels}"
        )));
    }
    Ok(())
}

pub fn patchify(data: &[f64], frames: usize, size: usize, channels: usize, patch: usize) -> Result<Tensor, NumericsError> {
    check(data.len(), frames, size, channels, patch)?;
    let grid = size / patch;
    let dim = patch * patch * channels;
    let mut out = Vec::with_capacity(data.len());
    for f in 0..frames {
        for gy in 0..grid {
            for gx in 0..grid {
                for dy in 0..patch {
                    let row = (f * size + gy * patch + dy) * size + gx * patch;
                    out.extend_from_slice(&data[row * channels..(row + patch) * channels]);
                }
            }
        }
    }
    Tensor::new([frames * grid * grid, dim], out)
}

pub fn unpatchify(tokens: &Tensor, frames: usize, size: usize, channels: usize, patch: usize) -> Result<Vec<f64>, NumericsError> {
    check(tokens.numel(), frames, size, channels, patch)?;
    let grid = size / patch;
    let t = tokens.data();
    let mut out = vec![0.0; t.len()];
    let mut k = 0;
    for f in 0..frames {
        for gy in 0..grid {
            for gx in 0..grid {
                for dy in 0..patch {
                    let row = (f * size + gy * patch + dy) * size + gx * patch;
                    let n = patch * channels;
                    out[row * channels..row * channels + n].copy_from_slice(&t[k..k + n]);
                    k += n;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let data: Vec<f64> = (0..2 * 16 * 16 * 2).map(|i| i as f64).collect();
        let t = patchify(&data, 2, 16, 2, 8).unwrap();
        assert_eq!(t.shape(), &[8, 128]);
        assert_eq!(unpatchify(&t, 2, 16, 2, 8).unwrap(), data);
    }

    #[test]
    fn first_token_is_top_left_patch() {
        let data: Vec<f64> = (0..16 * 16).map(|i| i as f64).collect();
        let t = patchify(&data, 1, 16, 1, 8).unwrap();
        assert_eq!(&t.row(0)[..9], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 16.0]);
        assert_eq!(t.row(1)[0], 8.0);
    }

    #[test]
    fn bad_patch_rejected() {
        assert!(patchify(&[0.0; 100], 1, 10, 1, 8).is_err());
    }
}
