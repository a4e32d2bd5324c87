//! Slot-mask export: per-position argmax segmentation and PNG label images.

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use std::path::Path;

/// Per-position argmax over slots, reshaped to the `grid×grid` layout.
/// Accepts any column-normalized slot-by-position weight matrix (an
/// attention map or decoder alphas). Ties break toward the lowest slot
/// index.
pub fn slot_masks_to_segmentation<S: Scalar>(
    weights: &Array2<S>,
    grid: usize,
) -> Result<Array2<u8>> {
    let (k, n) = weights.dim();
    if n != grid * grid {
        return Err(Error::contract(format!(
            "weights cover {n} positions, expected {grid}²"
        )));
    }
    if k > u8::MAX as usize {
        return Err(Error::contract("more than 255 slots"));
    }
    let tol = s::<S>(1e-4);
    for col in weights.columns() {
        let total: S = col.iter().cloned().sum();
        if (total - S::one()).abs() > tol {
            return Err(Error::contract("weight columns must sum to 1"));
        }
    }
    let mut labels = Array2::zeros((grid, grid));
    for pos in 0..n {
        let mut best = 0usize;
        let mut best_w = weights[(0, pos)];
        for slot in 1..k {
            if weights[(slot, pos)] > best_w {
                best = slot;
                best_w = weights[(slot, pos)];
            }
        }
        labels[(pos / grid, pos % grid)] = best as u8;
    }
    Ok(labels)
}

/// Expands patch-grid labels to pixel resolution (each cell becomes a
/// `patch_size`² block).
pub fn upsample_labels(labels: &Array2<u8>, patch_size: usize) -> Array2<u8> {
    let (gy, gx) = labels.dim();
    Array2::from_shape_fn((gy * patch_size, gx * patch_size), |(y, x)| {
        labels[(y / patch_size, x / patch_size)]
    })
}

/// Writes labels as an 8-bit grayscale PNG (pixel value = slot id).
pub fn labels_to_png(labels: &Array2<u8>, path: &Path) -> Result<()> {
    let (h, w) = labels.dim();
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([labels[(y as usize, x as usize)]])
    });
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_hot_columns_give_exact_ids() {
        let w = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]];
        let labels = slot_masks_to_segmentation(&w, 2).unwrap();
        assert_eq!(labels, array![[0, 1], [2, 1]]);
    }

    #[test]
    fn uniform_columns_break_ties_to_zero() {
        let third = 1.0 / 3.0;
        let w = Array2::from_elem((3, 4), third);
        let labels = slot_masks_to_segmentation(&w, 2).unwrap();
        assert!(labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let w = Array2::from_elem((3, 4), 0.5);
        assert!(matches!(
            slot_masks_to_segmentation(&w, 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn upsample_expands_blocks() {
        let labels = array![[1u8, 2], [3, 4]];
        let up = upsample_labels(&labels, 2);
        assert_eq!(up.dim(), (4, 4));
        assert_eq!(up[(0, 0)], 1);
        assert_eq!(up[(0, 3)], 2);
        assert_eq!(up[(3, 0)], 3);
        assert_eq!(up[(3, 3)], 4);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = array![[0u8, 1], [2, 3]];
        let path = dir.path().join("mask.png");
        labels_to_png(&labels, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.get_pixel(1, 0).0[0], 1);
        assert_eq!(img.get_pixel(0, 1).0[0], 2);
    }
}
