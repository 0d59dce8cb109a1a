//! Random spatial crops for training batches.

use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cassi::HsiCube;
use crate::error::{invalid, Result};

/// Uniform top-left corners `(row, col)` for `count` crops of `size x size`.
pub fn crop_corners(
    height: usize,
    width: usize,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > height || size > width {
        return invalid(format!("crop size {size} does not fit {height}x{width}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=height - size),
                rng.random_range(0..=width - size),
            )
        })
        .collect())
}

pub fn crop(cube: &HsiCube, row: usize, col: usize, size: usize) -> Result<HsiCube> {
    if row + size > cube.height() || col + size > cube.width() {
        return invalid("crop window out of bounds");
    }
    HsiCube::new(
        cube.data()
            .slice(s![row..row + size, col..col + size, ..])
            .to_owned(),
    )
}

pub fn crop_sampler(cube: &HsiCube, size: usize, count: usize, seed: u64) -> Result<Vec<HsiCube>> {
    crop_corners(cube.height(), cube.width(), size, count, seed)?
        .into_iter()
        .map(|(r, c)| crop(cube, r, c, size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(h: usize, w: usize) -> HsiCube {
        HsiCube::new(Array3::from_shape_fn((h, w, 2), |(i, j, k)| {
            (i * 100 + j * 2 + k) as f64
        }))
        .unwrap()
    }

    #[test]
    fn full_size_crop_is_the_cube() {
        let x = ramp(6, 6);
        let crops = crop_sampler(&x, 6, 3, 1).unwrap();
        assert_eq!(crops.len(), 3);
        assert!(crops.iter().all(|c| *c == x));
    }

    #[test]
    fn corners_in_bounds_and_seeded() {
        let corners = crop_corners(20, 13, 5, 200, 9).unwrap();
        assert!(corners.iter().all(|&(r, c)| r + 5 <= 20 && c + 5 <= 13));
        assert_eq!(corners, crop_corners(20, 13, 5, 200, 9).unwrap());
        let x = ramp(20, 13);
        for (c, &(r0, c0)) in crop_sampler(&x, 5, 200, 9).unwrap().iter().zip(&corners) {
            assert_eq!(c.data()[[0, 0, 1]], x.data()[[r0, c0, 1]]);
        }
    }

    #[test]
    fn oversized_crop_rejected() {
        assert!(crop_sampler(&ramp(4, 8), 5, 1, 0).is_err());
    }
}
