//! Latent vector partitioning and masking.
//!
//! The guiding latent `z` is split into contiguous sections, one per
//! modulation-site pair of the denoiser (the middle site pairs with itself).
//! Sections can be masked to zero independently — the layer-wise analog of
//! conditioning dropout — and the layout guarantees the sections tile `z`
//! exactly with near-equal sizes.

use rand::Rng;
use soda_numerics::{Array, Graph, Scalar, Var};

use crate::error::{CoreError, Result};

/// Contiguous partition of a `dim`-dimensional latent into `sections` parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionLayout {
    dim: usize,
    offsets: Vec<usize>,
    lens: Vec<usize>,
}

impl SectionLayout {
    /// Split `dim` into `sections` near-equal contiguous parts. Earlier
    /// sections absorb the remainder, so sizes differ by at most one.
    pub fn new(dim: usize, sections: usize) -> Result<Self> {
        if dim == 0 || sections == 0 || sections > dim {
            return Err(CoreError::InvalidConfig(format!(
                "cannot split a {dim}-dim latent into {sections} sections"
            )));
        }
        let base = dim / sections;
        let rem = dim % sections;
        let mut offsets = Vec::with_capacity(sections);
        let mut lens = Vec::with_capacity(sections);
        let mut at = 0;
        for i in 0..sections {
            let len = base + usize::from(i < rem);
            offsets.push(at);
            lens.push(len);
            at += len;
        }
        debug_assert_eq!(at, dim);
        Ok(Self { dim, offsets, lens })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn section_count(&self) -> usize {
        self.lens.len()
    }

    /// `(offset, len)` of section `i`.
    pub fn range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.lens[i])
    }

    /// Section owning latent coordinate `d`.
    pub fn section_of(&self, d: usize) -> usize {
        debug_assert!(d < self.dim);
        match self.offsets.binary_search(&d) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Slice section `i` out of a `(B, dim)` latent node.
    pub fn slice_section<T: Scalar>(&self, g: &Graph<T>, z: Var, i: usize) -> Result<Var> {
        let (off, len) = self.range(i);
        Ok(g.slice(z, 1, off, len)?)
    }

    /// A `(1, dim)` multiplicative mask with zeros over the masked sections.
    pub fn mask_vector<T: Scalar>(&self, masked: &[bool]) -> Result<Array<T>> {
        if masked.len() != self.section_count() {
            return Err(CoreError::ShapeMismatch {
                context: "section mask",
                expected: format!("{} flags", self.section_count()),
                got: format!("{} flags", masked.len()),
            });
        }
        let mut v = Array::ones(&[1, self.dim]);
        for (i, &m) in masked.iter().enumerate() {
            if m {
                let (off, len) = self.range(i);
                for d in off..off + len {
                    *v.at_mut(&[0, d]) = T::zero();
                }
            }
        }
        Ok(v)
    }

    /// Zero the masked sections of a `(B, dim)` latent node.
    pub fn apply_mask<T: Scalar>(&self, g: &Graph<T>, z: Var, masked: &[bool]) -> Result<Var> {
        if masked.iter().all(|m| !m) {
            return Ok(z);
        }
        let mask = g.constant(self.mask_vector::<T>(masked)?);
        Ok(g.mul(z, mask)?)
    }

    /// Zero the masked sections of each row of a `(B, dim)` latent node with
    /// an independent mask per row.
    pub fn apply_row_masks<T: Scalar>(&self, g: &Graph<T>, z: Var, masked: &[Vec<bool>]) -> Result<Var> {
        let b = g.shape(z)[0];
        if masked.len() != b {
            return Err(CoreError::ShapeMismatch {
                context: "per-row section masks",
                expected: format!("{b} rows"),
                got: format!("{} rows", masked.len()),
            });
        }
        if masked.iter().all(|row| row.iter().all(|m| !m)) {
            return Ok(z);
        }
        let mut m = Array::<T>::ones(&[b, self.dim]);
        for (r, row) in masked.iter().enumerate() {
            if row.len() != self.section_count() {
                return Err(CoreError::ShapeMismatch {
                    context: "per-row section masks",
                    expected: format!("{} flags", self.section_count()),
                    got: format!("{} flags", row.len()),
                });
            }
            for (i, &flag) in row.iter().enumerate() {
                if flag {
                    let (off, len) = self.range(i);
                    for d in off..off + len {
                        *m.at_mut(&[r, d]) = T::zero();
                    }
                }
            }
        }
        let mask = g.constant(m);
        Ok(g.mul(z, mask)?)
    }

    /// Draw one independent Bernoulli mask flag per section.
    pub fn sample_section_mask(&self, rate: f64, rng: &mut impl Rng) -> Vec<bool> {
        (0..self.section_count()).map(|_| rng.gen::<f64>() < rate).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn even_split() {
        let l = SectionLayout::new(128, 4).unwrap();
        assert_eq!(l.section_count(), 4);
        for i in 0..4 {
            assert_eq!(l.range(i), (32 * i, 32));
        }
    }

    #[test]
    fn remainder_goes_to_leading_sections() {
        let l = SectionLayout::new(10, 4).unwrap();
        let lens: Vec<usize> = (0..4).map(|i| l.range(i).1).collect();
        assert_eq!(lens, vec![3, 3, 2, 2]);
        let offs: Vec<usize> = (0..4).map(|i| l.range(i).0).collect();
        assert_eq!(offs, vec![0, 3, 6, 8]);
    }

    #[test]
    fn section_of_inverts_ranges() {
        let l = SectionLayout::new(11, 3).unwrap();
        for d in 0..11 {
            let s = l.section_of(d);
            let (off, len) = l.range(s);
            assert!(d >= off && d < off + len);
        }
    }

    #[test]
    fn invalid_splits_rejected() {
        assert!(SectionLayout::new(0, 1).is_err());
        assert!(SectionLayout::new(4, 0).is_err());
        assert!(SectionLayout::new(3, 4).is_err());
    }

    #[test]
    fn masked_sections_read_zero() {
        let l = SectionLayout::new(8, 3).unwrap();
        let g = Graph::<f64>::new();
        let z = g.constant(Array::from_fn(&[2, 8], |i| i as f64 + 1.0));
        let masked = l.apply_mask(&g, z, &[false, true, false]).unwrap();
        let out = g.value(masked);
        let (off, len) = l.range(1);
        for b in 0..2 {
            for d in 0..8 {
                let expect = if d >= off && d < off + len {
                    0.0
                } else {
                    (b * 8 + d) as f64 + 1.0
                };
                assert_eq!(out.at(&[b, d]), expect);
            }
        }
    }

    #[test]
    fn no_mask_is_identity_node() {
        let l = SectionLayout::new(8, 2).unwrap();
        let g = Graph::<f64>::new();
        let z = g.constant(Array::ones(&[1, 8]));
        let same = l.apply_mask(&g, z, &[false, false]).unwrap();
        assert_eq!(same, z);
    }

    #[test]
    fn per_row_masks_are_independent() {
        let l = SectionLayout::new(6, 2).unwrap();
        let g = Graph::<f64>::new();
        let z = g.constant(Array::ones(&[2, 6]));
        let masked = l
            .apply_row_masks(&g, z, &[vec![true, false], vec![false, true]])
            .unwrap();
        let out = g.value(masked);
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn sections_always_tile(dim in 1usize..300, sections in 1usize..12) {
            prop_assume!(sections <= dim);
            let l = SectionLayout::new(dim, sections).unwrap();
            let mut at = 0;
            let mut min_len = usize::MAX;
            let mut max_len = 0;
            for i in 0..l.section_count() {
                let (off, len) = l.range(i);
                prop_assert_eq!(off, at);
                prop_assert!(len >= 1);
                min_len = min_len.min(len);
                max_len = max_len.max(len);
                at += len;
            }
            prop_assert_eq!(at, dim);
            prop_assert!(max_len - min_len <= 1);
        }
    }
}
