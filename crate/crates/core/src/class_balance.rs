//! Class-balance image sampling.
//!
//! Each annotated image `i` is assigned its *rarest* class `c`: among the
//! classes present in the image, the one with the fewest boxes in the whole
//! dataset (ties go to the lower class id). With `S` the number of
//! instances of `c` inside image `i`, the image weight is `W_i = 1 / S`.
//! Epochs are drawn i.i.d. with replacement from the normalized weights.
//!
//! Images without annotations have no rarest class and are left out of the
//! pool.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{class_counts, Annotation, Dataset};
use crate::error::{Error, Result};

fn rarest_in<'a>(
    anns: impl IntoIterator<Item = &'a Annotation>,
    global_counts: &BTreeMap<u32, usize>,
) -> Option<u32> {
    anns.into_iter()
        .map(|a| a.class_id)
        .min_by_key(|c| (global_counts.get(c).copied().unwrap_or(0), *c))
}

fn weight_in(anns: &[&Annotation], rarest: u32) -> f64 {
    let s = anns.iter().filter(|a| a.class_id == rarest).count();
    1.0 / s as f64
}

/// The class present in `image_id` with the smallest global count.
pub fn rarest_class(
    image_id: u64,
    ds: &Dataset,
    global_counts: &BTreeMap<u32, usize>,
) -> Result<u32> {
    rarest_in(
        ds.annotations.iter().filter(|a| a.image_id == image_id),
        global_counts,
    )
    .ok_or(Error::NoAnnotation(image_id))
}

/// `1 / S`, where `S` counts the rarest class's instances in the image.
pub fn image_weight(
    image_id: u64,
    ds: &Dataset,
    global_counts: &BTreeMap<u32, usize>,
) -> Result<f64> {
    let anns: Vec<&Annotation> = ds
        .annotations
        .iter()
        .filter(|a| a.image_id == image_id)
        .collect();
    let c = rarest_in(anns.iter().copied(), global_counts).ok_or(Error::NoAnnotation(image_id))?;
    Ok(weight_in(&anns, c))
}

/// Per-image weights for every annotated image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleWeights {
    pub weights: BTreeMap<u64, f64>,
    pub rarest_class: BTreeMap<u64, u32>,
    /// Sum of raw weights; divide by it to get probabilities.
    pub normalization: f64,
}

impl SampleWeights {
    pub fn compute(ds: &Dataset) -> Result<Self> {
        let global = class_counts(ds);
        let mut weights = BTreeMap::new();
        let mut rarest = BTreeMap::new();
        for (img, anns) in ds.annotations_by_image() {
            if let Some(c) = rarest_in(anns.iter().copied(), &global) {
                weights.insert(img, weight_in(&anns, c));
                rarest.insert(img, c);
            }
        }
        if weights.is_empty() {
            return Err(Error::EmptyPool);
        }
        let normalization = weights.values().sum();
        Ok(SampleWeights {
            weights,
            rarest_class: rarest,
            normalization,
        })
    }

    pub fn normalized(&self) -> BTreeMap<u64, f64> {
        self.weights
            .iter()
            .map(|(&k, &w)| (k, w / self.normalization))
            .collect()
    }

    /// `n_draws` image ids drawn with replacement; deterministic in `seed`.
    pub fn sample(&self, seed: u64, n_draws: usize) -> Vec<u64> {
        let ids: Vec<u64> = self.weights.keys().copied().collect();
        let dist = WeightedIndex::new(self.weights.values().copied())
            .expect("weights are positive and finite");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_draws).map(|_| ids[dist.sample(&mut rng)]).collect()
    }
}

/// Draws one epoch of `n_draws` image ids.
pub fn sample_epoch(ds: &Dataset, seed: u64, n_draws: usize) -> Result<Vec<u64>> {
    Ok(SampleWeights::compute(ds)?.sample(seed, n_draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Category, ImageRecord, Provenance};
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn build(images: &[&[u32]]) -> Dataset {
        let mut ds = Dataset {
            categories: (0..10)
                .map(|id| Category {
                    id,
                    name: id.to_string(),
                })
                .collect(),
            ..Default::default()
        };
        let mut aid = 0;
        for (i, classes) in images.iter().enumerate() {
            let img = i as u64 + 1;
            ds.images.push(ImageRecord {
                id: img,
                width: 50,
                height: 50,
                file_name: String::new(),
            });
            for &c in *classes {
                aid += 1;
                ds.annotations.push(Annotation {
                    id: aid,
                    image_id: img,
                    class_id: c,
                    bbox: BBox::new(0.0, 0.0, 5.0, 5.0).unwrap(),
                    provenance: Provenance::default(),
                });
            }
        }
        ds
    }

    #[test]
    fn rarest_picks_minimum_global_count() {
        let ds = build(&[&[1, 2]]);
        let counts = BTreeMap::from([(1, 5), (2, 500)]);
        assert_eq!(rarest_class(1, &ds, &counts).unwrap(), 1);
        let counts = BTreeMap::from([(1, 501), (2, 500)]);
        assert_eq!(rarest_class(1, &ds, &counts).unwrap(), 2);
    }

    #[test]
    fn single_class_and_unannotated() {
        let ds = build(&[&[4, 4], &[]]);
        let counts = class_counts(&ds);
        assert_eq!(rarest_class(1, &ds, &counts).unwrap(), 4);
        assert!(matches!(
            rarest_class(2, &ds, &counts),
            Err(Error::NoAnnotation(2))
        ));
        assert!(matches!(
            image_weight(2, &ds, &counts),
            Err(Error::NoAnnotation(2))
        ));
    }

    #[test]
    fn weight_is_inverse_in_image_count() {
        // class 1 is rare globally; appears once in image 1, four times in image 2
        let ds = build(&[&[1, 0, 0], &[1, 1, 1, 1, 0], &[0; 20]]);
        let counts = class_counts(&ds);
        assert_eq!(image_weight(1, &ds, &counts).unwrap(), 1.0);
        assert_eq!(image_weight(2, &ds, &counts).unwrap(), 0.25);
    }

    #[test]
    fn empty_pool() {
        let ds = build(&[&[], &[]]);
        assert!(matches!(SampleWeights::compute(&ds), Err(Error::EmptyPool)));
        assert!(matches!(sample_epoch(&ds, 0, 10), Err(Error::EmptyPool)));
    }

    #[test]
    fn same_seed_same_sequence() {
        let ds = build(&[&[1], &[2, 2], &[3]]);
        assert_eq!(
            sample_epoch(&ds, 42, 500).unwrap(),
            sample_epoch(&ds, 42, 500).unwrap()
        );
        assert_ne!(
            sample_epoch(&ds, 42, 500).unwrap(),
            sample_epoch(&ds, 43, 500).unwrap()
        );
    }

    #[test]
    fn two_image_ratio() {
        // W = {1.0, 0.25}: expected frequency ratio 4:1
        let ds = build(&[&[1], &[2, 2, 2, 2]]);
        let w = SampleWeights::compute(&ds).unwrap();
        assert_eq!(w.weights, BTreeMap::from([(1, 1.0), (2, 0.25)]));
        let draws = w.sample(3, 100_000);
        let a = draws.iter().filter(|&&i| i == 1).count() as f64;
        let b = draws.len() as f64 - a;
        assert!((a / b / 4.0 - 1.0).abs() < 0.05, "ratio {}", a / b);
    }

    #[test]
    fn uniform_weights_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let ds = build(&[&[1], &[2], &[3], &[4], &[5], &[6]]);
        let draws = sample_epoch(&ds, 11, 100_000).unwrap();
        let mut obs = [0f64; 6];
        for d in draws {
            obs[d as usize - 1] += 1.0;
        }
        let e = 100_000.0 / 6.0;
        let stat: f64 = obs.iter().map(|o| (o - e).powi(2) / e).sum();
        let crit = ChiSquared::new(5.0).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    fn arb_images() -> impl Strategy<Value = Vec<Vec<u32>>> {
        proptest::collection::vec(proptest::collection::vec(0u32..8, 1..8), 1..10)
    }

    proptest! {
        #[test]
        fn weight_matches_brute_force(images in arb_images()) {
            let refs: Vec<&[u32]> = images.iter().map(|v| v.as_slice()).collect();
            let ds = build(&refs);
            let counts = class_counts(&ds);
            let w = SampleWeights::compute(&ds).unwrap();
            for (i, classes) in images.iter().enumerate() {
                // exhaustive min over (global count, class id)
                let mut best: Option<(usize, u32)> = None;
                for &c in classes {
                    let g = ds.annotations.iter().filter(|a| a.class_id == c).count();
                    if best.is_none_or(|b| (g, c) < b) {
                        best = Some((g, c));
                    }
                }
                let c = best.unwrap().1;
                let s = classes.iter().filter(|&&x| x == c).count();
                let id = i as u64 + 1;
                prop_assert_eq!(rarest_class(id, &ds, &counts).unwrap(), c);
                prop_assert_eq!(image_weight(id, &ds, &counts).unwrap(), 1.0 / s as f64);
                prop_assert_eq!(w.weights[&id], 1.0 / s as f64);
            }
            let total: f64 = w.normalized().values().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn scaling_counts_preserves_weights(images in arb_images(), k in 1usize..50) {
            let refs: Vec<&[u32]> = images.iter().map(|v| v.as_slice()).collect();
            let ds = build(&refs);
            let counts = class_counts(&ds);
            let scaled: BTreeMap<u32, usize> = counts.iter().map(|(&c, &n)| (c, n * k)).collect();
            for img in &ds.images {
                prop_assert_eq!(rarest_class(img.id, &ds, &counts).unwrap(), rarest_class(img.id, &ds, &scaled).unwrap());
                prop_assert_eq!(image_weight(img.id, &ds, &counts).unwrap(), image_weight(img.id, &ds, &scaled).unwrap());
            }
        }
    }
}
