use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;

use olive::env::Screen;
use olive::features::{extract_tile_basic, threshold_logits, BinaryFeatures, FeatureExtractor};
use olive::rng::StreamRng;
use olive::vae::{Architecture, Vae};

fn screen_strategy() -> impl Strategy<Value = Screen> {
    prop::collection::vec(any::<u8>(), 32 * 32).prop_map(|d| Screen::new(32, 32, d).unwrap())
}

/// Bins recomputed in exact integer arithmetic.
fn oracle_tiles(s: &Screen, grid: usize, levels: usize) -> Vec<usize> {
    let side = 32 / grid;
    let mut bits = Vec::new();
    for t in 0..grid * grid {
        let (tx, ty) = (t % grid, t / grid);
        let mut sum = 0usize;
        for y in 0..side {
            for x in 0..side {
                sum += s.bytes()[(ty * side + y) * 32 + tx * side + x] as usize;
            }
        }
        let bin = (sum * levels / (side * side * 255)).min(levels - 1);
        bits.push(t * levels + bin);
    }
    bits
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tile_features_match_recomputed_means(s in screen_strategy(), g in prop::sample::select(vec![1usize, 2, 4, 8, 16]), levels in 1usize..10) {
        let f = extract_tile_basic(&s, g, levels).unwrap();
        prop_assert_eq!(f.len(), g * g * levels);
        prop_assert_eq!(f.count_ones(), g * g);
        prop_assert_eq!(f.ones().collect::<Vec<_>>(), oracle_tiles(&s, g, levels));
    }

    #[test]
    fn extraction_is_pure(s in screen_strategy()) {
        let tiles = FeatureExtractor::default();
        prop_assert_eq!(tiles.extract(&s).unwrap(), tiles.extract(&s).unwrap());
        let vae: Vae<f32> = Vae::new(Architecture::new(32, 32, 16).unwrap(), &mut StreamRng::seed_from_u64(1));
        let learned = FeatureExtractor::Vae(Arc::new(vae));
        let a = learned.extract(&s).unwrap();
        prop_assert_eq!(a.len(), learned.feature_count());
        prop_assert_eq!(a, learned.extract(&s).unwrap());
    }

    #[test]
    fn threshold_is_sigmoid_above_point_nine(logits in prop::collection::vec(-20.0f64..20.0, 1..64)) {
        let f = threshold_logits(&logits).unwrap();
        prop_assert_eq!(f.len(), logits.len());
        for (j, &l) in logits.iter().enumerate() {
            let mu = 1.0 / (1.0 + (-l).exp());
            // skip values within rounding distance of the boundary
            if (mu - 0.9).abs() > 1e-12 {
                prop_assert_eq!(f.get(j), mu > 0.9);
            }
        }
    }

    #[test]
    fn bit_vector_roundtrips_indices(len in 1usize..300, picks in prop::collection::vec(0usize..300, 0..40)) {
        let mut ones: Vec<usize> = picks.into_iter().filter(|&i| i < len).collect();
        ones.sort_unstable();
        ones.dedup();
        let f = BinaryFeatures::from_indices(len, ones.iter().copied());
        prop_assert_eq!(f.len(), len);
        prop_assert_eq!(f.ones().collect::<Vec<_>>(), ones.clone());
        prop_assert_eq!(f.count_ones(), ones.len());
    }
}

#[test]
fn single_hot_logit_sets_one_bit() {
    let mut logits = vec![-10.0f32; 8];
    logits[3] = 10.0;
    assert_eq!(threshold_logits(&logits).unwrap().ones().collect::<Vec<_>>(), vec![3]);
    assert_eq!(threshold_logits(&[0.0f64; 8]).unwrap().count_ones(), 0);
    assert_eq!(threshold_logits(&[9f64.ln()]).unwrap().count_ones(), 0);
    assert!(threshold_logits(&[f64::NAN]).is_err());
}
