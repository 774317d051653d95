mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use olive::autodiff::AdamConfig;
use olive::env::Screen;
use olive::harness::median;
use olive::rng::StreamRng;
use olive::vae::{anneal_tau, bernoulli_kl, binconcrete_sample, logistic_noise, Architecture, Vae, VaeConfig};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln σ(x) without overflow.
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(0.001f64..0.999, 1..64), m in 0.01f64..0.99) {
        prop_assert!(bernoulli_kl(&mu, m) >= 0.0);
        prop_assert!(bernoulli_kl(&vec![m; mu.len()], m).abs() < 1e-12);
    }

    #[test]
    fn annealing_decreases_between_endpoints(hi in 0.5f64..10.0, ratio in 1.0f64..20.0, epochs in 1usize..300) {
        let lo = hi / ratio;
        prop_assert!((anneal_tau(hi, lo, epochs, 0).unwrap() - hi).abs() < 1e-9);
        prop_assert!((anneal_tau(hi, lo, epochs, epochs).unwrap() - lo).abs() < 1e-9);
        for t in 1..=epochs {
            prop_assert!(anneal_tau(hi, lo, epochs, t).unwrap() <= anneal_tau(hi, lo, epochs, t - 1).unwrap());
        }
    }

    #[test]
    fn cold_relaxation_approaches_a_step(l in -5.0f64..5.0, u in -5.0f64..5.0) {
        prop_assume!((l + u).abs() > 0.05);
        let z = binconcrete_sample(&[l], 1e-3, &[u])[0];
        let step = if l + u > 0.0 { 1.0 } else { 0.0 };
        prop_assert!((z - step).abs() < 1e-9);
        prop_assert_eq!(binconcrete_sample(&[0.0], 0.3, &[0.0])[0], 0.5);
    }
}

#[test]
fn annealing_hand_values() {
    assert_eq!(anneal_tau(5.0, 0.5, 100, 0).unwrap(), 5.0);
    assert!((anneal_tau(5.0, 0.5, 100, 100).unwrap() - 0.5).abs() < 1e-9);
    assert!((anneal_tau(5.0, 0.5, 100, 50).unwrap() - 2.5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn relaxed_sample_mean_matches_independent_monte_carlo() {
    let (l, tau, n) = (2.0, 0.5, 100_000);
    let noise: Vec<f64> = logistic_noise(&mut StreamRng::seed_from_u64(1), n);
    let lib: Vec<f64> = binconcrete_sample(&vec![l; n], tau, &noise);
    // oracle: Logistic(0,1) by inverting its cdf with a different generator
    let mut other = StreamRng::seed_from_u64(99);
    let oracle: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = other.random_range(1e-12..1.0 - 1e-12);
            sigmoid((l + (v / (1.0 - v)).ln()) / tau)
        })
        .collect();
    let stats = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, var / n as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&lib), stats(&oracle));
    assert!((ma - mb).abs() < 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");
}

fn toy_screens() -> Vec<Screen> {
    [0b1111_0000_0000_0000u16, 0b0000_1111_0000_1111, 0b1010_1010_1010_1010, 0b1100_1100_0011_0011]
        .iter()
        .map(|bits| Screen::new(4, 4, (0..16).map(|i| if bits >> i & 1 == 1 { 255 } else { 0 }).collect()).unwrap())
        .collect()
}

#[test]
fn elbo_lower_bounds_the_log_likelihood_on_a_toy_model() {
    let arch = Architecture::new(4, 4, 4).unwrap();
    let mut rng = StreamRng::seed_from_u64(7);
    let mut vae: Vae<f64> = Vae::new(arch, &mut rng);
    let data = toy_screens();
    let cfg = VaeConfig { latent: 4, epochs: 30, batch: 4, beta: 1.0, ..VaeConfig::default() };
    vae.train(&data, &cfg, &mut rng).unwrap();
    let prior: f64 = 0.5;
    // every hard code and its decoded pixel logits
    let codes: Vec<Vec<f64>> = (0..16).map(|c| (0..4).map(|j| (c >> j & 1) as f64).collect()).collect();
    let flat: Vec<f64> = codes.iter().flatten().copied().collect();
    let decoded = vae.decode_logits(&flat).unwrap();
    for x in &data {
        let xs: Vec<f64> = (0..16).map(|i| x.intensity(i)).collect();
        let log_px_z: Vec<f64> = (0..16)
            .map(|c| (0..16).map(|i| { let r = decoded[c * 16 + i]; xs[i] * ln_sigmoid(r) + (1.0 - xs[i]) * ln_sigmoid(-r) }).sum())
            .collect();
        let log_pz = 4.0 * prior.ln();
        let log_px = log_sum_exp(&log_px_z.iter().map(|l| l + log_pz).collect::<Vec<_>>());
        let logits = vae.encode_logits(x).unwrap();
        let q: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        let q_of = |c: usize| (0..4).map(|j| if c >> j & 1 == 1 { q[j] } else { 1.0 - q[j] }).product::<f64>();
        let elbo = (0..16).map(|c| q_of(c) * log_px_z[c]).sum::<f64>() - bernoulli_kl(&q, prior);
        // importance sampling with q as proposal
        let samples = 1000;
        let mut weights = Vec::with_capacity(samples);
        for _ in 0..samples {
            let c = (0..4).fold(0, |acc, j| acc | ((rng.random::<f64>() < q[j]) as usize) << j);
            weights.push(log_px_z[c] + log_pz - q_of(c).ln());
        }
        let log_p_hat = log_sum_exp(&weights) - (samples as f64).ln();
        // delta-method standard error of ln p̂
        let w: Vec<f64> = weights.iter().map(|l| (l - log_p_hat).exp()).collect();
        let se = (w.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (samples as f64 - 1.0)).sqrt() / (samples as f64).sqrt();
        assert!(elbo <= log_px + 1e-9, "{elbo} > {log_px}");
        assert!(elbo <= log_p_hat + 3.0 * se, "{elbo} > {log_p_hat} (se {se})");
        assert!((log_p_hat - log_px).abs() < 0.05, "{log_p_hat} vs {log_px}");

        // the library's loss terms agree with the exact expectation
        let mut noise_rng = StreamRng::seed_from_u64(8);
        let draws = 4000;
        let mut recon = 0.0;
        for _ in 0..draws {
            let t = vae.elbo(&[x], 1e-3, 1.0, prior, &mut noise_rng).unwrap();
            assert!((t.kl - bernoulli_kl(&q, prior)).abs() < 1e-9);
            assert!((t.loss - (t.reconstruction + t.kl)).abs() < 1e-9);
            recon += t.reconstruction;
        }
        recon /= draws as f64;
        let expected = -(0..16).map(|c| q_of(c) * log_px_z[c]).sum::<f64>();
        let spread = (0..16).map(|c| q_of(c) * (log_px_z[c] + expected).powi(2)).sum::<f64>().sqrt();
        assert!((recon - expected).abs() < 4.0 * spread / (draws as f64).sqrt() + 1e-3, "{recon} vs {expected}");
    }
}

#[test]
fn zero_beta_leaves_only_reconstruction() {
    let mut rng = StreamRng::seed_from_u64(3);
    let vae: Vae<f64> = Vae::new(Architecture::new(32, 32, 8).unwrap(), &mut rng);
    let screens: Vec<Screen> = common::themed_screens(8, 2, 3).into_iter().map(|(_, s)| s).collect();
    let refs: Vec<&Screen> = screens.iter().collect();
    let t = vae.elbo(&refs, 0.5, 0.0, 0.5, &mut StreamRng::seed_from_u64(4)).unwrap();
    assert_eq!(t.loss, t.reconstruction);
    assert!(t.kl > 0.0);
}

#[test]
fn uncertainty_score_is_the_seeded_loss() {
    let vae: Vae<f32> = Vae::new(Architecture::new(32, 32, 8).unwrap(), &mut StreamRng::seed_from_u64(5));
    let (_, s) = common::themed_screens(8, 1, 1).remove(0);
    let a = vae.score_uncertainty(&s, 0.5, 0.1, 0.5, 42).unwrap();
    assert_eq!(a, vae.score_uncertainty(&s, 0.5, 0.1, 0.5, 42).unwrap());
    let direct = vae.elbo(&[&s], 0.5, 0.1, 0.5, &mut StreamRng::seed_from_u64(42)).unwrap().loss;
    assert_eq!(a, direct);
}

fn small_config(epochs: usize) -> VaeConfig {
    VaeConfig { latent: 16, epochs, batch: 16, beta: 0.1, adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..VaeConfig::default() }
}

#[test]
fn overfits_a_single_screen() {
    let (_, s) = common::themed_screens(8, 2, 40).remove(25);
    let data = vec![s.clone(); 64];
    let mut rng = StreamRng::seed_from_u64(6);
    let mut vae: Vae<f32> = Vae::new(Architecture::new(32, 32, 16).unwrap(), &mut rng);
    let before = vae.elbo(&[&s], 0.5, 0.0, 0.5, &mut StreamRng::seed_from_u64(0)).unwrap().reconstruction;
    let curve = vae.train(&data, &small_config(60), &mut rng).unwrap();
    assert!(curve.iter().all(|l| l.is_finite()));
    let after = vae.elbo(&[&s], 0.5, 0.0, 0.5, &mut StreamRng::seed_from_u64(0)).unwrap().reconstruction;
    // a constant screen has nonzero entropy for grey pixels, so compare the excess over that floor
    let floor: f64 = (0..s.len())
        .map(|i| {
            let p = s.intensity(i);
            if p <= 0.0 || p >= 1.0 { 0.0 } else { -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) }
        })
        .sum();
    assert!(after - floor < (before - floor) / 10.0, "before {before}, after {after}, floor {floor}");
}

#[test]
fn warm_and_cold_retraining_end_close() {
    let data: Vec<Screen> = common::themed_screens(8, 2, 24).into_iter().map(|(_, s)| s).collect();
    let cfg = small_config(80);
    let mut rng = StreamRng::seed_from_u64(7);
    let mut warm: Vae<f32> = Vae::new(Architecture::new(32, 32, 16).unwrap(), &mut rng);
    warm.train(&data, &cfg, &mut rng).unwrap();
    let warm_final = *warm.train(&data, &cfg, &mut rng).unwrap().last().unwrap();
    let mut cold: Vae<f32> = Vae::new(Architecture::new(32, 32, 16).unwrap(), &mut rng);
    let cold_final = *cold.train(&data, &cfg, &mut rng).unwrap().last().unwrap();
    let ratio = warm_final.max(cold_final) / warm_final.min(cold_final);
    assert!(ratio <= 1.2, "warm {warm_final}, cold {cold_final}");
}

#[test]
fn unseen_themes_score_higher_than_training_screens() {
    let screens = common::themed_screens(8, 4, 80);
    let seen: Vec<Screen> = screens.iter().filter(|(r, _)| *r == 0).map(|(_, s)| s.clone()).collect();
    let unseen: Vec<Screen> = screens.iter().filter(|(r, _)| *r > 0).map(|(_, s)| s.clone()).collect();
    let mut rng = StreamRng::seed_from_u64(8);
    let mut vae: Vae<f32> = Vae::new(Architecture::new(32, 32, 16).unwrap(), &mut rng);
    vae.train(&seen, &small_config(30), &mut rng).unwrap();
    let diffs: Vec<f64> = (0..20)
        .map(|i| {
            let a = &seen[rng.random_range(0..seen.len())];
            let b = &unseen[(i * 7) % unseen.len()];
            vae.score_uncertainty(b, 0.5, 0.1, 0.5, i as u64).unwrap() - vae.score_uncertainty(a, 0.5, 0.1, 0.5, i as u64).unwrap()
        })
        .collect();
    assert!(median(&diffs).unwrap() > 0.0, "{diffs:?}");
}

#[test]
fn checkpoint_roundtrip_through_a_file() {
    let vae: Vae<f32> = Vae::new(Architecture::new(32, 32, 12).unwrap(), &mut StreamRng::seed_from_u64(9));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.olv");
    vae.write_checkpoint(&mut std::fs::File::create(&path).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"OLV1");
    let back: Vae<f32> = Vae::read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, vae);
    assert_eq!(back.checksum(), vae.checksum());
    assert!(Vae::<f32>::read_checkpoint(&mut &bytes[..bytes.len() - 1]).is_err());
}
