mod common;

use graspldm::models::Vae;
use graspldm::numerics::{Graph, ParamStore, Tensor};
use graspldm::vae::{elbo_loss, elbo_loss_weighted, kl_gaussian, lambda_schedule, ElboConfig, VaeConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Monte-Carlo estimate of `E_q[log q(z) − log p(z)]` for diagonal `q`.
fn kl_monte_carlo(mu: &[f64], logvar: &[f64], n: usize, seed: u64) -> (f64, f64) {
    let mut rng = common::rng(seed);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut v = 0.0;
        for (m, lv) in mu.iter().zip(logvar) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = m + (0.5 * lv).exp() * e;
            // log q − log p, constants cancel.
            v += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
        }
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    (mean, (sq / n as f64 - mean * mean).sqrt() / (n as f64).sqrt())
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mu = [0.3, -1.2, 0.0, 0.8];
    let logvar = [-0.5, 0.4, -2.0, 0.0];
    let exact = kl_gaussian(&mu, &logvar).unwrap();
    let (mc, se) = kl_monte_carlo(&mu, &logvar, 1_000_000, 1);
    assert!((mc - exact).abs() < 4.0 * se, "closed form {exact}, estimate {mc} ± {se}");
}

#[test]
fn kl_vanishes_only_at_the_prior() {
    assert_eq!(kl_gaussian(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
    assert!(kl_gaussian(&[0.1, 0.0], &[0.0, 0.0]).unwrap() > 0.0);
    assert!(kl_gaussian(&[0.0], &[1.0]).unwrap() > 0.0);
    assert!(kl_gaussian(&[0.0, 1.0], &[0.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0f64..3.0, 4), lv in prop::collection::vec(-4.0f64..4.0, 4)) {
        prop_assert!(kl_gaussian(&mu, &lv).unwrap() >= 0.0);
    }

    #[test]
    fn lambda_ramps_monotonically(a in 0u64..2000, b in 0u64..2000) {
        let cfg = VaeConfig::default().elbo();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lambda_schedule(lo, &cfg) <= lambda_schedule(hi, &cfg));
        prop_assert!(lambda_schedule(hi, &cfg) <= 0.1);
    }
}

#[test]
fn lambda_schedule_spot_values() {
    let cfg = ElboConfig { lambda_start: 1e-7, lambda_end: 0.1, anneal_fraction: 0.5, total_steps: 4000 };
    assert_eq!(lambda_schedule(0, &cfg), 1e-7);
    assert!((lambda_schedule(1000, &cfg) - (1e-7 + 0.1) / 2.0).abs() < 1e-15);
    assert_eq!(lambda_schedule(2000, &cfg), 0.1);
    assert_eq!(lambda_schedule(3999, &cfg), 0.1);
}

fn poses(rows: usize, seed: u64) -> Tensor<f64> {
    let mut r = common::rng(seed);
    let data = (0..rows * 6).map(|i| if i % 6 < 3 { r.random_range(-0.05..0.05) } else { r.random_range(-1.0..1.0) }).collect();
    Tensor::new([rows, 6], data).unwrap()
}

/// Squared error with translations scaled by `w`, summed over rows.
fn weighted_error(rec: &[f64], h: &[f64], w: f64) -> f64 {
    rec.iter().zip(h).enumerate().map(|(i, (a, b))| if i % 6 < 3 { (w * (a - b)).powi(2) } else { (a - b).powi(2) }).sum()
}

#[test]
fn elbo_is_recon_plus_weighted_kl() {
    let cfg = common::tiny_model();
    let vae = Vae::new(&cfg).unwrap();
    let store: ParamStore<f64> = vae.init(&mut common::rng(2)).unwrap();
    let pc = common::sphere_cloud(cfg.num_points, 3);
    let h = poses(5, 4);
    let noise = Tensor::randn([5, cfg.grasp_latent], &mut common::rng(5));
    let g = Graph::new();
    let z_pc = vae.pc.encode(&g, &store, &[&pc]).unwrap().index_select(&[0; 5]).unwrap();
    let lambda = 0.037;
    let terms = elbo_loss(&g, &store, &vae, g.constant(h.clone()), z_pc, lambda, noise.clone()).unwrap();
    let (loss, recon, kl) = (terms.loss.value().data()[0], terms.recon.value().data()[0], terms.kl.value().data()[0]);
    assert!((loss - (recon + lambda * kl)).abs() < 1e-12);

    // Recompute both terms outside the objective.
    let (mu, logvar) = vae.enc.forward(&g, &store, g.constant(h.clone()), z_pc).unwrap();
    let (mu, logvar) = ((*mu.value()).clone(), (*logvar.value()).clone());
    let k = cfg.grasp_latent;
    let kl_ref: f64 = (0..5).map(|r| kl_gaussian(mu.row(r), logvar.row(r)).unwrap()).sum::<f64>() / 5.0;
    assert!((kl - kl_ref).abs() < 1e-12);
    let z: Vec<f64> = (0..5 * k).map(|i| mu.data()[i] + (0.5 * logvar.data()[i]).exp() * noise.data()[i]).collect();
    let rec = vae.dec.forward(&g, &store, g.constant(Tensor::new([5, k], z).unwrap()), z_pc).unwrap();
    let recon_ref = weighted_error(rec.value().data(), h.data(), 1.0) / 5.0;
    assert!((recon - recon_ref).abs() < 1e-12);
}

#[test]
fn zero_noise_decodes_the_posterior_mean() {
    let cfg = common::tiny_model();
    let vae = Vae::new(&cfg).unwrap();
    let store: ParamStore<f64> = vae.init(&mut common::rng(6)).unwrap();
    let pc = common::sphere_cloud(cfg.num_points, 7);
    let h = poses(3, 8);
    let g = Graph::new();
    let z_pc = vae.pc.encode(&g, &store, &[&pc]).unwrap().index_select(&[0; 3]).unwrap();
    let terms = elbo_loss(&g, &store, &vae, g.constant(h.clone()), z_pc, 0.1, Tensor::zeros([3, cfg.grasp_latent])).unwrap();
    let rec = vae.dec.forward(&g, &store, terms.mu, z_pc).unwrap();
    let direct = weighted_error(rec.value().data(), h.data(), 1.0) / 3.0;
    assert!((terms.recon.value().data()[0] - direct).abs() < 1e-12);
}

#[test]
fn translation_weight_scales_only_translation_residuals() {
    let cfg = common::tiny_model();
    let vae = Vae::new(&cfg).unwrap();
    let store: ParamStore<f64> = vae.init(&mut common::rng(12)).unwrap();
    let pc = common::sphere_cloud(cfg.num_points, 13);
    let h = poses(4, 14);
    let g = Graph::new();
    let z_pc = vae.pc.encode(&g, &store, &[&pc]).unwrap().index_select(&[0; 4]).unwrap();
    let zeros = Tensor::zeros([4, cfg.grasp_latent]);
    let terms = elbo_loss_weighted(&g, &store, &vae, g.constant(h.clone()), z_pc, 0.1, 20.0, zeros.clone()).unwrap();
    let rec = vae.dec.forward(&g, &store, terms.mu, z_pc).unwrap();
    let expect = weighted_error(rec.value().data(), h.data(), 20.0) / 4.0;
    assert!((terms.recon.value().data()[0] - expect).abs() < 1e-12);
    let plain = elbo_loss(&g, &store, &vae, g.constant(h), z_pc, 0.1, zeros).unwrap();
    assert!(terms.recon.value().data()[0] > plain.recon.value().data()[0]);
    assert_eq!(terms.kl.value().data()[0], plain.kl.value().data()[0]);
}
