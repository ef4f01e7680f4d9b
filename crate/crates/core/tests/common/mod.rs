//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use graspldm::dataset::{generate_object, PointCloud, PrimitiveShape, ShapeKind};
use graspldm::diffusion::{diffusion_loss, DiffusionSchedule};
use graspldm::models::{FilmBlock, FilmStack, Linear, ModelConfig, ScoreNet, Vae};
use graspldm::numerics::gradcheck::{check_gradients, GradCheckReport};
use graspldm::numerics::{Graph, ParamStore, Tensor, Var};
use graspldm::vae::elbo_loss;
use graspldm::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) {
    store.insert(name, Tensor::uniform(shape.to_vec(), lo, hi, rng).with_requires_grad(true)).unwrap();
}

/// Contracts an arbitrary output against fixed random weights so every
/// output element carries a distinct gradient.
fn contract<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let w = Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng(seed));
    Ok(y.mul(g.constant(w))?.sum())
}

type Case = (&'static str, GradCheckReport);

fn run<F>(name: &'static str, store: &ParamStore<f64>, f: F) -> Result<Case>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    Ok((name, check_gradients(store, GRAD_STEP, 64, f)?))
}

/// One gradient check per graph operation, including broadcasting variants.
pub fn op_cases() -> Result<Vec<Case>> {
    let mut r = rng(11);
    let mut s = ParamStore::new();
    param(&mut s, "a", &[3, 4], -1.0, 1.0, &mut r);
    param(&mut s, "b", &[3, 4], -1.0, 1.0, &mut r);
    param(&mut s, "row", &[1, 4], -1.0, 1.0, &mut r);
    param(&mut s, "pos", &[3, 4], 0.5, 2.0, &mut r);
    param(&mut s, "w", &[4, 5], -1.0, 1.0, &mut r);
    // Away from the relu kink and the clamp bounds.
    let mut away = ParamStore::new();
    let vals: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 0.3 + 0.1 * i as f64 } else { -0.4 - 0.1 * i as f64 }).collect();
    away.insert("x", Tensor::new([3, 4], vals).unwrap().with_requires_grad(true)).unwrap();
    // Distinct values so the max is unique per row.
    let mut distinct = ParamStore::new();
    let vals: Vec<f64> = (0..24).map(|i| ((i * 7) % 24) as f64 * 0.1 - 1.0).collect();
    distinct.insert("x", Tensor::new([2, 3, 4], vals).unwrap().with_requires_grad(true)).unwrap();

    let mut out = Vec::new();
    out.push(run("add", &s, |g, st| contract(g, g.param(st, "a")?.add(g.param(st, "b")?)?, 1))?);
    out.push(run("add_broadcast", &s, |g, st| contract(g, g.param(st, "a")?.add(g.param(st, "row")?)?, 2))?);
    out.push(run("sub", &s, |g, st| contract(g, g.param(st, "a")?.sub(g.param(st, "row")?)?, 3))?);
    out.push(run("mul", &s, |g, st| contract(g, g.param(st, "a")?.mul(g.param(st, "b")?)?, 4))?);
    out.push(run("mul_broadcast", &s, |g, st| contract(g, g.param(st, "row")?.mul(g.param(st, "b")?)?, 5))?);
    out.push(run("div", &s, |g, st| contract(g, g.param(st, "a")?.div(g.param(st, "pos")?)?, 6))?);
    out.push(run("neg", &s, |g, st| contract(g, g.param(st, "a")?.neg(), 7))?);
    out.push(run("scale", &s, |g, st| contract(g, g.param(st, "a")?.scale(-2.5), 8))?);
    out.push(run("offset", &s, |g, st| contract(g, g.param(st, "a")?.offset(1.5).square(), 9))?);
    out.push(run("matmul", &s, |g, st| contract(g, g.param(st, "a")?.matmul(g.param(st, "w")?)?, 10))?);
    out.push(run("exp", &s, |g, st| contract(g, g.param(st, "a")?.exp(), 11))?);
    out.push(run("log", &s, |g, st| contract(g, g.param(st, "pos")?.log(), 12))?);
    out.push(run("softplus", &s, |g, st| contract(g, g.param(st, "a")?.scale(3.0).softplus(), 13))?);
    out.push(run("relu", &away, |g, st| contract(g, g.param(st, "x")?.relu(), 14))?);
    out.push(run("silu", &s, |g, st| contract(g, g.param(st, "a")?.scale(3.0).silu(), 15))?);
    out.push(run("square", &s, |g, st| contract(g, g.param(st, "a")?.square(), 16))?);
    out.push(run("sqrt", &s, |g, st| contract(g, g.param(st, "pos")?.sqrt(), 17))?);
    out.push(run("clamp", &away, |g, st| contract(g, g.param(st, "x")?.clamp(-0.95, 0.95), 18))?);
    out.push(run("sum", &s, |g, st| Ok(g.param(st, "a")?.square().sum()))?);
    out.push(run("mean", &s, |g, st| Ok(g.param(st, "a")?.exp().mean()))?);
    out.push(run("sum_axis0", &s, |g, st| contract(g, g.param(st, "a")?.exp().sum_axis(0)?, 19))?);
    out.push(run("sum_axis1", &s, |g, st| contract(g, g.param(st, "a")?.exp().sum_axis(1)?, 20))?);
    out.push(run("max_axis", &distinct, |g, st| contract(g, g.param(st, "x")?.max_axis(1)?, 21))?);
    out.push(run("concat", &s, |g, st| {
        let c = Var::concat(&[g.param(st, "a")?, g.param(st, "b")?.exp()], 1)?;
        contract(g, c, 22)
    })?);
    out.push(run("slice", &s, |g, st| contract(g, g.param(st, "a")?.exp().slice(1, 1, 2)?, 23))?);
    out.push(run("reshape", &s, |g, st| contract(g, g.param(st, "a")?.exp().reshape([2, 6])?, 24))?);
    out.push(run("index_select", &s, |g, st| contract(g, g.param(st, "a")?.exp().index_select(&[2, 0, 2, 1])?, 25))?);
    Ok(out)
}

/// The smallest configuration exercising every network block.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        num_points: 16,
        pc_widths: vec![8, 8],
        shape_latent: 8,
        grasp_latent: 2,
        width: 8,
        blocks: 2,
        score_width: 8,
        score_blocks: 2,
        time_dim: 8,
        input_scale: 10.0,
        ..ModelConfig::default()
    }
}

pub fn sphere_cloud(n: usize, seed: u64) -> PointCloud<f64> {
    let obj = generate_object(&PrimitiveShape { kind: ShapeKind::Sphere, dims: vec![0.03], seed: 0 }).unwrap();
    PointCloud::new(obj.sample_points(n, &mut rng(seed))).unwrap()
}

fn random_poses6(rows: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let data = (0..rows * 6).map(|i| if i % 6 < 3 { r.random_range(-0.05..0.05) } else { r.random_range(-1.0..1.0) }).collect();
    Tensor::new([rows, 6], data).unwrap()
}

/// Gradient checks of every network block and both training losses.
pub fn network_cases() -> Result<Vec<Case>> {
    let cfg = tiny_model();
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let lin = Linear::new("lin", 5, 3);
    lin.init(&mut s, &mut rng(1))?;
    let x = Tensor::uniform([4, 5], -1.0, 1.0, &mut rng(2));
    out.push(run("linear", &s, |g, st| contract(g, lin.forward(g, st, g.constant(x.clone()))?, 30))?);

    let mut s = ParamStore::new();
    let block = FilmBlock::new("blk", 6, 4);
    block.init(&mut s, &mut rng(3))?;
    let x = Tensor::uniform([5, 6], -1.0, 1.0, &mut rng(4));
    let c = Tensor::uniform([5, 4], -1.0, 1.0, &mut rng(5));
    out.push(run("film_block", &s, |g, st| {
        contract(g, block.forward(g, st, g.constant(x.clone()), g.constant(c.clone()))?, 31)
    })?);
    let c1 = Tensor::uniform([1, 4], -1.0, 1.0, &mut rng(6));
    out.push(run("film_block_shared_cond", &s, |g, st| {
        contract(g, block.forward(g, st, g.constant(x.clone()), g.constant(c1.clone()))?, 32)
    })?);

    let mut s = ParamStore::new();
    let stack = FilmStack::new("stk", 3, 6, 2, 4);
    stack.init(&mut s, &mut rng(7))?;
    let x = Tensor::uniform([5, 3], -1.0, 1.0, &mut rng(8));
    out.push(run("film_stack", &s, |g, st| {
        contract(g, stack.forward(g, st, g.constant(x.clone()), g.constant(c.clone()))?, 33)
    })?);

    let vae = Vae::new(&cfg)?;
    let params: ParamStore<f64> = vae.init(&mut rng(9))?;
    let clouds = [sphere_cloud(cfg.num_points, 10), sphere_cloud(cfg.num_points, 11)];
    let refs: Vec<&PointCloud<f64>> = clouds.iter().collect();
    out.push(run("pointcloud_encoder", &params.subset("pc."), |g, st| contract(g, vae.pc.encode(g, st, &refs)?, 34))?);

    let h = random_poses6(3, 12);
    let z_pc = Tensor::uniform([3, cfg.shape_latent], -1.0, 1.0, &mut rng(13));
    out.push(run("grasp_encoder", &params.subset("enc."), |g, st| {
        let (mu, logvar) = vae.enc.forward(g, st, g.constant(h.clone()), g.constant(z_pc.clone()))?;
        contract(g, Var::concat(&[mu, logvar], 1)?, 35)
    })?);
    let z = Tensor::uniform([3, cfg.grasp_latent], -1.0, 1.0, &mut rng(14));
    out.push(run("grasp_decoder", &params.subset("dec."), |g, st| {
        contract(g, vae.dec.forward(g, st, g.constant(z.clone()), g.constant(z_pc.clone()))?, 36)
    })?);

    let noise = Tensor::uniform([2, cfg.grasp_latent], -1.0, 1.0, &mut rng(15));
    let h2 = random_poses6(2, 16);
    out.push(run("elbo_loss", &params, |g, st| {
        let z_pc = vae.pc.encode(g, st, &refs)?;
        Ok(elbo_loss(g, st, &vae, g.constant(h2.clone()), z_pc, 0.1, noise.clone())?.loss)
    })?);

    let sched = DiffusionSchedule::linear(50, 1e-3, 0.05)?;
    for (name, task) in [("score_net", None), ("score_net_task", Some(3))] {
        let net = ScoreNet::new(&cfg, sched.timesteps(), task);
        let mut s = ParamStore::new();
        net.init(&mut s, &mut rng(17))?;
        let zt = Tensor::uniform([3, cfg.grasp_latent], -1.0, 1.0, &mut rng(18));
        let zpc1 = Tensor::uniform([1, cfg.shape_latent], -1.0, 1.0, &mut rng(19));
        let ids = [0usize, 2, 1];
        out.push(run(name, &s, |g, st| {
            let y = net.forward(g, st, g.constant(zt.clone()), &[1, 25, 50], g.constant(zpc1.clone()), task.map(|_| &ids[..]))?;
            contract(g, y, 37)
        })?);
    }

    let net = ScoreNet::new(&cfg, sched.timesteps(), Some(3));
    let mut s = params.clone();
    s.freeze();
    net.init(&mut s, &mut rng(20))?;
    let z0 = Tensor::uniform([3, cfg.grasp_latent], -1.0, 1.0, &mut rng(21));
    let eps = Tensor::uniform([3, cfg.grasp_latent], -1.0, 1.0, &mut rng(22));
    let zpc3 = Tensor::uniform([3, cfg.shape_latent], -1.0, 1.0, &mut rng(23));
    out.push(run("diffusion_loss", &s, |g, st| {
        diffusion_loss(g, st, &net, &z0, g.constant(zpc3.clone()), &[3, 17, 50], &eps, Some(&[1, 0, 2]), &sched)
    })?);
    Ok(out)
}

/// Minimum assignment cost by enumerating every permutation.
pub fn brute_force_assignment_cost(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, n, row + 1, used, acc + cost[row * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    if n == 0 {
        0.0
    } else {
        best
    }
}
