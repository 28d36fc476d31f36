#![allow(dead_code)]

use firecast_core::losses;
use firecast_core::model::{Critic, CriticConfig, GeneratorConfig, ModelConfig};
use firecast_tensor::{NodeId, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8×8 grid, one stride-2 stage and one valid conv: a 2×2 patch grid and
/// under 500 parameters.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        rows: 8,
        cols: 8,
        generator: GeneratorConfig {
            extractor: 2,
            encoder: vec![2],
            film_hidden: 4,
            d_z: 2,
            noise_channels: 1,
            cond_dim: 3,
            fire_film: true,
        },
        critic: CriticConfig {
            extractor: 2,
            stages: vec![2],
            valid_convs: 1,
            film_hidden: 4,
            cond_dim: 3,
        },
    }
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

struct Inputs {
    x: Tensor<f64>,
    state: Tensor<f64>,
    terrain: Tensor<f64>,
    cond: Tensor<f64>,
}

fn penalty(d: &Critic<f64>, inp: &Inputs, grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut t = Tape::new();
    let p = d.params.bind(&mut t);
    let x = t.leaf(inp.x.clone());
    let state = t.leaf(inp.state.clone());
    let terr = t.leaf(inp.terrain.clone());
    let cond = t.leaf(inp.cond.clone());
    let gp = losses::gradient_penalty(&mut t, x, |t, x| Ok(d.forward(t, &p, x, state, terr, cond)?.scores)).unwrap();
    let v = t.value(gp).item();
    if !grads {
        return (v, Vec::new());
    }
    let wrt: Vec<NodeId> = d.params.trainable_ids().iter().map(|id| p[id.0]).collect();
    (v, t.backward(gp, &wrt).unwrap())
}

/// Trainable parameter count of the tiny critic and the worst relative
/// error between the analytic and central-difference parameter gradients
/// of its gradient penalty.
pub fn penalty_gradient_error(init_seed: u64, data_seed: u64) -> (usize, f64) {
    let cfg = tiny_config();
    let d = Critic::<f64>::new(&cfg, init_seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let inp = Inputs {
        x: random(&mut rng, vec![2, 1, 8, 8]),
        state: random(&mut rng, vec![2, 1, 8, 8]),
        terrain: random(&mut rng, vec![2, 3, 8, 8]),
        cond: random(&mut rng, vec![2, 3]),
    };
    let (value, grads) = penalty(&d, &inp, true);
    assert!(value > 0.0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let scale = grads.iter().flat_map(|g| g.data().iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, id) in d.params.trainable_ids().into_iter().enumerate() {
        for j in 0..d.params.value(id).data().len() {
            let mut plus = d.clone();
            plus.params.value_mut(id).data_mut()[j] += h;
            let mut minus = d.clone();
            minus.params.value_mut(id).data_mut()[j] -= h;
            let fd = (penalty(&plus, &inp, false).0 - penalty(&minus, &inp, false).0) / (2.0 * h);
            let an = grads[k].data()[j];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3 * scale);
            worst = worst.max(rel);
        }
    }
    (d.params.num_trainable(), worst)
}

