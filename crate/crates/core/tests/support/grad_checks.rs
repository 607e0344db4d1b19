//! Analytic gradients against central finite differences on small random
//! fixtures. Every check returns the worst relative error it saw, measured
//! per gradient vector as ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).

use facetviz::network::{LayerKind, LayerSpec, Network, ParamGrads};
use facetviz::Tensor;
use rand::Rng;

const H: f64 = 1e-5;
const MARGIN: f64 = 1e-3;

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

// True when no input sits within MARGIN of a ReLU kink or a pooling tie.
fn smooth_at(kind: &LayerKind, x: &Tensor<f64>) -> bool {
    match *kind {
        LayerKind::Relu => x.data().iter().all(|v| v.abs() > MARGIN),
        LayerKind::MaxPool { size } => {
            let (h, w, c) = x.image_dims().unwrap();
            (0..h / size).all(|oy| {
                (0..w / size).all(|ox| {
                    (0..c).all(|ch| {
                        let mut v: Vec<f64> =
                            (0..size * size).map(|k| x.at(oy * size + k / size, ox * size + k % size, ch)).collect();
                        v.sort_by(|a, b| b.total_cmp(a));
                        v[0] - v[1] > MARGIN
                    })
                })
            })
        }
        _ => true,
    }
}

fn zero_grads(net: &Network<f64>) -> ParamGrads {
    let layers = net
        .layers()
        .iter()
        .map(|l| match (&l.weights, &l.bias) {
            (Some(w), Some(b)) => Some((vec![0.0; w.len()], vec![0.0; b.len()])),
            _ => None,
        })
        .collect();
    ParamGrads { layers }
}

fn loss(net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let out = net.forward(x).unwrap();
    out.last().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// One fixture: a single-layer network of `kind`, loss Σ r ⊙ output with a
/// random `r`. Checks the input gradient and any weight and bias gradients.
pub fn layer_fixture(kind: LayerKind, dims: [usize; 3], seed: u64) -> f64 {
    let mut rng = facetviz::rng::seeded(seed);
    let mut net = Network::<f64>::new(&dims, vec![LayerSpec::new("l", kind.clone())]).unwrap();
    net.init_random(seed);
    for l in net.layers_mut() {
        if let Some(b) = &mut l.bias {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let x = loop {
        let x = Tensor::<f64>::from_fn(&dims, |_| rng.random_range(-1.0..1.0));
        if smooth_at(&kind, &x) {
            break x;
        }
    };
    let out_dims = net.layers()[0].out_dims().to_vec();
    let r = Tensor::<f64>::from_fn(&out_dims, |_| rng.random_range(-1.0..1.0));

    let trace = net.forward(&x).unwrap();
    let mut grads = zero_grads(&net);
    let gx = net.backward(&x, &trace, 0, r.clone(), Some(&mut grads)).unwrap();

    let num_x = central(|v| loss(&net, &Tensor::from_vec(&dims, v.to_vec()).unwrap(), &r), x.data());
    let mut worst = relative_error(gx.data(), &num_x);

    if let Some((gw, gb)) = &grads.layers[0] {
        let w0 = net.layers()[0].weights.clone().unwrap();
        let b0 = net.layers()[0].bias.clone().unwrap();
        let with_w = |v: &[f64]| {
            let mut n = net.clone();
            n.layers_mut()[0].weights = Some(Tensor::from_vec(w0.dims(), v.to_vec()).unwrap());
            loss(&n, &x, &r)
        };
        let with_b = |v: &[f64]| {
            let mut n = net.clone();
            n.layers_mut()[0].bias = Some(Tensor::from_vec(b0.dims(), v.to_vec()).unwrap());
            loss(&n, &x, &r)
        };
        worst = worst.max(relative_error(gw, &central(with_w, w0.data())));
        worst = worst.max(relative_error(gb, &central(with_b, b0.data())));
    }
    worst
}

/// The layer kinds and input sizes exercised, one entry per kind.
pub fn layer_kinds() -> Vec<(&'static str, Vec<(LayerKind, [usize; 3])>)> {
    use LayerKind::*;
    vec![
        (
            "conv",
            vec![
                (Conv { kernel: 3, filters: 2, stride: 1, pad: 1 }, [5, 5, 2]),
                (Conv { kernel: 3, filters: 3, stride: 2, pad: 0 }, [7, 6, 1]),
                (Conv { kernel: 2, filters: 2, stride: 1, pad: 0 }, [4, 5, 3]),
            ],
        ),
        ("relu", vec![(Relu, [4, 4, 2]), (Relu, [3, 5, 1])]),
        ("maxpool", vec![(MaxPool { size: 2 }, [4, 4, 2]), (MaxPool { size: 3 }, [6, 6, 1])]),
        ("dense", vec![(Dense { units: 4 }, [3, 3, 2]), (Dense { units: 1 }, [2, 4, 1])]),
        ("softmax", vec![(Softmax, [1, 1, 5]), (Softmax, [1, 1, 3])]),
    ]
}

/// Worst error over `fixtures` seeds for each layer kind.
pub fn per_layer_kind(fixtures: u64) -> Vec<(&'static str, f64)> {
    layer_kinds()
        .into_iter()
        .map(|(name, variants)| {
            let worst = (0..fixtures)
                .map(|s| {
                    let (kind, dims) = &variants[s as usize % variants.len()];
                    layer_fixture(kind.clone(), *dims, 100 + s)
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// The α-norm penalty gradient against differences of the penalty written
/// out directly: weight · mean(|x − c|^α).
pub fn alpha_norm_fixtures(fixtures: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..fixtures {
        let mut rng = facetviz::rng::seeded(500 + s);
        let alpha = rng.random_range(1.5..6.0);
        let weight = rng.random_range(0.1..3.0);
        let center = rng.random_range(-0.2..0.2);
        let dims = [rng.random_range(2..6), rng.random_range(2..6), 3];
        let x = Tensor::<f64>::from_fn(&dims, |_| {
            let d: f64 = rng.random_range(0.05..1.0);
            center + if rng.random_bool(0.5) { d } else { -d }
        });
        let value = |v: &[f64]| weight * v.iter().map(|p| (p - center).abs().powf(alpha)).sum::<f64>() / v.len() as f64;
        let g = facetviz::priors::alpha_norm_grad(&x, alpha, weight, center).unwrap();
        worst = worst.max(relative_error(g.data(), &central(value, x.data())));
    }
    worst
}
