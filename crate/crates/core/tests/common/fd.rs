use cellgan::nn::{adam_step, Activation, AdamState, Batch, Gradients, Layer, MlpArch, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Linear => z,
    }
}

/// Plain f64 network: per layer (weights row-major out x in, biases).
struct Net {
    layers: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
    hidden: Activation,
    output: Activation,
}

impl Net {
    fn from(p: &MlpParams) -> Self {
        Net {
            layers: p
                .layers
                .iter()
                .map(|l| {
                    (
                        l.rows,
                        l.cols,
                        l.weights.iter().map(|&w| f64::from(w)).collect(),
                        l.biases.iter().map(|&b| f64::from(b)).collect(),
                    )
                })
                .collect(),
            hidden: p.arch.hidden_activation,
            output: p.arch.output_activation,
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, (rows, cols, w, b)) in self.layers.iter().enumerate() {
            let a = if i + 1 == self.layers.len() { self.output } else { self.hidden };
            h = (0..*rows)
                .map(|o| act(a, b[o] + (0..*cols).map(|k| w[o * cols + k] * h[k]).sum::<f64>()))
                .collect();
        }
        h
    }

    /// mean over rows of sum_k coef[r][k] * y[r][k]
    fn objective(&self, xs: &[Vec<f64>], coef: &[Vec<f64>]) -> f64 {
        xs.iter()
            .zip(coef)
            .map(|(x, c)| self.run(x).iter().zip(c).map(|(y, c)| y * c).sum::<f64>())
            .sum::<f64>()
            / xs.len() as f64
    }
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8
}

fn random_arch(rng: &mut ChaCha8Rng) -> MlpArch {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Linear];
    let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=5)).collect();
    MlpArch::new(
        rng.random_range(1..=5),
        hidden,
        rng.random_range(1..=5),
        acts[rng.random_range(0..2)],
        acts[rng.random_range(0..3)],
    )
    .unwrap()
}

/// Checks backprop against central differences on `nets` random networks.
pub fn check_random_nets(nets: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    for case in 0..nets {
        let arch = random_arch(&mut rng);
        let params = MlpParams::init(&arch, rng.random()).map_err(|e| e.to_string())?;
        let rows = rng.random_range(1..=4);
        let input: Vec<f32> = (0..rows * arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let coef: Vec<f64> = (0..rows * arch.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let batch = Batch::new(rows, arch.input_dim, input.clone()).map_err(|e| e.to_string())?;
        let cache = params.forward(&batch).map_err(|e| e.to_string())?;
        let bp = params.backward(&cache, &coef).map_err(|e| e.to_string())?;

        let xs: Vec<Vec<f64>> = input
            .chunks(arch.input_dim)
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let cs: Vec<Vec<f64>> = coef.chunks(arch.output_dim).map(<[f64]>::to_vec).collect();
        let mut net = Net::from(&params);

        for l in 0..net.layers.len() {
            for k in 0..net.layers[l].2.len() {
                let orig = net.layers[l].2[k];
                net.layers[l].2[k] = orig + h;
                let up = net.objective(&xs, &cs);
                net.layers[l].2[k] = orig - h;
                let down = net.objective(&xs, &cs);
                net.layers[l].2[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = f64::from(bp.grads.layers[l].weights[k]);
                if !close(analytic, numeric) {
                    return Err(format!("case {case} layer {l} weight {k}: {analytic} vs {numeric}"));
                }
            }
            for k in 0..net.layers[l].3.len() {
                let orig = net.layers[l].3[k];
                net.layers[l].3[k] = orig + h;
                let up = net.objective(&xs, &cs);
                net.layers[l].3[k] = orig - h;
                let down = net.objective(&xs, &cs);
                net.layers[l].3[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = f64::from(bp.grads.layers[l].biases[k]);
                if !close(analytic, numeric) {
                    return Err(format!("case {case} layer {l} bias {k}: {analytic} vs {numeric}"));
                }
            }
        }

        // Input gradients are per row, not averaged.
        for r in 0..rows {
            for k in 0..arch.input_dim {
                let f = |x: f64| {
                    let mut row = xs[r].clone();
                    row[k] = x;
                    net.run(&row).iter().zip(&cs[r]).map(|(y, c)| y * c).sum::<f64>()
                };
                let numeric = (f(xs[r][k] + h) - f(xs[r][k] - h)) / (2.0 * h);
                let analytic = bp.input_grad[r * arch.input_dim + k];
                if !close(analytic, numeric) {
                    return Err(format!("case {case} input ({r},{k}): {analytic} vs {numeric}"));
                }
            }
        }
    }
    Ok(())
}

pub fn scalar_net(w: f32) -> MlpParams {
    let arch = MlpArch::new(1, vec![], 1, Activation::Tanh, Activation::Linear).unwrap();
    MlpParams::from_layers(
        arch,
        vec![Layer {
            rows: 1,
            cols: 1,
            weights: vec![w],
            biases: vec![0.0],
        }],
    )
    .unwrap()
}

pub fn scalar_grad(p: &MlpParams, g: f32) -> Gradients {
    let mut grads = Gradients::zeros_like(p);
    grads.layers[0].weights[0] = g;
    grads
}

/// Parameter after one Adam step from w=0 with gradient 1 and lr 2e-4.
pub fn adam_first_step() -> f64 {
    let mut p = scalar_net(0.0);
    let mut state = AdamState::new(&p, 0.0002);
    let g = scalar_grad(&p, 1.0);
    adam_step(&mut p, &g, &mut state).unwrap();
    f64::from(p.layers[0].weights[0])
}
