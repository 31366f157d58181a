//! Multilayer perceptron with rectified-linear hidden layers and a linear
//! output layer, with hand-written forward and backward passes.

use std::fmt::Write as _;

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    /// `sizes` lists layer widths from input to output.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output width");
        MlpParams {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` per layer, zero biases.
    pub fn glorot(sizes: &[usize], rng: &mut SimRng) -> Self {
        let mut params = Self::zeros(sizes);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// All parameters in layer order, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn fill(&mut self, v: f64) {
        self.values_mut().for_each(|x| *x = v);
    }

    pub fn forward(&self, x: &[f64]) -> [f64; 2] {
        let mut ws = Workspace::new(self);
        let out = self.forward_into(x, &mut ws);
        [out[0], out[1]]
    }

    /// Runs the network, keeping every layer's pre-activations and
    /// activations in `ws` for a following backward pass.
    pub fn forward_into<'a>(&self, x: &[f64], ws: &'a mut Workspace) -> &'a [f64] {
        debug_assert_eq!(x.len(), self.input_size());
        ws.activations[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.activations.split_at_mut(l + 1);
            let input = &before[l];
            let pre = &mut ws.pre[l];
            let output = &mut after[0];
            for o in 0..layer.outputs {
                pre[o] = layer.bias[o] + dot(layer.row(o), input);
            }
            if l == last {
                output.copy_from_slice(pre);
            } else {
                for (h, &z) in output.iter_mut().zip(pre.iter()) {
                    *h = z.max(0.0);
                }
            }
        }
        &ws.activations[self.layers.len()]
    }

    /// Adds `scale` times the gradient of `½(y − Q(x, action))²` to `grad`.
    /// The error enters only through the chosen action's output unit.
    /// Returns the residual `Q(x, action) − y`.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        action: Action,
        y: f64,
        scale: f64,
        ws: &mut Workspace,
        grad: &mut MlpParams,
    ) -> f64 {
        let q = self.forward_into(x, ws)[action.index()];
        let residual = q - y;
        let n = self.layers.len();
        ws.delta[n - 1].fill(0.0);
        ws.delta[n - 1][action.index()] = residual;

        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let (lower, upper) = ws.delta.split_at_mut(l);
            let delta = &upper[0];
            let input = &ws.activations[l];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += scale * d;
                axpy(
                    scale * d,
                    input,
                    &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs],
                );
            }
            if l > 0 {
                let prev = &mut lower[l - 1];
                prev.fill(0.0);
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d != 0.0 {
                        axpy(d, layer.row(o), prev);
                    }
                }
                for (p, &z) in prev.iter_mut().zip(ws.pre[l - 1].iter()) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        residual
    }

    /// Flat text format: a `mlp <layers>` header, then per layer a
    /// `dense <outputs> <inputs>` line, `outputs` rows of weights and one
    /// row of biases. Values use shortest round-trip decimal.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mlp {}", self.layers.len()).unwrap();
        for layer in &self.layers {
            writeln!(out, "dense {} {}", layer.outputs, layer.inputs).unwrap();
            for o in 0..layer.outputs {
                write_row(&mut out, layer.row(o));
            }
            write_row(&mut out, &layer.bias);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Policy(format!("unexpected end of file, expected {what}")))
        };

        let (lineno, header) = next("header")?;
        let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["mlp", n] => parse_num::<usize>(n, lineno)?,
            _ => return Err(Error::Policy(format!("line {lineno}: expected `mlp <layers>`"))),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, shape) = next("layer shape")?;
            let (outputs, inputs) = match shape.split_whitespace().collect::<Vec<_>>()[..] {
                ["dense", o, i] => (parse_num::<usize>(o, lineno)?, parse_num::<usize>(i, lineno)?),
                _ => {
                    return Err(Error::Policy(format!(
                        "line {lineno}: expected `dense <outputs> <inputs>`"
                    )))
                }
            };
            let mut layer = Dense::zeros(inputs, outputs);
            for o in 0..outputs {
                let (lineno, row) = next("weight row")?;
                let vals = parse_row(row, inputs, lineno)?;
                layer.weights[o * inputs..(o + 1) * inputs].copy_from_slice(&vals);
            }
            let (lineno, row) = next("bias row")?;
            layer.bias = parse_row(row, outputs, lineno)?;
            layers.push(layer);
        }
        if let Some((lineno, _)) = lines.next() {
            return Err(Error::Policy(format!("line {lineno}: trailing content")));
        }
        if layers.is_empty() || layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(Error::Policy("inconsistent layer shapes".into()));
        }
        Ok(MlpParams { layers })
    }
}

/// Buffers reused across forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    pre: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(params: &MlpParams) -> Self {
        let sizes = params.sizes();
        Workspace {
            pre: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            activations: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

pub fn forward(params: &MlpParams, x: &[f64]) -> [f64; 2] {
    params.forward(x)
}

/// Gradient of `½(y − Q(x, action; θ))²` with respect to every parameter.
pub fn gradient(params: &MlpParams, x: &[f64], action: Action, y: f64) -> MlpParams {
    let mut grad = MlpParams::zeros(&params.sizes());
    let mut ws = Workspace::new(params);
    params.accumulate_gradient(x, action, y, 1.0, &mut ws, &mut grad);
    grad
}

/// `θ ← θ − α·grad`.
pub fn sgd_step(params: &mut MlpParams, grad: &MlpParams, alpha: f64) {
    debug_assert!(params.same_shape(grad));
    for (p, g) in params.layers.iter_mut().zip(&grad.layers) {
        axpy(-alpha, &g.weights, &mut p.weights);
        axpy(-alpha, &g.bias, &mut p.bias);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn write_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

fn parse_num<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Policy(format!("line {lineno}: bad number `{s}`")))
}

fn parse_row(row: &str, expected: usize, lineno: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = row
        .split_whitespace()
        .map(|s| parse_num::<f64>(s, lineno))
        .collect::<Result<_>>()?;
    if vals.len() != expected || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Policy(format!(
            "line {lineno}: expected {expected} finite values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn toy() -> MlpParams {
        // 6 -> 2 -> 2 -> 2 with hand-picked values.
        MlpParams {
            layers: vec![
                Dense {
                    inputs: 6,
                    outputs: 2,
                    weights: vec![
                        0.5, -1.0, 0.25, 0.0, 2.0, -0.5, //
                        -1.0, 0.5, 1.0, 1.5, -0.25, 0.75,
                    ],
                    bias: vec![0.1, -0.2],
                },
                Dense {
                    inputs: 2,
                    outputs: 2,
                    weights: vec![1.0, -2.0, 0.5, 0.5],
                    bias: vec![0.3, 0.0],
                },
                Dense {
                    inputs: 2,
                    outputs: 2,
                    weights: vec![2.0, 1.0, -1.0, 3.0],
                    bias: vec![0.5, -0.5],
                },
            ],
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[6, 64, 64, 2]);
        assert_eq!(p.forward(&[0.3, 1.0, 0.0, 1.0, 1.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn output_bias_passthrough() {
        let mut p = MlpParams::zeros(&[6, 8, 8, 2]);
        p.layers[2].bias = vec![1.5, -4.0];
        assert_eq!(p.forward(&[1.0; 6]), [1.5, -4.0]);
    }

    #[test]
    fn toy_network_matches_hand_calculation() {
        let x = [0.5, 1.0, 0.0, 1.0, 1.0, 0.0];
        // Layer 1: z1 = 0.25 - 1 + 0 + 0 + 2 + 0 + 0.1 = 1.35
        //          z2 = -0.5 + 0.5 + 0 + 1.5 - 0.25 + 0 - 0.2 = 1.05
        // Layer 2: z1 = 1.35 - 2.1 + 0.3 = -0.45 -> 0
        //          z2 = 0.675 + 0.525 = 1.2
        // Output:  [0 + 1.2 + 0.5, 0 + 3.6 - 0.5] = [1.7, 3.1]
        let q = toy().forward(&x);
        assert!((q[0] - 1.7).abs() < 1e-12, "{q:?}");
        assert!((q[1] - 3.1).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let p = toy();
        let x = [0.5, 1.0, 0.0, 1.0, 1.0, 0.0];
        let q = p.forward(&x);
        let g = gradient(&p, &x, Action::Radar, q[1]);
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn unchosen_output_unit_gets_no_gradient() {
        let mut rng = stream(4, 3);
        let p = MlpParams::glorot(&[6, 16, 16, 2], &mut rng);
        let x = [0.2, 0.0, 1.0, 1.0, 0.0, 1.0];
        let g = gradient(&p, &x, Action::Communicate, 10.0);
        let out = &g.layers[2];
        assert!(out.weights[16..].iter().all(|&v| v == 0.0));
        assert_eq!(out.bias[1], 0.0);
        assert!(out.weights[..16].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn sgd_examples() {
        let mut rng = stream(9, 3);
        let p = MlpParams::glorot(&[6, 4, 4, 2], &mut rng);
        let mut q = p.clone();
        sgd_step(&mut q, &MlpParams::zeros(&[6, 4, 4, 2]), 0.5);
        assert_eq!(p, q);
        let g = gradient(&p, &[1.0; 6], Action::Radar, -3.0);
        sgd_step(&mut q, &g, 0.0);
        assert_eq!(p, q);

        let mut one = MlpParams::zeros(&[1, 1]);
        one.layers[0].weights[0] = 0.75;
        let mut g = MlpParams::zeros(&[1, 1]);
        g.layers[0].weights[0] = 2.0;
        sgd_step(&mut one, &g, 0.125);
        assert_eq!(one.layers[0].weights[0], 0.75 - 0.125 * 2.0);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let mut rng = stream(2, 3);
        let p = MlpParams::glorot(&[6, 5, 3, 2], &mut rng);
        assert_eq!(MlpParams::parse(&p.to_text()).unwrap(), p);
        assert!(MlpParams::parse("mlp 1\ndense 2 1\n1\n").is_err());
        assert!(MlpParams::parse("mlp 1\ndense 1 1\n1\n2\n3\n").is_err());
        assert!(MlpParams::parse("nope").is_err());
    }

    #[test]
    fn argmax_invariant_to_shared_output_shift() {
        let mut rng = stream(12, 3);
        let mut p = MlpParams::glorot(&[6, 8, 8, 2], &mut rng);
        let xs: Vec<[f64; 6]> = (0..50)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let before: Vec<_> = xs.iter().map(|x| crate::agents::greedy(p.forward(x))).collect();
        for b in &mut p.layers[2].bias {
            *b += 37.0;
        }
        let after: Vec<_> = xs.iter().map(|x| crate::agents::greedy(p.forward(x))).collect();
        assert_eq!(before, after);
    }
}
