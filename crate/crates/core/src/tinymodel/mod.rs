//! A small 3D convolutional encoder-decoder with hand-written reverse-mode gradients.
//!
//! Input channels are the rescaled CT, one mask per canonical OAR and the PTV mask. Each
//! encoder level applies two 3x3x3 conv + ReLU blocks and a 2x2x2 max pool; the decoder
//! mirrors it with trilinear x2 upsampling, a 3x3x3 conv, concatenation with the matching
//! encoder activation and two more conv blocks. A 1x1x1 head gives one channel `h`, and the
//! predicted dose is `prescription * softplus(h)`, which is nonnegative everywhere.

mod checkpoint;
pub mod ops;
mod train;

use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossConfig, LossValueGrad};
use crate::preprocess::{clip_rescale_ct, one_hot_structures, PreprocessConfig};
use crate::rng;
use crate::volume::{CaseBundle, Grid3, Unit, CANONICAL_OARS};

use ops::{Act, Shape};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use train::{
    evaluate_holdout, load_split, param_gradcheck, predict, train, EpochLog, HoldoutReport, TrainConfig, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub levels: usize,
    pub base_filters: usize,
    /// Dropout after every hidden ReLU while training.
    pub dropout: f64,
    /// Gy; scales the softplus output.
    pub prescription: f64,
    /// Initial predicted dose as a fraction of the prescription.
    pub init_fraction: f64,
    pub hu_clip: (f64, f64),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 2 + CANONICAL_OARS.len(),
            levels: 2,
            base_filters: 8,
            dropout: 0.0,
            prescription: 60.0,
            init_fraction: 0.5,
            hu_clip: PreprocessConfig::default().hu_clip,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 2 + CANONICAL_OARS.len() {
            return Err(Error::config(format!(
                "input_channels must be {} (CT, PTV and {} OARs)",
                2 + CANONICAL_OARS.len(),
                CANONICAL_OARS.len()
            )));
        }
        if self.levels == 0 || self.base_filters == 0 {
            return Err(Error::config("levels and base_filters must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if !(self.prescription > 0.0) || !(self.init_fraction > 0.0) {
            return Err(Error::config("prescription and init_fraction must be positive"));
        }
        Ok(())
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let f = 1usize << self.levels;
        if dims.iter().any(|d| *d == 0 || d % f != 0) {
            return Err(Error::InvalidGeometry(format!(
                "dims {dims:?} not divisible by 2^levels = {f}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k3: bool,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvSpec {
    fn taps(&self) -> usize {
        if self.k3 {
            27
        } else {
            1
        }
    }

    fn w_len(&self) -> usize {
        self.cout * self.cin * self.taps()
    }
}

/// Convolutions in forward order, with offsets into the flat parameter vector.
pub fn layout(cfg: &ModelConfig) -> (Vec<ConvSpec>, usize) {
    let mut convs = Vec::new();
    let mut off = 0;
    let mut add = |cin: usize, cout: usize, k3: bool| {
        let taps = if k3 { 27 } else { 1 };
        let spec = ConvSpec {
            cin,
            cout,
            k3,
            w_off: off,
            b_off: off + cout * cin * taps,
        };
        off = spec.b_off + cout;
        convs.push(spec);
    };
    let f = |l: usize| cfg.base_filters << l;
    let mut cin = cfg.input_channels;
    for l in 0..=cfg.levels {
        add(cin, f(l), true);
        add(f(l), f(l), true);
        cin = f(l);
    }
    for l in (0..cfg.levels).rev() {
        add(f(l + 1), f(l), true);
        add(2 * f(l), f(l), true);
        add(f(l), f(l), true);
    }
    add(f(0), 1, false);
    (convs, off)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub convs: Vec<ConvSpec>,
    pub params: Vec<T>,
}

enum Node<T> {
    Input,
    Conv {
        conv: usize,
        input: usize,
        relu: bool,
        dropout: Option<Vec<T>>,
    },
    Pool {
        input: usize,
        arg: Vec<u32>,
    },
    Up {
        input: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
}

/// Activations and the operations that produced them, for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    acts: Vec<Act<T>>,
}

impl<T: Float + Send + Sync> Tape<T> {
    /// Head output `h` as dense interior values.
    pub fn head(&self) -> Vec<T> {
        self.acts.last().expect("nonempty tape").interior(0)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    crate::losses::sigmoid(x)
}

impl<T: Float + Send + Sync> Network<T> {
    /// He-normal hidden weights, zero biases, and a near-constant head giving
    /// `init_fraction * prescription` everywhere.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (convs, n) = layout(&config);
        let mut params = vec![T::zero(); n];
        let mut r = rng::stream(seed, 2);
        let last = convs.len() - 1;
        for (i, c) in convs.iter().enumerate() {
            let fan_in = (c.cin * c.taps()) as f64;
            let std = if i == last { 0.01 / fan_in.sqrt() } else { (2.0 / fan_in).sqrt() };
            let normal = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[c.w_off..c.w_off + c.w_len()] {
                *p = T::from(normal.sample(&mut r)).expect("float");
            }
        }
        // softplus(b) = init_fraction  =>  b = ln(exp(init_fraction) - 1)
        let b = config.init_fraction.exp_m1().ln();
        params[convs[last].b_off] = T::from(b).expect("float");
        Ok(Network { config, convs, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (convs, n) = layout(&config);
        Ok(Network {
            config,
            convs,
            params: vec![T::zero(); n],
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn conv(&self, tape: &mut Tape<T>, conv: usize, input: usize, relu: bool, drop: Option<&mut rng::Rng>) -> usize {
        let c = self.convs[conv];
        let w = &self.params[c.w_off..c.w_off + c.w_len()];
        let b = &self.params[c.b_off..c.b_off + c.cout];
        let mut out = ops::conv_forward(&tape.acts[input], w, b, c.cout, c.k3);
        let mut dropout = None;
        if relu {
            ops::relu_in_place(&mut out);
            if let Some(r) = drop {
                let rate = self.config.dropout;
                let keep = T::from(1.0 / (1.0 - rate)).expect("float");
                let mask: Vec<T> = (0..out.data.len())
                    .map(|_| if r.gen::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                for (v, m) in out.data.iter_mut().zip(&mask) {
                    *v = *v * *m;
                }
                dropout = Some(mask);
            }
        }
        tape.acts.push(out);
        tape.nodes.push(Node::Conv {
            conv,
            input,
            relu,
            dropout,
        });
        tape.acts.len() - 1
    }

    fn push(tape: &mut Tape<T>, node: Node<T>, act: Act<T>) -> usize {
        tape.nodes.push(node);
        tape.acts.push(act);
        tape.acts.len() - 1
    }

    /// Forward pass. Dropout is applied only when `train_rng` is given and the rate is positive.
    pub fn forward(&self, input: Act<T>, mut train_rng: Option<&mut rng::Rng>) -> Result<Tape<T>> {
        if input.ch != self.config.input_channels {
            return Err(Error::config(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels, input.ch
            )));
        }
        self.config.check_dims(input.shape.dims)?;
        let use_dropout = self.config.dropout > 0.0;
        let mut tape = Tape {
            nodes: vec![Node::Input],
            acts: vec![input],
        };
        let mut k = 0;
        let mut x = 0;
        let mut skips = Vec::new();
        for l in 0..=self.config.levels {
            for _ in 0..2 {
                let d = if use_dropout { train_rng.as_deref_mut() } else { None };
                x = self.conv(&mut tape, k, x, true, d);
                k += 1;
            }
            if l < self.config.levels {
                skips.push(x);
                let (pooled, arg) = ops::maxpool_forward(&tape.acts[x]);
                x = Self::push(&mut tape, Node::Pool { input: x, arg }, pooled);
            }
        }
        for l in (0..self.config.levels).rev() {
            let up = ops::upsample_forward(&tape.acts[x]);
            x = Self::push(&mut tape, Node::Up { input: x }, up);
            let d = if use_dropout { train_rng.as_deref_mut() } else { None };
            x = self.conv(&mut tape, k, x, true, d);
            k += 1;
            let cat = ops::concat(&tape.acts[x], &tape.acts[skips[l]]);
            x = Self::push(&mut tape, Node::Concat { a: x, b: skips[l] }, cat);
            for _ in 0..2 {
                let d = if use_dropout { train_rng.as_deref_mut() } else { None };
                x = self.conv(&mut tape, k, x, true, d);
                k += 1;
            }
        }
        self.conv(&mut tape, k, x, false, None);
        Ok(tape)
    }

    /// Parameter gradient given `dL/dh` on the head output (dense interior values).
    pub fn backward(&self, tape: &Tape<T>, g_head: &[T]) -> Result<Vec<T>> {
        let last = tape.acts.len() - 1;
        if g_head.len() != tape.acts[last].shape.interior_len() {
            return Err(Error::GeometryMismatch("head gradient length".into()));
        }
        let mut grads: Vec<Option<Act<T>>> = (0..tape.acts.len()).map(|_| None).collect();
        let mut g = Act::zeros(tape.acts[last].shape, 1);
        g.set_interior(0, g_head);
        grads[last] = Some(g);
        let mut gp = vec![T::zero(); self.params.len()];
        let accumulate = |grads: &mut Vec<Option<Act<T>>>, id: usize, g: Act<T>| match &mut grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for id in (1..tape.nodes.len()).rev() {
            let Some(mut g) = grads[id].take() else { continue };
            match &tape.nodes[id] {
                Node::Input => {}
                Node::Conv {
                    conv,
                    input,
                    relu,
                    dropout,
                } => {
                    if let Some(mask) = dropout {
                        for (v, m) in g.data.iter_mut().zip(mask) {
                            *v = *v * *m;
                        }
                    }
                    if *relu {
                        ops::relu_backward(&tape.acts[id], &mut g);
                    }
                    let c = self.convs[*conv];
                    let w = &self.params[c.w_off..c.w_off + c.w_len()];
                    let (gw, rest) = gp[c.w_off..].split_at_mut(c.w_len());
                    let gb = &mut rest[..c.cout];
                    let gi = ops::conv_backward(&tape.acts[*input], w, &g, c.k3, gw, gb);
                    if *input != 0 {
                        accumulate(&mut grads, *input, gi);
                    }
                }
                Node::Pool { input, arg } => {
                    let gi = ops::maxpool_backward(tape.acts[*input].shape, arg, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Node::Up { input } => {
                    let gi = ops::upsample_backward(tape.acts[*input].shape, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Node::Concat { a, b } => {
                    let (ga, gb) = ops::split(&g, tape.acts[*a].ch);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
            }
        }
        Ok(gp)
    }

    /// Network inputs for a case: rescaled CT, canonical OAR masks, PTV mask.
    pub fn inputs(&self, case: &CaseBundle) -> Result<Act<T>> {
        let pre = PreprocessConfig {
            hu_clip: self.config.hu_clip,
            ..PreprocessConfig::default()
        };
        let ct = clip_rescale_ct(&case.ct, &pre)?;
        let stack = one_hot_structures(&case.structures, &CANONICAL_OARS)?;
        let g = case.geometry();
        let shape = Shape::new(g.dims);
        let mut act = Act::zeros(shape, 1 + stack.channels.len());
        let conv = |v: f64| T::from(v).expect("float");
        act.set_interior(0, &ct.values.iter().map(|v| conv(*v)).collect::<Vec<_>>());
        for (c, bits) in stack.channels.iter().enumerate() {
            let v: Vec<T> = bits.iter().map(|b| if *b { T::one() } else { T::zero() }).collect();
            act.set_interior(c + 1, &v);
        }
        Ok(act)
    }

    /// Dose from head values: `prescription * softplus(h)`.
    pub fn dose_from_head(&self, head: &[T], case: &CaseBundle) -> Result<Grid3> {
        let rx = self.config.prescription;
        let values = head.iter().map(|h| rx * softplus(h.to_f64().unwrap_or(f64::NAN))).collect();
        Grid3::new(case.geometry(), values, Unit::Gy)
    }

    /// Loss and parameter gradient on one case. Returns the tape's loss breakdown.
    pub fn loss_and_grad(
        &self,
        case: &CaseBundle,
        loss: &LossConfig,
        train_rng: Option<&mut rng::Rng>,
    ) -> Result<(LossValueGrad, Vec<T>)> {
        let tape = self.forward(self.inputs(case)?, train_rng)?;
        let head = tape.head();
        let pred = self.dose_from_head(&head, case)?;
        let lg = total_loss_grad(&pred, &case.dose, &case.structures, loss)?;
        let rx = self.config.prescription;
        let g_head: Vec<T> = head
            .iter()
            .zip(&lg.grad.values)
            .map(|(h, g)| T::from(g * rx * logistic(h.to_f64().unwrap_or(f64::NAN))).expect("float"))
            .collect();
        let gp = self.backward(&tape, &g_head)?;
        Ok((lg, gp))
    }

    /// Loss value only (no dropout).
    pub fn loss(&self, case: &CaseBundle, loss: &LossConfig) -> Result<f64> {
        let tape = self.forward(self.inputs(case)?, None)?;
        let pred = self.dose_from_head(&tape.head(), case)?;
        Ok(total_loss_grad(&pred, &case.dose, &case.structures, loss)?.value)
    }

    pub fn predict_dose(&self, case: &CaseBundle) -> Result<Grid3> {
        let tape = self.forward(self.inputs(case)?, None)?;
        self.dose_from_head(&tape.head(), case)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn micro() -> ModelConfig {
        ModelConfig {
            base_filters: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_counts() {
        let (convs, n) = layout(&ModelConfig::default());
        // 3 levels of 2 encoder convs, 2 decoder levels of 3 convs, 1 head.
        assert_eq!(convs.len(), 6 + 6 + 1);
        let total: usize = convs.iter().map(|c| c.w_len() + c.cout).sum();
        assert_eq!(total, n);
        assert_eq!(convs[0].cin, 7);
        assert_eq!(convs.last().unwrap().cout, 1);
    }

    #[test]
    fn zero_params_give_constant_output() {
        let case = generate_phantom(&PhantomSpec::new(1, [8, 8, 8])).unwrap();
        let net = Network::<f32>::zeros(micro()).unwrap();
        let tape = net.forward(net.inputs(&case).unwrap(), None).unwrap();
        let head = tape.head();
        assert_eq!(head.len(), 512);
        assert!(head.iter().all(|h| *h == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let case = generate_phantom(&PhantomSpec::new(2, [16, 16, 16])).unwrap();
        let net = Network::<f32>::new(ModelConfig::default(), 3).unwrap();
        let a = net.predict_dose(&case).unwrap();
        let b = net.predict_dose(&case).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.geometry, case.dose.geometry);
        let mean = a.values.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 30.0).abs() < 1.0, "{mean}");
    }

    #[test]
    fn rejects_indivisible_dims() {
        let case = generate_phantom(&PhantomSpec::new(2, [12, 12, 10])).unwrap();
        let net = Network::<f32>::new(ModelConfig::default(), 3).unwrap();
        assert!(matches!(net.predict_dose(&case), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let case = generate_phantom(&PhantomSpec::new(4, [8, 8, 8])).unwrap();
        let net = Network::<f64>::new(micro(), 1).unwrap();
        let tape = net.forward(net.inputs(&case).unwrap(), None).unwrap();
        let g = net.backward(&tape, &vec![0.0; 512]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_relu_passes_no_gradient() {
        // Make the first conv's first filter always negative: its weights and bias
        // get no gradient.
        let case = generate_phantom(&PhantomSpec::new(4, [8, 8, 8])).unwrap();
        let mut net = Network::<f64>::new(micro(), 1).unwrap();
        let c = net.convs[0];
        for p in &mut net.params[c.w_off..c.w_off + c.cin * 27] {
            *p = 0.0;
        }
        net.params[c.b_off] = -1.0;
        let (_, g) = net.loss_and_grad(&case, &LossConfig::mae(), None).unwrap();
        assert!(g[c.w_off..c.w_off + c.cin * 27].iter().all(|v| *v == 0.0));
        assert_eq!(g[c.b_off], 0.0);
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
