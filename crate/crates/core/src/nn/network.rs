use std::sync::Arc;

use rand::Rng;

use crate::batch::{Input, LabeledBatch, Record};
use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::rng::{rng_from_seed, SimRng};

use super::model::{bias_id, embedding_id, weight_id, Activation, LayerSpec, ModelSpec};

/// Whether dropout layers sample masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Masks drawn from a generator seeded with `seed`, example by example.
    Train { seed: u64 },
    Off,
}

#[derive(Debug, Clone)]
enum Plan {
    Dense { input: usize, output: usize, relu: bool, w: usize, b: usize },
    EmbedBag { vocab: usize, dim: usize, e: usize },
    Dropout { p: f64 },
}

/// Intermediate values of one example's forward pass.
struct Trace {
    /// `outs[i]` is the output of layer `i`.
    outs: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per layer (empty when not a dropout layer or mode is off).
    masks: Vec<Vec<f64>>,
}

/// A compiled [`ModelSpec`] with parameter offsets resolved.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    layout: Arc<Layout>,
    plan: Vec<Plan>,
}

/// Locally held property classifier attached to the penultimate representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyHead {
    /// Row-major `[2, width]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PropertyHead {
    pub fn init(width: usize, seed: u64) -> Self {
        let s = (6.0 / (width + 2) as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        Self { weights: (0..2 * width).map(|_| rng.random_range(-s..=s)).collect(), bias: vec![0.0; 2] }
    }

    pub fn width(&self) -> usize {
        self.weights.len() / 2
    }
}

/// Result of a joint main-task/property-task backward pass.
#[derive(Debug, Clone)]
pub struct MultiTaskGrads {
    pub main_loss: f64,
    pub property_loss: f64,
    /// Gradient of `alpha * L_main + (1 - alpha) * L_prop` w.r.t. the joint model.
    pub grads: ParamVector,
    /// Gradient of the unweighted property loss w.r.t. the head.
    pub head: PropertyHead,
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(spec.layout());
        let offset = |id: String| layout.find(&id).expect("segment from own layout").offset;
        let plan = spec
            .param_ordinals()
            .map(|(ord, layer)| match *layer {
                LayerSpec::Dense { input, output, act } => Plan::Dense {
                    input,
                    output,
                    relu: act == Activation::Relu,
                    w: offset(weight_id(ord)),
                    b: offset(bias_id(ord)),
                },
                LayerSpec::EmbedBag { vocab, dim } => Plan::EmbedBag { vocab, dim, e: offset(embedding_id(ord)) },
                LayerSpec::Dropout { p } => Plan::Dropout { p },
            })
            .collect();
        Ok(Self { spec: spec.clone(), layout, plan })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        let p = self.spec.init_params(seed)?;
        ParamVector::from_values(self.layout.clone(), p.into_values())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if *params.layout().as_ref() != *self.layout {
            return Err(Error::DimensionMismatch("parameters do not match the model layout".into()));
        }
        Ok(())
    }

    fn check_record(&self, r: &Record) -> Result<()> {
        if r.label >= self.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "label {} outside [0, {})",
                r.label,
                self.num_classes()
            )));
        }
        match (&self.plan[0], &r.input) {
            (Plan::Dense { input, .. }, Input::Dense(x)) if x.len() == *input => Ok(()),
            (Plan::Dense { input, .. }, Input::Dense(x)) => {
                Err(Error::DimensionMismatch(format!("input width {} but model expects {input}", x.len())))
            }
            (Plan::EmbedBag { vocab, .. }, Input::Tokens(t)) => {
                if t.is_empty() {
                    return Err(Error::DimensionMismatch("example has no tokens".into()));
                }
                match t.iter().find(|&&tok| tok as usize >= *vocab) {
                    Some(tok) => Err(Error::DimensionMismatch(format!("token {tok} outside vocabulary of {vocab}"))),
                    None => Ok(()),
                }
            }
            _ => Err(Error::DimensionMismatch("input mode does not match the model's first layer".into())),
        }
    }

    fn check_batch(&self, batch: &LabeledBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batch.records().iter().try_for_each(|r| self.check_record(r))
    }

    fn forward(&self, p: &[f64], input: &Input, rng: Option<&mut SimRng>) -> Trace {
        let mut rng = rng;
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.plan.len());
        let mut masks = Vec::with_capacity(self.plan.len());
        for (i, layer) in self.plan.iter().enumerate() {
            let mut mask = Vec::new();
            let out = match *layer {
                Plan::EmbedBag { dim, e, .. } => {
                    let toks = input.as_tokens().expect("checked mode");
                    let mut h = vec![0.0; dim];
                    for &t in toks {
                        let row = &p[e + t as usize * dim..e + (t as usize + 1) * dim];
                        h.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    let inv = 1.0 / toks.len() as f64;
                    h.iter_mut().for_each(|a| *a *= inv);
                    h
                }
                Plan::Dense { input: n_in, output, relu, w, b } => {
                    let x: &[f64] = if i == 0 {
                        match input {
                            Input::Dense(x) => x,
                            Input::Tokens(_) => unreachable!("checked mode"),
                        }
                    } else {
                        &outs[i - 1]
                    };
                    (0..output)
                        .map(|j| {
                            let row = &p[w + j * n_in..w + (j + 1) * n_in];
                            let z = p[b + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                            if relu && z <= 0.0 {
                                0.0
                            } else {
                                z
                            }
                        })
                        .collect()
                }
                Plan::Dropout { p: drop } => {
                    let prev = &outs[i - 1];
                    match rng.as_deref_mut() {
                        Some(r) if drop > 0.0 => {
                            let keep = 1.0 / (1.0 - drop);
                            mask = (0..prev.len()).map(|_| if r.random::<f64>() < drop { 0.0 } else { keep }).collect();
                            prev.iter().zip(&mask).map(|(a, m)| a * m).collect()
                        }
                        _ => prev.clone(),
                    }
                }
            };
            outs.push(out);
            masks.push(mask);
        }
        Trace { outs, masks }
    }

    /// Propagate `g` (gradient w.r.t. the output of layer `hi`) down through
    /// layers `hi..=lo`, accumulating parameter gradients. Returns the
    /// gradient w.r.t. the input of layer `lo` (empty when `lo == 0`).
    fn backward(
        &self,
        p: &[f64],
        input: &Input,
        trace: &Trace,
        mut g: Vec<f64>,
        hi: usize,
        lo: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        for i in (lo..=hi).rev() {
            match self.plan[i] {
                Plan::Dense { input: n_in, output, relu, w, b } => {
                    if relu {
                        for (gj, &o) in g.iter_mut().zip(&trace.outs[i]) {
                            if o <= 0.0 {
                                *gj = 0.0;
                            }
                        }
                    }
                    let x: &[f64] = if i == 0 {
                        match input {
                            Input::Dense(x) => x,
                            Input::Tokens(_) => unreachable!("checked mode"),
                        }
                    } else {
                        &trace.outs[i - 1]
                    };
                    for j in 0..output {
                        let gj = g[j];
                        grads[b + j] += gj;
                        if gj != 0.0 {
                            let row = &mut grads[w + j * n_in..w + (j + 1) * n_in];
                            row.iter_mut().zip(x).for_each(|(a, xv)| *a += gj * xv);
                        }
                    }
                    if i > 0 {
                        let mut below = vec![0.0; n_in];
                        for j in 0..output {
                            let gj = g[j];
                            if gj != 0.0 {
                                let row = &p[w + j * n_in..w + (j + 1) * n_in];
                                below.iter_mut().zip(row).for_each(|(a, wv)| *a += wv * gj);
                            }
                        }
                        g = below;
                    } else {
                        g = Vec::new();
                    }
                }
                Plan::Dropout { .. } => {
                    let mask = &trace.masks[i];
                    if !mask.is_empty() {
                        g.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
                    }
                }
                Plan::EmbedBag { dim, e, .. } => {
                    let toks = input.as_tokens().expect("checked mode");
                    let inv = 1.0 / toks.len() as f64;
                    for &t in toks {
                        let row = &mut grads[e + t as usize * dim..e + (t as usize + 1) * dim];
                        row.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv * inv);
                    }
                    g = Vec::new();
                }
            }
        }
        g
    }

    fn dropout_rng(mode: DropoutMode) -> Option<SimRng> {
        match mode {
            DropoutMode::Train { seed } => Some(rng_from_seed(seed)),
            DropoutMode::Off => None,
        }
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn forward_backward(
        &self,
        params: &ParamVector,
        batch: &LabeledBatch,
        mode: DropoutMode,
    ) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let p = params.as_slice();
        let mut grads = ParamVector::zeros(self.layout.clone());
        let mut rng = Self::dropout_rng(mode);
        let scale = 1.0 / batch.len() as f64;
        let top = self.plan.len() - 1;
        let mut loss = 0.0;
        for rec in batch.records() {
            let trace = self.forward(p, &rec.input, rng.as_mut());
            let (l, mut e) = softmax_xent(&trace.outs[top], rec.label);
            loss += l;
            e.iter_mut().for_each(|v| *v *= scale);
            self.backward(p, &rec.input, &trace, e, top, 0, grads.as_mut_slice());
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((loss, grads))
    }

    /// Gradient of each example's loss on its own, dropout disabled.
    pub fn per_example_grads(&self, params: &ParamVector, batch: &LabeledBatch) -> Result<Vec<ParamVector>> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        batch
            .records()
            .iter()
            .map(|r| {
                let single = LabeledBatch::new(vec![r.clone()], batch.batch_id)?;
                self.forward_backward(params, &single, DropoutMode::Off).map(|(_, g)| g)
            })
            .collect()
    }

    /// Class probabilities for one input with dropout disabled.
    pub fn predict_proba(&self, params: &ParamVector, input: &Input) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_record(&Record { input: input.clone(), label: 0, property: false })?;
        let trace = self.forward(params.as_slice(), input, None);
        Ok(softmax(&trace.outs[self.plan.len() - 1]))
    }

    /// Joint loss `alpha * L(x, y) + (1 - alpha) * L(x, p)` where the property
    /// loss comes from `head` applied to the input of the output layer.
    pub fn multitask_forward_backward(
        &self,
        params: &ParamVector,
        head: &PropertyHead,
        batch: &LabeledBatch,
        alpha: f64,
        mode: DropoutMode,
    ) -> Result<MultiTaskGrads> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha={alpha} outside [0,1]")));
        }
        let top = self.plan.len() - 1;
        if top == 0 {
            return Err(Error::invalid("multi-task training needs a hidden representation"));
        }
        let width = self.spec.penultimate_width();
        if head.width() != width || head.bias.len() != 2 {
            return Err(Error::DimensionMismatch(format!("head width {} vs representation {width}", head.width())));
        }
        let p = params.as_slice();
        let mut grads = ParamVector::zeros(self.layout.clone());
        let mut head_grad = PropertyHead { weights: vec![0.0; 2 * width], bias: vec![0.0; 2] };
        let mut rng = Self::dropout_rng(mode);
        let scale = 1.0 / batch.len() as f64;
        let (mut main_loss, mut prop_loss) = (0.0, 0.0);
        for rec in batch.records() {
            let trace = self.forward(p, &rec.input, rng.as_mut());
            let (l, mut e) = softmax_xent(&trace.outs[top], rec.label);
            main_loss += l;
            e.iter_mut().for_each(|v| *v *= alpha * scale);
            let mut g_h = self.backward(p, &rec.input, &trace, e, top, top, grads.as_mut_slice());

            let h = &trace.outs[top - 1];
            let logits: Vec<f64> = (0..2)
                .map(|c| head.bias[c] + head.weights[c * width..(c + 1) * width].iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let (lp, ep) = softmax_xent(&logits, rec.property as usize);
            prop_loss += lp;
            for c in 0..2 {
                let gc = ep[c] * scale;
                head_grad.bias[c] += gc;
                head_grad.weights[c * width..(c + 1) * width].iter_mut().zip(h).for_each(|(a, hv)| *a += gc * hv);
                let gs = (1.0 - alpha) * gc;
                g_h.iter_mut()
                    .zip(&head.weights[c * width..(c + 1) * width])
                    .for_each(|(a, wv)| *a += gs * wv);
            }
            self.backward(p, &rec.input, &trace, g_h, top - 1, 0, grads.as_mut_slice());
        }
        main_loss *= scale;
        prop_loss *= scale;
        if !(main_loss.is_finite() && prop_loss.is_finite() && grads.is_finite()) {
            return Err(Error::NonFinite("multi-task pass".into()));
        }
        Ok(MultiTaskGrads { main_loss, property_loss: prop_loss, grads, head: head_grad })
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `logits` against `label` and `softmax - onehot`.
fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut e = softmax(logits);
    e[label] -= 1.0;
    (lse - logits[label], e)
}

/// `params - eta * grads`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, eta: f64) -> Result<ParamVector> {
    params.zip_with(grads, |p, g| p - eta * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::Record;
    use crate::params::Layout;

    fn dense(input: usize, output: usize, act: Activation) -> LayerSpec {
        LayerSpec::Dense { input, output, act }
    }

    fn rec(x: Vec<f64>, label: usize) -> Record {
        Record { input: Input::Dense(x), label, property: false }
    }

    fn tok(t: Vec<u32>, label: usize) -> Record {
        Record { input: Input::tokens(t), label, property: false }
    }

    #[test]
    fn zero_params_give_ln2() {
        let net = Network::new(&ModelSpec { layers: vec![dense(2, 2, Activation::Identity)], seed: 0 }).unwrap();
        let params = ParamVector::zeros(net.layout().clone());
        let batch = LabeledBatch::new(vec![rec(vec![0.3, -2.0], 1), rec(vec![5.0, 1.0], 0)], 0).unwrap();
        let (loss, _) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn embedding_rows_touched_only_for_present_tokens() {
        let spec = ModelSpec {
            layers: vec![LayerSpec::EmbedBag { vocab: 10, dim: 3 }, dense(3, 2, Activation::Identity)],
            seed: 0,
        };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(3).unwrap();
        let batch = LabeledBatch::new(vec![tok(vec![2, 5], 0), tok(vec![5], 1)], 0).unwrap();
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        let emb = g.segment("0.embedding").unwrap();
        for row in 0..10 {
            let nonzero = emb[row * 3..row * 3 + 3].iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, row == 2 || row == 5, "row {row}");
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let l = Arc::new(Layout::from_shapes([("w", vec![2])]));
        let p = ParamVector::from_values(l.clone(), vec![1.0, 2.0]).unwrap();
        let g = ParamVector::from_values(l.clone(), vec![0.5, -1.0]).unwrap();
        let out = sgd_step(&p, &g, 0.1).unwrap();
        assert!((out.as_slice()[0] - 0.95).abs() < 1e-15 && (out.as_slice()[1] - 2.1).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
        let g2 = ParamVector::from_values(l.clone(), vec![-0.25, 3.0]).unwrap();
        let two = sgd_step(&sgd_step(&p, &g, 0.1).unwrap(), &g2, 0.1).unwrap();
        let one = sgd_step(&p, &g.add(&g2).unwrap(), 0.1).unwrap();
        assert!(two.max_abs_diff(&one).unwrap() < 1e-15);
        let bad = ParamVector::zeros(Arc::new(Layout::from_shapes([("v", vec![3])])));
        assert!(sgd_step(&p, &bad, 0.1).is_err());
    }

    #[test]
    fn per_example_mean_matches_batch() {
        let spec = ModelSpec {
            layers: vec![dense(3, 5, Activation::Relu), dense(5, 2, Activation::Identity)],
            seed: 0,
        };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(11).unwrap();
        let batch = LabeledBatch::new(
            vec![
                rec(vec![0.1, 0.2, -0.3], 0),
                rec(vec![1.0, -1.0, 0.5], 1),
                rec(vec![0.1, 0.2, -0.3], 0),
                rec(vec![-2.0, 0.3, 0.9], 1),
            ],
            0,
        )
        .unwrap();
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        let each = net.per_example_grads(&params, &batch).unwrap();
        assert_eq!(each.len(), 4);
        assert_eq!(each[0], each[2]);
        let mut mean = g.zeros_like();
        for e in &each {
            mean.axpy(0.25, e).unwrap();
        }
        assert!(mean.max_abs_diff(&g).unwrap() < 1e-10);

        let single = LabeledBatch::new(vec![batch.records()[1].clone()], 0).unwrap();
        let (_, gs) = net.forward_backward(&params, &single, DropoutMode::Off).unwrap();
        assert_eq!(net.per_example_grads(&params, &single).unwrap(), vec![gs]);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let spec = ModelSpec { layers: vec![dense(2, 2, Activation::Identity)], seed: 0 };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(0).unwrap();
        let wrong_width = LabeledBatch::new(vec![rec(vec![1.0, 2.0, 3.0], 0)], 0).unwrap();
        assert!(matches!(
            net.forward_backward(&params, &wrong_width, DropoutMode::Off),
            Err(Error::DimensionMismatch(_))
        ));
        let sparse = LabeledBatch::new(vec![tok(vec![1], 0)], 0).unwrap();
        assert!(net.forward_backward(&params, &sparse, DropoutMode::Off).is_err());
        let mut huge = params.clone();
        huge.as_mut_slice()[0] = f64::MAX;
        let b = LabeledBatch::new(vec![rec(vec![1e300, 1e300], 0)], 0).unwrap();
        assert!(matches!(net.forward_backward(&huge, &b, DropoutMode::Off), Err(Error::NonFinite(_))));
    }

    #[test]
    fn multitask_alpha_one_equals_main_gradient() {
        let spec = ModelSpec {
            layers: vec![dense(3, 4, Activation::Relu), dense(4, 2, Activation::Identity)],
            seed: 0,
        };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(5).unwrap();
        let head = PropertyHead::init(4, 9);
        let mut r = rec(vec![0.5, -0.2, 1.1], 1);
        r.property = true;
        let batch = LabeledBatch::new(vec![r, rec(vec![0.3, 0.3, -1.0], 0)], 0).unwrap();
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        let mt = net.multitask_forward_backward(&params, &head, &batch, 1.0, DropoutMode::Off).unwrap();
        assert!(mt.grads.max_abs_diff(&g).unwrap() < 1e-15);
        assert!(net.multitask_forward_backward(&params, &head, &batch, 1.5, DropoutMode::Off).is_err());
    }
}
