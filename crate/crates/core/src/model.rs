//! Full network assembly: two unimodal encoders, the alignment dynamics
//! learner, bimodal cross-attention fusion in both directions, the output
//! head, and the three losses (main, fitting, contrastive).

use ndarray::{Array1, Axis};
use rand_chacha::ChaCha8Rng;

use crate::adl::{impute, impute_backward, reconstruct_plan, FitterParams};
use crate::encoder::{
    cross_attend_stack, cross_attend_stack_backward, EncodeCache, EncoderParams, LayerCache,
    LnVariant, ModalitySequence, SharedRepr, TransformerLayer,
};
use crate::error::{Error, Result};
use crate::numerics::{softmax_row, GradPair, Linear, Matrix, Parameterized};
use crate::ot_align::AlignmentPlan;

/// Prediction target flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Task {
    Regression,
    /// Cross-entropy over `classes` logits (the 7-class emotion mode).
    Classification { classes: usize },
}

/// Architecture hyperparameters; persisted in checkpoints.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_in1: usize,
    pub d_in2: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub enc_layers: usize,
    pub fusion_layers: usize,
    pub max_len: usize,
    pub window: usize,
    pub head_hidden: usize,
    pub task: Task,
    pub ln_variant: LnVariant,
    /// Renormalize decoded plan columns before imputation.
    pub col_renorm: bool,
    /// Initialize both modality encoders with identical weights (requires
    /// d_in1 == d_in2). Gives the shared space a common starting geometry so
    /// raw transport targets carry cross-modal structure from epoch one.
    #[serde(default)]
    pub tied_encoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in1: 8,
            d_in2: 8,
            d_model: 32,
            d_ff: 64,
            num_heads: 4,
            enc_layers: 1,
            fusion_layers: 2,
            max_len: 64,
            window: 8,
            head_hidden: 32,
            task: Task::Regression,
            ln_variant: LnVariant::PaperEq3,
            col_renorm: true,
            tied_encoders: false,
        }
    }
}

impl ModelConfig {
    pub fn output_dim(&self) -> usize {
        match self.task {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        }
    }
}

/// Model output: a scalar for regression, logits for classification.
#[derive(Debug, Clone)]
pub enum Prediction {
    Regression(f64),
    Logits(Vec<f64>),
}

impl Prediction {
    pub fn scalar(&self) -> f64 {
        match self {
            Prediction::Regression(v) => *v,
            Prediction::Logits(_) => panic!("classification prediction has no scalar"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Prediction::Regression(v) => v.is_finite(),
            Prediction::Logits(l) => l.iter().all(|v| v.is_finite()),
        }
    }

    pub fn argmax(&self) -> usize {
        match self {
            Prediction::Regression(_) => 0,
            Prediction::Logits(l) => {
                let mut best = 0;
                for (i, v) in l.iter().enumerate() {
                    if *v > l[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }
}

/// Label: a real value or a class index.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum Label {
    Value(f64),
    Class(usize),
}

impl Label {
    pub fn value(&self) -> f64 {
        match self {
            Label::Value(v) => *v,
            Label::Class(c) => *c as f64,
        }
    }
}

/// All trainable parameters, partitioned into the backbone
/// (encoders + fusion + output head) and the fitter.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub enc1: EncoderParams,
    pub enc2: EncoderParams,
    pub fus12: Vec<TransformerLayer>,
    pub fus21: Vec<TransformerLayer>,
    pub head1: Linear,
    pub head2: Linear,
    pub fitter: FitterParams,
}

impl ModelParams {
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let enc1 = EncoderParams::new(
            cfg.d_in1,
            cfg.d_model,
            cfg.d_ff,
            cfg.num_heads,
            cfg.enc_layers,
            cfg.max_len,
            cfg.ln_variant,
            rng,
        )?;
        let enc2 = if cfg.tied_encoders {
            if cfg.d_in1 != cfg.d_in2 {
                return Err(Error::Config(format!(
                    "tied encoders need d_in1 == d_in2, got {} and {}",
                    cfg.d_in1, cfg.d_in2
                )));
            }
            enc1.clone()
        } else {
            EncoderParams::new(
                cfg.d_in2,
                cfg.d_model,
                cfg.d_ff,
                cfg.num_heads,
                cfg.enc_layers,
                cfg.max_len,
                cfg.ln_variant,
                rng,
            )?
        };
        let mk_stack = |rng: &mut ChaCha8Rng| -> Result<Vec<TransformerLayer>> {
            (0..cfg.fusion_layers)
                .map(|_| {
                    TransformerLayer::new(cfg.d_model, cfg.d_ff, cfg.num_heads, cfg.ln_variant, rng)
                })
                .collect()
        };
        let fus12 = mk_stack(rng)?;
        let fus21 = mk_stack(rng)?;
        let head1 = Linear::new(2 * cfg.d_model, cfg.head_hidden, rng);
        let head2 = Linear::new(cfg.head_hidden, cfg.output_dim(), rng);
        let fitter = FitterParams::new(cfg.d_model, cfg.d_model, cfg.window, rng);
        Ok(ModelParams {
            cfg,
            enc1,
            enc2,
            fus12,
            fus21,
            head1,
            head2,
            fitter,
        })
    }

    /// Visit backbone parameters only (theta).
    pub fn visit_backbone(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        self.enc1
            .visit_params(&mut |name, p| f(&format!("enc1.{name}"), p));
        self.enc2
            .visit_params(&mut |name, p| f(&format!("enc2.{name}"), p));
        for (i, layer) in self.fus12.iter_mut().enumerate() {
            layer.visit_params(&mut |name, p| f(&format!("fus12.{i}.{name}"), p));
        }
        for (i, layer) in self.fus21.iter_mut().enumerate() {
            layer.visit_params(&mut |name, p| f(&format!("fus21.{i}.{name}"), p));
        }
        self.head1
            .visit_params(&mut |name, p| f(&format!("head1.{name}"), p));
        self.head2
            .visit_params(&mut |name, p| f(&format!("head2.{name}"), p));
    }

    /// Visit fitter parameters only (psi).
    pub fn visit_fitter(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        self.fitter
            .visit_params(&mut |name, p| f(&format!("fitter.{name}"), p));
    }

    fn head_forward(&self, z12: &SharedRepr, z21: &SharedRepr) -> (Prediction, HeadCache) {
        let d = self.cfg.d_model;
        let mut concat = Matrix::zeros((1, 2 * d));
        for j in 0..d {
            concat[[0, j]] = z12.values[[0, j]];
            concat[[0, d + j]] = z21.values[[0, j]];
        }
        let pre = self.head1.forward(&concat);
        let act = pre.mapv(f64::tanh);
        let out = self.head2.forward(&act);
        let pred = match self.cfg.task {
            Task::Regression => Prediction::Regression(out[[0, 0]]),
            Task::Classification { .. } => Prediction::Logits(out.row(0).to_vec()),
        };
        (pred, HeadCache { concat, pre, act })
    }

    fn head_backward(&mut self, cache: &HeadCache, dout: &[f64]) -> (Array1<f64>, Array1<f64>) {
        let dmat = Matrix::from_shape_vec((1, dout.len()), dout.to_vec()).expect("row");
        let dact = self.head2.backward(&cache.act, &dmat);
        let dpre = &dact * &cache.pre.mapv(|v| 1.0 - v.tanh() * v.tanh());
        let dconcat = self.head1.backward(&cache.concat, &dpre);
        let d = self.cfg.d_model;
        let dz12_head = dconcat.row(0).slice(ndarray::s![..d]).to_owned();
        let dz21_head = dconcat.row(0).slice(ndarray::s![d..]).to_owned();
        (dz12_head, dz21_head)
    }

    /// Complete-split forward: encode both modalities, fuse in both
    /// directions, apply the output head. Returns the prediction, both shared
    /// representations and the cache for `backward_complete`.
    pub fn forward_complete(
        &self,
        x1: &ModalitySequence,
        x2: &ModalitySequence,
    ) -> Result<(Prediction, SharedRepr, SharedRepr, CompleteCache)> {
        if x1.len() != x2.len() {
            return Err(Error::Dimension(format!(
                "modality lengths differ: {} vs {} (alignment precondition)",
                x1.len(),
                x2.len()
            )));
        }
        let (z1, c1) = self.enc1.encode(x1)?;
        let (z2, c2) = self.enc2.encode(x2)?;
        let (z21, fc21) = cross_attend_stack(&self.fus21, &z1, &z2)?;
        let (z12, fc12) = cross_attend_stack(&self.fus12, &z2, &z1)?;
        let (pred, hc) = self.head_forward(&z12, &z21);
        Ok((
            pred,
            z1.clone(),
            z2.clone(),
            CompleteCache {
                enc1: c1,
                enc2: c2,
                fus12: fc12,
                fus21: fc21,
                head: hc,
                z1,
                z2,
            },
        ))
    }

    /// Backward of the complete path. `d_pred` is the loss gradient on the
    /// model output (one entry per output dim); `d_z1` / `d_z2` are optional
    /// extra gradients on the full shared representations (contrastive term).
    pub fn backward_complete(
        &mut self,
        cache: &CompleteCache,
        d_pred: &[f64],
        d_z1_extra: Option<&Matrix>,
        d_z2_extra: Option<&Matrix>,
    ) {
        let (dz12_head, dz21_head) = self.head_backward(&cache.head, d_pred);
        let mut dz12 = Matrix::zeros(cache.z2.values.raw_dim());
        dz12.row_mut(0).assign(&dz12_head);
        let mut dz21 = Matrix::zeros(cache.z1.values.raw_dim());
        dz21.row_mut(0).assign(&dz21_head);
        let (dz2_t, dz1_s) = cross_attend_stack_backward(&mut self.fus12, &cache.fus12, &dz12);
        let (dz1_t, dz2_s) = cross_attend_stack_backward(&mut self.fus21, &cache.fus21, &dz21);
        let mut dz1 = dz1_t + dz1_s;
        let mut dz2 = dz2_t + dz2_s;
        if let Some(extra) = d_z1_extra {
            dz1 += extra;
        }
        if let Some(extra) = d_z2_extra {
            dz2 += extra;
        }
        self.enc1.backward(&cache.enc1, &dz1);
        self.enc2.backward(&cache.enc2, &dz2);
    }

    /// Missing-split forward: encode the surviving modality, decode a plan
    /// via the fitter (treated as constant), impute the victim modality in
    /// the shared space, fuse and predict. Never reads an `x2`.
    pub fn forward_missing(
        &self,
        x1: &ModalitySequence,
        mode: ImputeMode,
    ) -> Result<(Prediction, MissingCache)> {
        let (z1, c1) = self.enc1.encode(x1)?;
        let plan = match mode {
            ImputeMode::Adl => {
                let (pred, _) = self.fitter.fit_predict(&z1)?;
                Some(reconstruct_plan(&pred, self.cfg.col_renorm)?)
            }
            ImputeMode::Zero => None,
        };
        let z2hat = match &plan {
            Some(p) => impute(p, &z1, self.enc2.cls.value.row(0))?,
            None => {
                let mut values = Matrix::zeros((z1.values.nrows(), self.cfg.d_model));
                values.row_mut(0).assign(&self.enc2.cls.value.row(0));
                SharedRepr { values }
            }
        };
        let (z21, fc21) = cross_attend_stack(&self.fus21, &z1, &z2hat)?;
        let (z12, fc12) = cross_attend_stack(&self.fus12, &z2hat, &z1)?;
        let (pred, hc) = self.head_forward(&z12, &z21);
        Ok((
            pred,
            MissingCache {
                enc1: c1,
                plan,
                fus12: fc12,
                fus21: fc21,
                head: hc,
                z1,
            },
        ))
    }

    /// Backward of the missing path (theta step of the missing split). The
    /// decoded plan is constant; gradient flows to the surviving encoder both
    /// directly and through the linear imputation, and to the victim
    /// encoder's head-token embedding.
    pub fn backward_missing(&mut self, cache: &MissingCache, d_pred: &[f64]) {
        let (dz12_head, dz21_head) = self.head_backward(&cache.head, d_pred);
        let rows = cache.z1.values.nrows();
        let d = self.cfg.d_model;
        let mut dz12 = Matrix::zeros((rows, d));
        dz12.row_mut(0).assign(&dz12_head);
        let mut dz21 = Matrix::zeros((rows, d));
        dz21.row_mut(0).assign(&dz21_head);
        let (dz2hat_t, dz1_s) = cross_attend_stack_backward(&mut self.fus12, &cache.fus12, &dz12);
        let (dz1_t, dz2hat_s) = cross_attend_stack_backward(&mut self.fus21, &cache.fus21, &dz21);
        let mut dz1 = dz1_t + dz1_s;
        let dz2hat = dz2hat_t + dz2hat_s;
        match &cache.plan {
            Some(plan) => {
                let (dz1_content, dcls) = impute_backward(plan, &dz2hat);
                let mut slice = dz1.slice_mut(ndarray::s![1.., ..]);
                slice += &dz1_content;
                let mut cg = self.enc2.cls.grad.row_mut(0);
                cg += &dcls;
            }
            None => {
                let mut cg = self.enc2.cls.grad.row_mut(0);
                cg += &dz2hat.row(0);
            }
        }
        self.enc1.backward(&cache.enc1, &dz1);
    }
}

impl Parameterized for ModelParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        // Exact partition: every trainable value is in the backbone or the
        // fitter, never both.
        self.visit_backbone(f);
        self.visit_fitter(f);
    }
}

/// How the decoding path fills the victim modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ImputeMode {
    /// Fitter-decoded alignment plan combined with the surviving sequence.
    Adl,
    /// Zero content representation (diagnostic baseline).
    Zero,
}

pub struct HeadCache {
    concat: Matrix,
    pre: Matrix,
    act: Matrix,
}

pub struct CompleteCache {
    enc1: EncodeCache,
    enc2: EncodeCache,
    fus12: Vec<LayerCache>,
    fus21: Vec<LayerCache>,
    head: HeadCache,
    pub z1: SharedRepr,
    pub z2: SharedRepr,
}

pub struct MissingCache {
    enc1: EncodeCache,
    pub plan: Option<AlignmentPlan>,
    fus12: Vec<LayerCache>,
    fus21: Vec<LayerCache>,
    head: HeadCache,
    pub z1: SharedRepr,
}

/// Main-task loss and its gradient on the model output.
pub fn main_loss(pred: &Prediction, label: &Label, task: Task) -> Result<(f64, Vec<f64>)> {
    match (task, pred, label) {
        (Task::Regression, Prediction::Regression(yhat), Label::Value(y)) => {
            let diff = yhat - y;
            Ok((diff * diff, vec![2.0 * diff]))
        }
        (Task::Classification { classes }, Prediction::Logits(logits), Label::Class(c)) => {
            if *c >= classes {
                return Err(Error::Label(format!("class index {c} out of range {classes}")));
            }
            let row = Array1::from_vec(logits.clone());
            let probs = softmax_row(row.view(), None)?;
            let loss = -probs[*c].max(1e-300).ln();
            let mut grad: Vec<f64> = probs.to_vec();
            grad[*c] -= 1.0;
            Ok((loss, grad))
        }
        _ => Err(Error::Label(
            "prediction/label kind does not match the task".into(),
        )),
    }
}

/// Batch InfoNCE over pooled representations with temperature `tau`.
/// Returns the loss and the gradients on each pooled vector pair.
pub fn contrastive_loss_grad(
    pooled1: &[Array1<f64>],
    pooled2: &[Array1<f64>],
    tau: f64,
) -> Result<(f64, Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    if pooled1.len() != pooled2.len() || pooled1.is_empty() {
        return Err(Error::Dimension(format!(
            "contrastive batch sizes {} vs {}",
            pooled1.len(),
            pooled2.len()
        )));
    }
    let n = pooled1.len();
    let dim = pooled1[0].len();
    let mut scores = Matrix::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            scores[[i, j]] = pooled1[i].dot(&pooled2[j]) / tau;
        }
    }
    let mut loss = 0.0;
    let mut dscores = Matrix::zeros((n, n));
    for i in 0..n {
        let probs = softmax_row(scores.row(i), None)?;
        loss += -probs[i].max(1e-300).ln();
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            dscores[[i, j]] = -(delta - probs[j]) / (n as f64 * tau);
        }
    }
    loss /= n as f64;
    let mut d1 = vec![Array1::<f64>::zeros(dim); n];
    let mut d2 = vec![Array1::<f64>::zeros(dim); n];
    for i in 0..n {
        for j in 0..n {
            let g = dscores[[i, j]];
            if g != 0.0 {
                d1[i].scaled_add(g, &pooled2[j]);
                d2[j].scaled_add(g, &pooled1[i]);
            }
        }
    }
    Ok((loss, d1, d2))
}

pub fn contrastive_loss(
    pooled1: &[Array1<f64>],
    pooled2: &[Array1<f64>],
    tau: f64,
) -> Result<f64> {
    contrastive_loss_grad(pooled1, pooled2, tau).map(|(l, _, _)| l)
}

/// Spread a pooled-vector gradient back onto the content rows of a shared
/// representation (mean pooling backward).
pub fn pool_backward(dpooled: &Array1<f64>, rows: usize) -> Matrix {
    let l = rows - 1;
    let mut out = Matrix::zeros((rows, dpooled.len()));
    let scaled = dpooled / l as f64;
    for mut r in out.slice_mut(ndarray::s![1.., ..]).axis_iter_mut(Axis(0)) {
        r.assign(&scaled);
    }
    out
}

/// Backbone over a single modality: encoder plus the two-layer head on the
/// head-token embedding. The supervised-single (lower bound) reference model.
#[derive(Debug, Clone)]
pub struct SingleModel {
    pub cfg: ModelConfig,
    pub enc: EncoderParams,
    pub head1: Linear,
    pub head2: Linear,
}

pub struct SingleCache {
    enc: EncodeCache,
    head: HeadCache,
    rows: usize,
}

impl SingleModel {
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let enc = EncoderParams::new(
            cfg.d_in1,
            cfg.d_model,
            cfg.d_ff,
            cfg.num_heads,
            cfg.enc_layers,
            cfg.max_len,
            cfg.ln_variant,
            rng,
        )?;
        let head1 = Linear::new(cfg.d_model, cfg.head_hidden, rng);
        let head2 = Linear::new(cfg.head_hidden, cfg.output_dim(), rng);
        Ok(SingleModel {
            cfg,
            enc,
            head1,
            head2,
        })
    }

    pub fn forward(&self, x1: &ModalitySequence) -> Result<(Prediction, SingleCache)> {
        let (z, cache) = self.enc.encode(x1)?;
        let head_in = z.values.slice(ndarray::s![0..1, ..]).to_owned();
        let pre = self.head1.forward(&head_in);
        let act = pre.mapv(f64::tanh);
        let out = self.head2.forward(&act);
        let pred = match self.cfg.task {
            Task::Regression => Prediction::Regression(out[[0, 0]]),
            Task::Classification { .. } => Prediction::Logits(out.row(0).to_vec()),
        };
        Ok((
            pred,
            SingleCache {
                enc: cache,
                head: HeadCache {
                    concat: head_in,
                    pre,
                    act,
                },
                rows: z.values.nrows(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &SingleCache, d_pred: &[f64]) {
        let dmat = Matrix::from_shape_vec((1, d_pred.len()), d_pred.to_vec()).expect("row");
        let dact = self.head2.backward(&cache.head.act, &dmat);
        let dpre = &dact * &cache.head.pre.mapv(|v| 1.0 - v.tanh() * v.tanh());
        let dhead_in = self.head1.backward(&cache.head.concat, &dpre);
        let mut dz = Matrix::zeros((cache.rows, self.cfg.d_model));
        dz.row_mut(0).assign(&dhead_in.row(0));
        self.enc.backward(&cache.enc, &dz);
    }
}

impl Parameterized for SingleModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        self.enc
            .visit_params(&mut |name, p| f(&format!("enc.{name}"), p));
        self.head1
            .visit_params(&mut |name, p| f(&format!("head1.{name}"), p));
        self.head2
            .visit_params(&mut |name, p| f(&format!("head2.{name}"), p));
    }
}
