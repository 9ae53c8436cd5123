//! Denoising training loop: warm-up on the complete split, then per epoch a
//! fused pass over complete batches (transport targets, fitter step, backbone
//! step) and a pass over missing batches (imputation, backbone step), with
//! Adam, gradient clipping and early stopping.

use ndarray::Array1;
use rand::seq::SliceRandom;

use crate::adl::{fitting_loss_grad, FitLossMode};
use crate::data::{DatasetSplits, Sample, Setting};
use crate::error::{Error, Result};
use crate::model::{
    contrastive_loss_grad, main_loss, pool_backward, ImputeMode, Label, ModelParams, Prediction,
    SingleModel, Task,
};
use crate::numerics::{seeded_rng, GradPair, Matrix, Parameterized};
use crate::ot_align::{build_cost, sinkhorn, AlignmentPlan, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub eta_main: f64,
    pub eta_fit: f64,
    pub n_b: usize,
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
    pub warm_up_epochs: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Surviving rate of the victim modality.
    pub p: f64,
    pub setting: Setting,
    pub seed: u64,
    pub fit_loss_mode: FitLossMode,
    /// How the missing path fills the victim modality, in training and at
    /// prediction time.
    pub impute_mode: ImputeMode,
    /// Drop the contrastive term (equivalent to lambda = 0).
    pub no_con: bool,
    /// Never update the fitter; decode with its random initialization.
    pub random_fitter: bool,
    /// Run the fitter pass and the backbone pass as two separate sweeps over
    /// the complete split instead of one fused loop.
    pub split_loop: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta_main: 1e-3,
            eta_fit: 5e-4,
            n_b: 32,
            lambda: 0.1,
            mu: 0.1,
            tau: 0.1,
            warm_up_epochs: 1,
            patience: 10,
            max_epochs: 50,
            p: 0.1,
            setting: Setting::A,
            seed: 7,
            fit_loss_mode: FitLossMode::Mse,
            impute_mode: ImputeMode::Adl,
            no_con: false,
            random_fitter: false,
            split_loop: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn effective_lambda(&self) -> f64 {
        if self.no_con {
            0.0
        } else {
            self.lambda
        }
    }
}

/// Adam with global gradient-norm clipping over whatever parameter subset the
/// caller's visitor exposes. Moment buffers are keyed by visit position, so
/// the visit order must stay fixed across steps.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            clip: cfg.grad_clip,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<F>(&mut self, lr: f64, mut visit: F) -> Result<()>
    where
        F: FnMut(&mut dyn FnMut(&str, &mut GradPair)),
    {
        let mut sq = 0.0;
        let mut bad: Option<String> = None;
        visit(&mut |name, p| {
            for g in p.grad.iter() {
                if !g.is_finite() {
                    bad.get_or_insert_with(|| name.to_string());
                }
                sq += g * g;
            }
        });
        if let Some(name) = bad {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {name}"
            )));
        }
        let norm = sq.sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, t) = (self.beta1, self.beta2, self.eps, self.t);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0usize;
        visit(&mut |_, p| {
            if t == 1 {
                ms.push(Matrix::zeros(p.value.raw_dim()));
                vs.push(Matrix::zeros(p.value.raw_dim()));
            }
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            for ((g, m), (v, w)) in p
                .grad
                .iter()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(p.value.iter_mut()))
            {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

/// Per-epoch record, written as one JSONL line of the training log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub main_loss: f64,
    pub fit_loss: f64,
    pub con_loss: f64,
    pub missing_main_loss: f64,
    pub val_metric: f64,
    pub psi_steps: usize,
    pub theta_steps: usize,
    pub missing_steps: usize,
    pub skipped_batches: usize,
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn batches(ids: &[usize], n_b: usize) -> Vec<Vec<usize>> {
    ids.chunks(n_b.max(1)).map(|c| c.to_vec()).collect()
}

fn shuffled_indices(n: usize, seed: u64, tag: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, tag);
    idx.shuffle(&mut rng);
    idx
}

/// Transport target for one complete sample: Sinkhorn on the cosine cost
/// between the two contents of the shared space. A conditioning failure
/// bubbles up so the caller can skip the batch.
fn sinkhorn_target(
    z1: &crate::encoder::SharedRepr,
    z2: &crate::encoder::SharedRepr,
    window: usize,
    mu: f64,
) -> Result<AlignmentPlan> {
    let cost = build_cost(&z1.content(), &z2.content(), window)?;
    Ok(sinkhorn(&cost, mu, DEFAULT_TOL, DEFAULT_MAX_ITER)?.plan)
}

struct PhaseTotals {
    main: f64,
    fit: f64,
    con: f64,
    missing: f64,
    psi_steps: usize,
    theta_steps: usize,
    missing_steps: usize,
    skipped: usize,
    main_count: usize,
    fit_count: usize,
    missing_count: usize,
}

impl PhaseTotals {
    fn new() -> Self {
        PhaseTotals {
            main: 0.0,
            fit: 0.0,
            con: 0.0,
            missing: 0.0,
            psi_steps: 0,
            theta_steps: 0,
            missing_steps: 0,
            skipped: 0,
            main_count: 0,
            fit_count: 0,
            missing_count: 0,
        }
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    opt_theta: Adam,
    opt_psi: Adam,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig) -> Self {
        Trainer {
            cfg,
            opt_theta: Adam::new(cfg),
            opt_psi: Adam::new(cfg),
        }
    }

    /// Fitter update on one complete batch. Forward passes are recomputed
    /// here so the split-loop mode can run it as an independent sweep.
    fn psi_step(
        &mut self,
        model: &mut ModelParams,
        batch: &[&Sample],
        totals: &mut PhaseTotals,
    ) -> Result<bool> {
        if self.cfg.random_fitter {
            return Ok(true);
        }
        let mut fit_total = 0.0;
        let mut entries = Vec::with_capacity(batch.len());
        for s in batch {
            let x2 = s.x2.as_ref().expect("complete batch");
            let (z1, _) = model.enc1.encode(&s.x1)?;
            let (z2, _) = model.enc2.encode(x2)?;
            let target = match sinkhorn_target(&z1, &z2, model.cfg.window, self.cfg.mu) {
                Ok(t) => t,
                Err(Error::Conditioning(_)) => {
                    totals.skipped += 1;
                    return Ok(false);
                }
                Err(e) => return Err(e),
            };
            entries.push((z1, target));
        }
        model.fitter.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        for (z1, target) in &entries {
            let (pred, cache) = model.fitter.fit_predict(z1)?;
            let (loss, grad) = fitting_loss_grad(&pred, target, self.cfg.fit_loss_mode)?;
            fit_total += loss;
            model.fitter.backward(&cache, &grad.mapv(|g| g * scale));
        }
        self.opt_psi
            .step(self.cfg.eta_fit, |f| model.visit_fitter(f))?;
        totals.fit += fit_total * scale;
        totals.fit_count += 1;
        totals.psi_steps += 1;
        Ok(true)
    }

    /// Backbone update on one complete batch: main loss plus the weighted
    /// contrastive term over pooled representations.
    fn theta_step_complete(
        &mut self,
        model: &mut ModelParams,
        batch: &[&Sample],
        totals: &mut PhaseTotals,
    ) -> Result<()> {
        let lambda = self.cfg.effective_lambda();
        let b = batch.len();
        let mut caches = Vec::with_capacity(b);
        let mut pooled1: Vec<Array1<f64>> = Vec::with_capacity(b);
        let mut pooled2: Vec<Array1<f64>> = Vec::with_capacity(b);
        let mut dpreds = Vec::with_capacity(b);
        let mut main_total = 0.0;
        for s in batch {
            let x2 = s.x2.as_ref().expect("complete batch");
            let (pred, z1, z2, cache) = model.forward_complete(&s.x1, x2)?;
            let (loss, dpred) = main_loss(&pred, &s.y, model.cfg.task)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite main loss on sample {}",
                    s.id
                )));
            }
            main_total += loss;
            dpreds.push(dpred);
            pooled1.push(z1.mean_pool());
            pooled2.push(z2.mean_pool());
            caches.push(cache);
        }
        let (con_loss, d1, d2) = if lambda > 0.0 && b > 1 {
            let (l, d1, d2) = contrastive_loss_grad(&pooled1, &pooled2, self.cfg.tau)?;
            (l, Some(d1), Some(d2))
        } else {
            (0.0, None, None)
        };
        model.zero_grads();
        let scale = 1.0 / b as f64;
        for (i, cache) in caches.iter().enumerate() {
            let dpred: Vec<f64> = dpreds[i].iter().map(|g| g * scale).collect();
            let rows = cache.z1.values.nrows();
            let extras = match (&d1, &d2) {
                (Some(d1), Some(d2)) => Some((
                    pool_backward(&d1[i].mapv(|g| g * lambda), rows),
                    pool_backward(&d2[i].mapv(|g| g * lambda), rows),
                )),
                _ => None,
            };
            match &extras {
                Some((e1, e2)) => model.backward_complete(cache, &dpred, Some(e1), Some(e2)),
                None => model.backward_complete(cache, &dpred, None, None),
            }
        }
        self.opt_theta
            .step(self.cfg.eta_main, |f| model.visit_backbone(f))?;
        totals.main += main_total * scale;
        totals.con += con_loss;
        totals.main_count += 1;
        totals.theta_steps += 1;
        Ok(())
    }

    /// Backbone update on one missing batch: impute with the fitter frozen,
    /// main loss only.
    fn theta_step_missing(
        &mut self,
        model: &mut ModelParams,
        batch: &[&Sample],
        totals: &mut PhaseTotals,
    ) -> Result<()> {
        let b = batch.len();
        let mut entries = Vec::with_capacity(b);
        let mut main_total = 0.0;
        for s in batch {
            let (pred, cache) = model.forward_missing(&s.x1, self.cfg.impute_mode)?;
            let (loss, dpred) = main_loss(&pred, &s.y, model.cfg.task)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite main loss on sample {}",
                    s.id
                )));
            }
            main_total += loss;
            entries.push((cache, dpred));
        }
        model.zero_grads();
        let scale = 1.0 / b as f64;
        for (cache, dpred) in &entries {
            let dpred: Vec<f64> = dpred.iter().map(|g| g * scale).collect();
            model.backward_missing(cache, &dpred);
        }
        self.opt_theta
            .step(self.cfg.eta_main, |f| model.visit_backbone(f))?;
        totals.missing += main_total * scale;
        totals.missing_count += 1;
        totals.missing_steps += 1;
        Ok(())
    }

    fn warm_up(&mut self, model: &mut ModelParams, complete: &[&Sample]) -> Result<()> {
        if self.cfg.warm_up_epochs > 0 && complete.is_empty() {
            return Err(Error::Data("warm-up requires a complete split".into()));
        }
        for e in 0..self.cfg.warm_up_epochs {
            let order = shuffled_indices(complete.len(), self.cfg.seed, &format!("warmup-{e}"));
            let mut totals = PhaseTotals::new();
            for batch_ids in batches(&order, self.cfg.n_b) {
                let batch: Vec<&Sample> = batch_ids.iter().map(|&i| complete[i]).collect();
                self.theta_step_complete(model, &batch, &mut totals)?;
            }
        }
        Ok(())
    }

    fn train_epoch(
        &mut self,
        model: &mut ModelParams,
        complete: &[&Sample],
        missing: &[&Sample],
        epoch: usize,
    ) -> Result<PhaseTotals> {
        let mut totals = PhaseTotals::new();
        let order = shuffled_indices(
            complete.len(),
            self.cfg.seed,
            &format!("epoch-{epoch}-complete"),
        );
        let complete_batches = batches(&order, self.cfg.n_b);
        if self.cfg.split_loop {
            for batch_ids in &complete_batches {
                let batch: Vec<&Sample> = batch_ids.iter().map(|&i| complete[i]).collect();
                self.psi_step(model, &batch, &mut totals)?;
            }
            for batch_ids in &complete_batches {
                let batch: Vec<&Sample> = batch_ids.iter().map(|&i| complete[i]).collect();
                self.theta_step_complete(model, &batch, &mut totals)?;
            }
        } else {
            for batch_ids in &complete_batches {
                let batch: Vec<&Sample> = batch_ids.iter().map(|&i| complete[i]).collect();
                if self.psi_step(model, &batch, &mut totals)? {
                    self.theta_step_complete(model, &batch, &mut totals)?;
                }
            }
        }
        let order = shuffled_indices(
            missing.len(),
            self.cfg.seed,
            &format!("epoch-{epoch}-missing"),
        );
        for batch_ids in batches(&order, self.cfg.n_b) {
            if batch_ids.is_empty() {
                continue;
            }
            let batch: Vec<&Sample> = batch_ids.iter().map(|&i| missing[i]).collect();
            self.theta_step_missing(model, &batch, &mut totals)?;
        }
        Ok(totals)
    }
}

/// Prediction for one sample under the trained model, using the imputation
/// path when the victim modality is absent.
pub fn predict(model: &ModelParams, sample: &Sample, mode: ImputeMode) -> Result<Prediction> {
    match &sample.x2 {
        Some(x2) => Ok(model.forward_complete(&sample.x1, x2)?.0),
        None => Ok(model.forward_missing(&sample.x1, mode)?.0),
    }
}

/// Validation metric: MAE for regression, error rate for classification
/// (lower is better for both).
pub fn val_metric(model: &ModelParams, samples: &[Sample], mode: ImputeMode) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("empty validation split".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let pred = predict(model, s, mode)?;
        total += match (model.cfg.task, &pred) {
            (Task::Regression, Prediction::Regression(yhat)) => (yhat - s.y.value()).abs(),
            (Task::Classification { .. }, p) => {
                if p.argmax() == match s.y {
                    Label::Class(c) => c,
                    Label::Value(_) => {
                        return Err(Error::Label("classification needs class labels".into()))
                    }
                } {
                    0.0
                } else {
                    1.0
                }
            }
            _ => return Err(Error::Label("prediction kind mismatch".into())),
        };
    }
    Ok(total / samples.len() as f64)
}

/// Run the full denoising procedure. Returns the parameters from the best
/// validation epoch together with the per-epoch log.
pub fn fit(mut model: ModelParams, data: &DatasetSplits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let complete: Vec<&Sample> = data.train.iter().filter(|s| s.x2.is_some()).collect();
    let missing: Vec<&Sample> = data.train.iter().filter(|s| s.x2.is_none()).collect();
    if complete.is_empty() {
        return Err(Error::Data("training split has no complete samples".into()));
    }
    let mut trainer = Trainer::new(cfg);
    trainer.warm_up(&mut model, &complete)?;

    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let totals = trainer.train_epoch(&mut model, &complete, &missing, epoch)?;
        let val = val_metric(&model, &data.val, cfg.impute_mode)?;
        if !val.is_finite() {
            return Err(Error::Numerical(format!(
                "validation metric diverged at epoch {epoch}"
            )));
        }
        let avg = |sum: f64, n: usize| if n > 0 { sum / n as f64 } else { 0.0 };
        log.push(EpochReport {
            epoch,
            main_loss: avg(totals.main, totals.main_count),
            fit_loss: avg(totals.fit, totals.fit_count),
            con_loss: avg(totals.con, totals.main_count),
            missing_main_loss: avg(totals.missing, totals.missing_count),
            val_metric: val,
            psi_steps: totals.psi_steps,
            theta_steps: totals.theta_steps,
            missing_steps: totals.missing_steps,
            skipped_batches: totals.skipped,
        });
        if val < best_val {
            best_val = val;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_val,
    })
}

/// Train the single-modality reference model on x1 alone, same optimizer and
/// stopping rule.
pub fn fit_single(
    mut model: SingleModel,
    data: &DatasetSplits,
    cfg: &TrainConfig,
) -> Result<(SingleModel, f64)> {
    if data.train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let mut opt = Adam::new(cfg);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let single_val = |m: &SingleModel, samples: &[Sample]| -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            let (pred, _) = m.forward(&s.x1)?;
            total += match (m.cfg.task, &pred) {
                (Task::Regression, Prediction::Regression(yhat)) => (yhat - s.y.value()).abs(),
                _ => {
                    if pred.argmax() == s.y.value() as usize {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
        }
        Ok(total / samples.len().max(1) as f64)
    };
    for epoch in 1..=cfg.max_epochs {
        let order = shuffled_indices(data.train.len(), cfg.seed, &format!("single-{epoch}"));
        for batch_ids in batches(&order, cfg.n_b) {
            let scale = 1.0 / batch_ids.len() as f64;
            let mut entries = Vec::new();
            for &i in &batch_ids {
                let s = &data.train[i];
                let (pred, cache) = model.forward(&s.x1)?;
                let (loss, dpred) = main_loss(&pred, &s.y, model.cfg.task)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical("non-finite loss".into()));
                }
                entries.push((cache, dpred));
            }
            model.zero_grads();
            for (cache, dpred) in &entries {
                let dpred: Vec<f64> = dpred.iter().map(|g| g * scale).collect();
                model.backward(cache, &dpred);
            }
            opt.step(cfg.eta_main, |f| model.visit_params(f))?;
        }
        let val = single_val(&model, &data.val)?;
        if val < best_val {
            best_val = val;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    Ok((best, best_val))
}
