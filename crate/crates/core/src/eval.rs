//! Metrics (MAE, Acc-2, macro-F1), paired significance testing, baseline
//! runners and window-size sweeps.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{apply_missing, partition, Sample, Setting, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{ImputeMode, ModelConfig, ModelParams, Prediction, SingleModel};
use crate::numerics::seeded_rng;
use crate::training::{fit, fit_single, predict, TrainConfig};

/// Mean absolute error.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Statistics(format!(
            "mae needs equal nonempty inputs, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// Mean squared error.
pub fn mse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Statistics(format!(
            "mse needs equal nonempty inputs, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Binary sign accuracy over samples with a nonzero label; exactly-zero
/// labels are excluded (standard sentiment-benchmark convention).
pub fn acc2(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Statistics("acc2 needs equal nonempty inputs".into()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, y) in preds.iter().zip(labels) {
        if *y == 0.0 {
            continue;
        }
        total += 1;
        if (*p > 0.0) == (*y > 0.0) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Statistics(
            "acc2 undefined: every label is exactly zero".into(),
        ));
    }
    Ok(hits as f64 / total as f64)
}

/// Unweighted mean of per-class F1 scores; a class absent from both
/// predictions and labels contributes 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Statistics(
            "macro_f1 needs equal nonempty inputs".into(),
        ));
    }
    for &c in preds.iter().chain(labels) {
        if c >= num_classes {
            return Err(Error::Label(format!(
                "class {c} out of range {num_classes}"
            )));
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, y)| **p == c && **y == c)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, y)| **p == c && **y != c)
            .count() as f64;
        let fnn = preds
            .iter()
            .zip(labels)
            .filter(|(p, y)| **p != c && **y == c)
            .count() as f64;
        let denom = 2.0 * tp + fp + fnn;
        if denom > 0.0 {
            f1_sum += 2.0 * tp / denom;
        }
    }
    Ok(f1_sum / num_classes as f64)
}

/// Two-sided paired t-test p-value over per-seed metric pairs. Identical
/// pairs return 1 by convention.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Statistics(format!(
            "paired t-test needs at least 2 pairs, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(1.0);
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::Statistics(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// An experiment arm: the full method, the reference bounds, the
/// zero-imputation baseline, or one of the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Condition {
    MmAlign,
    /// Single-modality model: lower bound.
    Lb,
    /// Full model with no modality ever missing: upper bound.
    Ub,
    ZeroImpute,
    /// Contrastive term off.
    NoCon,
    /// Fitter never trained; decode from its random initialization.
    RandomFitter,
    /// Fitter pass and backbone pass as separate sweeps.
    SplitLoop,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::MmAlign => "mm-align",
            Condition::Lb => "lb",
            Condition::Ub => "ub",
            Condition::ZeroImpute => "zero-impute",
            Condition::NoCon => "no-con",
            Condition::RandomFitter => "random-fitter",
            Condition::SplitLoop => "split-loop",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub condition: String,
    pub setting: Setting,
    pub p: f64,
    pub seeds: Vec<u64>,
    pub per_seed_mae: Vec<f64>,
    pub per_seed_mse: Vec<f64>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    /// Paired t-test p-value against a reference run, when one was given.
    pub p_value: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn from_runs(
        condition: Condition,
        setting: Setting,
        p: f64,
        seeds: &[u64],
        per_seed_mae: Vec<f64>,
        per_seed_mse: Vec<f64>,
    ) -> Self {
        let (mae_mean, mae_std) = mean_std(&per_seed_mae);
        let (mse_mean, mse_std) = mean_std(&per_seed_mse);
        MetricReport {
            condition: condition.name().to_string(),
            setting,
            p,
            seeds: seeds.to_vec(),
            per_seed_mae,
            per_seed_mse,
            mae_mean,
            mae_std,
            mse_mean,
            mse_std,
            p_value: None,
        }
    }

    /// Attach a paired t-test against `reference` on per-seed MSE.
    pub fn with_significance(mut self, reference: &MetricReport) -> Result<Self> {
        self.p_value = Some(paired_t_test(&self.per_seed_mse, &reference.per_seed_mse)?);
        Ok(self)
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<14} mae {:.4} ± {:.4}  mse {:.4} ± {:.4}{}",
            self.condition,
            self.mae_mean,
            self.mae_std,
            self.mse_mean,
            self.mse_std,
            match self.p_value {
                Some(p) => format!("  p={p:.4}"),
                None => String::new(),
            }
        )
    }
}

fn condition_train_cfg(condition: Condition, base: &TrainConfig, seed: u64) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    match condition {
        Condition::NoCon => cfg.no_con = true,
        Condition::RandomFitter => cfg.random_fitter = true,
        Condition::SplitLoop => cfg.split_loop = true,
        Condition::ZeroImpute => cfg.impute_mode = ImputeMode::Zero,
        _ => {}
    }
    cfg
}

fn regression_metrics(preds: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    Ok((mae(preds, labels)?, mse(preds, labels)?))
}

/// Train and evaluate one condition across `seeds`. Each seed gets its own
/// partition, missing pattern and initialization from the shared unmasked
/// sample pool; the test-set MAE and MSE are aggregated over seeds.
pub fn run_condition(
    condition: Condition,
    samples: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<MetricReport> {
    if seeds.is_empty() {
        return Err(Error::Statistics("run_condition needs at least one seed".into()));
    }
    let mut per_mae = Vec::with_capacity(seeds.len());
    let mut per_mse = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut splits = partition(samples.to_vec(), seed);
        if condition != Condition::Ub {
            apply_missing(
                &mut splits,
                &SplitSpec {
                    p: train_cfg.p,
                    setting: train_cfg.setting,
                    seed,
                },
            )?;
        }
        let cfg = condition_train_cfg(condition, train_cfg, seed);
        let mut preds = Vec::with_capacity(splits.test.len());
        let mut labels = Vec::with_capacity(splits.test.len());
        match condition {
            Condition::Lb => {
                let mut rng = seeded_rng(seed, "init-single");
                let model = SingleModel::new(model_cfg.clone(), &mut rng)?;
                let (best, _) = fit_single(model, &splits, &cfg)?;
                for s in &splits.test {
                    let (pred, _) = best.forward(&s.x1)?;
                    preds.push(match pred {
                        Prediction::Regression(v) => v,
                        _ => return Err(Error::Label("regression expected".into())),
                    });
                    labels.push(s.y.value());
                }
            }
            _ => {
                let mut rng = seeded_rng(seed, "init-model");
                let model = ModelParams::new(model_cfg.clone(), &mut rng)?;
                let out = fit(model, &splits, &cfg)?;
                for s in &splits.test {
                    let pred = predict(&out.model, s, cfg.impute_mode)?;
                    preds.push(match pred {
                        Prediction::Regression(v) => v,
                        _ => return Err(Error::Label("regression expected".into())),
                    });
                    labels.push(s.y.value());
                }
            }
        }
        let (m1, m2) = regression_metrics(&preds, &labels)?;
        per_mae.push(m1);
        per_mse.push(m2);
    }
    Ok(MetricReport::from_runs(
        condition,
        train_cfg.setting,
        train_cfg.p,
        seeds,
        per_mae,
        per_mse,
    ))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub per_seed_mae: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("W,mae_mean,mae_std\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.window, r.mae_mean, r.mae_std));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from("  W   mae mean   mae std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>3}   {:>8.4}   {:>7.4}\n",
                r.window, r.mae_mean, r.mae_std
            ));
        }
        out
    }

    pub fn best_window(&self) -> Option<usize> {
        self.rows
            .iter()
            .min_by(|a, b| a.mae_mean.total_cmp(&b.mae_mean))
            .map(|r| r.window)
    }
}

/// Run the full method once per window size across seeds and report test MAE
/// per window.
pub fn window_sweep(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    windows: &[usize],
    seeds: &[u64],
) -> Result<SweepReport> {
    let l = samples
        .first()
        .ok_or_else(|| Error::Data("empty sample pool".into()))?
        .x1
        .len();
    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        if w >= l {
            return Err(Error::Config(format!(
                "window {w} must be smaller than the sequence length {l}"
            )));
        }
        let mut cfg = model_cfg.clone();
        cfg.window = w;
        let report = run_condition(Condition::MmAlign, samples, &cfg, train_cfg, seeds)?;
        rows.push(SweepRow {
            window: w,
            mae_mean: report.mae_mean,
            mae_std: report.mae_std,
            per_seed_mae: report.per_seed_mae,
        });
    }
    Ok(SweepReport { rows })
}

/// Number of in-band slots for a length-`l`, radius-`w` band.
pub fn valid_slot_count(l: usize, w: usize) -> usize {
    (0..l)
        .map(|i| (l - 1).min(i + w) - i.saturating_sub(w) + 1)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::ot_align::slot_valid;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0], &[2.0]).unwrap(), 2.0);
        assert!(mae(&[], &[]).is_err());
        let mut rng = seeded_rng(1, "mae-oracle");
        let preds: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let labels: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut oracle = 0.0;
        for i in 0..100 {
            oracle += (preds[i] - labels[i]).abs();
        }
        oracle /= 100.0;
        assert!((mae(&preds, &labels).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn acc2_cases() {
        assert_eq!(acc2(&[1.0, -1.0], &[2.0, -0.5]).unwrap(), 1.0);
        assert_eq!(acc2(&[-1.0, 1.0], &[2.0, -0.5]).unwrap(), 0.0);
        // 3 of 4 signs match, one zero label excluded
        let got = acc2(&[1.0, 1.0, -1.0, -1.0, 5.0], &[2.0, 1.0, -3.0, 1.0, 0.0]).unwrap();
        assert_eq!(got, 0.75);
        assert!(acc2(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn macro_f1_cases() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[1, 1], &[0, 0], 2).unwrap(), 0.0);
        // hand confusion over 3 classes:
        // labels [0,0,1,1,2], preds [0,1,1,2,2]
        // class0: tp=1 fp=0 fn=1 -> f1=2/3
        // class1: tp=1 fp=1 fn=1 -> f1=1/2
        // class2: tp=1 fp=1 fn=0 -> f1=2/3
        let got = macro_f1(&[0, 1, 1, 2, 2], &[0, 0, 1, 1, 2], 3).unwrap();
        let want = (2.0 / 3.0 + 0.5 + 2.0 / 3.0) / 3.0;
        assert!((got - want).abs() < 1e-12);
        assert!(matches!(
            macro_f1(&[9], &[0], 3),
            Err(Error::Label(_))
        ));
        // absent classes pull the mean down
        assert_eq!(macro_f1(&[0], &[0], 7).unwrap(), 1.0 / 7.0);
    }

    #[test]
    fn t_test_cases() {
        assert_eq!(paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        // systematic large difference: p should be tiny
        let a = [1.0, 1.1, 0.9, 1.05, 0.95];
        let b = [5.0, 5.1, 4.9, 5.05, 4.95];
        let p = paired_t_test(&a, &b).unwrap();
        assert!(p < 1e-6, "p = {p}");
        //0 < p <= 1 always
        let p = paired_t_test(&[1.0, 2.0, 4.0], &[1.5, 1.0, 3.0]).unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn slot_count_identity() {
        for l in 1..12 {
            for w in 0..6 {
                let direct: usize = (0..l)
                    .map(|i| {
                        (0..2 * w + 1)
                            .filter(|&k| slot_valid(l, w, i, k))
                            .count()
                    })
                    .sum();
                assert_eq!(valid_slot_count(l, w), direct, "l={l} w={w}");
            }
        }
    }

    proptest! {
        #[test]
        fn mae_translation_paired(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30),
            c in -5.0f64..5.0,
        ) {
            let preds: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
            let labels: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
            let shifted_p: Vec<f64> = preds.iter().map(|p| p + c).collect();
            let shifted_y: Vec<f64> = labels.iter().map(|y| y + c).collect();
            let a = mae(&preds, &labels).unwrap();
            let b = mae(&shifted_p, &shifted_y).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn macro_f1_relabel_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
        ) {
            let preds: Vec<usize> = pairs.iter().map(|(p, _)| *p).collect();
            let labels: Vec<usize> = pairs.iter().map(|(_, y)| *y).collect();
            let perm = [2usize, 3, 0, 1];
            let rp: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
            let ry: Vec<usize> = labels.iter().map(|&c| perm[c]).collect();
            let a = macro_f1(&preds, &labels, 4).unwrap();
            let b = macro_f1(&rp, &ry, 4).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn smoke_pool() -> Vec<Sample> {
        synth_generate(&SynthConfig {
            n: 40,
            l: 8,
            d: 3,
            shift_range: 1,
            mix_noise: 0.05,
            label_noise: 0.02,
            identity_mix: false,
            seed: 31,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn smoke_cfgs() -> (ModelConfig, TrainConfig) {
        let model_cfg = ModelConfig {
            d_in1: 3,
            d_in2: 3,
            d_model: 8,
            d_ff: 12,
            num_heads: 2,
            enc_layers: 1,
            fusion_layers: 1,
            max_len: 10,
            window: 2,
            head_hidden: 6,
            ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            n_b: 16,
            max_epochs: 2,
            warm_up_epochs: 1,
            p: 0.5,
            ..TrainConfig::default()
        };
        (model_cfg, train_cfg)
    }

    #[test]
    fn run_condition_smoke_and_deterministic() {
        let pool = smoke_pool();
        let (model_cfg, train_cfg) = smoke_cfgs();
        let seeds = [1u64, 2];
        let a = run_condition(Condition::MmAlign, &pool, &model_cfg, &train_cfg, &seeds).unwrap();
        assert!(a.mae_mean.is_finite() && a.mae_mean >= 0.0);
        assert!(a.mse_mean.is_finite());
        assert_eq!(a.per_seed_mae.len(), 2);
        let b = run_condition(Condition::MmAlign, &pool, &model_cfg, &train_cfg, &seeds).unwrap();
        assert_eq!(
            a.per_seed_mse
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            b.per_seed_mse
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            "same seeds must reproduce identical metrics"
        );
        let lb = run_condition(Condition::Lb, &pool, &model_cfg, &train_cfg, &seeds).unwrap();
        let with_p = a.clone().with_significance(&lb).unwrap();
        let p = with_p.p_value.unwrap();
        assert!(p > 0.0 && p <= 1.0);
        assert!(!with_p.table_row().is_empty());
    }

    #[test]
    fn window_sweep_validates_and_reports() {
        let pool = smoke_pool();
        let (model_cfg, train_cfg) = smoke_cfgs();
        assert!(matches!(
            window_sweep(&pool, &model_cfg, &train_cfg, &[8], &[1]),
            Err(Error::Config(_))
        ));
        let report = window_sweep(&pool, &model_cfg, &train_cfg, &[1, 2], &[1]).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.csv().starts_with("W,mae_mean,mae_std\n"));
        assert!(report.best_window().is_some());
        assert!(report.table().contains("mae mean"));
    }
}
