use mmalign_core::adl::{impute, reconstruct_plan};
use mmalign_core::data::{apply_missing, partition, synth_generate, Setting, SplitSpec, SynthConfig};
use mmalign_core::model::{ImputeMode, ModelConfig, Prediction, Task};
use mmalign_core::model::ModelParams;
use mmalign_core::numerics::seeded_rng;
use mmalign_core::training::{fit, TrainConfig};

fn main() {
    let gen = SynthConfig {
        n: 2000, l: 20, d: 8, shift_range: 2,
        mix_noise: 0.3, label_noise: 0.05, identity_mix: true,
        seed: 7, ..SynthConfig::default()
    };
    let samples = synth_generate(&gen).unwrap();
    let model_cfg = ModelConfig {
        d_in1: 8, d_in2: 8, d_model: 16, d_ff: 32, num_heads: 2,
        enc_layers: 1, fusion_layers: 1, max_len: 24, window: 4,
        head_hidden: 16, task: Task::Regression, tied_encoders: true, ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        n_b: 32, max_epochs: 60, warm_up_epochs: 1, patience: 10, eta_main: 2e-3, lambda: 0.5,
        p: 0.1, seed: 1, ..TrainConfig::default()
    };
    let seed = 1u64;
    let full = partition(samples.clone(), seed);
    let mut splits = partition(samples, seed);
    apply_missing(&mut splits, &SplitSpec { p: train_cfg.p, setting: Setting::A, seed }).unwrap();
    let mut rng = seeded_rng(seed, "init-model");
    let model = ModelParams::new(model_cfg.clone(), &mut rng).unwrap();
    let out = fit(model, &splits, &train_cfg).unwrap();
    for r in &out.log {
        println!("ep {:>2}  main {:.4}  fit {:.5}  con {:.4}  miss {:.4}  val {:.5}", r.epoch, r.main_loss, r.fit_loss, r.con_loss, r.missing_main_loss, r.val_metric);
    }
    println!("best epoch {}  best val {:.5}", out.best_epoch, out.best_val);
    let m = &out.model;

    let mut mse_adl = 0.0;
    let mut mse_zero = 0.0;
    let mut mse_oracle = 0.0;
    let mut cos_sum = 0.0;
    let mut cos_n = 0usize;
    let n_test = splits.test.len();
    for (s, f) in splits.test.iter().zip(full.test.iter()) {
        let y = s.y.value();
        let (p, _) = m.forward_missing(&s.x1, ImputeMode::Adl).unwrap();
        if let Prediction::Regression(v) = p { mse_adl += (v - y) * (v - y); }
        let (p, _) = m.forward_missing(&s.x1, ImputeMode::Zero).unwrap();
        if let Prediction::Regression(v) = p { mse_zero += (v - y) * (v - y); }
        let x2 = f.x2.as_ref().unwrap();
        let (p, _, _, _) = m.forward_complete(&s.x1, x2).unwrap();
        if let Prediction::Regression(v) = p { mse_oracle += (v - y) * (v - y); }

        // imputation quality against the true victim encoding
        let (z1, _) = m.enc1.encode(&s.x1).unwrap();
        let (z2, _) = m.enc2.encode(x2).unwrap();
        let (pred, _) = m.fitter.fit_predict(&z1).unwrap();
        let plan = reconstruct_plan(&pred, m.cfg.col_renorm).unwrap();
        let z2hat = impute(&plan, &z1, m.enc2.cls.value.row(0)).unwrap();
        for j in 1..z2.values.nrows() {
            let a = z2.values.row(j);
            let b = z2hat.values.row(j);
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na > 1e-12 && nb > 1e-12 { cos_sum += dot / (na * nb); cos_n += 1; }
        }
    }
    println!("test mse  adl {:.5}  zero {:.5}  oracle-x2 {:.5}", mse_adl / n_test as f64, mse_zero / n_test as f64, mse_oracle / n_test as f64);
    println!("mean cosine(z2hat, z2) = {:.4}  over {} rows", cos_sum / cos_n as f64, cos_n);
}
