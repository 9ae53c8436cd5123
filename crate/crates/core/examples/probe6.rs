use mmalign_core::data::{apply_missing, partition, synth_generate, Setting, SplitSpec, SynthConfig};
use mmalign_core::model::{ModelConfig, ModelParams, Task};
use mmalign_core::numerics::seeded_rng;
use mmalign_core::ot_align::slot_col;
use mmalign_core::training::{fit, TrainConfig};

fn main() {
    let l = 12usize;
    let s = 1usize;
    let w = 2usize;
    for seed in [1u64, 2, 3, 4, 5] {
        let gen = SynthConfig {
            n: 400, l, d: 13, shift_range: s,
            mix_noise: 0.0, label_noise: 0.0, identity_mix: true,
            fixed_shift: true, orthonormal_base: true, seed, ..SynthConfig::default()
        };
        let mut splits = partition(synth_generate(&gen).unwrap(), seed);
        apply_missing(&mut splits, &SplitSpec { p: 0.9, setting: Setting::A, seed }).unwrap();
        let mcfg = ModelConfig {
            d_in1: 13, d_in2: 13, d_model: 32, d_ff: 64, num_heads: 4,
            enc_layers: 1, fusion_layers: 1, max_len: 32, window: w,
            head_hidden: 8, task: Task::Regression, ..ModelConfig::default()
        };
        let mut rng = seeded_rng(seed, "model");
        let mut model = ModelParams::new(mcfg, &mut rng).unwrap();
        model.enc2 = model.enc1.clone();
        let cfg = TrainConfig {
            n_b: 4, max_epochs: 10, warm_up_epochs: 1, patience: 20,
            seed, eta_fit: 2e-2, eta_main: 1e-4, lambda: 0.0,
            ..TrainConfig::default()
        };
        let out = fit(model, &splits, &cfg).unwrap();
        let m = out.model;
        // target ceiling: sinkhorn row argmax on the trained encodings
        let (mut thit, mut ttotal) = (0usize, 0usize);
        for sample in splits.train.iter().filter(|s| s.x2.is_some()) {
            let x2 = sample.x2.as_ref().unwrap();
            let (z1, _) = m.enc1.encode(&sample.x1).unwrap();
            let (z2, _) = m.enc2.encode(x2).unwrap();
            let cost = mmalign_core::ot_align::build_cost(&z1.content().to_owned(), &z2.content().to_owned(), w).unwrap();
            let plan = mmalign_core::ot_align::sinkhorn(&cost, cfg.mu, 1e-6, 500).unwrap().plan;
            for i in (w + s)..(l - w) {
                let mut best = (0usize, f64::MIN);
                for k in 0..plan.width() {
                    if slot_col(l, w, i, k).is_some() && plan.band[[i, k]] > best.1 {
                        best = (k, plan.band[[i, k]]);
                    }
                }
                if slot_col(l, w, i, best.0).unwrap() == i + s { thit += 1; }
                ttotal += 1;
            }
        }
        println!("  target ceiling: {thit}/{ttotal}");
        let (mut hit, mut total) = (0usize, 0usize);
        for sample in &splits.test {
            let (z1, _) = m.enc1.encode(&sample.x1).unwrap();
            let (pred, _) = m.fitter.fit_predict(&z1).unwrap();
            for i in (w + s)..(l - w) {
                let mut best = (0usize, f64::MIN);
                for k in 0..pred.width() {
                    if slot_col(l, w, i, k).is_some() && pred.rows[[i, k]] > best.1 {
                        best = (k, pred.rows[[i, k]]);
                    }
                }
                let j = slot_col(l, w, i, best.0).unwrap();
                if j == i + s { hit += 1; }
                total += 1;
            }
        }
        println!("seed {seed}: {hit}/{total} = {:.3}", hit as f64 / total as f64);
    }
}
