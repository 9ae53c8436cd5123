use mmalign_core::data::{synth_generate, SynthConfig};
use mmalign_core::eval::{run_condition, Condition};
use mmalign_core::model::{ModelConfig, Task};
use mmalign_core::training::TrainConfig;
use std::time::Instant;

fn main() {
    let gen = SynthConfig {
        n: 2000, l: 20, d: 8, shift_range: 2,
        mix_noise: 0.22, obs_noise: 0.0, label_noise: 0.05, identity_mix: false,
        seed: 7, ..SynthConfig::default()
    };
    let samples = synth_generate(&gen).unwrap();
    let model_cfg = ModelConfig {
        d_in1: 8, d_in2: 8, d_model: 8, d_ff: 16, num_heads: 2,
        enc_layers: 1, fusion_layers: 2, max_len: 24, window: 4,
        head_hidden: 8, task: Task::Regression, tied_encoders: true, ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        n_b: 16, max_epochs: 120, warm_up_epochs: 1, patience: 20, eta_main: 2e-3, eta_fit: 3e-2, lambda: 0.3,
        p: 0.1, seed: 7, ..TrainConfig::default()
    };
    let seeds = [1u64, 2, 3, 4, 5];
    for cond in [Condition::Ub, Condition::MmAlign, Condition::Lb, Condition::ZeroImpute] {
        let t0 = Instant::now();
        let rep = run_condition(cond, &samples, &model_cfg, &train_cfg, &seeds).unwrap();
        println!(
            "{:<13} mse {:?} mean {:.5}  ({:.1}s)",
            rep.condition, rep.per_seed_mse, rep.mse_mean, t0.elapsed().as_secs_f64()
        );
    }
}
