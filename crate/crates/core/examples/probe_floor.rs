use mmalign_core::data::{synth_generate, SynthConfig};
use mmalign_core::eval::{run_condition, Condition};
use mmalign_core::model::{ModelConfig, Task};
use mmalign_core::training::TrainConfig;

fn main() {
    let gen = SynthConfig {
        n: 2000, l: 20, d: 8, shift_range: 2,
        mix_noise: 0.05, obs_noise: 0.5, label_noise: 0.05, identity_mix: true,
        seed: 7, ..SynthConfig::default()
    };
    let samples = synth_generate(&gen).unwrap();
    for (layers, dm, dff, hh) in [(1usize, 16usize, 32usize, 16usize), (2, 32, 64, 32), (3, 32, 64, 32)] {
        let model_cfg = ModelConfig {
            d_in1: 8, d_in2: 8, d_model: dm, d_ff: dff, num_heads: 4,
            enc_layers: layers, fusion_layers: 1, max_len: 24, window: 4,
            head_hidden: hh, task: Task::Regression, ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            n_b: 32, max_epochs: 60, warm_up_epochs: 1, patience: 12, eta_main: 1e-3,
            lambda: 0.5, p: 0.1, seed: 7, ..TrainConfig::default()
        };
        let rep = run_condition(Condition::Lb, &samples, &model_cfg, &train_cfg, &[1, 2, 3]).unwrap();
        println!("lb layers {} dm {}  mse {:?} mean {:.5}", layers, dm, rep.per_seed_mse, rep.mse_mean);
    }
}
