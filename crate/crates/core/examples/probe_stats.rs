use mmalign_core::data::{synth_generate, SynthConfig};

fn main() {
    let cfg = SynthConfig { n: 500, l: 20, d: 8, shift_range: 2, mix_noise: 0.16, obs_noise: 0.0,
        label_noise: 0.0, identity_mix: false, seed: 7, ..SynthConfig::default() };
    let samples = synth_generate(&cfg).unwrap();
    let mut vals = Vec::new();
    let mut ys = Vec::new();
    for s in &samples {
        for c in 0..cfg.d {
            let p: f64 = s.x1.values.iter().map(|r| r[c]).sum::<f64>() / s.x1.values.len() as f64;
            vals.push(p);
        }
        ys.push(s.y.value());
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    println!("pooled mean {:.4} std {:.4}", mean, var.sqrt());
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let yv = ys.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / ys.len() as f64;
    println!("label mean {:.4} std {:.4}", ym, yv.sqrt());
}
