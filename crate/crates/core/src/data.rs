//! Synthetic parallel-sequence generation with known ground-truth shifts,
//! Setting A/B missing-pattern masking, JSONL ingestion and partitioning.

use std::io::BufRead;
use std::path::Path;

use rand::distributions::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Normal;

use crate::encoder::{Modality, ModalitySequence};
use crate::error::{Error, Result};
use crate::model::Label;
use crate::numerics::{seeded_rng, Matrix};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Sample {
    pub id: u64,
    pub x1: ModalitySequence,
    pub x2: Option<ModalitySequence>,
    pub y: Label,
    /// Ground-truth alignment offset, when generated synthetically.
    pub offset: Option<usize>,
}

/// Missing-pattern regime. A removes the victim modality from every val and
/// test sample; B removes it there at the training rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Setting {
    A,
    B,
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            other => Err(Error::Config(format!("setting must be A or B, got {other}"))),
        }
    }
}

/// Masking plan: surviving rate `p` of the victim modality (x2) on the
/// training split, regime for val/test, and the seed the pattern is keyed on.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub p: f64,
    pub setting: Setting,
    pub seed: u64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetSplits {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub l: usize,
    pub d: usize,
    /// Maximum per-sample shift; each sample draws s uniformly in [0, max].
    pub shift_range: usize,
    pub mix_noise: f64,
    /// White observation noise added to modality 1 only; the underlying walk
    /// stays clean, so modality 2 is the sharper view of the shared content.
    pub obs_noise: f64,
    pub label_noise: f64,
    /// Use R = I instead of a random orthogonal mixing matrix.
    pub identity_mix: bool,
    /// Every sample uses exactly `shift_range` instead of drawing from
    /// [0, shift_range].
    pub fixed_shift: bool,
    /// Draw shifts from [1, shift_range] so every pair is misaligned.
    pub nonzero_shift: bool,
    /// Orthonormalize the underlying sequence (requires d >= l + shift), so
    /// distinct timestamps have cosine exactly 0. Diagnostic construction
    /// for alignment-recovery checks.
    pub orthonormal_base: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            l: 20,
            d: 8,
            shift_range: 2,
            mix_noise: 0.1,
            obs_noise: 0.0,
            label_noise: 0.05,
            identity_mix: false,
            fixed_shift: false,
            nonzero_shift: false,
            orthonormal_base: false,
            seed: 7,
        }
    }
}

/// Random orthogonal matrix by Gram-Schmidt on a gaussian draw.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let mut m = Matrix::from_shape_fn((d, d), |_| normal.sample(rng));
        let mut ok = true;
        for j in 0..d {
            for k in 0..j {
                let proj: f64 = (0..d).map(|i| m[[i, j]] * m[[i, k]]).sum();
                for i in 0..d {
                    m[[i, j]] -= proj * m[[i, k]];
                }
            }
            let norm: f64 = (0..d).map(|i| m[[i, j]] * m[[i, j]]).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for i in 0..d {
                m[[i, j]] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

/// Stationary first-order autoregressive sequence per feature. The
/// persistence keeps neighboring steps correlated (smooth trajectories)
/// while the mean reversion keeps distinct timestamps angularly separated,
/// so cosine costs can tell positions apart.
fn smooth_walk(len: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phi = 0.7f64;
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = vec![vec![0.0; d]; len];
    for c in 0..d {
        let mut v: f64 = normal.sample(rng);
        out[0][c] = v;
        for row in out.iter_mut().skip(1) {
            v = phi * v + innov * normal.sample(rng);
            row[c] = v;
        }
    }
    out
}

/// Gram-Schmidt the rows in place so distinct timestamps have cosine
/// exactly 0. Callers must guarantee len <= d.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    let d = rows[0].len();
    for j in 0..rows.len() {
        for k in 0..j {
            let proj: f64 = (0..d).map(|i| rows[j][i] * rows[k][i]).sum();
            for i in 0..d {
                rows[j][i] -= proj * rows[k][i];
            }
        }
        let norm: f64 = rows[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..d {
            rows[j][i] /= norm;
        }
    }
}

/// Generate `n` parallel-sequence samples. Modality 2 is a mixed, shifted
/// copy of modality 1 plus noise: x2_t = R x1_{t-s} + mix_noise * u_t, so an
/// element of x1 at position i reappears in x2 at position i + s. The label
/// reads pooled statistics of both modalities, so each carries signal.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if cfg.d < 2 {
        return Err(Error::Config(format!("d = {} must be at least 2", cfg.d)));
    }
    if cfg.l <= 2 * cfg.shift_range {
        return Err(Error::Config(format!(
            "l = {} must exceed twice the max shift {}",
            cfg.l, cfg.shift_range
        )));
    }
    if cfg.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut setup_rng = seeded_rng(cfg.seed, "synth-setup");
    let mix = if cfg.identity_mix {
        Matrix::eye(cfg.d)
    } else {
        random_orthogonal(cfg.d, &mut setup_rng)
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let w1: Vec<f64> = (0..cfg.d).map(|_| normal.sample(&mut setup_rng)).collect();
    let w2: Vec<f64> = (0..cfg.d).map(|_| normal.sample(&mut setup_rng)).collect();

    let mut samples = Vec::with_capacity(cfg.n);
    if cfg.orthonormal_base && cfg.d < cfg.l + cfg.shift_range {
        return Err(Error::Config(format!(
            "orthonormal base needs d >= l + shift, got d = {} for l = {}, shift {}",
            cfg.d, cfg.l, cfg.shift_range
        )));
    }
    for id in 0..cfg.n as u64 {
        let mut rng = seeded_rng(cfg.seed, &format!("synth-sample-{id}"));
        let s = if cfg.shift_range == 0 {
            0
        } else if cfg.fixed_shift {
            cfg.shift_range
        } else if cfg.nonzero_shift {
            rng.gen_range(1..=cfg.shift_range)
        } else {
            rng.gen_range(0..=cfg.shift_range)
        };
        // base walk long enough that x2_t = R b_t is defined for all t while
        // x1 reads the walk s steps ahead
        let mut base = smooth_walk(cfg.l + s, cfg.d, &mut rng);
        if cfg.orthonormal_base {
            orthonormalize(&mut base);
        }
        let noise = smooth_walk(cfg.l, cfg.d, &mut rng);
        let x1: Vec<Vec<f64>> = (0..cfg.l)
            .map(|t| {
                (0..cfg.d)
                    .map(|i| base[t + s][i] + cfg.obs_noise * normal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let x2: Vec<Vec<f64>> = (0..cfg.l)
            .map(|t| {
                (0..cfg.d)
                    .map(|i| {
                        let mixed: f64 = (0..cfg.d).map(|k| mix[[i, k]] * base[t][k]).sum();
                        mixed + cfg.mix_noise * noise[t][i]
                    })
                    .collect()
            })
            .collect();
        // pooled statistic with a pointwise squash applied before the time
        // average: the nonlinearity has to act per timestamp, so a model
        // cannot shortcut the label by pooling raw values first
        let pool = |x: &Vec<Vec<f64>>, c: usize| -> f64 {
            x.iter().map(|row| (1.2 * row[c]).tanh()).sum::<f64>() / x.len() as f64
        };
        // linear terms carry per-modality signal; the interaction term is a
        // per-timestamp inner product pooled afterwards, so it rewards models
        // that can couple the two modalities position by position (or couple
        // a faithful reconstruction of the victim one)
        let linear: f64 = (0..cfg.d)
            .map(|c| w1[c] * pool(&x1, c) + w2[c] * pool(&x2, c))
            .sum();
        let inter: f64 = x1
            .iter()
            .zip(x2.iter())
            .map(|(a, b)| (0..cfg.d).map(|c| a[c] * b[c]).sum::<f64>())
            .sum::<f64>()
            / (cfg.l as f64 * (cfg.d as f64).sqrt());
        let score = linear + inter;
        let y = (0.7 * score).tanh() + cfg.label_noise * normal.sample(&mut rng);
        samples.push(Sample {
            id,
            x1: ModalitySequence::new(Modality::M1, x1)?,
            x2: Some(ModalitySequence::new(Modality::M2, x2)?),
            y: Label::Value(y),
            offset: Some(s),
        });
    }
    Ok(samples)
}

/// Deterministic 70/15/15 partition keyed on (seed, id) hash order.
pub fn partition(mut samples: Vec<Sample>, seed: u64) -> DatasetSplits {
    samples.sort_by_key(|s| mask_rank(seed, "partition", s.id));
    let n = samples.len();
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    let test = samples.split_off((n_train + n_val).min(n));
    let val = samples.split_off(n_train.min(samples.len()));
    DatasetSplits {
        train: samples,
        val,
        test,
    }
}

fn mask_rank(seed: u64, tag: &str, id: u64) -> u64 {
    // FNV-1a over (seed, tag, id); ranking by this hash gives a uniform,
    // id-keyed permutation so masked counts are exact
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for b in tag.bytes() {
        eat(b);
    }
    for b in id.to_le_bytes() {
        eat(b);
    }
    h
}

fn mask_split(split: &mut [Sample], rate: f64, seed: u64, tag: &str) {
    if rate <= 0.0 {
        return;
    }
    let n = split.len();
    let n_mask = ((rate * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| mask_rank(seed, tag, split[i].id));
    for &i in order.iter().take(n_mask) {
        split[i].x2 = None;
    }
}

/// Remove the victim modality according to the spec: training split keeps a
/// fraction `p`, val/test per the setting. A pure function of (seed, id), so
/// reapplication is a no-op.
pub fn apply_missing(splits: &mut DatasetSplits, spec: &SplitSpec) -> Result<()> {
    if !(spec.p > 0.0 && spec.p <= 1.0) {
        return Err(Error::Config(format!(
            "surviving rate p = {} must be in (0, 1]",
            spec.p
        )));
    }
    mask_split(&mut splits.train, 1.0 - spec.p, spec.seed, "mask-train");
    let vt_rate = match spec.setting {
        Setting::A => 1.0,
        Setting::B => 1.0 - spec.p,
    };
    mask_split(&mut splits.val, vt_rate, spec.seed, "mask-val");
    mask_split(&mut splits.test, vt_rate, spec.seed, "mask-test");
    Ok(())
}

#[derive(serde::Deserialize)]
struct RawSample {
    id: u64,
    m1: Vec<Vec<f64>>,
    m2: Option<Vec<Vec<f64>>>,
    y: serde_json::Value,
}

fn parse_label(v: &serde_json::Value, line: usize) -> Result<Label> {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                if n.is_i64() || n.is_u64() {
                    return Ok(Label::Class(u as usize));
                }
            }
            n.as_f64()
                .map(Label::Value)
                .ok_or_else(|| Error::Data(format!("line {line}: label out of range")))
        }
        _ => Err(Error::Data(format!("line {line}: label must be a number"))),
    }
}

/// Read samples from a JSONL file, one object per line:
/// {"id": .., "m1": [[..]], "m2": [[..]] | null, "y": ..}.
pub fn ingest(path: &Path) -> Result<Vec<Sample>> {
    let f = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        let x1 = ModalitySequence::new(Modality::M1, raw.m1)
            .map_err(|e| Error::Data(format!("line {lineno}: m1: {e}")))?;
        let x2 = match raw.m2 {
            Some(values) => {
                let seq = ModalitySequence::new(Modality::M2, values)
                    .map_err(|e| Error::Data(format!("line {lineno}: m2: {e}")))?;
                if seq.len() != x1.len() {
                    return Err(Error::Data(format!(
                        "line {lineno}: modality lengths differ: {} vs {}",
                        x1.len(),
                        seq.len()
                    )));
                }
                Some(seq)
            }
            None => None,
        };
        let y = parse_label(&raw.y, lineno)?;
        out.push(Sample {
            id: raw.id,
            x1,
            x2,
            y,
            offset: None,
        });
    }
    Ok(out)
}

/// Write samples in the ingestion JSONL format.
pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let obj = serde_json::json!({
            "id": s.id,
            "m1": s.x1.values,
            "m2": s.x2.as_ref().map(|m| &m.values),
            "y": match s.y {
                Label::Value(v) => serde_json::json!(v),
                Label::Class(c) => serde_json::json!(c),
            },
        });
        writeln!(f, "{obj}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot_align::{build_cost, sinkhorn, slot_col};

    fn masked(split: &[Sample]) -> usize {
        split.iter().filter(|s| s.x2.is_none()).count()
    }

    #[test]
    fn identity_zero_shift_copies_x1() {
        let cfg = SynthConfig {
            n: 5,
            l: 10,
            d: 3,
            shift_range: 0,
            mix_noise: 0.0,
            label_noise: 0.0,
            identity_mix: true,
            seed: 11,
            ..SynthConfig::default()
        };
        for s in synth_generate(&cfg).unwrap() {
            let x2 = s.x2.unwrap();
            assert_eq!(s.offset, Some(0));
            for t in 0..10 {
                for c in 0..3 {
                    assert!((s.x1.values[t][c] - x2.values[t][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_identical() {
        let cfg = SynthConfig {
            n: 20,
            l: 12,
            d: 4,
            seed: 5,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        for (sa, sb) in a.iter().zip(b.iter()) {
            assert_eq!(sa.y.value().to_bits(), sb.y.value().to_bits());
            assert_eq!(sa.x1.values, sb.x1.values);
            assert_eq!(
                sa.x2.as_ref().unwrap().values,
                sb.x2.as_ref().unwrap().values
            );
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad_d = SynthConfig {
            d: 1,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad_d), Err(Error::Config(_))));
        let bad_l = SynthConfig {
            l: 4,
            shift_range: 2,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad_l), Err(Error::Config(_))));
    }

    #[test]
    fn raw_cosine_transport_recovers_shift() {
        let cfg = SynthConfig {
            n: 8,
            l: 16,
            d: 20,
            shift_range: 2,
            mix_noise: 0.0,
            label_noise: 0.0,
            identity_mix: true,
            orthonormal_base: true,
            seed: 13,
            ..SynthConfig::default()
        };
        let window = 4usize;
        for s in synth_generate(&cfg).unwrap() {
            let shift = s.offset.unwrap();
            let z1 = s.x1.to_matrix();
            let z2 = s.x2.as_ref().unwrap().to_matrix();
            let cost = build_cost(&z1, &z2, window).unwrap();
            // moderate entropic weight: the smoothed plan parks the
            // column-balancing mass off-argmax, the near-LP plan does not
            let plan = sinkhorn(&cost, 0.1, 1e-6, 500).unwrap().plan;
            // interior rows: full window, and the band must not reach the
            // first `shift` columns, which have no counterpart in x1 and
            // soak up balancing mass at inflated column scalings
            for i in (window + shift)..(16 - window) {
                let mut best = (0usize, f64::MIN);
                for k in 0..plan.width() {
                    if slot_col(plan.length, plan.window, i, k).is_some()
                        && plan.band[[i, k]] > best.1
                    {
                        best = (k, plan.band[[i, k]]);
                    }
                }
                let j = slot_col(plan.length, plan.window, i, best.0).unwrap();
                assert_eq!(
                    j,
                    i + shift,
                    "row {i} argmax should land on the shifted twin"
                );
            }
        }
    }

    #[test]
    fn masking_counts_and_setting_a() {
        let cfg = SynthConfig {
            n: 1430,
            l: 8,
            d: 2,
            shift_range: 1,
            ..SynthConfig::default()
        };
        let mut splits = partition(synth_generate(&cfg).unwrap(), 3);
        assert_eq!(splits.train.len(), 1001);
        let spec = SplitSpec {
            p: 0.1,
            setting: Setting::A,
            seed: 3,
        };
        apply_missing(&mut splits, &spec).unwrap();
        let m = masked(&splits.train);
        assert!(
            (m as i64 - 901).unsigned_abs() <= 1,
            "train masked {m}, want ~901 of 1001"
        );
        assert_eq!(masked(&splits.val), splits.val.len());
        assert_eq!(masked(&splits.test), splits.test.len());
    }

    #[test]
    fn setting_b_rate_and_concentration() {
        let cfg = SynthConfig {
            n: 3000,
            l: 8,
            d: 2,
            shift_range: 1,
            ..SynthConfig::default()
        };
        let mut splits = partition(synth_generate(&cfg).unwrap(), 17);
        let spec = SplitSpec {
            p: 0.5,
            setting: Setting::B,
            seed: 17,
        };
        apply_missing(&mut splits, &spec).unwrap();
        let n = splits.test.len() as f64;
        let rate = masked(&splits.test) as f64 / n;
        assert!(
            (rate - 0.5).abs() <= 2.0 / n.sqrt(),
            "test masking rate {rate} strays from 0.5"
        );
    }

    #[test]
    fn p_one_masks_nothing_in_train() {
        let cfg = SynthConfig {
            n: 100,
            l: 8,
            d: 2,
            shift_range: 0,
            ..SynthConfig::default()
        };
        let mut splits = partition(synth_generate(&cfg).unwrap(), 1);
        let spec = SplitSpec {
            p: 1.0,
            setting: Setting::B,
            seed: 1,
        };
        apply_missing(&mut splits, &spec).unwrap();
        assert_eq!(masked(&splits.train), 0);
        assert_eq!(masked(&splits.test), 0);
        assert!(matches!(
            apply_missing(
                &mut splits,
                &SplitSpec {
                    p: 0.0,
                    setting: Setting::B,
                    seed: 1
                }
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn masking_idempotent() {
        let cfg = SynthConfig {
            n: 200,
            l: 8,
            d: 2,
            shift_range: 1,
            ..SynthConfig::default()
        };
        let spec = SplitSpec {
            p: 0.3,
            setting: Setting::A,
            seed: 9,
        };
        let mut once = partition(synth_generate(&cfg).unwrap(), 9);
        apply_missing(&mut once, &spec).unwrap();
        let mut twice = once.clone();
        apply_missing(&mut twice, &spec).unwrap();
        let ids = |s: &[Sample]| -> Vec<(u64, bool)> {
            s.iter().map(|x| (x.id, x.x2.is_some())).collect()
        };
        assert_eq!(ids(&once.train), ids(&twice.train));
        assert_eq!(ids(&once.val), ids(&twice.val));
        assert_eq!(ids(&once.test), ids(&twice.test));
    }

    #[test]
    fn partition_disjoint_exhaustive() {
        let cfg = SynthConfig {
            n: 333,
            l: 8,
            d: 2,
            shift_range: 0,
            ..SynthConfig::default()
        };
        let samples = synth_generate(&cfg).unwrap();
        let splits = partition(samples, 42);
        assert_eq!(splits.total(), 333);
        let mut all: Vec<u64> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .map(|s| s.id)
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 333);
        // same seed → same partition
        let again = partition(synth_generate(&cfg).unwrap(), 42);
        let ids = |s: &[Sample]| -> Vec<u64> { s.iter().map(|x| x.id).collect() };
        assert_eq!(ids(&splits.train), ids(&again.train));
    }

    #[test]
    fn ingest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");

        std::fs::write(&path, "").unwrap();
        assert!(ingest(&path).unwrap().is_empty());

        std::fs::write(
            &path,
            r#"{"id": 1, "m1": [[0.0, 1.0], [2.0, 3.0]], "m2": null, "y": -0.5}"#,
        )
        .unwrap();
        let got = ingest(&path).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got[0].x2.is_none());
        assert_eq!(got[0].y, Label::Value(-0.5));

        std::fs::write(
            &path,
            "{\"id\": 1, \"m1\": [[0.0]], \"m2\": null, \"y\": 0}\n{\"id\": 2, \"m1\": [[0.0],[1.0]], \"m2\": [[0.0]], \"y\": 0}\n",
        )
        .unwrap();
        match ingest(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 2"), "got: {msg}"),
            other => panic!("expected data error, got {other:?}"),
        }

        std::fs::write(
            &path,
            r#"{"id": 1, "m1": [[0.0], [1e999]], "m2": null, "y": 0}"#,
        )
        .unwrap();
        assert!(ingest(&path).is_err());

        let cfg = SynthConfig {
            n: 10,
            l: 6,
            d: 3,
            shift_range: 1,
            ..SynthConfig::default()
        };
        let samples = synth_generate(&cfg).unwrap();
        write_jsonl(&path, &samples).unwrap();
        let back = ingest(&path).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in samples.iter().zip(back.iter()) {
            assert_eq!(a.x1.values, b.x1.values);
            assert_eq!(
                a.x2.as_ref().map(|m| &m.values),
                b.x2.as_ref().map(|m| &m.values)
            );
        }
    }
}
