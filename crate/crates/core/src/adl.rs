//! Alignment dynamics learner. Learning mode fits Sinkhorn plans with a gated
//! recurrent predictor over the surviving modality; decoding mode reconstructs
//! a plan from the predictions and imputes the missing modality in the shared
//! space. The head token never takes part in alignment; it is reassigned from
//! the learned head-token embedding after imputation.

use ndarray::{s, Array1};
use rand_chacha::ChaCha8Rng;

use crate::encoder::SharedRepr;
use crate::error::{Error, Result};
use crate::numerics::{
    init_weight, sigmoid, softmax_row, softmax_row_backward, GradPair, Linear, Matrix,
    Parameterized,
};
use crate::ot_align::{slot_col, slot_valid, AlignmentPlan};

/// Per-timestamp banded alignment predictions, one masked-softmax row each.
#[derive(Debug, Clone)]
pub struct WindowPredictions {
    pub length: usize,
    pub window: usize,
    pub rows: Matrix,
}

impl WindowPredictions {
    pub fn width(&self) -> usize {
        2 * self.window + 1
    }

    pub fn valid_mask(&self, i: usize) -> Vec<bool> {
        (0..self.width())
            .map(|k| slot_valid(self.length, self.window, i, k))
            .collect()
    }
}

/// Gated recurrent cell plus linear projection onto the `2W+1` window slots.
#[derive(Debug, Clone)]
pub struct FitterParams {
    pub wr: GradPair,
    pub wz: GradPair,
    pub wn: GradPair,
    pub ur: GradPair,
    pub uz: GradPair,
    pub un: GradPair,
    pub br: GradPair,
    pub bz: GradPair,
    pub bn: GradPair,
    pub proj: Linear,
}

struct StepCache {
    x: Matrix,      // 1 x D
    h_prev: Matrix, // 1 x H
    r: Matrix,
    z: Matrix,
    n: Matrix,
}

/// Everything needed to backpropagate one `fit_predict` call.
pub struct FitterCache {
    steps: Vec<StepCache>,
    hidden: Vec<Matrix>, // 1 x H per timestep (post-update)
    probs: Matrix,       // l x width
}

impl FitterParams {
    pub fn new(d_model: usize, hidden: usize, window: usize, rng: &mut ChaCha8Rng) -> Self {
        FitterParams {
            wr: GradPair::new(init_weight(d_model, hidden, rng)),
            wz: GradPair::new(init_weight(d_model, hidden, rng)),
            wn: GradPair::new(init_weight(d_model, hidden, rng)),
            ur: GradPair::new(init_weight(hidden, hidden, rng)),
            uz: GradPair::new(init_weight(hidden, hidden, rng)),
            un: GradPair::new(init_weight(hidden, hidden, rng)),
            br: GradPair::zeros(1, hidden),
            bz: GradPair::zeros(1, hidden),
            bn: GradPair::zeros(1, hidden),
            proj: Linear::new(hidden, 2 * window + 1, rng),
        }
    }

    pub fn window(&self) -> usize {
        (self.proj.w.value.ncols() - 1) / 2
    }

    pub fn hidden_dim(&self) -> usize {
        self.ur.value.nrows()
    }

    /// Recurrent scan over the content positions of the surviving modality,
    /// producing one masked softmax row per timestamp.
    pub fn fit_predict(&self, z1: &SharedRepr) -> Result<(WindowPredictions, FitterCache)> {
        let content = z1.content();
        let l = content.nrows();
        if l == 0 {
            return Err(Error::EmptySequence);
        }
        let window = self.window();
        let width = 2 * window + 1;
        let hdim = self.hidden_dim();
        let mut h = Matrix::zeros((1, hdim));
        let mut steps = Vec::with_capacity(l);
        let mut hidden = Vec::with_capacity(l);
        let mut logits = Matrix::zeros((l, width));
        for t in 0..l {
            let x = content.slice(s![t..t + 1, ..]).to_owned();
            let r = (x.dot(&self.wr.value) + h.dot(&self.ur.value) + &self.br.value)
                .mapv(sigmoid);
            let z = (x.dot(&self.wz.value) + h.dot(&self.uz.value) + &self.bz.value)
                .mapv(sigmoid);
            let rh = &r * &h;
            let n = (x.dot(&self.wn.value) + rh.dot(&self.un.value) + &self.bn.value)
                .mapv(f64::tanh);
            let h_new = (1.0 - &z) * &n + &z * &h;
            steps.push(StepCache {
                x,
                h_prev: h.clone(),
                r,
                z,
                n,
            });
            h = h_new;
            hidden.push(h.clone());
            logits
                .row_mut(t)
                .assign(&self.proj.forward(&h).row(0));
        }
        let mut probs = Matrix::zeros((l, width));
        for t in 0..l {
            let mask: Vec<bool> = (0..width).map(|k| slot_valid(l, window, t, k)).collect();
            probs
                .row_mut(t)
                .assign(&softmax_row(logits.row(t), Some(&mask))?);
        }
        Ok((
            WindowPredictions {
                length: l,
                window,
                rows: probs.clone(),
            },
            FitterCache {
                steps,
                hidden,
                probs,
            },
        ))
    }

    /// BPTT given d(prediction rows). Input gradients are not propagated: the
    /// fitter is tuned on detached shared representations.
    pub fn backward(&mut self, cache: &FitterCache, dprobs: &Matrix) {
        let l = cache.steps.len();
        let hdim = self.hidden_dim();
        // softmax + projection backward, collecting dh per step
        let mut dh_seq = Vec::with_capacity(l);
        for t in 0..l {
            let dlogits = softmax_row_backward(cache.probs.row(t), dprobs.row(t));
            let dl = dlogits.insert_axis(ndarray::Axis(0));
            let dh = self.proj.backward(&cache.hidden[t], &dl);
            dh_seq.push(dh);
        }
        let mut dh_next = Matrix::zeros((1, hdim));
        for t in (0..l).rev() {
            let sc = &cache.steps[t];
            let dh = &dh_seq[t] + &dh_next;
            let dn = &dh * &(1.0 - &sc.z);
            let dz = &dh * &(&sc.h_prev - &sc.n);
            let mut dh_prev = &dh * &sc.z;
            let da_n = &dn * &sc.n.mapv(|v| 1.0 - v * v);
            self.wn.grad += &sc.x.t().dot(&da_n);
            let rh = &sc.r * &sc.h_prev;
            self.un.grad += &rh.t().dot(&da_n);
            self.bn.grad += &da_n;
            let drh = da_n.dot(&self.un.value.t());
            let dr = &drh * &sc.h_prev;
            dh_prev += &(&drh * &sc.r);
            let da_r = &dr * &(&sc.r * &sc.r.mapv(|v| 1.0 - v));
            let da_z = &dz * &(&sc.z * &sc.z.mapv(|v| 1.0 - v));
            self.wr.grad += &sc.x.t().dot(&da_r);
            self.ur.grad += &sc.h_prev.t().dot(&da_r);
            self.br.grad += &da_r;
            dh_prev += &da_r.dot(&self.ur.value.t());
            self.wz.grad += &sc.x.t().dot(&da_z);
            self.uz.grad += &sc.h_prev.t().dot(&da_z);
            self.bz.grad += &da_z;
            dh_prev += &da_z.dot(&self.uz.value.t());
            dh_next = dh_prev;
        }
    }
}

impl Parameterized for FitterParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        f("wr", &mut self.wr);
        f("wz", &mut self.wz);
        f("wn", &mut self.wn);
        f("ur", &mut self.ur);
        f("uz", &mut self.uz);
        f("un", &mut self.un);
        f("br", &mut self.br);
        f("bz", &mut self.bz);
        f("bn", &mut self.bn);
        f("proj.w", &mut self.proj.w);
        f("proj.b", &mut self.proj.b);
    }
}

/// Fitting-loss flavor. `Mse` averages squared slot differences over the full
/// `l x (2W+1)` band grid (out-of-range slots are zero on both sides);
/// `PaperScaledRoot` is the printed `sqrt(sum)/((2W+1) l)` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FitLossMode {
    Mse,
    PaperScaledRoot,
}

pub fn fitting_loss(
    pred: &WindowPredictions,
    target: &AlignmentPlan,
    mode: FitLossMode,
) -> Result<f64> {
    if pred.length != target.length || pred.window != target.window {
        return Err(Error::Dimension(format!(
            "fitting_loss pred l={} W={} vs target l={} W={}",
            pred.length, pred.window, target.length, target.window
        )));
    }
    let total = (pred.length * pred.width()) as f64;
    let ss: f64 = pred
        .rows
        .iter()
        .zip(target.band.iter())
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(match mode {
        FitLossMode::Mse => ss / total,
        FitLossMode::PaperScaledRoot => ss.sqrt() / total,
    })
}

/// Loss value plus gradient with respect to the prediction rows.
pub fn fitting_loss_grad(
    pred: &WindowPredictions,
    target: &AlignmentPlan,
    mode: FitLossMode,
) -> Result<(f64, Matrix)> {
    let loss = fitting_loss(pred, target, mode)?;
    let total = (pred.length * pred.width()) as f64;
    let diff = &pred.rows - &target.band;
    let grad = match mode {
        FitLossMode::Mse => diff * (2.0 / total),
        FitLossMode::PaperScaledRoot => {
            let ss: f64 = diff.iter().map(|d| d * d).sum();
            if ss == 0.0 {
                Matrix::zeros(diff.raw_dim())
            } else {
                diff / (total * ss.sqrt())
            }
        }
    };
    Ok((loss, grad))
}

/// Bridge from predicted rows to a banded plan. Rows are copied as-is; by
/// default columns are renormalized to unit mass so the decoded plan keeps the
/// convex-combination property of the Sinkhorn target. `renormalize = false`
/// reproduces the literal row-only computation.
pub fn reconstruct_plan(pred: &WindowPredictions, renormalize: bool) -> Result<AlignmentPlan> {
    let l = pred.length;
    let w = pred.window;
    let mut band = pred.rows.clone();
    if renormalize {
        let mut col_sums = vec![0.0f64; l];
        for i in 0..l {
            for k in 0..pred.width() {
                if let Some(j) = slot_col(l, w, i, k) {
                    col_sums[j] += band[[i, k]];
                }
            }
        }
        if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
            return Err(Error::DegenerateColumn(j));
        }
        for i in 0..l {
            for k in 0..pred.width() {
                if let Some(j) = slot_col(l, w, i, k) {
                    band[[i, k]] /= col_sums[j];
                }
            }
        }
    }
    Ok(AlignmentPlan {
        length: l,
        window: w,
        band,
    })
}

/// Imputation of the victim modality in the shared space:
/// `z2_j = sum_{|i-j|<=W} A_ij * z1_i` on content positions, head token
/// reassigned from `cls_embedding`.
pub fn impute(
    plan: &AlignmentPlan,
    z1: &SharedRepr,
    cls_embedding: ndarray::ArrayView1<f64>,
) -> Result<SharedRepr> {
    let content = z1.content();
    if plan.length != content.nrows() {
        return Err(Error::Dimension(format!(
            "impute plan length {} vs content {}",
            plan.length,
            content.nrows()
        )));
    }
    let d = content.ncols();
    let mut out = Matrix::zeros((plan.length + 1, d));
    out.row_mut(0).assign(&cls_embedding);
    for i in 0..plan.length {
        for k in 0..plan.width() {
            if let Some(j) = slot_col(plan.length, plan.window, i, k) {
                let a = plan.band[[i, k]];
                if a != 0.0 {
                    let zi = content.row(i);
                    let mut row = out.row_mut(j + 1);
                    row.scaled_add(a, &zi);
                }
            }
        }
    }
    Ok(SharedRepr { values: out })
}

/// Backward of `impute` with the plan treated as constant: spreads gradient on
/// the imputed content rows back onto the surviving modality's content rows.
/// Returns `(d_z1_content, d_cls)`.
pub fn impute_backward(plan: &AlignmentPlan, dout: &Matrix) -> (Matrix, Array1<f64>) {
    let d = dout.ncols();
    let mut dz1 = Matrix::zeros((plan.length, d));
    for i in 0..plan.length {
        for k in 0..plan.width() {
            if let Some(j) = slot_col(plan.length, plan.window, i, k) {
                let a = plan.band[[i, k]];
                if a != 0.0 {
                    let dj = dout.row(j + 1);
                    let mut row = dz1.row_mut(i);
                    row.scaled_add(a, &dj);
                }
            }
        }
    }
    (dz1, dout.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng};
    use ndarray::array;
    use rand::Rng;

    fn random_repr(l: usize, d: usize, rng: &mut ChaCha8Rng) -> SharedRepr {
        SharedRepr {
            values: Matrix::from_shape_fn((l + 1, d), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn zero_projection_gives_uniform_rows() {
        let mut rng = seeded_rng(9, "uniform-rows");
        let mut fitter = FitterParams::new(4, 4, 2, &mut rng);
        fitter.proj.w.value.fill(0.0);
        fitter.proj.b.value.fill(0.0);
        let z = random_repr(6, 4, &mut rng);
        let (pred, _) = fitter.fit_predict(&z).unwrap();
        // interior row: 2W+1 = 5 valid slots; first row: W+1 = 3
        let mask0 = pred.valid_mask(0);
        assert_eq!(mask0.iter().filter(|m| **m).count(), 3);
        let mask3 = pred.valid_mask(3);
        assert_eq!(mask3.iter().filter(|m| **m).count(), 5);
        for i in 0..6 {
            let mask = pred.valid_mask(i);
            let n = mask.iter().filter(|m| **m).count() as f64;
            for (k, &valid) in mask.iter().enumerate() {
                if valid {
                    assert!((pred.rows[[i, k]] - 1.0 / n).abs() < 1e-12);
                } else {
                    assert_eq!(pred.rows[[i, k]], 0.0);
                }
            }
        }
    }

    #[test]
    fn prediction_rows_are_probability_vectors() {
        let mut rng = seeded_rng(10, "rowsum");
        let fitter = FitterParams::new(6, 6, 3, &mut rng);
        let z = random_repr(9, 6, &mut rng);
        let (pred, _) = fitter.fit_predict(&z).unwrap();
        for i in 0..9 {
            let s: f64 = pred.rows.row(i).sum();
            assert!((s - 1.0).abs() <= 1e-6);
            for v in pred.rows.row(i).iter() {
                assert!(*v >= 0.0);
            }
        }
    }

    #[test]
    fn empty_sequence_errs() {
        let mut rng = seeded_rng(11, "empty");
        let fitter = FitterParams::new(4, 4, 1, &mut rng);
        let z = SharedRepr {
            values: Matrix::zeros((1, 4)),
        };
        assert!(matches!(fitter.fit_predict(&z), Err(Error::EmptySequence)));
    }

    #[test]
    fn grad_check_fitter_through_recurrent_cell() {
        let mut rng = seeded_rng(12, "gc-gru");
        let mut fitter = FitterParams::new(4, 4, 1, &mut rng);
        let z = random_repr(5, 4, &mut rng);
        let target = {
            // arbitrary fixed banded target with unit rows
            let (pred, _) = fitter.fit_predict(&z).unwrap();
            let mut band = pred.rows.clone();
            band.mapv_inplace(|v| v * 0.9);
            AlignmentPlan {
                length: 5,
                window: 1,
                band,
            }
        };
        let (pred, cache) = fitter.fit_predict(&z).unwrap();
        let (_, dpred) = fitting_loss_grad(&pred, &target, FitLossMode::Mse).unwrap();
        fitter.zero_grads();
        fitter.backward(&cache, &dpred);
        let err = grad_check(
            &mut fitter,
            |f| {
                let (pred, _) = f.fit_predict(&z).unwrap();
                fitting_loss(&pred, &target, FitLossMode::Mse).unwrap()
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "fitter grad check err {err}");
    }

    #[test]
    fn fitting_loss_closed_form_cases() {
        let third = 1.0 / 3.0;
        let pred = WindowPredictions {
            length: 1,
            window: 1,
            rows: array![[third, third, third]],
        };
        let target = AlignmentPlan {
            length: 1,
            window: 1,
            band: array![[1.0, 0.0, 0.0]],
        };
        let mse = fitting_loss(&pred, &target, FitLossMode::Mse).unwrap();
        assert!((mse - 2.0 / 9.0).abs() < 1e-15);
        let lit = fitting_loss(&pred, &target, FitLossMode::PaperScaledRoot).unwrap();
        assert!((lit - third * (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // exact match gives zero in both modes
        let same = AlignmentPlan {
            length: 1,
            window: 1,
            band: pred.rows.clone(),
        };
        assert_eq!(fitting_loss(&pred, &same, FitLossMode::Mse).unwrap(), 0.0);
        assert_eq!(
            fitting_loss(&pred, &same, FitLossMode::PaperScaledRoot).unwrap(),
            0.0
        );
    }

    #[test]
    fn fitting_loss_nonnegative_property() {
        let mut rng = seeded_rng(13, "fit-prop");
        for _ in 0..20 {
            let l = rng.gen_range(1..8);
            let w = rng.gen_range(0..3usize);
            let width = 2 * w + 1;
            let rows = Matrix::from_shape_fn((l, width), |_| rng.gen_range(0.0..1.0));
            let band = Matrix::from_shape_fn((l, width), |_| rng.gen_range(0.0..1.0));
            let pred = WindowPredictions {
                length: l,
                window: w,
                rows,
            };
            let tgt = AlignmentPlan {
                length: l,
                window: w,
                band,
            };
            for mode in [FitLossMode::Mse, FitLossMode::PaperScaledRoot] {
                assert!(fitting_loss(&pred, &tgt, mode).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn reconstruct_identity_and_uniform() {
        // one-hot diagonal rows -> identity plan, unchanged by renormalization
        let l = 4;
        let w = 1;
        let mut rows = Matrix::zeros((l, 3));
        for i in 0..l {
            rows[[i, 1]] = 1.0;
        }
        let pred = WindowPredictions {
            length: l,
            window: w,
            rows,
        };
        let plan = reconstruct_plan(&pred, true).unwrap();
        let dense = plan.to_dense();
        for i in 0..l {
            for j in 0..l {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dense[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_columns_sum_to_one() {
        let mut rng = seeded_rng(14, "cols");
        let fitter = FitterParams::new(4, 4, 2, &mut rng);
        let z = random_repr(7, 4, &mut rng);
        let (pred, _) = fitter.fit_predict(&z).unwrap();
        let plan = reconstruct_plan(&pred, true).unwrap();
        for (j, s) in plan.col_sums().iter().enumerate() {
            assert!((s - 1.0).abs() <= 1e-9, "col {j} sum {s}");
        }
    }

    #[test]
    fn reconstruct_degenerate_column_errs() {
        // all mass on the diagonal-right slot, so column 0 is starved
        let l = 3;
        let mut rows = Matrix::zeros((l, 3));
        for i in 0..l {
            rows[[i, 2]] = 1.0; // j = i+1 (invalid on the last row)
        }
        rows[[l - 1, 2]] = 0.0;
        rows[[l - 1, 1]] = 1.0;
        let pred = WindowPredictions {
            length: l,
            window: 1,
            rows,
        };
        assert!(matches!(
            reconstruct_plan(&pred, true),
            Err(Error::DegenerateColumn(0))
        ));
    }

    #[test]
    fn impute_identity_and_convexity() {
        let mut rng = seeded_rng(15, "impute");
        let l = 4;
        let d = 3;
        let z1 = random_repr(l, d, &mut rng);
        let mut band = Matrix::zeros((l, 3));
        for i in 0..l {
            band[[i, 1]] = 1.0;
        }
        let plan = AlignmentPlan {
            length: l,
            window: 1,
            band,
        };
        let cls = Array1::from_vec(vec![9.0, 9.0, 9.0]);
        let out = impute(&plan, &z1, cls.view()).unwrap();
        for j in 0..l {
            for c in 0..d {
                assert!((out.values[[j + 1, c]] - z1.values[[j + 1, c]]).abs() < 1e-12);
            }
        }
        assert_eq!(out.values.row(0).to_vec(), vec![9.0, 9.0, 9.0]);
        // all-equal source rows through a column-normalized plan reproduce v
        let v = array![0.4, -0.7, 1.1];
        let mut vals = Matrix::zeros((l + 1, d));
        for mut r in vals.axis_iter_mut(ndarray::Axis(0)) {
            r.assign(&v);
        }
        let z_equal = SharedRepr { values: vals };
        let fitter = FitterParams::new(d, d, 1, &mut rng);
        let (pred, _) = fitter.fit_predict(&z_equal).unwrap();
        let plan = reconstruct_plan(&pred, true).unwrap();
        let out = impute(&plan, &z_equal, v.view()).unwrap();
        for j in 1..=l {
            for c in 0..d {
                assert!((out.values[[j, c]] - v[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impute_matches_scalar_oracle() {
        let z1 = SharedRepr {
            values: array![
                [0.0, 0.0],
                [1.0, 2.0],
                [3.0, 4.0],
                [5.0, 6.0]
            ],
        };
        let plan = AlignmentPlan {
            length: 3,
            window: 1,
            band: array![[0.0, 0.5, 0.5], [0.25, 0.5, 0.25], [0.25, 0.75, 0.0]],
        };
        let cls = Array1::zeros(2);
        let out = impute(&plan, &z1, cls.view()).unwrap();
        // scalar evaluation: z2_j = sum_i A[i, j-i+W] z1_i
        let content = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        for j in 0..3 {
            for c in 0..2 {
                let mut want = 0.0;
                for (i, zi) in content.iter().enumerate() {
                    let k = j as isize - i as isize + 1;
                    if (0..3).contains(&k) {
                        want += plan.band[[i, k as usize]] * zi[c];
                    }
                }
                assert!((out.values[[j + 1, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impute_is_linear_in_source() {
        let mut rng = seeded_rng(16, "linear");
        let l = 5;
        let d = 4;
        let za = random_repr(l, d, &mut rng);
        let zb = random_repr(l, d, &mut rng);
        let fitter = FitterParams::new(d, d, 2, &mut rng);
        let (pred, _) = fitter.fit_predict(&za).unwrap();
        let plan = reconstruct_plan(&pred, true).unwrap();
        let (a, b) = (2.0, -0.5);
        let mix = SharedRepr {
            values: &za.values * a + &zb.values * b,
        };
        let cls = Array1::zeros(d);
        let out_mix = impute(&plan, &mix, cls.view()).unwrap();
        let out_a = impute(&plan, &za, cls.view()).unwrap();
        let out_b = impute(&plan, &zb, cls.view()).unwrap();
        for j in 1..=l {
            for c in 0..d {
                let want = a * out_a.values[[j, c]] + b * out_b.values[[j, c]];
                assert!((out_mix.values[[j, c]] - want).abs() < 1e-10);
            }
        }
    }
}
