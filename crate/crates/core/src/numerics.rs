//! Dense f64 matrix/vector arithmetic, activations, parameter initialization
//! and the per-layer manual-gradient contract, including a central-difference
//! gradient checker. Everything downstream builds on this module.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of f64. All weight matrices and activations use it.
pub type Matrix = Array2<f64>;

/// A trainable value together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct GradPair {
    pub value: Matrix,
    pub grad: Matrix,
}

impl GradPair {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.raw_dim());
        GradPair { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        GradPair::new(Matrix::zeros((rows, cols)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visitor over every trainable parameter of a layer or model. Visit order is
/// fixed per type, which the optimizer and the checkpoint format rely on.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}

/// Deterministic RNG derived from a run seed and a purpose tag, so independent
/// consumers of one seed do not share a stream.
pub fn seeded_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Glorot-style uniform init: a = sqrt(6 / (fan_in + fan_out)).
pub fn init_weight(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::Dimension(format!(
            "matmul {}x{} by {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(a.dot(b))
}

/// Max-shifted softmax over the unmasked entries of a row. Masked entries are
/// exactly zero in the output.
pub fn softmax_row(v: ArrayView1<f64>, mask: Option<&[bool]>) -> Result<Array1<f64>> {
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(Error::Dimension(format!(
                "softmax mask length {} vs {}",
                m.len(),
                v.len()
            )));
        }
    }
    let live = |i: usize| mask.map_or(true, |m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if live(i) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out = Array1::zeros(v.len());
    let mut sum = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if live(i) {
            let e = (x - max).exp();
            out[i] = e;
            sum += e;
        }
    }
    out.mapv_inplace(|e| e / sum);
    Ok(out)
}

/// Backward of a (masked) row softmax: ds = p .* (dp - sum(dp .* p)).
pub fn softmax_row_backward(probs: ArrayView1<f64>, dprobs: ArrayView1<f64>) -> Array1<f64> {
    let dot: f64 = probs.iter().zip(dprobs.iter()).map(|(p, d)| p * d).sum();
    Array1::from_iter(
        probs
            .iter()
            .zip(dprobs.iter())
            .map(|(p, d)| p * (d - dot)),
    )
}

/// Layer normalization of one vector with affine gain/bias.
pub fn layer_norm(
    v: ArrayView1<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
    eps: f64,
) -> Result<Array1<f64>> {
    if gain.len() != v.len() || bias.len() != v.len() {
        return Err(Error::Dimension(format!(
            "layer_norm dims {} gain {} bias {}",
            v.len(),
            gain.len(),
            bias.len()
        )));
    }
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(Array1::from_iter(
        v.iter()
            .zip(gain.iter().zip(bias.iter()))
            .map(|(x, (g, b))| g * (x - mean) * inv + b),
    ))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth GELU (tanh approximation); `dgelu` is its exact derivative.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn dgelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Fully connected layer, weights `in x out`, bias `1 x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: GradPair,
    pub b: GradPair,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: GradPair::new(init_weight(d_in, d_out, rng)),
            b: GradPair::zeros(1, d_out),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.dot(&self.w.value) + &self.b.value
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Matrix, dout: &Matrix) -> Matrix {
        self.w.grad += &x.t().dot(dout);
        let db = dout.sum_axis(Axis(0));
        self.b.grad += &db.insert_axis(Axis(0));
        dout.dot(&self.w.value.t())
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

/// Row-wise layer normalization with learned gain/bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: GradPair,
    pub bias: GradPair,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: GradPair::new(Matrix::ones((1, dim))),
            bias: GradPair::zeros(1, dim),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.raw_dim());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let y = layer_norm(row, self.gain.value.row(0), self.bias.value.row(0), self.eps)
                .expect("layer dims fixed at construction");
            out.row_mut(i).assign(&y);
        }
        out
    }

    pub fn backward(&mut self, x: &Matrix, dout: &Matrix) -> Matrix {
        let n = x.ncols() as f64;
        let mut dx = Matrix::zeros(x.raw_dim());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            let xhat = Array1::from_iter(row.iter().map(|v| (v - mean) * inv));
            let dy = dout.row(i);
            // affine grads
            for j in 0..x.ncols() {
                self.gain.grad[[0, j]] += dy[j] * xhat[j];
                self.bias.grad[[0, j]] += dy[j];
            }
            let g = self.gain.value.row(0);
            let gdy = Array1::from_iter(dy.iter().zip(g.iter()).map(|(d, g)| d * g));
            let m1 = gdy.sum() / n;
            let m2 = gdy.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
            for j in 0..x.ncols() {
                dx[[i, j]] = (gdy[j] - m1 - xhat[j] * m2) * inv;
            }
        }
        dx
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut GradPair)) {
        f("gain", &mut self.gain);
        f("bias", &mut self.bias);
    }
}

/// Central-difference gradient check.
///
/// The caller must have populated analytic gradients (one forward + backward
/// pass) before calling; `loss` re-evaluates the same scalar objective without
/// touching gradients. Returns the max over parameter entries of
/// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
pub fn grad_check<P, F>(layer: &mut P, mut loss: F, eps: f64) -> Result<f64>
where
    P: Parameterized,
    F: FnMut(&mut P) -> f64,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Config(format!("grad_check epsilon {eps} out of (0, 1e-3]")));
    }
    // Snapshot analytic grads (visit order is stable).
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit_params(&mut |name, p| {
        analytic.push((name.to_string(), p.grad.iter().copied().collect()));
    });
    for (name, g) in &analytic {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite analytic gradient in parameter {name} at entry {pos}"
            )));
        }
    }

    let perturb = |layer: &mut P, pi: usize, ei: usize, delta: f64| {
        let mut k = 0;
        layer.visit_params(&mut |_, p| {
            if k == pi {
                let flat = p.value.as_slice_mut().expect("contiguous");
                flat[ei] += delta;
            }
            k += 1;
        });
    };

    let mut max_rel: f64 = 0.0;
    for (pi, (_, grads)) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            perturb(layer, pi, ei, eps);
            let lp = loss(layer);
            perturb(layer, pi, ei, -2.0 * eps);
            let lm = loss(layer);
            perturb(layer, pi, ei, eps);
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_identity_and_selector() {
        let i2 = Matrix::eye(2);
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(matmul(&i2, &m).unwrap(), m);
        let sel = array![[1.0, 0.0]];
        let col = array![[5.0], [7.0]];
        assert_eq!(matmul(&sel, &col).unwrap(), array![[5.0]]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros((2, 3));
        let b = Matrix::zeros((2, 3));
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    // Independent scalar triple-loop product used as the oracle.
    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[[i, k]] * b[[k, j]];
                }
                c[[i, j]] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = seeded_rng(7, "matmul-oracle");
        let a = init_weight(3, 4, &mut rng);
        let b = init_weight(4, 2, &mut rng);
        let fast = matmul(&a, &b).unwrap();
        let slow = matmul_naive(&a, &b);
        for (x, y) in fast.iter().zip(slow.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = seeded_rng(11, "assoc");
        for _ in 0..10 {
            let a = init_weight(4, 5, &mut rng);
            let b = init_weight(5, 3, &mut rng);
            let c = init_weight(3, 6, &mut rng);
            let left = a.dot(&b).dot(&c);
            let right = a.dot(&b.dot(&c));
            for (x, y) in left.iter().zip(right.iter()) {
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
                assert!(rel < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let v = array![0.0, 0.0, 0.0];
        let s = softmax_row(v.view(), None).unwrap();
        for x in s.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let v = array![2.5, 99.0, 2.5];
        let s = softmax_row(v.view(), Some(&[true, false, true])).unwrap();
        assert_eq!(s[1], 0.0);
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert!((s[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_all_masked_errs() {
        let v = array![1.0, 2.0];
        assert!(matches!(
            softmax_row(v.view(), Some(&[false, false])),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn softmax_against_high_precision_reference() {
        // Reference computed termwise without the max shift, in plain scalars.
        let v = array![1.0f64, 2.0, 3.0];
        let s = softmax_row(v.view(), None).unwrap();
        let z: f64 = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, x) in s.iter().enumerate() {
            assert!((x - (v[i].exp() / z)).abs() < 1e-14);
        }
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_and_normalized() {
        let v = array![3.0, 3.0, 3.0];
        let g = array![1.0, 1.0, 1.0];
        let b = array![0.0, 0.0, 0.0];
        let out = layer_norm(v.view(), g.view(), b.view(), 1e-8).unwrap();
        for x in out.iter() {
            assert!(x.abs() < 1e-3);
        }
        let v = array![1.0, -1.0];
        let g = array![1.0, 1.0];
        let b = array![0.0, 0.0];
        let out = layer_norm(v.view(), g.view(), b.view(), 1e-15).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-7);
        assert!((out[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_matches_scalar_oracle() {
        let mut rng = seeded_rng(3, "ln-oracle");
        let v = Array1::from_shape_fn(8, |_| rng.gen_range(-2.0..2.0));
        let g = Array1::from_shape_fn(8, |_| rng.gen_range(0.5..1.5));
        let b = Array1::from_shape_fn(8, |_| rng.gen_range(-0.5..0.5));
        let eps = 1e-6;
        let out = layer_norm(v.view(), g.view(), b.view(), eps).unwrap();
        // scalar oracle
        let mean: f64 = v.iter().sum::<f64>() / 8.0;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let want = g[j] * (v[j] - mean) / (var + eps).sqrt() + b[j];
            assert!((out[j] - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn layer_norm_shift_invariant_pre_affine() {
        let mut rng = seeded_rng(5, "ln-shift");
        let v = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let shifted = &v + 3.7;
        let g = Array1::ones(6);
        let b = Array1::zeros(6);
        let a = layer_norm(v.view(), g.view(), b.view(), 1e-9).unwrap();
        let c = layer_norm(shifted.view(), g.view(), b.view(), 1e-9).unwrap();
        for (x, y) in a.iter().zip(c.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_probability_vector(vals in proptest::collection::vec(-50.0f64..50.0, 1..16)) {
            let v = Array1::from_vec(vals);
            let s = softmax_row(v.view(), None).unwrap();
            for x in s.iter() {
                proptest::prop_assert!(*x >= 0.0);
            }
            proptest::prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn grad_check_linear_layer() {
        let mut rng = seeded_rng(42, "gc-linear");
        let mut lin = Linear::new(4, 3, &mut rng);
        let x = init_weight(2, 4, &mut rng);
        let target = init_weight(2, 3, &mut rng);
        // loss = 0.5 * sum((xW+b - t)^2)
        let out = lin.forward(&x);
        let dout = &out - &target;
        lin.zero_grads();
        lin.backward(&x, &dout);
        let err = grad_check(
            &mut lin,
            |l| {
                let o = l.forward(&x);
                0.5 * (&o - &target).mapv(|v| v * v).sum()
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "linear grad check err {err}");
    }

    #[test]
    fn grad_check_layer_norm() {
        let mut rng = seeded_rng(43, "gc-ln");
        let mut ln = LayerNorm::new(5);
        // random affine so gain grads are non-trivial
        ln.gain.value = init_weight(1, 5, &mut rng) + 1.0;
        let x = init_weight(3, 5, &mut rng);
        let tgt = init_weight(3, 5, &mut rng);
        let out = ln.forward(&x);
        let dout = &out - &tgt;
        ln.zero_grads();
        ln.backward(&x, &dout);
        let err = grad_check(
            &mut ln,
            |l| 0.5 * (&l.forward(&x) - &tgt).mapv(|v| v * v).sum(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "layer norm grad check err {err}");
    }

    #[test]
    fn grad_check_zero_parameter_layer_is_vacuous() {
        struct Identity;
        impl Parameterized for Identity {
            fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut GradPair)) {}
        }
        let err = grad_check(&mut Identity, |_| 0.0, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let mut rng = seeded_rng(44, "gc-nan");
        let mut lin = Linear::new(2, 2, &mut rng);
        lin.w.grad[[0, 0]] = f64::NAN;
        let e = grad_check(&mut lin, |_| 0.0, 1e-5);
        match e {
            Err(Error::Numerical(msg)) => assert!(msg.contains('w')),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }
}
