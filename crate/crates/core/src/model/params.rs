use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GroundingMode, ModelConfig, ModelError};

/// Trainable tensors. Matrices map inputs (columns) to outputs (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Stand-in for the previous answer at the first step.
    pub start_answer: Array1<f64>,
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array1<f64>,
    pub mlp_b2: Array1<f64>,
    /// Bilinear question/function scorer, present only for cross-attention grounding.
    pub w_att: Option<Array2<f64>>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

fn xavier_vec(rng: &mut ChaCha8Rng, len: usize, fan_other: usize) -> Array1<f64> {
    let a = (6.0 / (len + fan_other) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-a..a))
}

impl ModelParams {
    /// Seeded initialization: uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`
    /// for weights, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let (h, dx, dm, mh) = (config.hidden, config.gru_input_dim(), config.mlp_input_dim(), config.mlp_hidden);
        let start_answer = xavier_vec(rng, config.answer_dim(), 1);
        let w_z = xavier(rng, h, dx);
        let u_z = xavier(rng, h, h);
        let w_r = xavier(rng, h, dx);
        let u_r = xavier(rng, h, h);
        let w_h = xavier(rng, h, dx);
        let u_h = xavier(rng, h, h);
        let mlp_w1 = xavier(rng, mh, dm);
        let mlp_w2 = xavier_vec(rng, mh, 1);
        let w_att = match config.grounding_mode {
            GroundingMode::CrossAttention => Some(xavier(rng, config.dim_t, config.dim_t)),
            GroundingMode::Tfidf => None,
        };
        Ok(ModelParams {
            start_answer,
            w_z,
            u_z,
            b_z: Array1::zeros(h),
            w_r,
            u_r,
            b_r: Array1::zeros(h),
            w_h,
            u_h,
            b_h: Array1::zeros(h),
            mlp_w1,
            mlp_b1: Array1::zeros(mh),
            mlp_w2,
            mlp_b2: Array1::zeros(1),
            w_att,
        })
    }

    /// All-zero tensors with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (h, dx, dm, mh) = (config.hidden, config.gru_input_dim(), config.mlp_input_dim(), config.mlp_hidden);
        ModelParams {
            start_answer: Array1::zeros(config.answer_dim()),
            w_z: Array2::zeros((h, dx)),
            u_z: Array2::zeros((h, h)),
            b_z: Array1::zeros(h),
            w_r: Array2::zeros((h, dx)),
            u_r: Array2::zeros((h, h)),
            b_r: Array1::zeros(h),
            w_h: Array2::zeros((h, dx)),
            u_h: Array2::zeros((h, h)),
            b_h: Array1::zeros(h),
            mlp_w1: Array2::zeros((mh, dm)),
            mlp_b1: Array1::zeros(mh),
            mlp_w2: Array1::zeros(mh),
            mlp_b2: Array1::zeros(1),
            w_att: (config.grounding_mode == GroundingMode::CrossAttention)
                .then(|| Array2::zeros((config.dim_t, config.dim_t))),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// `(name, shape, values)` in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        fn v(a: &Array1<f64>) -> (Vec<usize>, &[f64]) {
            (a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn m(a: &Array2<f64>) -> (Vec<usize>, &[f64]) {
            (a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![
            ("start_answer", v(&self.start_answer)),
            ("w_z", m(&self.w_z)),
            ("u_z", m(&self.u_z)),
            ("b_z", v(&self.b_z)),
            ("w_r", m(&self.w_r)),
            ("u_r", m(&self.u_r)),
            ("b_r", v(&self.b_r)),
            ("w_h", m(&self.w_h)),
            ("u_h", m(&self.u_h)),
            ("b_h", v(&self.b_h)),
            ("mlp_w1", m(&self.mlp_w1)),
            ("mlp_b1", v(&self.mlp_b1)),
            ("mlp_w2", v(&self.mlp_w2)),
            ("mlp_b2", v(&self.mlp_b2)),
        ];
        if let Some(w) = &self.w_att {
            out.push(("w_att", m(w)));
        }
        out.into_iter().map(|(name, (shape, data))| (name, shape, data)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn s<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![
            ("start_answer", s(&mut self.start_answer)),
            ("w_z", s(&mut self.w_z)),
            ("u_z", s(&mut self.u_z)),
            ("b_z", s(&mut self.b_z)),
            ("w_r", s(&mut self.w_r)),
            ("u_r", s(&mut self.u_r)),
            ("b_r", s(&mut self.b_r)),
            ("w_h", s(&mut self.w_h)),
            ("u_h", s(&mut self.u_h)),
            ("b_h", s(&mut self.b_h)),
            ("mlp_w1", s(&mut self.mlp_w1)),
            ("mlp_b1", s(&mut self.mlp_b1)),
            ("mlp_w2", s(&mut self.mlp_w2)),
            ("mlp_b2", s(&mut self.mlp_b2)),
        ];
        if let Some(w) = &mut self.w_att {
            out.push(("w_att", s(w)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = ModelParams::zeros(config);
        let (ours, theirs) = (self.tensors(), expected.tensors());
        if ours.len() != theirs.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter tensors, found {}",
                theirs.len(),
                ours.len()
            )));
        }
        for ((name, shape, _), (_, want, _)) in ours.iter().zip(&theirs) {
            if shape != want {
                return Err(ModelError::InvalidConfig(format!("tensor {name}: shape {shape:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// Elementwise `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let others = other.tensors();
        for ((_, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(others) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}
