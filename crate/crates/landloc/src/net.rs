//! The pose-offset regression network: two shared-weight pointwise MLPs
//! (one per input list), column-wise max-pooling to global feature
//! vectors, concatenation, and an offset head. Forward, exact reverse-mode
//! gradients, Glorot initialization, and parameter counting.
//!
//! Both input lists are vehicle-frame 2D point sets of arbitrary size and
//! order; the max-pool makes the output invariant to permutation and to
//! duplicated rows. All math is f64.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Point2, PoseOffset};
use crate::rng::{substream, StreamDomain};

/// Input point dimension (x, y).
pub const POINT_DIM: usize = 2;

/// Offset head output dimension (Δx, Δy, Δφ).
pub const OFFSET_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite network output")]
    NonFinite,
}

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_points(points: &[Point2]) -> Self {
        let mut data = Vec::with_capacity(points.len() * POINT_DIM);
        for p in points {
            data.push(p.x);
            data.push(p.y);
        }
        Self {
            rows: points.len(),
            cols: POINT_DIM,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix2D {
        let mut out = Matrix2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// self (n×k) · other (k×m) → n×m. i-k-j loop order keeps the inner
    /// loop contiguous in both the output and `other`.
    pub fn matmul(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix2D::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let c_row = &mut out.data[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * m..(kk + 1) * m];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        out
    }
}

/// One dense layer: weight is out×in, bias has length out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix2D,
    pub bias: Vec<f64>,
}

/// An MLP as an ordered layer list. `relu_on_last` distinguishes the
/// pointwise feature MLPs (activation after every layer) from the offset
/// head (linear final layer).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub relu_on_last: bool,
}

impl MlpParams {
    fn zeros(widths: &[usize], input_dim: usize, relu_on_last: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut in_dim = input_dim;
        for &out_dim in widths {
            layers.push(Layer {
                weight: Matrix2D::zeros(out_dim, in_dim),
                bias: vec![0.0; out_dim],
            });
            in_dim = out_dim;
        }
        Self { layers, relu_on_last }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }
}

/// Architecture description: widths of the two pointwise MLPs (last entry
/// is the feature dimension D), the head widths (last entry 3), and the
/// dropout rate used in training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub meas_widths: Vec<usize>,
    pub map_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub dropout_rate: f64,
}

impl NetConfig {
    /// Small configuration for desk-scale runs and tests.
    pub fn desk() -> Self {
        Self {
            meas_widths: vec![32, 64, 128],
            map_widths: vec![32, 64, 128],
            head_widths: vec![128, 64, 3],
            dropout_rate: 0.3,
        }
    }

    /// Full-scale configuration: D = 1024 and ~1.8M parameters.
    pub fn paper() -> Self {
        Self {
            meas_widths: vec![64, 256, 1024],
            map_widths: vec![64, 256, 1024],
            head_widths: vec![512, 256, 64, 3],
            dropout_rate: 0.3,
        }
    }

    /// Minimal configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            meas_widths: vec![4, 8, 8],
            map_widths: vec![4, 8, 8],
            head_widths: vec![8, 4, 3],
            dropout_rate: 0.3,
        }
    }

    /// Feature dimension D (last pointwise width).
    pub fn feature_dim(&self) -> usize {
        *self.meas_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.meas_widths.len() != 3 || self.map_widths.len() != 3 {
            return Err(NetError::InvalidConfig(
                "pointwise MLPs must have exactly 3 layers".into(),
            ));
        }
        if self.meas_widths.last() != self.map_widths.last() {
            return Err(NetError::InvalidConfig(
                "both pointwise MLPs must end in the same feature dimension".into(),
            ));
        }
        if self.head_widths.last() != Some(&OFFSET_DIM) {
            return Err(NetError::InvalidConfig(format!(
                "head must end in {OFFSET_DIM} outputs"
            )));
        }
        if self.meas_widths.iter().chain(&self.map_widths).chain(&self.head_widths).any(|&w| w == 0) {
            return Err(NetError::InvalidConfig("zero layer width".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetError::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// All learnable state: the two pointwise MLPs, the offset head, and the
/// two task-weight log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepLocParams {
    pub config: NetConfig,
    pub mlp_meas: MlpParams,
    pub mlp_map: MlpParams,
    pub head: MlpParams,
    pub s_tran: f64,
    pub s_rot: f64,
}

/// Exact parameter count for a configuration, including the two task
/// weights.
pub fn param_count(config: &NetConfig) -> usize {
    let count = |widths: &[usize], input: usize| -> usize {
        let mut total = 0;
        let mut in_dim = input;
        for &out in widths {
            total += out * in_dim + out;
            in_dim = out;
        }
        total
    };
    count(&config.meas_widths, POINT_DIM)
        + count(&config.map_widths, POINT_DIM)
        + count(&config.head_widths, 2 * config.feature_dim())
        + 2
}

/// Glorot-uniform initialization: weights ~ U(±√(6/(fan_in+fan_out))),
/// biases 0, s_tran = s_rot = 0. Deterministic per seed.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<DeepLocParams, NetError> {
    config.validate()?;
    let mut rng = substream(seed, StreamDomain::NetInit, 0);
    let mut init_mlp = |widths: &[usize], input: usize, relu_on_last: bool| -> MlpParams {
        let mut mlp = MlpParams::zeros(widths, input, relu_on_last);
        for layer in &mut mlp.layers {
            let fan_out = layer.weight.rows();
            let fan_in = layer.weight.cols();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        mlp
    };
    Ok(DeepLocParams {
        mlp_meas: init_mlp(&config.meas_widths, POINT_DIM, true),
        mlp_map: init_mlp(&config.map_widths, POINT_DIM, true),
        head: init_mlp(&config.head_widths, 2 * config.feature_dim(), false),
        s_tran: 0.0,
        s_rot: 0.0,
        config: config.clone(),
    })
}

impl DeepLocParams {
    /// All parameters in a fixed order: mlp_meas, mlp_map, head (each
    /// layer weight row-major then bias), then s_tran, s_rot.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(param_count(&self.config));
        for mlp in [&self.mlp_meas, &self.mlp_map, &self.head] {
            for layer in &mlp.layers {
                out.extend_from_slice(layer.weight.data());
                out.extend_from_slice(&layer.bias);
            }
        }
        out.push(self.s_tran);
        out.push(self.s_rot);
        out
    }

    /// Inverse of [`flatten`]. Errors if the length does not match.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<(), NetError> {
        let expected = param_count(&self.config);
        if flat.len() != expected {
            return Err(NetError::ShapeMismatch(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut pos = 0;
        for mlp in [&mut self.mlp_meas, &mut self.mlp_map, &mut self.head] {
            for layer in &mut mlp.layers {
                let w = layer.weight.data_mut();
                w.copy_from_slice(&flat[pos..pos + w.len()]);
                pos += w.len();
                let nb = layer.bias.len();
                layer.bias.copy_from_slice(&flat[pos..pos + nb]);
                pos += nb;
            }
        }
        self.s_tran = flat[pos];
        self.s_rot = flat[pos + 1];
        Ok(())
    }
}

/// Gradients mirroring [`DeepLocParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub mlp_meas: MlpParams,
    pub mlp_map: MlpParams,
    pub head: MlpParams,
    pub s_tran: f64,
    pub s_rot: f64,
}

impl ParamGrads {
    pub fn zeros_like(params: &DeepLocParams) -> Self {
        let zero_mlp = |mlp: &MlpParams| MlpParams {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix2D::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            relu_on_last: mlp.relu_on_last,
        };
        Self {
            mlp_meas: zero_mlp(&params.mlp_meas),
            mlp_map: zero_mlp(&params.mlp_map),
            head: zero_mlp(&params.head),
            s_tran: 0.0,
            s_rot: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        let add_mlp = |a: &mut MlpParams, b: &MlpParams| {
            for (la, lb) in a.layers.iter_mut().zip(&b.layers) {
                for (x, y) in la.weight.data_mut().iter_mut().zip(lb.weight.data()) {
                    *x += y;
                }
                for (x, y) in la.bias.iter_mut().zip(&lb.bias) {
                    *x += y;
                }
            }
        };
        add_mlp(&mut self.mlp_meas, &other.mlp_meas);
        add_mlp(&mut self.mlp_map, &other.mlp_map);
        add_mlp(&mut self.head, &other.head);
        self.s_tran += other.s_tran;
        self.s_rot += other.s_rot;
    }

    /// Same ordering as [`DeepLocParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for mlp in [&self.mlp_meas, &self.mlp_map, &self.head] {
            for layer in &mlp.layers {
                out.extend_from_slice(layer.weight.data());
                out.extend_from_slice(&layer.bias);
            }
        }
        out.push(self.s_tran);
        out.push(self.s_rot);
        out
    }
}

/// Per-MLP forward records: layer inputs, pre-activations, and dropout
/// scale masks (train mode only).
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Matrix2D,
    zs: Vec<Matrix2D>,
    acts: Vec<Matrix2D>,
    masks: Vec<Option<Vec<f64>>>,
}

impl MlpCache {
    fn output(&self) -> &Matrix2D {
        self.acts.last().expect("MLP has at least one layer")
    }
}

/// Everything needed to run an exact backward pass for one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub meas: MlpCache,
    pub map: MlpCache,
    pub head: MlpCache,
    pub argmax_meas: Vec<usize>,
    pub argmax_map: Vec<usize>,
}

/// Run a shared-weight MLP over every row of `points` independently.
/// Dropout (inverted scaling, so inference needs no rescale) is applied
/// after every layer except the last, only when `dropout_rng` is given.
pub fn pointwise_forward(
    mlp: &MlpParams,
    points: &Matrix2D,
    dropout_rate: f64,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Matrix2D, MlpCache), NetError> {
    if points.rows() == 0 {
        return Err(NetError::EmptyInput("pointwise MLP got zero rows"));
    }
    let expected_in = mlp.layers[0].weight.cols();
    if points.cols() != expected_in {
        return Err(NetError::ShapeMismatch(format!(
            "input has {} columns, MLP expects {expected_in}",
            points.cols()
        )));
    }

    let n_layers = mlp.layers.len();
    let mut zs = Vec::with_capacity(n_layers);
    let mut acts = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers);
    let mut x = points.clone();

    for (li, layer) in mlp.layers.iter().enumerate() {
        let is_last = li == n_layers - 1;
        let wt = layer.weight.transpose();
        let mut z = x.matmul(&wt);
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }

        let apply_relu = !is_last || mlp.relu_on_last;
        let mut a = z.clone();
        if apply_relu {
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }

        let mask = if !is_last && dropout_rate > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let keep = 1.0 - dropout_rate;
                let scale = 1.0 / keep;
                let mut m = vec![0.0; a.data().len()];
                for (mv, av) in m.iter_mut().zip(a.data_mut()) {
                    if rng.random_range(0.0..1.0) < keep {
                        *mv = scale;
                        *av *= scale;
                    } else {
                        *mv = 0.0;
                        *av = 0.0;
                    }
                }
                Some(m)
            } else {
                None
            }
        } else {
            None
        };

        zs.push(z);
        masks.push(mask);
        acts.push(a.clone());
        x = a;
    }

    let cache = MlpCache {
        input: points.clone(),
        zs,
        acts,
        masks,
    };
    Ok((x, cache))
}

/// Column-wise max over rows; ties broken by the smallest row index.
/// Returns the pooled vector and the winning row per column.
pub fn maxpool_columns(features: &Matrix2D) -> Result<(Vec<f64>, Vec<usize>), NetError> {
    if features.rows() == 0 {
        return Err(NetError::EmptyInput("max-pool over zero rows"));
    }
    let (n, d) = (features.rows(), features.cols());
    let mut pooled = features.row(0).to_vec();
    let mut argmax = vec![0usize; d];
    for i in 1..n {
        for (j, &v) in features.row(i).iter().enumerate() {
            if v > pooled[j] {
                pooled[j] = v;
                argmax[j] = i;
            }
        }
    }
    Ok((pooled, argmax))
}

/// Full forward pass: pointwise features for both lists, max-pool,
/// concatenate, offset head. `dropout_rng: None` is inference mode (no
/// randomness consumed).
pub fn forward(
    params: &DeepLocParams,
    meas: &Matrix2D,
    map_pts: &Matrix2D,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(PoseOffset, ForwardCache), NetError> {
    if meas.rows() == 0 {
        return Err(NetError::EmptyInput("no measurements"));
    }
    if map_pts.rows() == 0 {
        return Err(NetError::EmptyInput("no map landmarks"));
    }
    let rate = params.config.dropout_rate;

    let (feat_meas, cache_meas) =
        pointwise_forward(&params.mlp_meas, meas, rate, dropout_rng.as_deref_mut())?;
    let (pooled_meas, argmax_meas) = maxpool_columns(&feat_meas)?;

    let (feat_map, cache_map) =
        pointwise_forward(&params.mlp_map, map_pts, rate, dropout_rng.as_deref_mut())?;
    let (pooled_map, argmax_map) = maxpool_columns(&feat_map)?;

    let d = pooled_meas.len();
    let mut concat = Vec::with_capacity(2 * d);
    concat.extend_from_slice(&pooled_meas);
    concat.extend_from_slice(&pooled_map);
    let head_in = Matrix2D::from_rows(1, 2 * d, concat);

    let (head_out, cache_head) =
        pointwise_forward(&params.head, &head_in, rate, dropout_rng)?;
    let out = head_out.row(0);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite);
    }
    let offset = PoseOffset::new(out[0], out[1], out[2]);

    Ok((
        offset,
        ForwardCache {
            meas: cache_meas,
            map: cache_map,
            head: cache_head,
            argmax_meas,
            argmax_map,
        },
    ))
}

/// Convenience inference call; deterministic, consumes no randomness.
pub fn infer_offset(
    params: &DeepLocParams,
    meas: &Matrix2D,
    map_pts: &Matrix2D,
) -> Result<PoseOffset, NetError> {
    forward(params, meas, map_pts, None).map(|(offset, _)| offset)
}

fn gather_rows(m: &Matrix2D, rows: &[usize]) -> Matrix2D {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix2D::from_rows(rows.len(), m.cols(), data)
}

fn gather_mask_rows(mask: &[f64], cols: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        out.extend_from_slice(&mask[r * cols..(r + 1) * cols]);
    }
    out
}

/// Reverse pass through an MLP. `rows` restricts the computation to a row
/// subset (rows with all-zero upstream gradient contribute nothing, and
/// the max-pool only routes gradient into its argmax rows); `d_output`
/// then has one row per entry of `rows`. Returns the parameter gradients
/// and, when `rows` is `None`, the gradient w.r.t. the full input.
fn mlp_backward(
    mlp: &MlpParams,
    cache: &MlpCache,
    d_output: Matrix2D,
    rows: Option<&[usize]>,
) -> (MlpParams, Option<Matrix2D>) {
    let n_layers = mlp.layers.len();
    let mut rev_layers = Vec::with_capacity(n_layers);
    let mut d_post = d_output;

    for li in (0..n_layers).rev() {
        let layer = &mlp.layers[li];
        let is_last = li == n_layers - 1;
        let cols = layer.bias.len();

        if let Some(mask) = &cache.masks[li] {
            match rows {
                Some(rows) => {
                    let m = gather_mask_rows(mask, cols, rows);
                    for (g, mv) in d_post.data_mut().iter_mut().zip(&m) {
                        *g *= mv;
                    }
                }
                None => {
                    for (g, mv) in d_post.data_mut().iter_mut().zip(mask) {
                        *g *= mv;
                    }
                }
            }
        }

        let apply_relu = !is_last || mlp.relu_on_last;
        let mut d_z = d_post;
        if apply_relu {
            match rows {
                Some(rows) => {
                    let z = gather_rows(&cache.zs[li], rows);
                    for (g, &zv) in d_z.data_mut().iter_mut().zip(z.data()) {
                        if zv <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                None => {
                    for (g, &zv) in d_z.data_mut().iter_mut().zip(cache.zs[li].data()) {
                        if zv <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
        }

        let input_full = if li == 0 { &cache.input } else { &cache.acts[li - 1] };
        let d_weight = match rows {
            Some(rows) => d_z.transpose().matmul(&gather_rows(input_full, rows)),
            None => d_z.transpose().matmul(input_full),
        };
        let mut d_bias = vec![0.0; cols];
        for i in 0..d_z.rows() {
            for (b, &g) in d_bias.iter_mut().zip(d_z.row(i)) {
                *b += g;
            }
        }
        // input rows are data, not parameters: the gradient chain stops
        // after the first layer unless the caller needs d_input
        let need_d_input = li > 0 || rows.is_none();
        let d_input = if need_d_input {
            Some(d_z.matmul(&layer.weight))
        } else {
            None
        };

        rev_layers.push(Layer {
            weight: d_weight,
            bias: d_bias,
        });
        if let Some(d_input) = d_input {
            d_post = d_input;
        } else {
            d_post = Matrix2D::zeros(0, 0);
        }
    }

    rev_layers.reverse();
    let grads = MlpParams {
        layers: rev_layers,
        relu_on_last: mlp.relu_on_last,
    };
    let d_input = if rows.is_none() { Some(d_post) } else { None };
    (grads, d_input)
}

/// Exact reverse-mode gradients for a recorded forward pass. The max-pool
/// routes gradient only to the argmax rows; dropout masks are reused from
/// the cache. `d_s_tran`/`d_s_rot` pass straight through into the result.
pub fn backward(
    params: &DeepLocParams,
    cache: &ForwardCache,
    d_offset: &[f64; OFFSET_DIM],
    d_s_tran: f64,
    d_s_rot: f64,
) -> Result<ParamGrads, NetError> {
    let d = params.config.feature_dim();
    if cache.argmax_meas.len() != d || cache.argmax_map.len() != d {
        return Err(NetError::ShapeMismatch(
            "cache feature dimension does not match params".into(),
        ));
    }

    let d_head_out = Matrix2D::from_rows(1, OFFSET_DIM, d_offset.to_vec());
    let (head_grads, d_concat) = mlp_backward(&params.head, &cache.head, d_head_out);

    let d_concat_row = d_concat.row(0);
    let mut d_feat_meas = Matrix2D::zeros(cache.meas.output().rows(), d);
    for (j, &row) in cache.argmax_meas.iter().enumerate() {
        let v = d_feat_meas.get(row, j) + d_concat_row[j];
        d_feat_meas.set(row, j, v);
    }
    let mut d_feat_map = Matrix2D::zeros(cache.map.output().rows(), d);
    for (j, &row) in cache.argmax_map.iter().enumerate() {
        let v = d_feat_map.get(row, j) + d_concat_row[d + j];
        d_feat_map.set(row, j, v);
    }

    let (meas_grads, _) = mlp_backward(&params.mlp_meas, &cache.meas, d_feat_meas);
    let (map_grads, _) = mlp_backward(&params.mlp_map, &cache.map, d_feat_map);

    Ok(ParamGrads {
        mlp_meas: meas_grads,
        mlp_map: map_grads,
        head: head_grads,
        s_tran: d_s_tran,
        s_rot: d_s_rot,
    })
}
