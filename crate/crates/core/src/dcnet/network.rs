use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DcError;
use crate::rng::rng_for;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub layers: usize,
    /// Units per direction.
    pub hidden: usize,
    pub embedding_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 64, embedding_dim: 15 }
    }
}

impl NetworkConfig {
    /// The four-layer, 300-unit configuration of the original deep-clustering
    /// recipe.
    pub fn large() -> Self {
        Self { layers: 4, hidden: 300, embedding_dim: 15 }
    }

    pub fn validate(&self) -> Result<(), DcError> {
        if self.layers == 0 || self.hidden == 0 || self.embedding_dim == 0 {
            return Err(DcError::InvalidConfig("layers, hidden and embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// One named matrix inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Parameter order: for each layer, forward then backward direction, each as
/// `wx (in x 3H)`, `bx (1 x 3H)`, `wh (H x 3H)`, `bh (1 x 3H)` with gate
/// columns ordered reset, update, candidate; then `dense_w (2H x F*D)` and
/// `dense_b (1 x F*D)`. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(config: &NetworkConfig, num_freqs: usize) -> Self {
        let h = config.hidden;
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            entries.push(ParamEntry { name, rows, cols, offset });
            offset += rows * cols;
        };
        for l in 0..config.layers {
            let input = if l == 0 { num_freqs } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                push(format!("gru{l}.{dir}.wx"), input, 3 * h);
                push(format!("gru{l}.{dir}.bx"), 1, 3 * h);
                push(format!("gru{l}.{dir}.wh"), h, 3 * h);
                push(format!("gru{l}.{dir}.bh"), 1, 3 * h);
            }
        }
        push("dense_w".into(), 2 * h, num_freqs * config.embedding_dim);
        push("dense_b".into(), 1, num_freqs * config.embedding_dim);
        Self { entries, len: offset }
    }

    fn range(&self, index: usize) -> std::ops::Range<usize> {
        let e = &self.entries[index];
        e.offset..e.offset + e.rows * e.cols
    }

    pub fn view<'a>(&self, params: &'a [f64], index: usize) -> ArrayView2<'a, f64> {
        let e = &self.entries[index];
        ArrayView2::from_shape((e.rows, e.cols), &params[self.range(index)]).expect("layout")
    }

    pub fn view_mut<'a>(&self, params: &'a mut [f64], index: usize) -> ArrayViewMut2<'a, f64> {
        let e = &self.entries[index];
        let r = self.range(index);
        ArrayViewMut2::from_shape((e.rows, e.cols), &mut params[r]).expect("layout")
    }
}

fn gru_index(layer: usize, dir: usize) -> usize {
    (layer * 2 + dir) * 4
}

/// Bidirectional GRU stack with a tanh dense head and per-bin unit
/// normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    pub config: NetworkConfig,
    pub num_freqs: usize,
    pub params: Vec<f64>,
    pub layout: ParamLayout,
    /// Set once the parameters come out of training.
    pub trained: bool,
}

/// `(T*F) x D` matrix of unit-norm embeddings in row-major `(t, f)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub v: Array2<f64>,
}

struct GruCache {
    input: Array2<f64>,
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
    out: Array2<f64>,
}

pub(crate) struct ForwardCache {
    layers: Vec<(GruCache, GruCache)>,
    top: Array2<f64>,
    a: Array2<f64>,
    norms: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_row(m: &mut Array2<f64>, row: ArrayView1<'_, f64>) {
    for mut r in m.rows_mut() {
        r += &row;
    }
}

impl EmbeddingNetwork {
    /// GRU weights uniform in `+/- 1/sqrt(H)`, dense weights Glorot-uniform,
    /// biases zero for the dense layer.
    pub fn new(config: NetworkConfig, num_freqs: usize, seed: u64) -> Result<Self, DcError> {
        config.validate()?;
        if num_freqs == 0 {
            return Err(DcError::InvalidConfig("num_freqs must be positive".into()));
        }
        let layout = ParamLayout::new(&config, num_freqs);
        let mut params = vec![0.0; layout.len];
        let mut rng = rng_for(seed, 0);
        let gru_bound = 1.0 / (config.hidden as f64).sqrt();
        let dense = layout.entries.len() - 2;
        for (i, e) in layout.entries.iter().enumerate() {
            let bound = if i == dense {
                (6.0 / (e.rows + e.cols) as f64).sqrt()
            } else if i == dense + 1 {
                0.0
            } else {
                gru_bound
            };
            for p in &mut params[e.offset..e.offset + e.rows * e.cols] {
                *p = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
        }
        Ok(Self { config, num_freqs, params, layout, trained: false })
    }

    pub fn from_params(config: NetworkConfig, num_freqs: usize, params: Vec<f64>, trained: bool) -> Result<Self, DcError> {
        config.validate()?;
        let layout = ParamLayout::new(&config, num_freqs);
        if params.len() != layout.len {
            return Err(DcError::ShapeMismatch(format!("{} parameters, layout needs {}", params.len(), layout.len)));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(DcError::NonFinite("parameters"));
        }
        Ok(Self { config, num_freqs, params, layout, trained })
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<(), DcError> {
        if x.ncols() != self.num_freqs {
            return Err(DcError::ShapeMismatch(format!("input has {} bins, network expects {}", x.ncols(), self.num_freqs)));
        }
        if x.nrows() == 0 {
            return Err(DcError::ShapeMismatch("input has no frames".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DcError::NonFinite("input"));
        }
        Ok(())
    }

    fn gru_forward(&self, input: Array2<f64>, layer: usize, dir: usize) -> GruCache {
        let h = self.config.hidden;
        let base = gru_index(layer, dir);
        let wx = self.layout.view(&self.params, base);
        let bx = self.layout.view(&self.params, base + 1);
        let wh = self.layout.view(&self.params, base + 2);
        let bh = self.layout.view(&self.params, base + 3);
        let t_len = input.nrows();
        let mut gx = input.dot(&wx);
        add_row(&mut gx, bx.row(0));
        let wh = wh.as_slice().expect("contiguous");
        let bh = bh.as_slice().expect("contiguous");

        let mut cache = GruCache {
            h_prev: Array2::zeros((t_len, h)),
            r: Array2::zeros((t_len, h)),
            z: Array2::zeros((t_len, h)),
            n: Array2::zeros((t_len, h)),
            ghn: Array2::zeros((t_len, h)),
            out: Array2::zeros((t_len, h)),
            input,
        };
        let mut state = vec![0.0; h];
        let mut gh = vec![0.0; 3 * h];
        for step in 0..t_len {
            let t = if dir == 0 { step } else { t_len - 1 - step };
            gh.copy_from_slice(bh);
            for (k, &hk) in state.iter().enumerate() {
                if hk != 0.0 {
                    let row = &wh[k * 3 * h..(k + 1) * 3 * h];
                    for (g, w) in gh.iter_mut().zip(row) {
                        *g += hk * w;
                    }
                }
            }
            let gxt = gx.row(t);
            for j in 0..h {
                let r = sigmoid(gxt[j] + gh[j]);
                let z = sigmoid(gxt[h + j] + gh[h + j]);
                let n = (gxt[2 * h + j] + r * gh[2 * h + j]).tanh();
                cache.h_prev[[t, j]] = state[j];
                cache.r[[t, j]] = r;
                cache.z[[t, j]] = z;
                cache.n[[t, j]] = n;
                cache.ghn[[t, j]] = gh[2 * h + j];
                state[j] = (1.0 - z) * n + z * state[j];
                cache.out[[t, j]] = state[j];
            }
        }
        cache
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input when `need_input` is set.
    fn gru_backward(
        &self,
        cache: &GruCache,
        d_out: ArrayView2<'_, f64>,
        layer: usize,
        dir: usize,
        grad: &mut [f64],
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let h = self.config.hidden;
        let base = gru_index(layer, dir);
        let t_len = d_out.nrows();
        let wh = self.layout.view(&self.params, base + 2);
        let wh = wh.as_slice().expect("contiguous");
        let mut d_gx = Array2::<f64>::zeros((t_len, 3 * h));
        let mut d_gh = Array2::<f64>::zeros((t_len, 3 * h));
        let mut carry = vec![0.0; h];
        for step in 0..t_len {
            let t = if dir == 0 { t_len - 1 - step } else { step };
            let mut row_gh = vec![0.0; 3 * h];
            for j in 0..h {
                let dh = d_out[[t, j]] + carry[j];
                let (r, z, n) = (cache.r[[t, j]], cache.z[[t, j]], cache.n[[t, j]]);
                let hp = cache.h_prev[[t, j]];
                let dn = dh * (1.0 - z);
                let dz = dh * (hp - n);
                carry[j] = dh * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * cache.ghn[[t, j]];
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                d_gx[[t, j]] = dar;
                d_gx[[t, h + j]] = daz;
                d_gx[[t, 2 * h + j]] = dan;
                row_gh[j] = dar;
                row_gh[h + j] = daz;
                row_gh[2 * h + j] = dan * r;
            }
            for (k, c) in carry.iter_mut().enumerate() {
                let w = &wh[k * 3 * h..(k + 1) * 3 * h];
                *c += w.iter().zip(&row_gh).map(|(a, b)| a * b).sum::<f64>();
            }
            d_gh.row_mut(t).assign(&ArrayView1::from(&row_gh[..]));
        }
        {
            let mut g = self.layout.view_mut(grad, base);
            g += &cache.input.t().dot(&d_gx);
        }
        {
            let mut g = self.layout.view_mut(grad, base + 1);
            g += &d_gx.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        {
            let mut g = self.layout.view_mut(grad, base + 2);
            g += &cache.h_prev.t().dot(&d_gh);
        }
        {
            let mut g = self.layout.view_mut(grad, base + 3);
            g += &d_gh.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        need_input.then(|| d_gx.dot(&self.layout.view(&self.params, base).t()))
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(EmbeddingMatrix, ForwardCache), DcError> {
        self.check_input(x)?;
        let t_len = x.nrows();
        let d = self.config.embedding_dim;
        let h = self.config.hidden;
        let mut input = x.to_owned();
        let mut layers = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let fwd = self.gru_forward(input.clone(), l, 0);
            let bwd = self.gru_forward(input, l, 1);
            let mut out = Array2::zeros((t_len, 2 * h));
            out.slice_mut(s![.., ..h]).assign(&fwd.out);
            out.slice_mut(s![.., h..]).assign(&bwd.out);
            layers.push((fwd, bwd));
            input = out;
        }
        let dense = self.layout.entries.len() - 2;
        let mut u = input.dot(&self.layout.view(&self.params, dense));
        add_row(&mut u, self.layout.view(&self.params, dense + 1).row(0));
        u.mapv_inplace(f64::tanh);
        let a = u.into_shape_with_order((t_len * self.num_freqs, d)).expect("contiguous");
        let mut v = a.clone();
        let mut norms = Vec::with_capacity(v.nrows());
        let fallback = 1.0 / (d as f64).sqrt();
        for mut row in v.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm < NORM_FLOOR {
                row.fill(fallback);
            } else {
                row /= norm;
            }
            norms.push(norm);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DcError::NonFinite("embeddings"));
        }
        Ok((EmbeddingMatrix { v }, ForwardCache { layers, top: input, a, norms }))
    }

    /// Embeds a `T x F` feature matrix.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<EmbeddingMatrix, DcError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Parameter gradient given `dL/dV`.
    pub(crate) fn backward(&self, cache: &ForwardCache, v: &EmbeddingMatrix, d_v: ArrayView2<'_, f64>) -> Result<Vec<f64>, DcError> {
        let d = self.config.embedding_dim;
        let h = self.config.hidden;
        let t_len = cache.top.nrows();
        let mut grad = vec![0.0; self.layout.len];
        let mut d_a = Array2::<f64>::zeros(cache.a.dim());
        for (i, mut row) in d_a.rows_mut().into_iter().enumerate() {
            let norm = cache.norms[i];
            if norm < NORM_FLOOR {
                continue;
            }
            let vi = v.v.row(i);
            let gi = d_v.row(i);
            let proj = vi.dot(&gi);
            for k in 0..d {
                let ak = cache.a[[i, k]];
                row[k] = (gi[k] - vi[k] * proj) / norm * (1.0 - ak * ak);
            }
        }
        let d_u = d_a.into_shape_with_order((t_len, self.num_freqs * d)).expect("contiguous");
        let dense = self.layout.entries.len() - 2;
        {
            let mut g = self.layout.view_mut(&mut grad, dense);
            g += &cache.top.t().dot(&d_u);
        }
        {
            let mut g = self.layout.view_mut(&mut grad, dense + 1);
            g += &d_u.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        let mut d_h = d_u.dot(&self.layout.view(&self.params, dense).t());
        for l in (0..self.config.layers).rev() {
            let (fwd, bwd) = &cache.layers[l];
            let need = l > 0;
            let dx_f = self.gru_backward(fwd, d_h.slice(s![.., ..h]), l, 0, &mut grad, need);
            let dx_b = self.gru_backward(bwd, d_h.slice(s![.., h..]), l, 1, &mut grad, need);
            if let (Some(a), Some(b)) = (dx_f, dx_b) {
                d_h = a + b;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DcError::NonFinite("gradient"));
        }
        Ok(grad)
    }
}
