//! Layers with explicit forward caches and hand-written backward passes.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, Axis, Ix1, Ix2, IxDyn, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Activations between layers: sequences `[batch, time, channels]` or flat `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Act {
    Seq(Array3<f64>),
    Flat(Array2<f64>),
}

impl Act {
    pub fn batch(&self) -> usize {
        match self {
            Act::Seq(a) => a.dim().0,
            Act::Flat(a) => a.dim().0,
        }
    }

    fn seq(self) -> Array3<f64> {
        match self {
            Act::Seq(a) => a,
            Act::Flat(_) => panic!("layer expected a sequence input"),
        }
    }

    fn flat(self) -> Array2<f64> {
        match self {
            Act::Flat(a) => a,
            Act::Seq(_) => panic!("layer expected a flat input"),
        }
    }
}

/// Named parameter tensors. Layers refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<ArrayD<f64>>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<ArrayD<f64>> {
        self.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn m2(&self, i: usize) -> ArrayView2<'_, f64> {
        self.values[i]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d parameter")
    }

    fn m1(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values[i]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("1-d parameter")
    }
}

fn add2(grads: &mut [ArrayD<f64>], i: usize, g: &Array2<f64>) {
    let mut view = grads[i].view_mut().into_dimensionality::<Ix2>().expect("2-d gradient");
    view += g;
}

fn add1(grads: &mut [ArrayD<f64>], i: usize, g: &Array1<f64>) {
    let mut view = grads[i].view_mut().into_dimensionality::<Ix1>().expect("1-d gradient");
    view += g;
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> ArrayD<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data")
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// 1-D convolution along time with same padding, stride 1, then ReLU.
/// Weights are stored im2col-ready as `[kernel * c_in, c_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub w: usize,
    pub b: usize,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn init<R: Rng>(
        params: &mut ParamStore,
        name: &str,
        kernel: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * c_in;
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = params.add(format!("{name}.w"), uniform(rng, &[fan_in, c_out], limit));
        let b = params.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[c_out])));
        Self {
            w,
            b,
            kernel,
            c_in,
            c_out,
        }
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (batch, t_len, c_in) = x.dim();
        let pad = self.pad_left() as isize;
        let mut col = Array2::zeros((batch * t_len, self.kernel * c_in));
        for b in 0..batch {
            for t in 0..t_len {
                let mut row = col.row_mut(b * t_len + t);
                for j in 0..self.kernel {
                    let src = t as isize + j as isize - pad;
                    if (0..t_len as isize).contains(&src) {
                        row.slice_mut(s![j * c_in..(j + 1) * c_in])
                            .assign(&x.slice(s![b, src as usize, ..]));
                    }
                }
            }
        }
        col
    }

    fn forward(&self, params: &ParamStore, x: Array3<f64>) -> (Array3<f64>, Cache) {
        let (batch, t_len, _) = x.dim();
        let col = self.im2col(&x);
        let mut z = col.dot(&params.m2(self.w));
        z += &params.m1(self.b);
        z.mapv_inplace(|v| v.max(0.0));
        let out = z
            .clone()
            .into_shape_with_order((batch, t_len, self.c_out))
            .expect("conv output shape");
        (out, Cache::Conv { col, out: z, t_len })
    }

    fn backward(
        &self,
        params: &ParamStore,
        grads: &mut [ArrayD<f64>],
        col: Array2<f64>,
        out: Array2<f64>,
        t_len: usize,
        d_out: Array3<f64>,
    ) -> Array3<f64> {
        let batch = d_out.dim().0;
        let mut dz = d_out
            .into_shape_with_order((batch * t_len, self.c_out))
            .expect("conv grad shape");
        Zip::from(&mut dz).and(&out).for_each(|d, &o| {
            if o <= 0.0 {
                *d = 0.0;
            }
        });
        add2(grads, self.w, &col.t().dot(&dz));
        add1(grads, self.b, &dz.sum_axis(Axis(0)));
        let dcol = dz.dot(&params.m2(self.w).t());
        let pad = self.pad_left() as isize;
        let c_in = self.c_in;
        let mut dx = Array3::zeros((batch, t_len, c_in));
        for b in 0..batch {
            for t in 0..t_len {
                let row = dcol.row(b * t_len + t);
                for j in 0..self.kernel {
                    let src = t as isize + j as isize - pad;
                    if (0..t_len as isize).contains(&src) {
                        let mut dst = dx.slice_mut(s![b, src as usize, ..]);
                        dst += &row.slice(s![j * c_in..(j + 1) * c_in]);
                    }
                }
            }
        }
        dx
    }
}

/// LSTM returning the full hidden sequence. Gate order in the fused
/// weights is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub c_in: usize,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// Time-major input rows `t * batch + b`.
    x: Array2<f64>,
    /// Activated gates per step, `[batch, 4 * units]`.
    gates: Vec<Array2<f64>>,
    /// Cell and hidden states; index 0 is the zero initial state.
    c: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

impl Lstm {
    pub fn init<R: Rng>(params: &mut ParamStore, name: &str, c_in: usize, units: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (units as f64).sqrt();
        let wx = params.add(format!("{name}.wx"), uniform(rng, &[c_in, 4 * units], limit));
        let wh = params.add(format!("{name}.wh"), uniform(rng, &[units, 4 * units], limit));
        let mut bias = ArrayD::zeros(IxDyn(&[4 * units]));
        bias.slice_mut(s![units..2 * units]).fill(1.0);
        let b = params.add(format!("{name}.b"), bias);
        Self { wx, wh, b, c_in, units }
    }

    fn forward(&self, params: &ParamStore, x: Array3<f64>) -> (Array3<f64>, Cache) {
        let (batch, t_len, c_in) = x.dim();
        let h_units = self.units;
        let xt = x
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_len * batch, c_in))
            .expect("time-major input");
        let xw = xt.dot(&params.m2(self.wx));
        let wh = params.m2(self.wh);
        let bias = params.m1(self.b);
        let mut cache = LstmCache {
            x: xt,
            gates: Vec::with_capacity(t_len),
            c: vec![Array2::zeros((batch, h_units))],
            h: vec![Array2::zeros((batch, h_units))],
            tanh_c: Vec::with_capacity(t_len),
        };
        let mut out = Array3::zeros((batch, t_len, h_units));
        for t in 0..t_len {
            let mut a = cache.h[t].dot(&wh);
            a += &xw.slice(s![t * batch..(t + 1) * batch, ..]);
            a += &bias;
            for mut row in a.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if (2 * h_units..3 * h_units).contains(&k) {
                        v.tanh()
                    } else {
                        sigmoid(*v)
                    };
                }
            }
            let i = a.slice(s![.., 0..h_units]);
            let f = a.slice(s![.., h_units..2 * h_units]);
            let g = a.slice(s![.., 2 * h_units..3 * h_units]);
            let o = a.slice(s![.., 3 * h_units..]);
            let c = &f * &cache.c[t] + &i * &g;
            let tc = c.mapv(f64::tanh);
            let h = &o * &tc;
            out.slice_mut(s![.., t, ..]).assign(&h);
            cache.gates.push(a);
            cache.c.push(c);
            cache.tanh_c.push(tc);
            cache.h.push(h);
        }
        (out, Cache::Lstm(Box::new(cache)))
    }

    fn backward(
        &self,
        params: &ParamStore,
        grads: &mut [ArrayD<f64>],
        cache: LstmCache,
        d_out: Array3<f64>,
    ) -> Array3<f64> {
        let (batch, t_len, h_units) = d_out.dim();
        let wh = params.m2(self.wh);
        let mut d_a_all = Array2::zeros((t_len * batch, 4 * h_units));
        let mut dwh = Array2::zeros((h_units, 4 * h_units));
        let mut dh_next = Array2::<f64>::zeros((batch, h_units));
        let mut dc_next = Array2::<f64>::zeros((batch, h_units));
        for t in (0..t_len).rev() {
            let gates = &cache.gates[t];
            let i = gates.slice(s![.., 0..h_units]);
            let f = gates.slice(s![.., h_units..2 * h_units]);
            let g = gates.slice(s![.., 2 * h_units..3 * h_units]);
            let o = gates.slice(s![.., 3 * h_units..]);
            let tc = &cache.tanh_c[t];
            let dh = &d_out.slice(s![.., t, ..]) + &dh_next;
            let d_o = &dh * tc;
            let dc = &dh * &o * &tc.mapv(|v| 1.0 - v * v) + &dc_next;
            let di = &dc * &g;
            let dg = &dc * &i;
            let df = &dc * &cache.c[t];
            dc_next = &dc * &f;
            let mut da = d_a_all.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            Zip::from(da.slice_mut(s![.., 0..h_units]))
                .and(&di)
                .and(&i)
                .for_each(|d, &dv, &v| *d = dv * v * (1.0 - v));
            Zip::from(da.slice_mut(s![.., h_units..2 * h_units]))
                .and(&df)
                .and(&f)
                .for_each(|d, &dv, &v| *d = dv * v * (1.0 - v));
            Zip::from(da.slice_mut(s![.., 2 * h_units..3 * h_units]))
                .and(&dg)
                .and(&g)
                .for_each(|d, &dv, &v| *d = dv * (1.0 - v * v));
            Zip::from(da.slice_mut(s![.., 3 * h_units..]))
                .and(&d_o)
                .and(&o)
                .for_each(|d, &dv, &v| *d = dv * v * (1.0 - v));
            let da = da.view();
            dwh += &cache.h[t].t().dot(&da);
            dh_next = da.dot(&wh.t());
        }
        add2(grads, self.wh, &dwh);
        add2(grads, self.wx, &cache.x.t().dot(&d_a_all));
        add1(grads, self.b, &d_a_all.sum_axis(Axis(0)));
        let dx = d_a_all.dot(&params.m2(self.wx).t());
        dx.into_shape_with_order((t_len, batch, self.c_in))
            .expect("time-major grad")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
    }
}

/// Additive attention pooling: `score_t = v . tanh(W h_t + b)`, softmax over
/// time, output is the weighted sum of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub w: usize,
    pub b: usize,
    pub v: usize,
    pub c_in: usize,
    pub dim: usize,
}

impl Attention {
    pub fn init<R: Rng>(params: &mut ParamStore, name: &str, c_in: usize, dim: usize, rng: &mut R) -> Self {
        let w = params.add(
            format!("{name}.w"),
            uniform(rng, &[c_in, dim], (3.0 / c_in as f64).sqrt()),
        );
        let b = params.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[dim])));
        let v = params.add(format!("{name}.v"), uniform(rng, &[dim], (3.0 / dim as f64).sqrt()));
        Self { w, b, v, c_in, dim }
    }

    fn forward(&self, params: &ParamStore, x: Array3<f64>) -> (Array2<f64>, Cache) {
        let (batch, t_len, c_in) = x.dim();
        let x2 = x
            .view()
            .into_shape_with_order((batch * t_len, c_in))
            .expect("attention rows")
            .to_owned();
        let mut u = x2.dot(&params.m2(self.w));
        u += &params.m1(self.b);
        u.mapv_inplace(f64::tanh);
        let scores = u
            .dot(&params.m1(self.v))
            .into_shape_with_order((batch, t_len))
            .expect("score shape");
        let mut alpha = scores;
        for mut row in alpha.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|s| (s - m).exp());
            let z = row.sum();
            row /= z;
        }
        let mut ctx = Array2::zeros((batch, c_in));
        for b in 0..batch {
            let weights = alpha.row(b);
            ctx.row_mut(b).assign(&weights.dot(&x.slice(s![b, .., ..])));
        }
        (ctx, Cache::Attention { x, u, alpha })
    }

    fn backward(
        &self,
        params: &ParamStore,
        grads: &mut [ArrayD<f64>],
        x: Array3<f64>,
        u: Array2<f64>,
        alpha: Array2<f64>,
        d_ctx: Array2<f64>,
    ) -> Array3<f64> {
        let (batch, t_len, c_in) = x.dim();
        let mut dx = Array3::zeros((batch, t_len, c_in));
        let mut ds = Array2::zeros((batch, t_len));
        for b in 0..batch {
            let xb = x.slice(s![b, .., ..]);
            let dc = d_ctx.row(b);
            let d_alpha = xb.dot(&dc);
            let a = alpha.row(b);
            let inner = a.dot(&d_alpha);
            for t in 0..t_len {
                ds[[b, t]] = a[t] * (d_alpha[t] - inner);
                dx.slice_mut(s![b, t, ..]).scaled_add(a[t], &dc);
            }
        }
        let ds = ds.into_shape_with_order(batch * t_len).expect("flat scores");
        add1(grads, self.v, &u.t().dot(&ds));
        let v = params.m1(self.v);
        let mut dz = Array2::zeros((batch * t_len, self.dim));
        Zip::from(dz.rows_mut())
            .and(&ds)
            .and(u.rows())
            .for_each(|mut row, &d, urow| {
                Zip::from(&mut row)
                    .and(&v)
                    .and(&urow)
                    .for_each(|z, &vv, &uu| *z = d * vv * (1.0 - uu * uu));
            });
        let x2 = x
            .view()
            .into_shape_with_order((batch * t_len, c_in))
            .expect("attention rows");
        add2(grads, self.w, &x2.t().dot(&dz));
        add1(grads, self.b, &dz.sum_axis(Axis(0)));
        let dx_lin = dz
            .dot(&params.m2(self.w).t())
            .into_shape_with_order((batch, t_len, c_in))
            .expect("attention grad");
        dx + dx_lin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn init<R: Rng>(
        params: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let scale = match activation {
            Activation::Relu => 6.0,
            Activation::Identity => 3.0,
        };
        let limit = (scale / n_in as f64).sqrt();
        let w = params.add(format!("{name}.w"), uniform(rng, &[n_in, n_out], limit));
        let b = params.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[n_out])));
        Self {
            w,
            b,
            n_in,
            n_out,
            activation,
        }
    }

    fn forward(&self, params: &ParamStore, x: Array2<f64>) -> (Array2<f64>, Cache) {
        let mut z = x.dot(&params.m2(self.w));
        z += &params.m1(self.b);
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        (z.clone(), Cache::Dense { x, out: z })
    }

    fn backward(
        &self,
        params: &ParamStore,
        grads: &mut [ArrayD<f64>],
        x: Array2<f64>,
        out: Array2<f64>,
        mut d_out: Array2<f64>,
    ) -> Array2<f64> {
        if self.activation == Activation::Relu {
            Zip::from(&mut d_out).and(&out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        add2(grads, self.w, &x.t().dot(&d_out));
        add1(grads, self.b, &d_out.sum_axis(Axis(0)));
        d_out.dot(&params.m2(self.w).t())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv1d(Conv1d),
    Lstm(Lstm),
    /// Inverted dropout; identity at inference.
    Dropout {
        rate: f64,
    },
    Attention(Attention),
    /// Keeps only the final time step.
    LastStep,
    Flatten,
    Dense(Dense),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cache {
    Conv {
        col: Array2<f64>,
        out: Array2<f64>,
        t_len: usize,
    },
    Lstm(Box<LstmCache>),
    Dropout(Option<ArrayD<f64>>),
    Attention {
        x: Array3<f64>,
        u: Array2<f64>,
        alpha: Array2<f64>,
    },
    LastStep {
        t_len: usize,
    },
    Flatten {
        t_len: usize,
        c: usize,
    },
    Dense {
        x: Array2<f64>,
        out: Array2<f64>,
    },
}

impl Layer {
    /// Runs the layer. `rng` is `Some` in training mode and drives dropout masks.
    pub fn forward<R: Rng>(&self, params: &ParamStore, x: Act, rng: Option<&mut R>) -> (Act, Cache) {
        match self {
            Layer::Conv1d(l) => {
                let (y, c) = l.forward(params, x.seq());
                (Act::Seq(y), c)
            }
            Layer::Lstm(l) => {
                let (y, c) = l.forward(params, x.seq());
                (Act::Seq(y), c)
            }
            Layer::Attention(l) => {
                let (y, c) = l.forward(params, x.seq());
                (Act::Flat(y), c)
            }
            Layer::Dense(l) => {
                let (y, c) = l.forward(params, x.flat());
                (Act::Flat(y), c)
            }
            Layer::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let (y, mask) = match x {
                        Act::Seq(a) => {
                            let mask = a.mapv(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep });
                            (Act::Seq(a * &mask), mask.into_dyn())
                        }
                        Act::Flat(a) => {
                            let mask = a.mapv(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep });
                            (Act::Flat(a * &mask), mask.into_dyn())
                        }
                    };
                    (y, Cache::Dropout(Some(mask)))
                }
                _ => (x, Cache::Dropout(None)),
            },
            Layer::LastStep => {
                let a = x.seq();
                let t_len = a.dim().1;
                (
                    Act::Flat(a.slice(s![.., t_len - 1, ..]).to_owned()),
                    Cache::LastStep { t_len },
                )
            }
            Layer::Flatten => {
                let a = x.seq();
                let (batch, t_len, c) = a.dim();
                let flat = a
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((batch, t_len * c))
                    .expect("flatten");
                (Act::Flat(flat), Cache::Flatten { t_len, c })
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, params: &ParamStore, grads: &mut [ArrayD<f64>], cache: Cache, d_out: Act) -> Act {
        match (self, cache) {
            (Layer::Conv1d(l), Cache::Conv { col, out, t_len }) => {
                Act::Seq(l.backward(params, grads, col, out, t_len, d_out.seq()))
            }
            (Layer::Lstm(l), Cache::Lstm(c)) => Act::Seq(l.backward(params, grads, *c, d_out.seq())),
            (Layer::Attention(l), Cache::Attention { x, u, alpha }) => {
                Act::Seq(l.backward(params, grads, x, u, alpha, d_out.flat()))
            }
            (Layer::Dense(l), Cache::Dense { x, out }) => Act::Flat(l.backward(params, grads, x, out, d_out.flat())),
            (Layer::Dropout { .. }, Cache::Dropout(None)) => d_out,
            (Layer::Dropout { .. }, Cache::Dropout(Some(mask))) => match d_out {
                Act::Seq(d) => Act::Seq(d * &mask.into_dimensionality::<ndarray::Ix3>().expect("seq mask")),
                Act::Flat(d) => Act::Flat(d * &mask.into_dimensionality::<Ix2>().expect("flat mask")),
            },
            (Layer::LastStep, Cache::LastStep { t_len }) => {
                let d = d_out.flat();
                let (batch, c) = d.dim();
                let mut dx = Array3::zeros((batch, t_len, c));
                dx.slice_mut(s![.., t_len - 1, ..]).assign(&d);
                Act::Seq(dx)
            }
            (Layer::Flatten, Cache::Flatten { t_len, c }) => {
                let d = d_out.flat();
                let batch = d.dim().0;
                Act::Seq(d.into_shape_with_order((batch, t_len, c)).expect("unflatten"))
            }
            _ => panic!("cache does not belong to this layer"),
        }
    }
}
