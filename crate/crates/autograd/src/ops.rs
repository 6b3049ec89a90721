//! Differentiable ops. Shapes follow NCHW for images and `[N, L]` for
//! embedding batches. There is no implicit broadcasting: binary ops require
//! equal shapes, scalars enter through `add_scalar` / `scale`.

use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};

use crate::tape::{Tensor, Var};

fn std_vec(t: &Tensor) -> Vec<f64> {
    match t.as_slice() {
        Some(s) => s.to_vec(),
        None => t.iter().copied().collect(),
    }
}

fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let out = x.value().mapv(f);
    x.tape().op(
        &[x],
        out,
        Box::new(move |ctx| {
            let mut g = ctx.grad.clone();
            Zip::from(&mut g)
                .and(&*ctx.inputs[0])
                .and(ctx.output)
                .for_each(|g, &x, &y| *g *= df(x, y));
            vec![Some(g)]
        }),
    )
}

fn check_same(a: &Var<'_>, b: &Var<'_>, op: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        check_same(&self, &other, "add");
        let out = &*self.value() + &*other.value();
        self.tape().op(
            &[self, other],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        check_same(&self, &other, "sub");
        let out = &*self.value() - &*other.value();
        self.tape().op(
            &[self, other],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(-ctx.grad)]),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        check_same(&self, &other, "mul");
        let out = &*self.value() * &*other.value();
        self.tape().op(
            &[self, other],
            out,
            Box::new(|ctx| {
                vec![
                    ctx.needs[0].then(|| ctx.grad * &*ctx.inputs[1]),
                    ctx.needs[1].then(|| ctx.grad * &*ctx.inputs[0]),
                ]
            }),
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        unary(self, move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        unary(self, move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        unary(self, |x| 1.0 - x, |_, _| -1.0)
    }

    pub fn abs(self) -> Var<'t> {
        unary(self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn ln(self) -> Var<'t> {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        unary(
            self,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `log(sigmoid(x))`, finite for every finite `x`.
    pub fn log_sigmoid(self) -> Var<'t> {
        unary(self, log_sigmoid, |x, _| sigmoid(-x))
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        unary(
            self,
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn sum_all(self) -> Var<'t> {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        self.tape().op(
            &[self],
            out,
            Box::new(|ctx| {
                let g = *ctx.grad.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(ctx.inputs[0].raw_dim(), g))]
            }),
        )
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = std_vec(&self.value());
        let out = ArrayD::from_shape_vec(IxDyn(shape), v).expect("reshape: element count");
        self.tape().op(
            &[self],
            out,
            Box::new(|ctx| {
                let g = std_vec(ctx.grad);
                vec![Some(
                    ArrayD::from_shape_vec(ctx.inputs[0].raw_dim(), g).unwrap(),
                )]
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x)) = -softplus(-x)`, evaluated without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Sum of several vars of equal shape.
pub fn sum_vars<'t>(vars: &[Var<'t>]) -> Var<'t> {
    let mut it = vars.iter().copied();
    let first = it.next().expect("sum_vars on empty slice");
    it.fold(first, |acc, v| acc.add(v))
}

fn dims4(v: &Var<'_>, what: &str) -> [usize; 4] {
    let s = v.shape();
    assert_eq!(s.len(), 4, "{what}: expected NCHW, got {s:?}");
    [s[0], s[1], s[2], s[3]]
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn im2col(x: &[f64], g: &ConvGeom) -> Array2<f64> {
    let rows = g.c * g.k * g.k;
    let cols = g.n * g.ho * g.wo;
    let mut out = vec![0.0; rows * cols];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &mut out[r * cols..(r + 1) * cols];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * g.w..][..g.w];
                        let dst = &mut row[(ni * g.ho + oh) * g.wo..][..g.wo];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                *d = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, cols), out).unwrap()
}

fn col2im(cols: &Array2<f64>, g: &ConvGeom) -> Vec<f64> {
    let ncols = g.n * g.ho * g.wo;
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().unwrap();
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (ci * g.k + ki) * g.k + kj;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for ni in 0..g.n {
                    let plane = &mut x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oh in 0..g.ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let src = &row[(ni * g.ho + oh) * g.wo..][..g.wo];
                        let dst = &mut plane[ih as usize * g.w..][..g.w];
                        for (ow, s) in src.iter().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                dst[iw as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[Co, N*Ho*Wo]` (matmul layout) -> `[N, Co, Ho, Wo]`
fn cm_to_nchw(m: &[f64], n: usize, co: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * co * hw];
    for o in 0..co {
        for ni in 0..n {
            out[(ni * co + o) * hw..][..hw].copy_from_slice(&m[o * n * hw + ni * hw..][..hw]);
        }
    }
    out
}

fn nchw_to_cm(x: &[f64], n: usize, co: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * co * hw];
    for o in 0..co {
        for ni in 0..n {
            out[o * n * hw + ni * hw..][..hw].copy_from_slice(&x[(ni * co + o) * hw..][..hw]);
        }
    }
    out
}

/// 2-D convolution with square kernels and zero padding.
///
/// `x: [N, C, H, W]`, `weight: [Co, C, k, k]`, `bias: [Co]`.
pub fn conv2d<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    stride: usize,
    pad: usize,
) -> Var<'t> {
    let [n, c, h, w] = dims4(&x, "conv2d input");
    let [co, wc, k, k2] = dims4(&weight, "conv2d weight");
    assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
    assert_eq!(k, k2, "conv2d: square kernels only");
    assert!(stride >= 1);
    assert!(
        h + 2 * pad >= k && w + 2 * pad >= k,
        "conv2d: input {h}x{w} smaller than kernel {k}"
    );
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let geom = ConvGeom {
        n,
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    };
    let xv = std_vec(&x.value());
    let wv = std_vec(&weight.value());
    let cols = im2col(&xv, &geom);
    let wm = ArrayView2::from_shape((co, c * k * k), &wv).unwrap();
    let om = wm.dot(&cols);
    let om = om.as_standard_layout();
    let mut out = cm_to_nchw(om.as_slice().unwrap(), n, co, ho * wo);
    if let Some(b) = &bias {
        let bv = b.value();
        assert_eq!(bv.shape(), &[co], "conv2d bias shape");
        for ni in 0..n {
            for (o, &bo) in bv.iter().enumerate() {
                for v in &mut out[(ni * co + o) * ho * wo..][..ho * wo] {
                    *v += bo;
                }
            }
        }
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[n, co, ho, wo]), out).unwrap();

    let mut parents = vec![x, weight];
    parents.extend(bias);
    x.tape().op(
        &parents,
        out,
        Box::new(move |ctx| {
            let geom = &geom;
            let gv = std_vec(ctx.grad);
            let gm = Array2::from_shape_vec(
                (co, n * ho * wo),
                nchw_to_cm(&gv, n, co, ho * wo),
            )
            .unwrap();
            let xv = std_vec(&ctx.inputs[0]);
            let wv = std_vec(&ctx.inputs[1]);
            let wm = ArrayView2::from_shape((co, c * k * k), &wv).unwrap();
            let dx = ctx.needs[0].then(|| {
                let dcols = wm.t().dot(&gm);
                ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), col2im(&dcols, geom)).unwrap()
            });
            let dw = ctx.needs[1].then(|| {
                let cols = im2col(&xv, geom);
                let dw = gm.dot(&cols.t());
                let dw = dw.as_standard_layout().into_owned();
                ArrayD::from_shape_vec(IxDyn(&[co, c, k, k]), dw.into_raw_vec_and_offset().0)
                    .unwrap()
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| gm.sum_axis(Axis(1)).into_dyn()));
            }
            grads
        }),
    )
}

/// Nearest-neighbour resize of an NCHW tensor to `(oh, ow)`, using the
/// `src = floor(dst * in / out)` index rule.
pub fn resize_nearest<'t>(x: Var<'t>, oh: usize, ow: usize) -> Var<'t> {
    let [n, c, h, w] = dims4(&x, "resize_nearest");
    let rows: Vec<usize> = (0..oh).map(|i| i * h / oh).collect();
    let cols: Vec<usize> = (0..ow).map(|j| j * w / ow).collect();
    let xv = std_vec(&x.value());
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &xv[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (i, &r) in rows.iter().enumerate() {
            for (j, &cc) in cols.iter().enumerate() {
                dst[i * ow + j] = src[r * w + cc];
            }
        }
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).unwrap();
    x.tape().op(
        &[x],
        out,
        Box::new(move |ctx| {
            let gv = std_vec(ctx.grad);
            let mut dx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &gv[p * oh * ow..][..oh * ow];
                let dst = &mut dx[p * h * w..][..h * w];
                for (i, &r) in rows.iter().enumerate() {
                    for (j, &cc) in cols.iter().enumerate() {
                        dst[r * w + cc] += src[i * ow + j];
                    }
                }
            }
            vec![Some(
                ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).unwrap(),
            )]
        }),
    )
}

/// Concatenate NCHW tensors along the channel axis.
pub fn concat_channels<'t>(xs: &[Var<'t>]) -> Var<'t> {
    assert!(!xs.is_empty());
    let shapes: Vec<[usize; 4]> = xs.iter().map(|x| dims4(x, "concat_channels")).collect();
    let [n, _, h, w] = shapes[0];
    for s in &shapes {
        assert!(s[0] == n && s[2] == h && s[3] == w, "concat_channels: {shapes:?}");
    }
    let chans: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    let ctot: usize = chans.iter().sum();
    let hw = h * w;
    let mut out = vec![0.0; n * ctot * hw];
    let mut off = 0;
    for (x, &cx) in xs.iter().zip(&chans) {
        let xv = std_vec(&x.value());
        for ni in 0..n {
            out[(ni * ctot + off) * hw..][..cx * hw].copy_from_slice(&xv[ni * cx * hw..][..cx * hw]);
        }
        off += cx;
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[n, ctot, h, w]), out).unwrap();
    xs[0].tape().op(
        xs,
        out,
        Box::new(move |ctx| {
            let gv = std_vec(ctx.grad);
            let mut off = 0;
            let mut grads = Vec::with_capacity(chans.len());
            for (i, &cx) in chans.iter().enumerate() {
                if ctx.needs[i] {
                    let mut g = vec![0.0; n * cx * hw];
                    for ni in 0..n {
                        g[ni * cx * hw..][..cx * hw]
                            .copy_from_slice(&gv[(ni * ctot + off) * hw..][..cx * hw]);
                    }
                    grads.push(Some(
                        ArrayD::from_shape_vec(IxDyn(&[n, cx, h, w]), g).unwrap(),
                    ));
                } else {
                    grads.push(None);
                }
                off += cx;
            }
            grads
        }),
    )
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool<'t>(x: Var<'t>) -> Var<'t> {
    let [n, c, h, w] = dims4(&x, "global_avg_pool");
    let hw = (h * w) as f64;
    let xv = x.value();
    let out = xv
        .view()
        .into_shape_with_order((n, c, h * w))
        .unwrap()
        .sum_axis(Axis(2))
        .mapv(|s| s / hw)
        .into_dyn();
    x.tape().op(
        &[x],
        out,
        Box::new(move |ctx| {
            let mut dx = ArrayD::zeros(IxDyn(&[n, c, h, w]));
            for ((ni, ci, _, _), v) in dx
                .view_mut()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .indexed_iter_mut()
            {
                *v = ctx.grad[[ni, ci]] / hw;
            }
            vec![Some(dx)]
        }),
    )
}

/// `x: [N, In]`, `weight: [Out, In]`, `bias: [Out]` -> `[N, Out]`.
pub fn linear<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
    let xs = x.shape();
    let ws = weight.shape();
    assert!(xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1], "linear: {xs:?} x {ws:?}");
    let xv = (*x.value()).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
    let wv = (*weight.value()).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
    let mut out = xv.dot(&wv.t());
    if let Some(b) = &bias {
        let bv = (*b.value()).clone().into_dimensionality::<ndarray::Ix1>().unwrap();
        assert_eq!(bv.len(), ws[0], "linear bias shape");
        out += &bv;
    }
    let mut parents = vec![x, weight];
    parents.extend(bias);
    x.tape().op(
        &parents,
        out.into_dyn(),
        Box::new(|ctx| {
            let g = ctx.grad.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let xv = ctx.inputs[0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let wv = ctx.inputs[1].view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let mut grads = vec![
                ctx.needs[0].then(|| g.dot(&wv).into_dyn()),
                ctx.needs[1].then(|| g.t().dot(&xv).into_dyn()),
            ];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| g.sum_axis(Axis(0)).into_dyn()));
            }
            grads
        }),
    )
}

/// Row-wise cosine similarity of `f: [N, L]` against one vector `t: [L]`,
/// giving `[N]`. Panics on a zero-norm operand.
pub fn cosine_rows<'t>(f: Var<'t>, t: Var<'t>) -> Var<'t> {
    let fv = (*f.value()).clone().into_dimensionality::<ndarray::Ix2>().expect("cosine_rows: f must be [N, L]");
    let tv = (*t.value()).clone().into_dimensionality::<ndarray::Ix1>().expect("cosine_rows: t must be [L]");
    assert_eq!(fv.ncols(), tv.len(), "cosine_rows: length mismatch");
    let tn = tv.dot(&tv).sqrt();
    assert!(tn > 0.0, "cosine_rows: zero-norm prompt vector");
    let mut out = Vec::with_capacity(fv.nrows());
    for row in fv.rows() {
        let fnorm = row.dot(&row).sqrt();
        assert!(fnorm > 0.0, "cosine_rows: zero-norm feature vector");
        out.push(row.dot(&tv) / (fnorm * tn));
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[fv.nrows()]), out).unwrap();
    f.tape().op(
        &[f, t],
        out,
        Box::new(|ctx| {
            let fv = ctx.inputs[0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let tv = ctx.inputs[1].view().into_dimensionality::<ndarray::Ix1>().unwrap();
            let tn = tv.dot(&tv).sqrt();
            let mut df = Array2::<f64>::zeros(fv.raw_dim());
            let mut dt = ndarray::Array1::<f64>::zeros(tv.len());
            for (i, row) in fv.rows().into_iter().enumerate() {
                let g = ctx.grad[[i]];
                let s = ctx.output[[i]];
                let fnorm = row.dot(&row).sqrt();
                // d cos / d f = t/(|f||t|) - s f/|f|^2, symmetric for t
                if ctx.needs[0] {
                    let mut r = df.row_mut(i);
                    r.zip_mut_with(&row, |d, &fx| *d = -s * fx / (fnorm * fnorm));
                    r.scaled_add(1.0 / (fnorm * tn), &tv);
                    r.mapv_inplace(|d| d * g);
                }
                if ctx.needs[1] {
                    dt.scaled_add(g / (fnorm * tn), &row);
                    dt.scaled_add(-g * s / (tn * tn), &tv);
                }
            }
            vec![
                ctx.needs[0].then(|| df.into_dyn()),
                ctx.needs[1].then(|| dt.into_dyn()),
            ]
        }),
    )
}

/// `[n, T] -> [T]` mean over rows.
pub fn mean_rows<'t>(x: Var<'t>) -> Var<'t> {
    let xv = (*x.value()).clone().into_dimensionality::<ndarray::Ix2>().expect("mean_rows: [n, T]");
    let n = xv.nrows();
    let out = xv.mean_axis(Axis(0)).unwrap().into_dyn();
    x.tape().op(
        &[x],
        out,
        Box::new(move |ctx| {
            let g = ctx.grad.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            let t = g.len();
            let mut dx = Array2::<f64>::zeros((n, t));
            for mut row in dx.rows_mut() {
                row.assign(&g);
                row.mapv_inplace(|v| v / n as f64);
            }
            vec![Some(dx.into_dyn())]
        }),
    )
}

/// Weight divided by its spectral norm estimate `sigma = u^T W v`, with the
/// power-iteration vectors `u` (`[Co]`) and `v` (`[C*k*k]`) held constant.
/// `weight` is viewed as a `[Co, rest]` matrix.
pub fn spectral_normalize<'t>(weight: Var<'t>, u: &[f64], v: &[f64]) -> Var<'t> {
    let wv = std_vec(&weight.value());
    let shape = weight.shape();
    let rows = shape[0];
    let cols = wv.len() / rows;
    assert_eq!(u.len(), rows, "spectral_normalize: u length");
    assert_eq!(v.len(), cols, "spectral_normalize: v length");
    let wm = ArrayView2::from_shape((rows, cols), &wv).unwrap();
    let u = ndarray::Array1::from(u.to_vec());
    let v = ndarray::Array1::from(v.to_vec());
    let sigma = u.dot(&wm.dot(&v));
    assert!(sigma.abs() > 0.0, "spectral_normalize: zero spectral norm");
    let out = weight.value().mapv(|x| x / sigma);
    weight.tape().op(
        &[weight],
        out,
        Box::new(move |ctx| {
            // d(W/s)/dW applied to G: G/s - <G, W> u v^T / s^2
            let inner: f64 = ctx.grad.iter().zip(ctx.inputs[0].iter()).map(|(g, w)| g * w).sum();
            let coef = inner / (sigma * sigma);
            let mut flat = std_vec(ctx.grad);
            for i in 0..rows {
                for j in 0..cols {
                    let g = &mut flat[i * cols + j];
                    *g = *g / sigma - coef * u[i] * v[j];
                }
            }
            vec![Some(ArrayD::from_shape_vec(ctx.inputs[0].raw_dim(), flat).unwrap())]
        }),
    )
}
