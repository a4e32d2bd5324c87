//! The differentiable op set.
//!
//! Every method returns a new tape node. Backward closures capture `Rc`
//! handles on the values they need, so recording is allocation-light.
//! Shape violations are programming errors and panic; user-facing contract
//! checks happen in the modules that build on this layer.

use super::{BackFn, Var};
use crate::scalar::Scalar;
use ndarray::{s, Array2, Axis};

fn row_sums<S: Scalar>(a: &Array2<S>) -> Array2<S> {
    a.sum_axis(Axis(1)).insert_axis(Axis(1))
}

fn col_sums<S: Scalar>(a: &Array2<S>) -> Array2<S> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl<S: Scalar> Var<S> {
    pub fn matmul(&self, rhs: &Var<S>) -> Var<S> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.ncols(), b.nrows(), "matmul inner dims");
        let out = a.dot(&*b);
        let (a2, b2) = (a.clone(), b.clone());
        self.push_binary(
            rhs,
            out,
            move |g| g.dot(&b2.t()),
            move |g| a2.t().dot(g),
        )
    }

    pub fn t(&self) -> Var<S> {
        let out = self.value().t().to_owned();
        self.push_unary(out, |g| g.t().to_owned())
    }

    pub fn add(&self, rhs: &Var<S>) -> Var<S> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.dim(), b.dim(), "add shapes");
        self.push_binary(rhs, &*a + &*b, |g| g.clone(), |g| g.clone())
    }

    pub fn sub(&self, rhs: &Var<S>) -> Var<S> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.dim(), b.dim(), "sub shapes");
        self.push_binary(rhs, &*a - &*b, |g| g.clone(), |g| g.mapv(|v| -v))
    }

    pub fn mul(&self, rhs: &Var<S>) -> Var<S> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.dim(), b.dim(), "mul shapes");
        let (a2, b2) = (a.clone(), b.clone());
        self.push_binary(rhs, &*a * &*b, move |g| g * &*b2, move |g| g * &*a2)
    }

    /// `self (N×D) + row (1×D)` broadcast down the rows.
    pub fn add_row(&self, row: &Var<S>) -> Var<S> {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.nrows(), 1, "add_row needs a 1×D row");
        assert_eq!(a.ncols(), r.ncols(), "add_row width");
        self.push_binary(row, &*a + &*r, |g| g.clone(), |g| col_sums(g))
    }

    /// `self (N×D) + col (N×1)` broadcast across the columns.
    pub fn add_col(&self, col: &Var<S>) -> Var<S> {
        let a = self.value();
        let c = col.value();
        assert_eq!(c.ncols(), 1, "add_col needs an N×1 column");
        assert_eq!(a.nrows(), c.nrows(), "add_col height");
        self.push_binary(col, &*a + &*c, |g| g.clone(), |g| row_sums(g))
    }

    /// `self (N×D) ⊙ col (N×1)` broadcast across the columns.
    pub fn mul_col(&self, col: &Var<S>) -> Var<S> {
        let a = self.value();
        let c = col.value();
        assert_eq!(c.ncols(), 1, "mul_col needs an N×1 column");
        assert_eq!(a.nrows(), c.nrows(), "mul_col height");
        let (a2, c2) = (a.clone(), c.clone());
        self.push_binary(
            col,
            &*a * &*c,
            move |g| g * &*c2,
            move |g| row_sums(&(g * &*a2)),
        )
    }

    pub fn scale(&self, factor: S) -> Var<S> {
        let out = self.value().mapv(|v| v * factor);
        self.push_unary(out, move |g| g.mapv(|v| v * factor))
    }

    pub fn neg(&self) -> Var<S> {
        self.scale(-S::one())
    }

    pub fn add_scalar(&self, c: S) -> Var<S> {
        let out = self.value().mapv(|v| v + c);
        self.push_unary(out, |g| g.clone())
    }

    pub fn relu(&self) -> Var<S> {
        let x = self.value();
        let out = x.mapv(|v| if v > S::zero() { v } else { S::zero() });
        let x2 = x.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&x2, |d, &v| {
                if v <= S::zero() {
                    *d = S::zero();
                }
            });
            dx
        })
    }

    pub fn sigmoid(&self) -> Var<S> {
        let out = self
            .value()
            .mapv(|v| S::one() / (S::one() + (-v).exp()));
        let s2 = out.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&s2, |d, &sv| *d = *d * sv * (S::one() - sv));
            dx
        })
    }

    pub fn tanh(&self) -> Var<S> {
        let out = self.value().mapv(|v| v.tanh());
        let t2 = out.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&t2, |d, &tv| *d = *d * (S::one() - tv * tv));
            dx
        })
    }

    pub fn exp(&self) -> Var<S> {
        let out = self.value().mapv(|v| v.exp());
        let e2 = out.clone();
        self.push_unary(out, move |g| g * &e2)
    }

    pub fn ln(&self) -> Var<S> {
        let x = self.value();
        let out = x.mapv(|v| v.ln());
        let x2 = x.clone();
        self.push_unary(out, move |g| g / &*x2)
    }

    pub fn sqrt(&self) -> Var<S> {
        let out = self.value().mapv(|v| v.sqrt());
        let y2 = out.clone();
        let half = S::from_f64(0.5);
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&y2, |d, &yv| *d = *d * half / yv);
            dx
        })
    }

    pub fn recip(&self) -> Var<S> {
        let out = self.value().mapv(|v| S::one() / v);
        let y2 = out.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&y2, |d, &yv| *d = -*d * yv * yv);
            dx
        })
    }

    pub fn abs(&self) -> Var<S> {
        let x = self.value();
        let out = x.mapv(|v| v.abs());
        let x2 = x.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&x2, |d, &v| *d = *d * v.signum() * if v == S::zero() { S::zero() } else { S::one() });
            dx
        })
    }

    /// Elementwise `max(x, floor)`; gradient passes where `x >= floor`.
    pub fn clamp_min(&self, floor: S) -> Var<S> {
        let x = self.value();
        let out = x.mapv(|v| v.max(floor));
        let x2 = x.clone();
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            dx.zip_mut_with(&x2, |d, &v| {
                if v < floor {
                    *d = S::zero();
                }
            });
            dx
        })
    }

    /// Softmax across each row (normalizes over columns).
    pub fn softmax_rows(&self) -> Var<S> {
        let x = self.value();
        let mut out = Array2::zeros(x.dim());
        for (xi, mut oi) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let m = xi.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for (o, &v) in oi.iter_mut().zip(xi.iter()) {
                *o = (v - m).exp();
                z = z + *o;
            }
            oi.mapv_inplace(|v| v / z);
        }
        let s2 = out.clone();
        self.push_unary(out, move |g| {
            let mut dx = Array2::zeros(g.dim());
            for ((gi, si), mut di) in g
                .axis_iter(Axis(0))
                .zip(s2.axis_iter(Axis(0)))
                .zip(dx.axis_iter_mut(Axis(0)))
            {
                let dot: S = gi.iter().zip(si.iter()).map(|(&a, &b)| a * b).sum();
                for ((d, &gv), &sv) in di.iter_mut().zip(gi.iter()).zip(si.iter()) {
                    *d = sv * (gv - dot);
                }
            }
            dx
        })
    }

    /// Softmax down each column (normalizes over rows). This is the
    /// competitive axis in slot attention.
    pub fn softmax_cols(&self) -> Var<S> {
        self.t().softmax_rows().t()
    }

    /// Numerically stable `log(softmax)` across each row.
    pub fn log_softmax_rows(&self) -> Var<S> {
        let x = self.value();
        let mut out = Array2::zeros(x.dim());
        let mut soft = Array2::zeros(x.dim());
        for ((xi, mut oi), mut si) in x
            .axis_iter(Axis(0))
            .zip(out.axis_iter_mut(Axis(0)))
            .zip(soft.axis_iter_mut(Axis(0)))
        {
            let m = xi.iter().cloned().fold(S::neg_infinity(), S::max);
            let z: S = xi.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            for ((o, sm), &v) in oi.iter_mut().zip(si.iter_mut()).zip(xi.iter()) {
                *o = v - lse;
                *sm = (v - lse).exp();
            }
        }
        self.push_unary(out, move |g| {
            let mut dx = g.clone();
            for ((mut di, si), gi) in dx
                .axis_iter_mut(Axis(0))
                .zip(soft.axis_iter(Axis(0)))
                .zip(g.axis_iter(Axis(0)))
            {
                let gsum: S = gi.iter().cloned().sum();
                for (d, &sv) in di.iter_mut().zip(si.iter()) {
                    *d = *d - sv * gsum;
                }
            }
            dx
        })
    }

    /// Per-row layer normalization with affine parameters (`gamma`, `beta`
    /// are 1×D).
    pub fn layer_norm(&self, gamma: &Var<S>, beta: &Var<S>, eps: S) -> Var<S> {
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        let d = x.ncols();
        assert_eq!(gm.dim(), (1, d), "layer_norm gamma shape");
        assert_eq!(bt.dim(), (1, d), "layer_norm beta shape");
        let dn = S::from_f64(d as f64);

        let mut xhat = Array2::zeros(x.dim());
        let mut sigma = Vec::with_capacity(x.nrows());
        for (xi, mut hi) in x.axis_iter(Axis(0)).zip(xhat.axis_iter_mut(Axis(0))) {
            let mu: S = xi.iter().cloned().sum::<S>() / dn;
            let var: S = xi.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / dn;
            let sig = (var + eps).sqrt();
            sigma.push(sig);
            for (h, &v) in hi.iter_mut().zip(xi.iter()) {
                *h = (v - mu) / sig;
            }
        }
        let out = &xhat * &*gm + &*bt;

        let xhat_x = xhat.clone();
        let gm_x = gm.clone();
        let sigma_x = sigma.clone();
        let xhat_g = xhat;
        let back_x = move |g: &Array2<S>| {
            let gg = g * &*gm_x;
            let mut dx = Array2::zeros(g.dim());
            for (((gi, hi), &sig), mut di) in gg
                .axis_iter(Axis(0))
                .zip(xhat_x.axis_iter(Axis(0)))
                .zip(sigma_x.iter())
                .zip(dx.axis_iter_mut(Axis(0)))
            {
                let mean_g: S = gi.iter().cloned().sum::<S>() / dn;
                let mean_gh: S = gi.iter().zip(hi.iter()).map(|(&a, &b)| a * b).sum::<S>() / dn;
                for ((d, &gv), &hv) in di.iter_mut().zip(gi.iter()).zip(hi.iter()) {
                    *d = (gv - mean_g - hv * mean_gh) / sig;
                }
            }
            dx
        };
        let back_gamma = move |g: &Array2<S>| col_sums(&(g * &xhat_g));
        let back_beta = move |g: &Array2<S>| col_sums(g);

        let parents: Vec<(usize, BackFn<S>)> = vec![
            (self.index(), Box::new(back_x) as BackFn<S>),
            (gamma.index(), Box::new(back_gamma) as BackFn<S>),
            (beta.index(), Box::new(back_beta) as BackFn<S>),
        ];
        self.push_nary(parents, out)
    }

    pub fn sum_all(&self) -> Var<S> {
        let x = self.value();
        let total: S = x.iter().cloned().sum();
        let dim = x.dim();
        self.push_unary(Array2::from_elem((1, 1), total), move |g| {
            Array2::from_elem(dim, g[(0, 0)])
        })
    }

    pub fn mean_all(&self) -> Var<S> {
        let n = self.rows() * self.cols();
        self.sum_all().scale(S::one() / S::from_f64(n as f64))
    }

    /// Sum over rows → 1×D.
    pub fn sum_rows(&self) -> Var<S> {
        let x = self.value();
        let n = x.nrows();
        self.push_unary(col_sums(&x), move |g| {
            let mut out = Array2::zeros((n, g.ncols()));
            out += g;
            out
        })
    }

    /// Sum over columns → N×1.
    pub fn sum_cols(&self) -> Var<S> {
        let x = self.value();
        let d = x.ncols();
        self.push_unary(row_sums(&x), move |g| {
            let mut out = Array2::zeros((g.nrows(), d));
            out += g;
            out
        })
    }

    /// Mean over rows → 1×D.
    pub fn mean_rows(&self) -> Var<S> {
        let n = self.rows();
        self.sum_rows().scale(S::one() / S::from_f64(n as f64))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Var<S> {
        let x = self.value();
        assert!(start < end && end <= x.nrows(), "slice_rows range");
        let out = x.slice(s![start..end, ..]).to_owned();
        let dim = x.dim();
        self.push_unary(out, move |g| {
            let mut dx = Array2::zeros(dim);
            dx.slice_mut(s![start..end, ..]).assign(g);
            dx
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var<S> {
        let x = self.value();
        assert!(start < end && end <= x.ncols(), "slice_cols range");
        let out = x.slice(s![.., start..end]).to_owned();
        let dim = x.dim();
        self.push_unary(out, move |g| {
            let mut dx = Array2::zeros(dim);
            dx.slice_mut(s![.., start..end]).assign(g);
            dx
        })
    }

    /// Stack vertically. All parts must share a width.
    pub fn vcat(parts: &[&Var<S>]) -> Var<S> {
        assert!(!parts.is_empty());
        let width = parts[0].cols();
        let total: usize = parts.iter().map(|p| p.rows()).sum();
        let mut out = Array2::zeros((total, width));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut row = 0usize;
        for p in parts {
            let v = p.value();
            assert_eq!(v.ncols(), width, "vcat width");
            out.slice_mut(s![row..row + v.nrows(), ..]).assign(&v);
            offsets.push((row, v.nrows()));
            row += v.nrows();
        }
        let parents: Vec<(usize, BackFn<S>)> = parts
            .iter()
            .zip(offsets)
            .map(|(p, (start, rows))| {
                let back = move |g: &Array2<S>| g.slice(s![start..start + rows, ..]).to_owned();
                (p.index(), Box::new(back) as BackFn<S>)
            })
            .collect();
        parts[0].push_nary(parents, out)
    }

    /// Stack horizontally. All parts must share a height.
    pub fn hcat(parts: &[&Var<S>]) -> Var<S> {
        assert!(!parts.is_empty());
        let height = parts[0].rows();
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Array2::zeros((height, total));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut col = 0usize;
        for p in parts {
            let v = p.value();
            assert_eq!(v.nrows(), height, "hcat height");
            out.slice_mut(s![.., col..col + v.ncols()]).assign(&v);
            offsets.push((col, v.ncols()));
            col += v.ncols();
        }
        let parents: Vec<(usize, BackFn<S>)> = parts
            .iter()
            .zip(offsets)
            .map(|(p, (start, cols))| {
                let back = move |g: &Array2<S>| g.slice(s![.., start..start + cols]).to_owned();
                (p.index(), Box::new(back) as BackFn<S>)
            })
            .collect();
        parts[0].push_nary(parents, out)
    }

    /// The whole matrix stacked `k` times vertically.
    pub fn tile_rows(&self, k: usize) -> Var<S> {
        let x = self.value();
        let (n, d) = x.dim();
        let mut out = Array2::zeros((n * k, d));
        for i in 0..k {
            out.slice_mut(s![i * n..(i + 1) * n, ..]).assign(&x);
        }
        self.push_unary(out, move |g| {
            let mut dx = Array2::zeros((n, d));
            for i in 0..k {
                dx += &g.slice(s![i * n..(i + 1) * n, ..]);
            }
            dx
        })
    }

    /// Each row repeated `m` times consecutively.
    pub fn repeat_rows_each(&self, m: usize) -> Var<S> {
        let x = self.value();
        let (n, d) = x.dim();
        let mut out = Array2::zeros((n * m, d));
        for i in 0..n {
            for j in 0..m {
                out.row_mut(i * m + j).assign(&x.row(i));
            }
        }
        self.push_unary(out, move |g| {
            let mut dx = Array2::zeros((n, d));
            for i in 0..n {
                for j in 0..m {
                    let gr = g.row(i * m + j);
                    dx.row_mut(i).zip_mut_with(&gr, |a, &b| *a += b);
                }
            }
            dx
        })
    }

    /// Row-major reinterpretation to `(rows, cols)`.
    pub fn reshape(&self, rows: usize, cols: usize) -> Var<S> {
        let x = self.value();
        let (n, d) = x.dim();
        assert_eq!(n * d, rows * cols, "reshape element count");
        let out = (*x)
            .clone()
            .into_shape_with_order((rows, cols))
            .expect("row-major reshape");
        self.push_unary(out, move |g| {
            g.clone()
                .into_shape_with_order((n, d))
                .expect("row-major reshape back")
        })
    }
}

/// GELU via the tanh approximation, composed from primitives.
pub fn gelu<S: Scalar>(x: &Var<S>) -> Var<S> {
    let c = S::from_f64(0.7978845608028654); // sqrt(2/pi)
    let a = S::from_f64(0.044715);
    let x3 = x.mul(x).mul(x);
    let inner = x.add(&x3.scale(a)).scale(c);
    x.mul(&inner.tanh().add_scalar(S::one())).scale(S::from_f64(0.5))
}

/// Mean squared error over all entries.
pub fn mse<S: Scalar>(a: &Var<S>, b: &Var<S>) -> Var<S> {
    let d = a.sub(b);
    d.mul(&d).mean_all()
}

/// Mean absolute error over all entries.
pub fn l1<S: Scalar>(a: &Var<S>, b: &Var<S>) -> Var<S> {
    a.sub(b).abs().mean_all()
}

/// KL divergence of a diagonal Gaussian from the standard normal, summed
/// over latent dimensions and averaged over rows.
pub fn kl_standard_normal<S: Scalar>(mean: &Var<S>, logvar: &Var<S>) -> Var<S> {
    let term = logvar
        .exp()
        .add(&mean.mul(mean))
        .sub(&logvar.add_scalar(S::one()));
    term.sum_all()
        .scale(S::from_f64(0.5) / S::from_f64(mean.rows() as f64))
}
