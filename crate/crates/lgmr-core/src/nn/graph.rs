//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built per forward pass: every operation records its output
//! value, parent indices, and a backward closure producing parent gradients
//! from the output gradient. [`Graph::backward`] walks the tape in reverse,
//! accumulating gradients for every node, including leaves bound to model
//! parameters.

use std::rc::Rc;

use super::tensor::{matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn rc(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced in graph");
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node. Gradients are accumulated for leaves like any other node;
    /// callers track which leaves are parameters.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], None)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    // ---- arithmetic -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        let out = matmul(&av, &bv);
        let (ac, bc) = (Rc::clone(&av), Rc::clone(&bv));
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                vec![matmul(g, &bc.transpose()), matmul(&ac.transpose(), g)]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| vec![g.transpose()])),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert!(av.same_shape(bv), "add shape mismatch");
        let mut out = av.clone();
        out.add_in_place(bv);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert!(av.same_shape(bv), "sub shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                vec![g.clone(), neg]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert!(av.same_shape(&bv), "mul shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let da = g.data.iter().zip(&bv.data).map(|(g, y)| g * y).collect();
                let db = g.data.iter().zip(&av.data).map(|(g, x)| g * x).collect();
                vec![
                    Tensor::from_vec(g.rows, g.cols, da),
                    Tensor::from_vec(g.rows, g.cols, db),
                ]
            })),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert!(av.same_shape(&bv), "div shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x / y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let da: Vec<f64> = g.data.iter().zip(&bv.data).map(|(g, y)| g / y).collect();
                let db: Vec<f64> = g
                    .data
                    .iter()
                    .zip(av.data.iter().zip(&bv.data))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                vec![
                    Tensor::from_vec(g.rows, g.cols, da),
                    Tensor::from_vec(g.rows, g.cols, db),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|v| v * c).collect());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                vec![Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().map(|v| v * c).collect(),
                )]
            })),
        )
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|v| v + c).collect());
        self.push(out, vec![a.0], Some(Box::new(move |g| vec![g.clone()])))
    }

    /// x (R x C) + row vector v (1 x C) broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: Var, v: Var) -> Var {
        let xv = self.value(x);
        let vv = self.value(v);
        assert_eq!(vv.rows, 1, "broadcast vector must be 1 x C");
        assert_eq!(vv.cols, xv.cols, "broadcast width mismatch");
        let mut out = xv.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&vv.data) {
                *o += b;
            }
        }
        self.push(
            out,
            vec![x.0, v.0],
            Some(Box::new(move |g| {
                let mut dv = Tensor::zeros(1, g.cols);
                for i in 0..g.rows {
                    for (d, gv) in dv.data.iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
                vec![g.clone(), dv]
            })),
        )
    }

    // ---- nonlinearities -------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let out = Tensor::from_vec(
            av.rows,
            av.cols,
            av.data.iter().map(|&v| v.max(0.0)).collect(),
        );
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let d = g
                    .data
                    .iter()
                    .zip(&av.data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Tensor::from_vec(g.rows, g.cols, d)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::from_vec(
            av.rows,
            av.cols,
            av.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        );
        let yc = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let d = g
                    .data
                    .iter()
                    .zip(&yc.data)
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                vec![Tensor::from_vec(g.rows, g.cols, d)]
            })),
        )
    }

    pub fn log(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        assert!(av.data.iter().all(|&v| v > 0.0), "log of non-positive value");
        let out = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|v| v.ln()).collect());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let d = g.data.iter().zip(&av.data).map(|(g, x)| g / x).collect();
                vec![Tensor::from_vec(g.rows, g.cols, d)]
            })),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let av = self.rc(a);
        let out = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|v| v.abs()).collect());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let d = g
                    .data
                    .iter()
                    .zip(&av.data)
                    .map(|(g, &x)| g * x.signum() * if x == 0.0 { 0.0 } else { 1.0 })
                    .collect();
                vec![Tensor::from_vec(g.rows, g.cols, d)]
            })),
        )
    }

    /// max(a, c) elementwise; the gradient is passed only where a > c.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let av = self.rc(a);
        let out = Tensor::from_vec(av.rows, av.cols, av.data.iter().map(|v| v.max(c)).collect());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let d = g
                    .data
                    .iter()
                    .zip(&av.data)
                    .map(|(g, &x)| if x > c { *g } else { 0.0 })
                    .collect();
                vec![Tensor::from_vec(g.rows, g.cols, d)]
            })),
        )
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert!(av.same_shape(&bv), "max2 shape mismatch");
        let data = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&x, &y)| x.max(y))
            .collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let mut da = Tensor::zeros(g.rows, g.cols);
                let mut db = Tensor::zeros(g.rows, g.cols);
                for k in 0..g.data.len() {
                    if av.data[k] >= bv.data[k] {
                        da.data[k] = g.data[k];
                    } else {
                        db.data[k] = g.data[k];
                    }
                }
                vec![da, db]
            })),
        )
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        let av = self.rc(a);
        let bv = self.rc(b);
        assert!(av.same_shape(&bv), "min2 shape mismatch");
        let data = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&x, &y)| x.min(y))
            .collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                let mut da = Tensor::zeros(g.rows, g.cols);
                let mut db = Tensor::zeros(g.rows, g.cols);
                for k in 0..g.data.len() {
                    if av.data[k] <= bv.data[k] {
                        da.data[k] = g.data[k];
                    } else {
                        db.data[k] = g.data[k];
                    }
                }
                vec![da, db]
            })),
        )
    }

    // ---- reductions and structure ----------------------------------------

    /// Row-wise softmax. `key_mask[j] == true` excludes column j from every
    /// row's distribution (weight exactly 0). Each row must keep at least one
    /// unmasked column.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let av = self.value(a);
        let mask = key_mask.map(|m| m.to_vec());
        if let Some(m) = &mask {
            assert_eq!(m.len(), av.cols, "key mask length must equal columns");
            assert!(m.iter().any(|&x| !x), "softmax row with every key masked");
        }
        let mut out = Tensor::zeros(av.rows, av.cols);
        for i in 0..av.rows {
            let row = av.row(i);
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if mask.as_ref().is_none_or(|m| !m[j]) {
                    mx = mx.max(v);
                }
            }
            let mut sum = 0.0;
            let orow = out.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                if mask.as_ref().is_none_or(|m| !m[j]) {
                    let e = (v - mx).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let yc = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut d = Tensor::zeros(g.rows, g.cols);
                for i in 0..g.rows {
                    let y = yc.row(i);
                    let gr = g.row(i);
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for (dj, (&yj, &gj)) in d.row_mut(i).iter_mut().zip(y.iter().zip(gr)) {
                        *dj = yj * (gj - dot);
                    }
                }
                vec![d]
            })),
        )
    }

    /// Per-row layer normalization with learnable gain and bias (1 x C each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.rc(x);
        let gv = self.rc(gamma);
        let bv = self.value(beta);
        assert_eq!(gv.rows, 1);
        assert_eq!(bv.rows, 1);
        assert_eq!(gv.cols, xv.cols);
        assert_eq!(bv.cols, xv.cols);
        let c = xv.cols as f64;
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        let mut xhat = Tensor::zeros(xv.rows, xv.cols);
        let mut inv_sigma = vec![0.0; xv.rows];
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mu = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = inv;
            for j in 0..xv.cols {
                let xh = (row[j] - mu) * inv;
                xhat.set(i, j, xh);
                out.set(i, j, xh * gv.data[j] + bv.data[j]);
            }
        }
        let xh = Rc::new(xhat);
        let xhc = Rc::clone(&xh);
        self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |g| {
                let rows = g.rows;
                let cols = g.cols;
                let mut dx = Tensor::zeros(rows, cols);
                let mut dgamma = Tensor::zeros(1, cols);
                let mut dbeta = Tensor::zeros(1, cols);
                for i in 0..rows {
                    let gr = g.row(i);
                    let xr = xhc.row(i);
                    let mut mean_gh = 0.0;
                    let mut mean_gh_x = 0.0;
                    for j in 0..cols {
                        let gh = gr[j] * gv.data[j];
                        mean_gh += gh;
                        mean_gh_x += gh * xr[j];
                        dgamma.data[j] += gr[j] * xr[j];
                        dbeta.data[j] += gr[j];
                    }
                    mean_gh /= cols as f64;
                    mean_gh_x /= cols as f64;
                    for j in 0..cols {
                        let gh = gr[j] * gv.data[j];
                        dx.set(i, j, inv_sigma[i] * (gh - mean_gh - xr[j] * mean_gh_x));
                    }
                }
                vec![dx, dgamma, dbeta]
            })),
        )
    }

    /// Mean over rows -> 1 x C. `row_mask[i] == true` excludes row i; at least
    /// one row must remain.
    pub fn mean_rows(&mut self, x: Var, row_mask: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let mask = row_mask.map(|m| m.to_vec());
        if let Some(m) = &mask {
            assert_eq!(m.len(), xv.rows, "row mask length must equal rows");
        }
        let included: Vec<usize> = (0..xv.rows)
            .filter(|&i| mask.as_ref().is_none_or(|m| !m[i]))
            .collect();
        assert!(!included.is_empty(), "mean over zero rows");
        let cnt = included.len() as f64;
        let mut out = Tensor::zeros(1, xv.cols);
        for &i in &included {
            for (o, v) in out.data.iter_mut().zip(xv.row(i)) {
                *o += v / cnt;
            }
        }
        let rows = xv.rows;
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(rows, g.cols);
                for &i in &included {
                    for (d, gv) in dx.row_mut(i).iter_mut().zip(&g.data) {
                        *d = gv / cnt;
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Mean of all entries -> 1 x 1.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.num_elements() as f64;
        let out = Tensor::scalar(xv.data.iter().sum::<f64>() / n);
        let (rows, cols) = (xv.rows, xv.cols);
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let gv = g.item() / n;
                vec![Tensor::from_vec(rows, cols, vec![gv; rows * cols])]
            })),
        )
    }

    /// Row sums -> R x 1.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows, 1);
        for i in 0..xv.rows {
            out.data[i] = xv.row(i).iter().sum();
        }
        let cols = xv.cols;
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(g.rows, cols);
                for i in 0..g.rows {
                    let gv = g.data[i];
                    for d in dx.row_mut(i) {
                        *d = gv;
                    }
                }
                vec![dx]
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows width mismatch");
            row_counts.push(t.rows);
            data.extend_from_slice(&t.data);
        }
        let rows: usize = row_counts.iter().sum();
        let out = Tensor::from_vec(rows, cols, data);
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut start = 0;
                for &rc in &row_counts {
                    let slice = g.data[start * g.cols..(start + rc) * g.cols].to_vec();
                    grads.push(Tensor::from_vec(rc, g.cols, slice));
                    start += rc;
                }
                grads
            })),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows, "slice_rows out of range");
        let data = xv.data[start * xv.cols..(start + len) * xv.cols].to_vec();
        let out = Tensor::from_vec(len, xv.cols, data);
        let rows = xv.rows;
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(rows, g.cols);
                dx.data[start * g.cols..(start + g.rows) * g.cols].copy_from_slice(&g.data);
                vec![dx]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let mut col_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols height mismatch");
            col_counts.push(t.cols);
        }
        let cols: usize = col_counts.iter().sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols].copy_from_slice(t.row(i));
            }
            offset += t.cols;
        }
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(col_counts.len());
                let mut offset = 0;
                for &cc in &col_counts {
                    let mut d = Tensor::zeros(g.rows, cc);
                    for i in 0..g.rows {
                        d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cc]);
                    }
                    grads.push(d);
                    offset += cc;
                }
                grads
            })),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols, "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        let cols = xv.cols;
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(g.rows, cols);
                for i in 0..g.rows {
                    dx.row_mut(i)[start..start + len].copy_from_slice(g.row(i));
                }
                vec![dx]
            })),
        )
    }

    /// Zeroes the rows where `mask[i] == true`; gradients are zeroed there too.
    pub fn zero_rows(&mut self, x: Var, mask: &[bool]) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.rows, "zero_rows mask length");
        let mask = mask.to_vec();
        let mut out = xv.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).fill(0.0);
            }
        }
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut d = g.clone();
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        d.row_mut(i).fill(0.0);
                    }
                }
                vec![d]
            })),
        )
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar output. Returns one gradient slot per node;
    /// `None` for nodes the output does not depend on.
    pub fn backward(&self, out: Var) -> Vec<Option<Tensor>> {
        let out_val = self.value(out);
        assert_eq!(out_val.num_elements(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            if let Some(back) = &node.back {
                let parent_grads = back(&g);
                assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_in_place(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        grads
    }
}
