//! Dense-array math with reverse-mode gradients.
//!
//! A tape records every primitive applied to [`Tensor`] values; backward
//! replays it in reverse accumulating vector-Jacobian products. The primitive
//! set is exactly what the model needs (FC layers via matmul, pointwise
//! activations, pooling, channel ops, L2 normalization) with explicit shape
//! rules and no broadcasting. Everything is f64.
//!
//! relu'(0) is defined as 0; finite-difference tests should sample away from
//! the kink.

use crate::error::{Error, Result};

/// Norm threshold below which `l2_normalize` rejects its input.
pub const EPS_NORM: f64 = 1e-12;

/// Row-major dense array of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("tensor holds non-finite values".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Gap(VarId),
    L2Normalize(VarId),
    ChannelScale(VarId, VarId),
    ChannelBias(VarId, VarId),
    ConcatChannels(VarId, VarId),
    AvgPool2x(VarId),
    Reshape(VarId),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> VarId {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, requires_grad)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn value(&self, id: VarId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].data.clone(),
        }
    }

    /// Gradient accumulated at `id` by the last backward pass.
    pub fn grad(&self, id: VarId) -> Option<Tensor> {
        self.grads[id.0].as_ref().map(|g| Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: g.clone(),
        })
    }

    fn needs(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul shapes {:?} x {:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for i in 0..m {
                for p in 0..k {
                    let av = da[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += av * db[p * n + j];
                    }
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), rg))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let data: Vec<f64> = self.data(a).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, data, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let data: Vec<f64> = self.data(a).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, data, Op::Sigmoid(a), rg)
    }

    fn binary(&mut self, a: VarId, b: VarId, f: fn(f64, f64) -> f64, op: Op) -> Result<VarId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "elementwise shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, data, op, rg))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Mean over the spatial grid of each channel: [c,h,w] -> [c].
    pub fn global_average_pool(&mut self, a: VarId) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[1] == 0 || s[2] == 0 {
            return Err(Error::Dimension(format!("gap expects [c,h,w], got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let da = self.data(a);
        let data: Vec<f64> = (0..c)
            .map(|ch| da[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(vec![c], data, Op::Gap(a), rg))
    }

    pub fn l2_normalize(&mut self, a: VarId) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 1 {
            return Err(Error::Dimension(format!(
                "l2_normalize expects a vector, got {:?}",
                s
            )));
        }
        let norm = self.data(a).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= EPS_NORM {
            return Err(Error::Degenerate(format!(
                "l2_normalize norm {norm} below {EPS_NORM}"
            )));
        }
        let data: Vec<f64> = self.data(a).iter().map(|&v| v / norm).collect();
        let rg = self.needs(&[a]);
        Ok(self.push(s, data, Op::L2Normalize(a), rg))
    }

    /// Output channel i = w[i] * input channel i.
    pub fn channel_scale(&mut self, f: VarId, w: VarId) -> Result<VarId> {
        let sf = self.shape(f).to_vec();
        let sw = self.shape(w).to_vec();
        if sf.len() != 3 || sw.len() != 1 || sf[0] != sw[0] {
            return Err(Error::Dimension(format!(
                "channel_scale shapes {:?} vs {:?}",
                sf, sw
            )));
        }
        let hw = sf[1] * sf[2];
        let df = self.data(f);
        let dw = self.data(w);
        let mut data = Vec::with_capacity(df.len());
        for ch in 0..sf[0] {
            for i in 0..hw {
                data.push(df[ch * hw + i] * dw[ch]);
            }
        }
        let rg = self.needs(&[f, w]);
        Ok(self.push(sf, data, Op::ChannelScale(f, w), rg))
    }

    /// Output channel i = input channel i + b[i] at every spatial cell.
    pub fn channel_bias(&mut self, f: VarId, b: VarId) -> Result<VarId> {
        let sf = self.shape(f).to_vec();
        let sb = self.shape(b).to_vec();
        if sf.len() != 3 || sb.len() != 1 || sf[0] != sb[0] {
            return Err(Error::Dimension(format!(
                "channel_bias shapes {:?} vs {:?}",
                sf, sb
            )));
        }
        let hw = sf[1] * sf[2];
        let df = self.data(f);
        let db = self.data(b);
        let mut data = Vec::with_capacity(df.len());
        for ch in 0..sf[0] {
            for i in 0..hw {
                data.push(df[ch * hw + i] + db[ch]);
            }
        }
        let rg = self.needs(&[f, b]);
        Ok(self.push(sf, data, Op::ChannelBias(f, b), rg))
    }

    /// Channels of `a` precede channels of `b`; spatial shapes must match.
    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::Dimension(format!(
                "concat_channels shapes {:?} vs {:?}",
                sa, sb
            )));
        }
        let mut data = self.data(a).to_vec();
        data.extend_from_slice(self.data(b));
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, data, Op::ConcatChannels(a, b), rg))
    }

    /// 2x2 non-overlapping mean pooling; ragged edges average available cells.
    pub fn avg_pool_2x(&mut self, a: VarId) -> Result<VarId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[1] == 0 || s[2] == 0 {
            return Err(Error::Dimension(format!(
                "avg_pool_2x expects [c,h,w], got {:?}",
                s
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let da = self.data(a);
        let mut data = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut sum = 0.0;
                    let mut cnt = 0.0;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for x in 2 * ox..(2 * ox + 2).min(w) {
                            sum += da[ch * h * w + y * w + x];
                            cnt += 1.0;
                        }
                    }
                    data.push(sum / cnt);
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(vec![c, oh, ow], data, Op::AvgPool2x(a), rg))
    }

    /// Reinterpret the value with a new shape of equal element count.
    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let n: usize = shape.iter().product();
        if n != self.data(a).len() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?}",
                self.shape(a),
                shape
            )));
        }
        let data = self.data(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape, data, Op::Reshape(a), rg))
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward(&mut self, out: VarId) -> Result<()> {
        if self.nodes[out.0].data.len() != 1 {
            return Err(Error::Contract(
                "backward requires a scalar output".into(),
            ));
        }
        self.backward_seeded(out, &[1.0])
    }

    /// Backward from `out` with an explicit cotangent (same shape as `out`).
    pub fn backward_seeded(&mut self, out: VarId, seed: &[f64]) -> Result<()> {
        if seed.len() != self.nodes[out.0].data.len() {
            return Err(Error::Dimension("seed shape mismatch".into()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[out.0] = Some(seed.to_vec());

        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: VarId, contrib: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        match self.nodes[idx].op.clone() {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // ga = g . b^T
                let mut ga = vec![0.0; m * k];
                {
                    let db = self.data(b);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * db[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                }
                // gb = a^T . g
                let mut gb = vec![0.0; k * n];
                {
                    let da = self.data(a);
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += da[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] = s;
                        }
                    }
                }
                self.acc(a, &ga);
                self.acc(b, &gb);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = self.data(a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.acc(a, &ga);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].data;
                let ga: Vec<f64> = y.iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                self.acc(a, &ga);
            }
            Op::Add(a, b) => {
                self.acc(a, g);
                self.acc(b, g);
            }
            Op::Sub(a, b) => {
                self.acc(a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.acc(b, &neg);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = self.data(b).iter().zip(g).map(|(&y, &gi)| gi * y).collect();
                let gb: Vec<f64> = self.data(a).iter().zip(g).map(|(&x, &gi)| gi * x).collect();
                self.acc(a, &ga);
                self.acc(b, &gb);
            }
            Op::Gap(a) => {
                let s = self.shape(a).to_vec();
                let (c, hw) = (s[0], s[1] * s[2]);
                let mut ga = vec![0.0; c * hw];
                for ch in 0..c {
                    let v = g[ch] / hw as f64;
                    for i in 0..hw {
                        ga[ch * hw + i] = v;
                    }
                }
                self.acc(a, &ga);
            }
            Op::L2Normalize(a) => {
                let norm = self.data(a).iter().map(|v| v * v).sum::<f64>().sqrt();
                let y = &self.nodes[idx].data;
                let gy: f64 = y.iter().zip(g).map(|(&yi, &gi)| yi * gi).sum();
                let ga: Vec<f64> = y
                    .iter()
                    .zip(g)
                    .map(|(&yi, &gi)| (gi - yi * gy) / norm)
                    .collect();
                self.acc(a, &ga);
            }
            Op::ChannelScale(f, w) => {
                let sf = self.shape(f).to_vec();
                let hw = sf[1] * sf[2];
                let df = self.data(f).to_vec();
                let dw = self.data(w).to_vec();
                let mut gf = vec![0.0; df.len()];
                let mut gw = vec![0.0; dw.len()];
                for ch in 0..sf[0] {
                    for i in 0..hw {
                        gf[ch * hw + i] = g[ch * hw + i] * dw[ch];
                        gw[ch] += g[ch * hw + i] * df[ch * hw + i];
                    }
                }
                self.acc(f, &gf);
                self.acc(w, &gw);
            }
            Op::ChannelBias(f, b) => {
                let sf = self.shape(f).to_vec();
                let hw = sf[1] * sf[2];
                let mut gb = vec![0.0; sf[0]];
                for ch in 0..sf[0] {
                    for i in 0..hw {
                        gb[ch] += g[ch * hw + i];
                    }
                }
                self.acc(f, g);
                self.acc(b, &gb);
            }
            Op::ConcatChannels(a, b) => {
                let na = self.data(a).len();
                self.acc(a, &g[..na]);
                self.acc(b, &g[na..]);
            }
            Op::AvgPool2x(a) => {
                let s = self.shape(a).to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let mut ga = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let ys = 2 * oy..(2 * oy + 2).min(h);
                            let xs = 2 * ox..(2 * ox + 2).min(w);
                            let cnt = (ys.len() * xs.len()) as f64;
                            let gv = g[ch * oh * ow + oy * ow + ox] / cnt;
                            for y in ys.clone() {
                                for x in xs.clone() {
                                    ga[ch * h * w + y * w + x] += gv;
                                }
                            }
                        }
                    }
                }
                self.acc(a, &ga);
            }
            Op::Reshape(a) => {
                self.acc(a, g);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A trainable tensor with an optional accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param { value, grad: None }
    }

    /// Add the tape gradient at `id` into this param's accumulator.
    pub fn accumulate(&mut self, tape: &Tape, id: VarId) {
        if let Some(g) = tape.grad(id) {
            match &mut self.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => self.grad = Some(g),
            }
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        if let Some(g) = &mut self.grad {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// p <- p - lr * grad for every param; grads are then cleared.
pub fn sgd_step<'a, I>(params: I, lr: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Param>,
{
    if lr <= 0.0 {
        return Err(Error::Contract(format!("lr must be positive, got {lr}")));
    }
    let params: Vec<&'a mut Param> = params.into_iter().collect();
    for p in &params {
        if p.grad.is_none() {
            return Err(Error::Contract("sgd_step: param missing grad".into()));
        }
    }
    for p in params {
        let g = p.grad.take().unwrap();
        for (v, gi) in p.value.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * gi;
        }
    }
    Ok(())
}

/// Compare analytic gradients against central finite differences.
///
/// `f` evaluates the scalar objective at the given inputs and returns the
/// analytic gradient w.r.t. each input. Returns the maximum over all entries
/// of |analytic - central| / max(1, |analytic|).
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-2]")));
    }
    let (_, grads) = f(inputs)?;
    if grads.len() != inputs.len() {
        return Err(Error::Contract(
            "grad_check: one gradient per input required".into(),
        ));
    }
    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, grad) in grads.iter().enumerate() {
        if grad.shape() != inputs[ti].shape() {
            return Err(Error::Contract("grad shape mismatch".into()));
        }
        for ei in 0..inputs[ti].numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let (fp, _) = f(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let (fm, _) = f(&work)?;
            work[ti].data_mut()[ei] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let analytic = grad.data()[ei];
            let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let m = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.data(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1, 2], &[1.0, 2.0]), false);
        let b = tape.leaf(&t(&[2, 1], &[3.0, 4.0]), false);
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1, 2], &[1.0, 2.0]), false);
        let b = tape.leaf(&t(&[3, 1], &[1.0, 2.0, 3.0]), false);
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_grad_hand() {
        // grad of sum(a.b) wrt a at a=[[1,1]], b=[[2],[5]] -> [[2,5]]
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1, 2], &[1.0, 1.0]), true);
        let b = tape.leaf(&t(&[2, 1], &[2.0, 5.0]), false);
        let out = tape.matmul(a, b).unwrap();
        tape.backward(out).unwrap();
        let ga = tape.grad(a).unwrap();
        assert_eq!(ga.data(), &[2.0, 5.0]);
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, 0.0, 2.0]), false);
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 0.0, 2.0]);

        let z = tape.leaf(&t(&[1], &[0.0]), false);
        let s = tape.sigmoid(z);
        assert_eq!(tape.data(s), &[0.5]);

        let a = tape.leaf(&t(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(&t(&[2], &[3.0, 4.0]), false);
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.data(m), &[3.0, 8.0]);
    }

    #[test]
    fn gap_examples() {
        let mut tape = Tape::new();
        let f = tape.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let g = tape.global_average_pool(f).unwrap();
        assert_eq!(tape.data(g), &[2.5]);

        let c = tape.leaf(&t(&[1, 3, 3], &[7.0; 9]), false);
        let gc = tape.global_average_pool(c).unwrap();
        assert_eq!(tape.data(gc), &[7.0]);

        let two = tape.leaf(
            &t(&[2, 2, 2], &[0.0, 0.0, 0.0, 4.0, 2.0, 2.0, 2.0, 2.0]),
            false,
        );
        let g2 = tape.global_average_pool(two).unwrap();
        assert_eq!(tape.data(g2), &[1.0, 2.0]);
    }

    #[test]
    fn l2_normalize_examples() {
        let mut tape = Tape::new();
        let v = tape.leaf(&t(&[2], &[3.0, 4.0]), false);
        let n = tape.l2_normalize(v).unwrap();
        assert!((tape.data(n)[0] - 0.6).abs() < 1e-15);
        assert!((tape.data(n)[1] - 0.8).abs() < 1e-15);

        let z = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        assert!(matches!(tape.l2_normalize(z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn l2_normalize_grad_fd() {
        let err = grad_check(
            |ins| {
                let mut tape = Tape::new();
                let v = tape.leaf(&ins[0], true);
                let n = tape.l2_normalize(v)?;
                // pick the first output component
                let mask = tape.leaf(&t(&[2], &[1.0, 0.0]), false);
                let picked = tape.mul(n, mask)?;
                let ones = tape.leaf(&t(&[2, 1], &[1.0, 1.0]), false);
                let row = tape.reshape(picked, vec![1, 2])?;
                let sum = tape.matmul(row, ones)?;
                tape.backward(sum)?;
                Ok((tape.data(sum)[0], vec![tape.grad(v).unwrap()]))
            },
            &[t(&[2], &[1.0, 1.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn channel_scale_cases() {
        let mut tape = Tape::new();
        let f = tape.leaf(&t(&[2, 1, 2], &[1.0, 1.0, 2.0, 2.0]), false);
        let ones = tape.leaf(&t(&[2], &[1.0, 1.0]), false);
        let same = tape.channel_scale(f, ones).unwrap();
        assert_eq!(tape.data(same), tape.data(f));

        let w = tape.leaf(&t(&[2], &[0.5, 2.0]), false);
        let scaled = tape.channel_scale(f, w).unwrap();
        assert_eq!(tape.data(scaled), &[0.5, 0.5, 4.0, 4.0]);

        let zeros = tape.leaf(&t(&[2], &[0.0, 0.0]), false);
        let z = tape.channel_scale(f, zeros).unwrap();
        assert!(tape.data(z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_and_split_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1, 1, 1], &[5.0]), false);
        let b = tape.leaf(&t(&[1, 1, 1], &[7.0]), false);
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.data(c), &[5.0, 7.0]);
        assert_eq!(tape.shape(c), &[2, 1, 1]);

        let empty = tape.leaf(&Tensor::zeros(vec![0, 1, 1]), false);
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.data(same), tape.data(a));
    }

    #[test]
    fn avg_pool_examples() {
        let mut tape = Tape::new();
        let f = tape.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let p = tape.avg_pool_2x(f).unwrap();
        assert_eq!(tape.data(p), &[2.5]);

        let row = tape.leaf(&t(&[1, 1, 3], &[1.0, 2.0, 3.0]), false);
        let pr = tape.avg_pool_2x(row).unwrap();
        assert_eq!(tape.data(pr), &[1.5, 3.0]);
        assert_eq!(tape.shape(pr), &[1, 1, 2]);

        let cst = tape.leaf(&t(&[1, 3, 3], &[2.0; 9]), false);
        let pc = tape.avg_pool_2x(cst).unwrap();
        assert!(tape.data(pc).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn grad_check_constant_is_zero() {
        let err = grad_check(
            |ins| Ok((3.0, vec![Tensor::zeros(ins[0].shape().to_vec())])),
            &[t(&[3], &[1.0, 2.0, 3.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_matmul_sum() {
        let err = grad_check(
            |ins| {
                let mut tape = Tape::new();
                let a = tape.leaf(&ins[0], true);
                let b = tape.leaf(&ins[1], true);
                let prod = tape.matmul(a, b)?;
                let flat = tape.reshape(prod, vec![1, 4])?;
                let ones = tape.leaf(&t(&[4, 1], &[1.0; 4]), false);
                let sum = tape.matmul(flat, ones)?;
                tape.backward(sum)?;
                Ok((
                    tape.data(sum)[0],
                    vec![tape.grad(a).unwrap(), tape.grad(b).unwrap()],
                ))
            },
            &[
                t(&[2, 3], &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4]),
                t(&[3, 2], &[1.0, 0.5, -0.3, 0.9, 0.2, -1.1]),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn primitives_grad_check_over_seeds() {
        // random composite exercising every primitive, 10 seeds
        for seed in 0..10u64 {
            let mut rng = Rng::new(seed);
            let f = Tensor::new(
                vec![2, 3, 4],
                (0..24).map(|_| rng.range(0.1, 1.0)).collect(),
            )
            .unwrap();
            let w = Tensor::new(vec![2], vec![rng.range(0.2, 1.0), rng.range(0.2, 1.0)]).unwrap();
            let b = Tensor::new(vec![4], (0..4).map(|_| rng.range(-0.5, 0.5)).collect()).unwrap();
            let m = Tensor::new(vec![4, 4], (0..16).map(|_| rng.range(-1.0, 1.0)).collect())
                .unwrap();
            let err = grad_check(
                |ins| {
                    let mut tape = Tape::new();
                    let f = tape.leaf(&ins[0], true);
                    let w = tape.leaf(&ins[1], true);
                    let b = tape.leaf(&ins[2], true);
                    let m = tape.leaf(&ins[3], true);
                    let scaled = tape.channel_scale(f, w)?;
                    let cat = tape.concat_channels(scaled, f)?;
                    let pooled = tape.avg_pool_2x(cat)?;
                    let biased = tape.channel_bias(pooled, b)?;
                    let gap = tape.global_average_pool(biased)?;
                    let col = tape.reshape(gap, vec![4, 1])?;
                    let mixed = tape.matmul(m, col)?;
                    let vec4 = tape.reshape(mixed, vec![4])?;
                    let act = tape.sigmoid(vec4);
                    let norm = tape.l2_normalize(act)?;
                    let sq = tape.mul(norm, norm)?;
                    let diff = tape.sub(sq, norm)?;
                    let plus = tape.add(diff, act)?;
                    let row = tape.reshape(plus, vec![1, 4])?;
                    let ones = tape.leaf(&t(&[4, 1], &[1.0; 4]), false);
                    let out = tape.matmul(row, ones)?;
                    tape.backward(out)?;
                    Ok((
                        tape.data(out)[0],
                        vec![
                            tape.grad(f).unwrap(),
                            tape.grad(w).unwrap(),
                            tape.grad(b).unwrap(),
                            tape.grad(m).unwrap(),
                        ],
                    ))
                },
                &[f, w, b, m],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed} err {err}");
        }
    }

    #[test]
    fn sgd_examples() {
        let mut p = Param::new(Tensor::scalar(1.0));
        p.grad = Some(Tensor::scalar(2.0));
        sgd_step([&mut p], 0.1).unwrap();
        assert!((p.value.data()[0] - 0.8).abs() < 1e-15);
        assert!(p.grad.is_none());

        // two steps equal one step at doubled lr for fixed grad
        let mut a = Param::new(Tensor::scalar(1.0));
        a.grad = Some(Tensor::scalar(3.0));
        sgd_step([&mut a], 0.1).unwrap();
        a.grad = Some(Tensor::scalar(3.0));
        sgd_step([&mut a], 0.1).unwrap();
        let mut b = Param::new(Tensor::scalar(1.0));
        b.grad = Some(Tensor::scalar(3.0));
        sgd_step([&mut b], 0.2).unwrap();
        assert!((a.value.data()[0] - b.value.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn sgd_missing_grad_errors() {
        let mut p = Param::new(Tensor::scalar(1.0));
        assert!(matches!(sgd_step([&mut p], 0.1), Err(Error::Contract(_))));
    }
}
