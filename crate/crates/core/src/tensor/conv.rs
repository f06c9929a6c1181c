//! Spatial operations: conv2d, 2x2 stride-2 transposed conv, 2x2 max-pool.
//!
//! conv2d lowers each batch item to an im2col matrix and runs the GEMM
//! kernels from [`linalg`]; the backward pass rebuilds the column matrix
//! instead of caching it, trading a little compute for a flat memory profile.

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{Node, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 4 {
        return Err(Error::config(format!("conv2d: input must be 4-D, got {xs:?}")));
    }
    if ks.len() != 4 {
        return Err(Error::config(format!("conv2d: kernel must be 4-D, got {ks:?}")));
    }
    if ks[2] != ks[3] {
        return Err(Error::config(format!("conv2d: kernel must be square, got {}x{}", ks[2], ks[3])));
    }
    if xs[1] != ks[1] {
        return Err(Error::config(format!(
            "conv2d: input channel dimension {} does not match kernel channel dimension {}",
            xs[1], ks[1]
        )));
    }
    let bs = bias.shape();
    if bs != vec![ks[0]] {
        return Err(Error::config(format!(
            "conv2d: bias shape {bs:?} does not match output channel dimension {}",
            ks[0]
        )));
    }
    if stride < 1 {
        return Err(Error::config("conv2d: stride must be >= 1"));
    }
    let (h, w, k) = (xs[2], xs[3], ks[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::config(format!(
            "conv2d: kernel {k} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
        return Err(Error::config(format!(
            "conv2d: spatial dimension {}x{} (pad {pad}, kernel {k}) is not divisible by stride {stride}",
            h, w
        )));
    }
    Ok(ConvDims {
        batch: xs[0],
        cin: xs[1],
        h,
        w,
        cout: ks[0],
        k,
        stride,
        pad,
        oh: (h + 2 * pad - k) / stride + 1,
        ow: (w + 2 * pad - k) / stride + 1,
    })
}

/// Lower one image (cin x h x w) into a [cin*k*k, oh*ow] column matrix.
fn im2col<S: Scalar>(img: &[S], d: &ConvDims, cols: &mut [S]) {
    let (h, w, k, stride, pad, oh, ow) = (d.h, d.w, d.k, d.stride, d.pad, d.oh, d.ow);
    debug_assert_eq!(cols.len(), d.cin * k * k * oh * ow);
    for ci in 0..d.cin {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * oh * ow..][..oh * ow];
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= h as isize {
                        dst.fill(S::zero());
                        continue;
                    }
                    let src_row = &plane[ii as usize * w..(ii as usize + 1) * w];
                    if stride == 1 {
                        // contiguous source with zero fringes from padding
                        let jj0 = kj as isize - pad as isize;
                        for (oj, v) in dst.iter_mut().enumerate() {
                            let jj = jj0 + oj as isize;
                            *v = if jj < 0 || jj >= w as isize {
                                S::zero()
                            } else {
                                src_row[jj as usize]
                            };
                        }
                    } else {
                        for (oj, v) in dst.iter_mut().enumerate() {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            *v = if jj < 0 || jj >= w as isize {
                                S::zero()
                            } else {
                                src_row[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto an image (transpose of im2col).
fn col2im_add<S: Scalar>(cols: &[S], d: &ConvDims, img: &mut [S]) {
    let (h, w, k, stride, pad, oh, ow) = (d.h, d.w, d.k, d.stride, d.pad, d.oh, d.ow);
    for ci in 0..d.cin {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * oh * ow..][..oh * ow];
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let src = &row[oi * ow..(oi + 1) * ow];
                    for (oj, &v) in src.iter().enumerate() {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj >= 0 && (jj as usize) < w {
                            dst_row[jj as usize] = dst_row[jj as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// 2-D convolution (cross-correlation) with square kernel.
    ///
    /// `input`: B x Cin x H x W, `kernel`: Cout x Cin x k x k, `bias`: Cout.
    /// Output spatial size is `(H + 2*padding - k)/stride + 1`.
    pub fn conv2d(
        &self,
        input: &Tensor<S>,
        kernel: &Tensor<S>,
        bias: &Tensor<S>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<S>> {
        let d = conv_dims(input, kernel, bias, stride, padding)?;
        if input.same_tensor(kernel) || input.same_tensor(bias) || kernel.same_tensor(bias) {
            return Err(Error::Autodiff("conv2d: operands must be distinct tensors".into()));
        }
        let ckk = d.cin * d.k * d.k;
        let osp = d.oh * d.ow;
        let mut out = vec![S::zero(); d.batch * d.cout * osp];
        let mut cols = vec![S::zero(); ckk * osp];
        {
            let xd = input.inner.borrow();
            let wd = kernel.inner.borrow();
            let bd = bias.inner.borrow();
            for bi in 0..d.batch {
                im2col(&xd.data[bi * d.cin * d.h * d.w..], &d, &mut cols);
                let ob = &mut out[bi * d.cout * osp..(bi + 1) * d.cout * osp];
                for co in 0..d.cout {
                    ob[co * osp..(co + 1) * osp].fill(bd.data[co]);
                }
                gemm_nn(d.cout, ckk, osp, &wd.data, &cols, ob);
            }
        }
        let out_t = Tensor::new(&[d.batch, d.cout, d.oh, d.ow], out, false);
        self.check_finite("conv2d", &out_t)?;
        if self.tracks(&[input, kernel, bias]) {
            self.record(
                &out_t,
                Conv2dNode {
                    x: input.clone(),
                    w: kernel.clone(),
                    b: bias.clone(),
                    out: out_t.clone(),
                    stride,
                    pad: padding,
                },
            );
        }
        Ok(out_t)
    }

    /// 2x2 transposed convolution with stride 2 (exact spatial doubling).
    ///
    /// `input`: B x Cin x H x W, `kernel`: Cin x Cout x 2 x 2. The stride
    /// equals the kernel size, so contributions never overlap.
    pub fn conv_transpose2d(&self, input: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
        let xs = input.shape();
        let ks = kernel.shape();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::config(format!(
                "conv_transpose2d: expected 4-D input and kernel, got {xs:?} and {ks:?}"
            )));
        }
        if ks[2] != 2 || ks[3] != 2 {
            return Err(Error::config(format!(
                "conv_transpose2d: only 2x2 kernels with stride 2 are supported, got {}x{}",
                ks[2], ks[3]
            )));
        }
        if xs[1] != ks[0] {
            return Err(Error::config(format!(
                "conv_transpose2d: input channel dimension {} does not match kernel dimension {}",
                xs[1], ks[0]
            )));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[1];
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); batch * cout * oh * ow];
        {
            let xd = input.inner.borrow();
            let wd = kernel.inner.borrow();
            for bi in 0..batch {
                for ci in 0..cin {
                    let xplane = &xd.data[(bi * cin + ci) * h * w..][..h * w];
                    for co in 0..cout {
                        let wk = &wd.data[(ci * cout + co) * 4..][..4];
                        let oplane = &mut out[(bi * cout + co) * oh * ow..][..oh * ow];
                        for i in 0..h {
                            let xrow = &xplane[i * w..(i + 1) * w];
                            let (r0, r1) = oplane[2 * i * ow..(2 * i + 2) * ow].split_at_mut(ow);
                            for (j, &v) in xrow.iter().enumerate() {
                                r0[2 * j] = r0[2 * j] + v * wk[0];
                                r0[2 * j + 1] = r0[2 * j + 1] + v * wk[1];
                                r1[2 * j] = r1[2 * j] + v * wk[2];
                                r1[2 * j + 1] = r1[2 * j + 1] + v * wk[3];
                            }
                        }
                    }
                }
            }
        }
        let out_t = Tensor::new(&[batch, cout, oh, ow], out, false);
        self.check_finite("conv_transpose2d", &out_t)?;
        if self.tracks(&[input, kernel]) {
            self.record(
                &out_t,
                ConvT2x2Node { x: input.clone(), w: kernel.clone(), out: out_t.clone() },
            );
        }
        Ok(out_t)
    }

    /// 2x2 max-pool with stride 2. H and W must be even. Ties route the
    /// gradient to the first maximal element in row-major window order.
    pub fn maxpool2x2(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let xs = input.shape();
        if xs.len() != 4 {
            return Err(Error::config(format!("maxpool2x2: input must be 4-D, got {xs:?}")));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 {
            return Err(Error::config(format!("maxpool2x2: height {h} is odd")));
        }
        if w % 2 != 0 {
            return Err(Error::config(format!("maxpool2x2: width {w} is odd")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![S::zero(); batch * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        {
            let xd = input.inner.borrow();
            for bc in 0..batch * c {
                let plane = &xd.data[bc * h * w..(bc + 1) * h * w];
                let obase = bc * oh * ow;
                for oi in 0..oh {
                    for oj in 0..ow {
                        let i0 = 2 * oi * w + 2 * oj;
                        // row-major window order: (0,0), (0,1), (1,0), (1,1)
                        let idxs = [i0, i0 + 1, i0 + w, i0 + w + 1];
                        let mut best = idxs[0];
                        let mut bv = plane[idxs[0]];
                        for &ix in &idxs[1..] {
                            if plane[ix] > bv {
                                bv = plane[ix];
                                best = ix;
                            }
                        }
                        out[obase + oi * ow + oj] = bv;
                        argmax[obase + oi * ow + oj] = (bc * h * w + best) as u32;
                    }
                }
            }
        }
        let out_t = Tensor::new(&[batch, c, oh, ow], out, false);
        self.check_finite("maxpool2x2", &out_t)?;
        if self.tracks(&[input]) {
            self.record(
                &out_t,
                MaxPoolNode { x: input.clone(), out: out_t.clone(), argmax },
            );
        }
        Ok(out_t)
    }
}

struct Conv2dNode<S: Scalar> {
    x: Tensor<S>,
    w: Tensor<S>,
    b: Tensor<S>,
    out: Tensor<S>,
    stride: usize,
    pad: usize,
}

impl<S: Scalar> Node<S> for Conv2dNode<S> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        let d = conv_dims(&self.x, &self.w, &self.b, self.stride, self.pad)?;
        let ckk = d.cin * d.k * d.k;
        let osp = d.oh * d.ow;
        let (need_x, need_w, need_b) =
            (self.x.needs_grad(), self.w.needs_grad(), self.b.needs_grad());

        if need_b {
            let mut db = vec![S::zero(); d.cout];
            for bi in 0..d.batch {
                for co in 0..d.cout {
                    let row = &og[(bi * d.cout + co) * osp..][..osp];
                    db[co] = db[co] + super::sum_pairwise(row);
                }
            }
            self.b.accumulate_grad(&db);
        }

        let xd = self.x.data();
        let mut cols = vec![S::zero(); ckk * osp];
        if need_w {
            let mut dw = vec![S::zero(); d.cout * ckk];
            for bi in 0..d.batch {
                im2col(&xd[bi * d.cin * d.h * d.w..], &d, &mut cols);
                let ob = &og[bi * d.cout * osp..(bi + 1) * d.cout * osp];
                gemm_nt(d.cout, osp, ckk, ob, &cols, &mut dw);
            }
            self.w.accumulate_grad(&dw);
        }
        if need_x {
            let wd = self.w.data();
            let mut dx = vec![S::zero(); xd.len()];
            let mut dcols = vec![S::zero(); ckk * osp];
            for bi in 0..d.batch {
                dcols.fill(S::zero());
                let ob = &og[bi * d.cout * osp..(bi + 1) * d.cout * osp];
                gemm_tn(d.cout, ckk, osp, &wd, ob, &mut dcols);
                col2im_add(&dcols, &d, &mut dx[bi * d.cin * d.h * d.w..]);
            }
            self.x.accumulate_grad(&dx);
        }
        Ok(())
    }

    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.x.clone(), self.w.clone(), self.b.clone()]
    }
}

struct ConvT2x2Node<S: Scalar> {
    x: Tensor<S>,
    w: Tensor<S>,
    out: Tensor<S>,
}

impl<S: Scalar> Node<S> for ConvT2x2Node<S> {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        let xs = self.x.shape();
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = self.w.shape()[1];
        let (oh, ow) = (2 * h, 2 * w);
        let xd = self.x.data();
        let wd = self.w.data();

        if self.x.needs_grad() {
            let mut dx = vec![S::zero(); xd.len()];
            for bi in 0..batch {
                for ci in 0..cin {
                    let dxp = &mut dx[(bi * cin + ci) * h * w..][..h * w];
                    for co in 0..cout {
                        let wk = &wd[(ci * cout + co) * 4..][..4];
                        let ogp = &og[(bi * cout + co) * oh * ow..][..oh * ow];
                        for i in 0..h {
                            let (r0, r1) = ogp[2 * i * ow..(2 * i + 2) * ow].split_at(ow);
                            let drow = &mut dxp[i * w..(i + 1) * w];
                            for (j, dv) in drow.iter_mut().enumerate() {
                                *dv = *dv
                                    + r0[2 * j] * wk[0]
                                    + r0[2 * j + 1] * wk[1]
                                    + r1[2 * j] * wk[2]
                                    + r1[2 * j + 1] * wk[3];
                            }
                        }
                    }
                }
            }
            self.x.accumulate_grad(&dx);
        }
        if self.w.needs_grad() {
            let mut dw = vec![S::zero(); wd.len()];
            for bi in 0..batch {
                for ci in 0..cin {
                    let xp = &xd[(bi * cin + ci) * h * w..][..h * w];
                    for co in 0..cout {
                        let dwk = &mut dw[(ci * cout + co) * 4..][..4];
                        let ogp = &og[(bi * cout + co) * oh * ow..][..oh * ow];
                        let (mut a0, mut a1, mut a2, mut a3) =
                            (S::zero(), S::zero(), S::zero(), S::zero());
                        for i in 0..h {
                            let xrow = &xp[i * w..(i + 1) * w];
                            let (r0, r1) = ogp[2 * i * ow..(2 * i + 2) * ow].split_at(ow);
                            for (j, &v) in xrow.iter().enumerate() {
                                a0 = a0 + v * r0[2 * j];
                                a1 = a1 + v * r0[2 * j + 1];
                                a2 = a2 + v * r1[2 * j];
                                a3 = a3 + v * r1[2 * j + 1];
                            }
                        }
                        dwk[0] = dwk[0] + a0;
                        dwk[1] = dwk[1] + a1;
                        dwk[2] = dwk[2] + a2;
                        dwk[3] = dwk[3] + a3;
                    }
                }
            }
            self.w.accumulate_grad(&dw);
        }
        Ok(())
    }

    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.x.clone(), self.w.clone()]
    }
}

struct MaxPoolNode<S: Scalar> {
    x: Tensor<S>,
    out: Tensor<S>,
    argmax: Vec<u32>,
}

impl<S: Scalar> Node<S> for MaxPoolNode<S> {
    fn name(&self) -> &'static str {
        "maxpool2x2"
    }

    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        if self.x.needs_grad() {
            let mut dx = vec![S::zero(); self.x.numel()];
            for (gi, &src) in og.iter().zip(&self.argmax) {
                dx[src as usize] = dx[src as usize] + *gi;
            }
            self.x.accumulate_grad(&dx);
        }
        Ok(())
    }

    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.x.clone()]
    }
}
