//! 3x3 same-padded convolutions via im2col; each pixel of each sample is one
//! row of the activation matrix, so the layer math is the MLP's with a
//! 9x wider fan-in.

use ndarray::{Array2, ArrayView2, Axis};

use super::{Network, TimeEmbedding};

pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cond_channels: usize,
}

pub(crate) struct ConvCache {
    batch: usize,
    height: usize,
    width: usize,
    /// Layer inputs (pixel rows x channels).
    inputs: Vec<Array2<f64>>,
    /// im2col of each layer input.
    cols: Vec<Array2<f64>>,
}

fn assemble(
    g: &ConvGeometry,
    x: ArrayView2<'_, f64>,
    cond: Option<ArrayView2<'_, f64>>,
    t: &[f64],
    time: TimeEmbedding,
) -> Array2<f64> {
    let batch = x.nrows();
    let px = g.height * g.width;
    let width = g.channels + g.cond_channels + time.width();
    let mut a = vec![0.0; batch * px * width];
    let mut emb = vec![0.0; time.width()];
    for b in 0..batch {
        time.embed(t[b], &mut emb);
        let xr = x.row(b);
        let cr = cond.as_ref().map(|c| c.row(b));
        for p in 0..px {
            let row = &mut a[(b * px + p) * width..(b * px + p + 1) * width];
            for c in 0..g.channels {
                row[c] = xr[p * g.channels + c];
            }
            if let Some(cr) = &cr {
                for c in 0..g.cond_channels {
                    row[g.channels + c] = cr[p * g.cond_channels + c];
                }
            }
            row[g.channels + g.cond_channels..].copy_from_slice(&emb);
        }
    }
    Array2::from_shape_vec((batch * px, width), a).expect("sized above")
}

fn im2col(a: &Array2<f64>, batch: usize, height: usize, width: usize) -> Array2<f64> {
    let cin = a.ncols();
    let a = a.as_standard_layout();
    let src = a.as_slice().expect("standard layout");
    let k = 9 * cin;
    let mut cols = vec![0.0; batch * height * width * k];
    for b in 0..batch {
        for y in 0..height {
            for x in 0..width {
                let base = ((b * height + y) * width + x) * k;
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy < 1 || sy > height {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x + kx;
                        if sx < 1 || sx > width {
                            continue;
                        }
                        let s = ((b * height + sy - 1) * width + sx - 1) * cin;
                        let d = base + (ky * 3 + kx) * cin;
                        cols[d..d + cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * height * width, k), cols).expect("sized above")
}

fn col2im(dcols: &Array2<f64>, batch: usize, height: usize, width: usize) -> Array2<f64> {
    let k = dcols.ncols();
    let cin = k / 9;
    let dcols = dcols.as_standard_layout();
    let src = dcols.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * height * width * cin];
    for b in 0..batch {
        for y in 0..height {
            for x in 0..width {
                let base = ((b * height + y) * width + x) * k;
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy < 1 || sy > height {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x + kx;
                        if sx < 1 || sx > width {
                            continue;
                        }
                        let d = ((b * height + sy - 1) * width + sx - 1) * cin;
                        let s = base + (ky * 3 + kx) * cin;
                        for c in 0..cin {
                            out[d + c] += src[s + c];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * height * width, cin), out).expect("sized above")
}

pub(crate) fn forward(
    net: &Network,
    g: &ConvGeometry,
    x: ArrayView2<'_, f64>,
    cond: Option<ArrayView2<'_, f64>>,
    t: &[f64],
    time: TimeEmbedding,
) -> (Array2<f64>, ConvCache) {
    let batch = x.nrows();
    let layers = net.layers();
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut cols_cache = Vec::with_capacity(layers.len());
    let mut a = assemble(g, x, cond, t, time);
    for (li, (w, b)) in layers.iter().enumerate() {
        let cols = im2col(&a, batch, g.height, g.width);
        let mut h = cols.dot(&w.t());
        for mut row in h.rows_mut() {
            for (v, bias) in row.iter_mut().zip(b.iter()) {
                *v += bias;
            }
        }
        if li < last {
            h.mapv_inplace(f64::tanh);
        }
        inputs.push(a);
        cols_cache.push(cols);
        a = h;
    }
    let dim = g.height * g.width * g.channels;
    let out = Array2::from_shape_vec((batch, dim), a.iter().copied().collect()).expect("pixel rows regroup per sample");
    (
        out,
        ConvCache {
            batch,
            height: g.height,
            width: g.width,
            inputs,
            cols: cols_cache,
        },
    )
}

pub(crate) fn backward(net: &Network, cache: &ConvCache, d_out: Array2<f64>) -> Vec<f64> {
    let layers = net.layers();
    let rows = cache.batch * cache.height * cache.width;
    let out_channels = d_out.len() / rows;
    let mut dh = Array2::from_shape_vec((rows, out_channels), d_out.iter().copied().collect()).expect("per-pixel regroup");
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    for li in (0..layers.len()).rev() {
        let (w, _) = &layers[li];
        let dw = dh.t().dot(&cache.cols[li]);
        let db = dh.sum_axis(Axis(0));
        let mut gl: Vec<f64> = dw.iter().copied().collect();
        gl.extend(db.iter());
        grads[li] = gl;
        if li > 0 {
            let dcols = dh.dot(w);
            let mut da = col2im(&dcols, cache.batch, cache.height, cache.width);
            da.zip_mut_with(&cache.inputs[li], |d, &a| *d *= 1.0 - a * a);
            dh = da;
        }
    }
    grads.concat()
}
