use ndarray::{Array2, ArrayView2, Axis};

use super::{Network, TimeEmbedding};

pub(crate) struct MlpCache {
    /// Input to each layer; entry 0 is the assembled `[x | cond | time]` matrix,
    /// later entries are tanh activations.
    inputs: Vec<Array2<f64>>,
}

fn assemble(x: ArrayView2<'_, f64>, cond: Option<ArrayView2<'_, f64>>, t: &[f64], time: TimeEmbedding) -> Array2<f64> {
    let rows = x.nrows();
    let dx = x.ncols();
    let dc = cond.as_ref().map_or(0, |c| c.ncols());
    let dt = time.width();
    let mut a = Array2::<f64>::zeros((rows, dx + dc + dt));
    for r in 0..rows {
        let mut row = a.row_mut(r);
        let row = row.as_slice_mut().expect("fresh array is contiguous");
        for (dst, src) in row[..dx].iter_mut().zip(x.row(r).iter()) {
            *dst = *src;
        }
        if let Some(c) = &cond {
            for (dst, src) in row[dx..dx + dc].iter_mut().zip(c.row(r).iter()) {
                *dst = *src;
            }
        }
        time.embed(t[r], &mut row[dx + dc..]);
    }
    a
}

pub(crate) fn forward(
    net: &Network,
    x: ArrayView2<'_, f64>,
    cond: Option<ArrayView2<'_, f64>>,
    t: &[f64],
    time: TimeEmbedding,
) -> (Array2<f64>, MlpCache) {
    let layers = net.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut a = assemble(x, cond, t, time);
    let last = layers.len() - 1;
    for (li, (w, b)) in layers.iter().enumerate() {
        let mut h = a.dot(&w.t());
        for mut row in h.rows_mut() {
            for (v, bias) in row.iter_mut().zip(b.iter()) {
                *v += bias;
            }
        }
        if li < last {
            h.mapv_inplace(f64::tanh);
        }
        inputs.push(a);
        a = h;
    }
    (a, MlpCache { inputs })
}

pub(crate) fn backward(net: &Network, cache: &MlpCache, d_out: Array2<f64>) -> Vec<f64> {
    let layers = net.layers();
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    let mut dh = d_out;
    for li in (0..layers.len()).rev() {
        let (w, _) = &layers[li];
        let a_in = &cache.inputs[li];
        let dw = dh.t().dot(a_in);
        let db = dh.sum_axis(Axis(0));
        let mut g: Vec<f64> = dw.iter().copied().collect();
        g.extend(db.iter());
        grads[li] = g;
        if li > 0 {
            let mut da = dh.dot(w);
            // a_in = tanh(h_prev), so d tanh = 1 - a^2
            da.zip_mut_with(a_in, |d, &a| *d *= 1.0 - a * a);
            dh = da;
        }
    }
    grads.concat()
}
