use oled_core::rng::{stream, Purpose};
use oled_core::Raster;
use oled_net::guided_filter;
use oled_net::layers::{BatchNorm, Conv2d};
use oled_net::Tensor4;
use rand::Rng;

/// Direct zero-padded cross-correlation.
fn naive_conv(x: &Tensor4<f64>, conv: &Conv2d<f64>) -> Tensor4<f64> {
    let [bsz, cin, h, w] = x.dims;
    let k = conv.kernel;
    let p = (k / 2) as isize;
    let mut y = Tensor4::zeros([bsz, conv.out_ch, h, w]);
    for b in 0..bsz {
        for o in 0..conv.out_ch {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = conv.b[o];
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (r as isize + ky as isize - p, c as isize + kx as isize - p);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    acc += conv.w[((o * cin + i) * k + ky) * k + kx]
                                        * x.at(b, i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    y.data[((b * conv.out_ch + o) * h + r) * w + c] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv_matches_direct_loops_exactly() {
    // integer-valued data keeps every partial sum exact, so any summation order agrees bit for bit
    let mut rng = stream(3, 0, Purpose::Init);
    let mut conv = Conv2d::<f64>::new(1, 1, 3).unwrap();
    conv.w = (0..9).map(|_| rng.random_range(-4i32..=4) as f64).collect();
    conv.b = vec![2.0];
    let x = Tensor4::from_vec([1, 1, 4, 4], (0..16).map(|_| rng.random_range(-9i32..=9) as f64).collect()).unwrap();
    assert_eq!(conv.forward(&x).unwrap().0, naive_conv(&x, &conv));

    let mut wide = Conv2d::<f64>::new(3, 4, 5).unwrap();
    wide.w = (0..wide.w.len()).map(|_| rng.random_range(-3i32..=3) as f64).collect();
    wide.b = (0..4).map(|_| rng.random_range(-3i32..=3) as f64).collect();
    let x =
        Tensor4::from_vec([2, 3, 7, 6], (0..2 * 3 * 42).map(|_| rng.random_range(-5i32..=5) as f64).collect()).unwrap();
    assert_eq!(wide.forward_inference(&x).unwrap(), naive_conv(&x, &wide));
}

#[test]
fn folded_batch_norm_matches_separate_layers() {
    let mut rng = stream(4, 0, Purpose::Init);
    let mut conv = Conv2d::<f64>::new(3, 5, 3).unwrap();
    conv.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    conv.b.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let mut bn = BatchNorm::<f64>::new(5);
    let x = Tensor4::from_vec([2, 3, 6, 5], (0..180).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    assert!(conv.fold_batch_norm(&bn).is_err());
    bn.forward_train(&conv.forward(&x).unwrap().0).unwrap();
    bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..2.0));
    bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let separate = bn.forward_inference(&conv.forward_inference(&x).unwrap()).unwrap();
    let folded = conv.fold_batch_norm(&bn).unwrap().forward_inference(&x).unwrap();
    for (a, b) in separate.data.iter().zip(&folded.data) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

/// Guided filter with every window sum taken directly.
fn naive_guided(p: &Raster<f64>, i: &Raster<f64>, r: usize, eps: f64) -> Raster<f64> {
    let (rows, cols) = (p.rows, p.cols);
    let window = |y: usize, x: usize| {
        let ys = y.saturating_sub(r)..(y + r + 1).min(rows);
        let xs = x.saturating_sub(r)..(x + r + 1).min(cols);
        ys.flat_map(move |yy| xs.clone().map(move |xx| (yy, xx)))
    };
    let mean = |f: &dyn Fn(usize, usize) -> f64, y: usize, x: usize| {
        let v: Vec<f64> = window(y, x).map(|(a, b)| f(a, b)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut a = Raster::filled(rows, cols, 0.0);
    let mut b = Raster::filled(rows, cols, 0.0);
    for y in 0..rows {
        for x in 0..cols {
            let mi = mean(&|u, v| i.get(u, v), y, x);
            let mp = mean(&|u, v| p.get(u, v), y, x);
            let var = mean(&|u, v| i.get(u, v) * i.get(u, v), y, x) - mi * mi;
            let cov = mean(&|u, v| i.get(u, v) * p.get(u, v), y, x) - mi * mp;
            a.set(y, x, cov / (var + eps));
            b.set(y, x, mp - a.get(y, x) * mi);
        }
    }
    Raster::from_fn(rows, cols, |y, x| mean(&|u, v| a.get(u, v), y, x) * i.get(y, x) + mean(&|u, v| b.get(u, v), y, x))
}

#[test]
fn guided_filter_matches_naive_windows() {
    let mut rng = stream(8, 0, Purpose::Init);
    for (r, eps) in [(1, 1e-2), (2, 1e-4), (4, 1e-3), (15, 1e-4)] {
        let p: Raster<f64> = Raster::from_fn(9, 9, |_, _| rng.random_range(0.0..1.0));
        let g = Raster::from_fn(9, 9, |_, _| rng.random_range(0.0..1.0));
        for guide in [&p, &g] {
            let fast = guided_filter(&p, guide, r, eps).unwrap();
            let slow = naive_guided(&p, guide, r, eps);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() <= 1e-12, "r {r}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn guided_filter_limits() {
    let mut rng = stream(9, 0, Purpose::Init);
    let p: Raster<f64> = Raster::from_fn(40, 40, |_, _| rng.random_range(0.0..1.0));
    // eps → 0 with self-guidance reproduces the input
    let id = guided_filter(&p, &p, 3, 1e-12).unwrap();
    assert!(id.data.iter().zip(&p.data).all(|(a, b)| (a - b).abs() < 1e-6));
    // eps → ∞: a → 0 and b → mean(p), so the output is the box mean of the box mean
    let smooth = guided_filter(&p, &p, 15, 1e12).unwrap();
    let box_mean = |v: &Raster<f64>| {
        Raster::from_fn(40, 40, |y, x| {
            let (y0, y1, x0, x1) = (y.saturating_sub(15), (y + 16).min(40), x.saturating_sub(15), (x + 16).min(40));
            let mut s = 0.0;
            for yy in y0..y1 {
                for xx in x0..x1 {
                    s += v.get(yy, xx);
                }
            }
            s / ((y1 - y0) * (x1 - x0)) as f64
        })
    };
    let want = box_mean(&box_mean(&p));
    assert!(smooth.data.iter().zip(&want.data).all(|(a, b)| (a - b).abs() < 1e-9));
}
