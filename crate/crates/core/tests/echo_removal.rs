use oled_core::kspace::{
    apply_echo_filter, fft2_centered, ifft2_centered, remove_double_echo, zero_pad, FilterMode, GaussianEchoFilter,
};
use oled_core::phantom::{downsample, make_brain_phantom, TissueMap};
use oled_core::seqsim::{forward_echoes, EchoMask};
use oled_core::{ComplexImage, Domain, GridSpec, Raster, SequenceParams};

fn energy(x: &ComplexImage<f64>) -> f64 {
    x.data.iter().map(|z| z.norm_sqr()).sum()
}

fn rel_change(a: &ComplexImage<f64>, b: &ComplexImage<f64>) -> f64 {
    let d: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d / energy(a)).sqrt()
}

/// Smooth Gaussian-profile object of width N/8 px.
fn smooth_blob(n: usize) -> TissueMap<f64> {
    let (h, s) = (n as f64 / 2.0, n as f64 / 8.0);
    TissueMap {
        grid: GridSpec::square(n),
        t2_ms: Raster::filled(n, n, 100.0),
        pd: Raster::from_fn(n, n, |r, c| (-((r as f64 - h).powi(2) + (c as f64 - h).powi(2)) / (2.0 * s * s)).exp()),
    }
}

#[test]
fn double_echo_rejected_on_smooth_object() {
    let map = smooth_blob(128);
    let p = SequenceParams::default_for(&map.grid);
    let sigma = GaussianEchoFilter::default_sigma(&map.grid);
    let e3 = forward_echoes(&map, &p, EchoMask([false, false, true]));
    let out = remove_double_echo(&e3, &p, sigma).unwrap();
    assert!(!out.overlap_warning);
    let att_db = 10.0 * (energy(&e3) / energy(&out.image)).log10();
    assert!(att_db >= 30.0, "{att_db} dB");
    let e12 = forward_echoes(&map, &p, EchoMask([true, true, false]));
    let once = remove_double_echo(&e12, &p, sigma).unwrap().image;
    assert!(rel_change(&e12, &once) <= 0.01);
    let twice = remove_double_echo(&once, &p, sigma).unwrap().image;
    assert!(rel_change(&once, &twice) <= 1e-3);
}

#[test]
fn wanted_echoes_survive_on_brain_phantom() {
    let g = GridSpec::square(128);
    let map: TissueMap<f64> = downsample(&make_brain_phantom(&GridSpec::square(512)).unwrap(), &g).unwrap();
    let p = SequenceParams::default_for(&g);
    let sigma = GaussianEchoFilter::default_sigma(&g);
    let e12 = forward_echoes(&map, &p, EchoMask([true, true, false]));
    let once = remove_double_echo(&e12, &p, sigma).unwrap().image;
    assert!(rel_change(&e12, &once) <= 0.01);
}

#[test]
fn overlap_is_flagged() {
    let g = GridSpec::square(64);
    let mut p = SequenceParams::default_for(&g);
    p.shift3_cyc = [p.shift1_cyc[0] + 4.0, p.shift1_cyc[1]];
    let img = ComplexImage::<f64>::zeros(g, Domain::Image);
    assert!(remove_double_echo(&img, &p, 4.0).unwrap().overlap_warning);
    assert!(!remove_double_echo(&img, &SequenceParams::default_for(&g), 4.0).unwrap().overlap_warning);
}

#[test]
fn pass_and_reject_sum_to_identity() {
    let map = smooth_blob(32);
    let p = SequenceParams::default_for(&map.grid);
    let k = fft2_centered(&forward_echoes(&map, &p, EchoMask::ALL)).unwrap();
    let f = |mode| GaussianEchoFilter { center_cyc: [3.0, -5.0], sigma_cyc: 2.5, mode };
    let a = apply_echo_filter(&k, &f(FilterMode::Pass)).unwrap();
    let b = apply_echo_filter(&k, &f(FilterMode::Reject)).unwrap();
    for i in 0..k.data.len() {
        assert!((a.data[i] + b.data[i] - k.data[i]).norm() <= 1e-15 * (1.0 + k.data[i].norm()));
    }
    assert!(apply_echo_filter(&ifft2_centered(&k).unwrap(), &f(FilterMode::Pass)).is_err());
}

#[test]
fn padded_constant_stays_constant() {
    let g = GridSpec::square(16);
    let img = ComplexImage::from_vec(g, vec![oled_core::Complex::new(0.7, -0.2); 256], Domain::Image).unwrap();
    let big = GridSpec::square(32);
    let up = ifft2_centered(&zero_pad(&fft2_centered(&img).unwrap(), &big).unwrap()).unwrap();
    // unitary transforms: intensity scales by sqrt(16² / 32²)
    for z in &up.data {
        assert!((z - oled_core::Complex::new(0.35, -0.1)).norm() < 1e-12);
    }
    assert!((energy(&up) - energy(&img)).abs() < 1e-10);
}
