//! Kernels against brute-force evaluations written straight from the
//! defining formulas.

use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urltrace::imgproc::{luma, nlm_denoise, pixel_weights, sharpen, DenoiseParams};
use urltrace::matching::{match_template_with, CorrelationMethod};
use urltrace::GrayImage;

fn zncc_oracle(img: &GrayImage, t: &GrayImage) -> Vec<f64> {
    let (tw, th) = (t.width(), t.height());
    let n = (tw * th) as f64;
    let t_mean = t.pixels().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mut out = Vec::new();
    for y in 0..=img.height() - th {
        for x in 0..=img.width() - tw {
            let mut i_sum = 0.0;
            for yy in 0..th {
                for xx in 0..tw {
                    i_sum += f64::from(img.get(x + xx, y + yy));
                }
            }
            let i_mean = i_sum / n;
            let (mut num, mut tt, mut ii) = (0.0, 0.0, 0.0);
            for yy in 0..th {
                for xx in 0..tw {
                    let a = f64::from(t.get(xx, yy)) - t_mean;
                    let b = f64::from(img.get(x + xx, y + yy)) - i_mean;
                    num += a * b;
                    tt += a * a;
                    ii += b * b;
                }
            }
            let z = (tt * ii).sqrt();
            out.push(if z > 0.0 { num / z } else { 0.0 });
        }
    }
    out
}

fn nlm_oracle(img: &GrayImage, patch: usize, window: usize, h: f64) -> GrayImage {
    let (w, ht) = (img.width() as isize, img.height() as isize);
    let (pr, sr) = ((patch / 2) as isize, (window / 2) as isize);
    let v = |x: isize, y: isize| f64::from(img.get_clamped(x, y));
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (xi, yi) = (x as isize, y as isize);
        let (mut num, mut den) = (0.0, 0.0);
        for jy in (yi - sr).max(0)..=(yi + sr).min(ht - 1) {
            for jx in (xi - sr).max(0)..=(xi + sr).min(w - 1) {
                let mut d = 0.0;
                for py in -pr..=pr {
                    for px in -pr..=pr {
                        let diff = v(xi + px, yi + py) - v(jx + px, jy + py);
                        d += diff * diff;
                    }
                }
                let d = d / (patch * patch) as f64;
                let wgt = (-d / (h * h)).exp();
                num += wgt * v(jx, jy);
                den += wgt;
            }
        }
        (num / den + 0.5).floor().clamp(0.0, 255.0) as u8
    })
}

fn sharpen_oracle(img: &GrayImage) -> GrayImage {
    let g: Vec<f64> = (-2i32..=2)
        .map(|d| (-f64::from(d * d) / 2.0).exp())
        .collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut blur = 0.0;
        for (a, gy) in g.iter().enumerate() {
            for (b, gx) in g.iter().enumerate() {
                let v = img.get_clamped(x as isize + b as isize - 2, y as isize + a as isize - 2);
                blur += gy * gx * f64::from(v);
            }
        }
        let s = 2.0 * f64::from(img.get(x, y)) - blur / total;
        (s + 0.5).floor().clamp(0.0, 255.0) as u8
    })
}

fn image(max_w: usize, max_h: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h)
            .prop_map(move |px| GrayImage::from_raw(w, h, px).unwrap())
    })
}

/// Images drawn from few levels, so flat windows and ties actually occur.
fn coarse_image(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(prop::sample::select(vec![0u8, 100, 255]), w * h)
        .prop_map(move |px| GrayImage::from_raw(w, h, px).unwrap())
}

fn assert_surface(img: &GrayImage, t: &GrayImage, method: CorrelationMethod, tol: f64) {
    let expected = zncc_oracle(img, t);
    let got = match_template_with::<f64>(img, t, method).unwrap();
    for (e, g) in expected.iter().zip(got.values()) {
        assert!((e - g).abs() <= tol, "{method:?}: expected {e}, got {g}");
    }
    let got32 = match_template_with::<f32>(img, t, method).unwrap();
    for (e, g) in expected.iter().zip(got32.values()) {
        assert!(
            (e - f64::from(*g)).abs() <= 1e-3,
            "f32 {method:?}: expected {e}, got {g}"
        );
    }
}

proptest! {
    #[test]
    fn zncc_matches_double_loop(img in image(12, 12), t in image(5, 5)) {
        prop_assume!(t.width() <= img.width() && t.height() <= img.height());
        prop_assume!(!t.is_constant());
        assert_surface(&img, &t, CorrelationMethod::Direct, 1e-9);
        assert_surface(&img, &t, CorrelationMethod::Fft, 1e-6);
    }

    #[test]
    fn zncc_on_flat_regions(img in coarse_image(10, 8), t in coarse_image(3, 3)) {
        prop_assume!(!t.is_constant());
        assert_surface(&img, &t, CorrelationMethod::Direct, 1e-9);
        assert_surface(&img, &t, CorrelationMethod::Fft, 1e-6);
    }

    #[test]
    fn nlm_matches_brute_force(img in image(9, 9), seed in any::<u64>()) {
        prop_assume!(img.width() >= 3 && img.height() >= 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rng.gen_range(2.0..40.0);
        let p = DenoiseParams::new(3, 5, h);
        let expected = nlm_oracle(&img, 3, 5, h);
        let got = nlm_denoise(&img, &p).unwrap();
        for (e, g) in expected.pixels().iter().zip(got.pixels()) {
            prop_assert!(e.abs_diff(*g) <= 1, "expected {e}, got {g}");
        }
    }

    #[test]
    fn nlm_weights_are_a_distribution(img in image(9, 9), x in 0usize..9, y in 0usize..9) {
        prop_assume!(img.width() >= 3 && img.height() >= 3);
        let (x, y) = (x % img.width(), y % img.height());
        let ws = pixel_weights(&img, &DenoiseParams::new(3, 5, 10.0f64), x, y).unwrap();
        prop_assert!(ws.iter().all(|(_, w)| *w >= 0.0));
        let total: f64 = ws.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sharpen_matches_full_kernel(img in image(12, 10)) {
        let expected = sharpen_oracle(&img);
        let got = sharpen::<f64>(&img);
        for (e, g) in expected.pixels().iter().zip(got.pixels()) {
            prop_assert!(e.abs_diff(*g) <= 1, "expected {e}, got {g}");
        }
    }

    #[test]
    fn filters_fix_constant_images(w in 7usize..16, h in 7usize..12, v in any::<u8>()) {
        let img = GrayImage::filled(w, h, v);
        prop_assert_eq!(nlm_denoise(&img, &DenoiseParams::<f64>::default()).unwrap(), img.clone());
        prop_assert_eq!(sharpen::<f64>(&img), img);
    }
}

#[test]
fn nlm_matches_brute_force_at_default_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = GrayImage::from_fn(30, 24, |x, y| {
        let base = if (x / 6 + y / 8) % 2 == 0 {
            60.0
        } else {
            190.0
        };
        (base + rng.gen_range(-12.0..12.0f64)).round() as u8
    });
    let expected = nlm_oracle(&img, 7, 21, 10.0);
    let got = nlm_denoise(&img, &DenoiseParams::<f64>::default()).unwrap();
    for (e, g) in expected.pixels().iter().zip(got.pixels()) {
        assert!(e.abs_diff(*g) <= 1, "expected {e}, got {g}");
    }
    let got32 = nlm_denoise(&img, &DenoiseParams::<f32>::default()).unwrap();
    for (e, g) in expected.pixels().iter().zip(got32.pixels()) {
        assert!(e.abs_diff(*g) <= 1, "f32: expected {e}, got {g}");
    }
}

#[test]
fn perfect_embeddings_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let (tw, th) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let t = GrayImage::from_fn(tw, th, |_, _| rng.gen());
        if t.is_constant() {
            continue;
        }
        let (x0, y0) = (rng.gen_range(0..=12 - tw), rng.gen_range(0..=12 - th));
        let mut img = GrayImage::filled(12, 12, 0);
        for y in 0..th {
            for x in 0..tw {
                img.put(x0 + x, y0 + y, t.get(x, y));
            }
        }
        let r = match_template_with::<f64>(&img, &t, CorrelationMethod::Direct).unwrap();
        assert!((r.get(x0, y0) - 1.0).abs() < 1e-6);
        assert!(r.values().iter().all(|&v| v <= 1.0 + 1e-9));
    }
}

#[test]
fn grayscale_is_exact_rational_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let half = Ratio::new(1i64, 2);
    let weights = [
        Ratio::new(299i64, 1000),
        Ratio::new(587, 1000),
        Ratio::new(114, 1000),
    ];
    let check = |r: u8, g: u8, b: u8| {
        let y = weights[0] * i64::from(r) + weights[1] * i64::from(g) + weights[2] * i64::from(b);
        let expected = (y + half).floor().to_integer();
        assert_eq!(i64::from(luma(r, g, b)), expected, "({r}, {g}, {b})");
    };
    for _ in 0..20_000 {
        check(rng.gen(), rng.gen(), rng.gen());
    }
    for v in [0u8, 1, 127, 128, 254, 255] {
        check(v, v, v);
        check(v, 0, 0);
        check(0, v, 0);
        check(0, 0, v);
    }
}
