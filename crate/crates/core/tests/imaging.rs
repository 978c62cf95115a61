use syncvision::imgcore::{gaussian_blur, load_image, sample_bicubic, save_image, upscale};
use syncvision::metrics::{quality, Scale, SsimParams};
use syncvision::{Image, InterpMethod};

fn smooth(size: usize) -> Image {
    Image::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        0.5 + 0.2 * (std::f64::consts::TAU * u).sin() * (std::f64::consts::PI * v).cos()
    })
}

#[test]
fn bicubic_reproduces_ramps() {
    let w = 20;
    let img = Image::from_fn(w, 6, |x, _| x as f64 / (w - 1) as f64);
    for k in 0..200 {
        let x = 1.0 + (w as f64 - 3.0) * k as f64 / 199.0;
        let v = sample_bicubic(&img, x, 2.3);
        assert!((v - x / (w - 1) as f64).abs() < 1e-5);
    }
}

#[test]
fn upscale_shapes_and_identity() {
    let img = smooth(128);
    for m in [InterpMethod::Bilinear, InterpMethod::Bicubic] {
        assert_eq!(upscale(&img, 8.0, m).unwrap().dims(), (1024, 1024));
        let same = upscale(&img, 1.0, m).unwrap();
        assert!(same.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

#[test]
fn blur_composes_and_keeps_mean() {
    let img = smooth(64);
    let twice = gaussian_blur(&gaussian_blur(&img, 1.0).unwrap(), 1.5).unwrap();
    let once = gaussian_blur(&img, (1.0f64 + 2.25).sqrt()).unwrap();
    for y in 8..56 {
        for x in 8..56 {
            assert!((twice.get(x, y) - once.get(x, y)).abs() < 1e-3);
        }
    }
    for s in [0.5, 1.0, 2.0] {
        assert!((gaussian_blur(&img, s).unwrap().mean() - img.mean()).abs() < 1e-4);
    }
}

#[test]
fn eight_bit_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(33, 17, |x, y| ((x * 31 + y * 7) % 256) as f64 / 255.0);
    for ext in ["png", "pgm"] {
        let path = dir.path().join(format!("t.{ext}"));
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.to_bytes(), img.to_bytes());
        let q = quality(&back, &img, &SsimParams::windowed(Scale::EightBit), None).unwrap();
        assert!(q.psnr_db.is_infinite());
    }
    assert!(load_image(dir.path().join("missing.png")).is_err());
}
