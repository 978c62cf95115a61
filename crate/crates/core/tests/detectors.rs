use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syncvision::descmatch::{
    fit_pca, knn_match, project_pca, project_values, ratio_test_filter, DescriptorPool, DEFAULT_RATIO, PCA_DIM,
};
use syncvision::features::{detect_orb, detect_sift, Keypoint, OrbConfig, SiftConfig, SiftDescriptor};
use syncvision::synthbench::{generate_crater_scene, SceneConfig};
use syncvision::Image;

fn scene(size: usize, seed: u64) -> Image {
    generate_crater_scene(&SceneConfig { size, n_craters: size / 8, seed, ..SceneConfig::default() }).unwrap()
}

/// Quarter turn: the pixel at `(a, b)` moves to `(n - 1 - b, a)`.
fn rot90(img: &Image) -> Image {
    let n = img.width();
    assert_eq!(n, img.height());
    Image::from_fn(n, n, |x, y| img.get(y, n - 1 - x))
}

fn rot90_point(n: usize, (a, b): (f64, f64)) -> (f64, f64) {
    ((n - 1) as f64 - b, a)
}

fn nearest(kps: &[Keypoint], p: (f64, f64)) -> Option<(usize, f64)> {
    kps.iter()
        .enumerate()
        .map(|(i, k)| (i, ((k.x - p.0).powi(2) + (k.y - p.1).powi(2)).sqrt()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

#[test]
fn sift_finds_gaussian_blob_centre() {
    let (cx, cy, s) = (64.0, 64.0, 4.0);
    let img = Image::from_fn(128, 128, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        (-r2 / (2.0 * s * s)).exp()
    });
    let (kps, descs) = detect_sift(&img, &SiftConfig::default()).unwrap();
    assert_eq!(kps.len(), descs.len());
    let (_, d) = nearest(&kps, (cx, cy)).expect("no keypoints on blob");
    assert!(d <= 2.0, "closest keypoint {d} px from blob centre");
}

#[test]
fn sift_descriptors_are_normalized_and_clamped() {
    let (kps, descs) = detect_sift(&scene(256, 4), &SiftConfig::default()).unwrap();
    assert!(kps.len() > 20);
    for d in &descs {
        let norm: f64 = d.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        assert!(d.0.iter().all(|&v| (0.0..=0.2 + 1e-5).contains(&v)));
    }
    for k in &kps {
        assert!(k.x >= 0.0 && k.x < 256.0 && k.y >= 0.0 && k.y < 256.0);
        assert!((0.0..std::f64::consts::TAU).contains(&k.orientation));
        assert!(k.response >= 0.0);
    }
}

#[test]
fn sift_count_is_offset_invariant() {
    let base = scene(256, 8);
    let squeezed = Image::from_fn(256, 256, |x, y| 0.05 + 0.8 * base.get(x, y));
    let lifted = Image::from_fn(256, 256, |x, y| squeezed.get(x, y) + 0.1);
    let cfg = SiftConfig::default();
    let (a, _) = detect_sift(&squeezed, &cfg).unwrap();
    let (b, _) = detect_sift(&lifted, &cfg).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
}

#[test]
fn sift_is_rotation_covariant() {
    let img = scene(256, 12);
    let cfg = SiftConfig::default();
    let (a, _) = detect_sift(&img, &cfg).unwrap();
    let (b, _) = detect_sift(&rot90(&img), &cfg).unwrap();
    assert!(a.len() > 20);
    let hits = a.iter().filter(|k| nearest(&b, rot90_point(256, (k.x, k.y))).is_some_and(|(_, d)| d <= 2.0)).count();
    assert!(hits * 2 >= a.len(), "{hits} of {} keypoints survive a quarter turn", a.len());
}

#[test]
fn orb_keypoint_count_and_determinism() {
    let img = scene(256, 21);
    let cfg = OrbConfig::default();
    let (kps, descs) = detect_orb(&img, &cfg).unwrap();
    assert!((50..=500).contains(&kps.len()), "{} keypoints", kps.len());
    assert_eq!(kps.len(), descs.len());
    let (kps2, descs2) = detect_orb(&img, &cfg).unwrap();
    assert_eq!(kps, kps2);
    assert_eq!(descs, descs2);
}

#[test]
fn orb_descriptors_survive_quarter_turn() {
    let img = scene(256, 33);
    let cfg = OrbConfig::default();
    let (ka, da) = detect_orb(&img, &cfg).unwrap();
    let (kb, db) = detect_orb(&rot90(&img), &cfg).unwrap();
    let mut dists = Vec::new();
    for (k, d) in ka.iter().zip(&da) {
        if let Some((j, dist)) = nearest(&kb, rot90_point(256, (k.x, k.y))) {
            if dist <= 1.0 {
                dists.push(d.hamming(&db[j]));
            }
        }
    }
    assert!(dists.len() >= 20, "only {} co-located keypoints", dists.len());
    let good = dists.iter().filter(|&&h| h <= 64).count();
    assert!(good * 10 >= dists.len() * 9, "{good} of {} within Hamming 64", dists.len());
}

#[test]
fn ratio_test_rejects_most_random_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rows =
        |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..32).map(|_| rng.random::<f64>()).collect()).collect() };
    let a = DescriptorPool::from_float(32, &rows(1000), (0..1000).collect()).unwrap();
    let b = DescriptorPool::from_float(32, &rows(1000), (0..1000).collect()).unwrap();
    let kept = ratio_test_filter(&knn_match(&a, &b).unwrap(), DEFAULT_RATIO).len();
    assert!(kept < 500, "kept {kept} of 1000");
}

fn orthonormal_rows(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

#[test]
fn pca_reconstructs_rank_32_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = orthonormal_rows(&mut rng, PCA_DIM, 128);
    // integer coefficients over a dyadic offset keep f32 storage exact enough
    let descs: Vec<SiftDescriptor> = (0..200)
        .map(|_| {
            let c: Vec<f64> = (0..PCA_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            SiftDescriptor(std::array::from_fn(|j| {
                (0.5 + 0.05 * (0..PCA_DIM).map(|i| c[i] * g[i][j]).sum::<f64>()) as f32
            }))
        })
        .collect();
    let basis = fit_pca(&descs, PCA_DIM).unwrap();
    assert!(!basis.is_padded());

    for (i, a) in basis.components.iter().enumerate() {
        for (j, b) in basis.components.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-6);
        }
    }
    assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));

    for d in &descs {
        let y = project_pca(&basis, d);
        let centred: Vec<f64> = d.0.iter().zip(&basis.mean).map(|(&v, m)| v as f64 - m).collect();
        let err: f64 = (0..128)
            .map(|j| {
                let back: f64 = (0..PCA_DIM).map(|i| basis.components[i][j] * y[i]).sum();
                (centred[j] - back).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-6, "reconstruction error {err}");
    }

    let zero = project_values(&basis, &basis.mean);
    assert!(zero.iter().all(|v| v.abs() < 1e-12));
    for k in [0, 7, 31] {
        let p: Vec<f64> = basis.mean.iter().zip(&basis.components[k]).map(|(m, c)| m + c).collect();
        let y = project_values(&basis, &p);
        for (i, v) in y.iter().enumerate() {
            assert!((v - f64::from(u8::from(i == k))).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_ignores_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut descs: Vec<SiftDescriptor> =
        (0..80).map(|_| SiftDescriptor(std::array::from_fn(|_| rng.random_range(0.0f32..0.2)))).collect();
    let a = fit_pca(&descs, PCA_DIM).unwrap();
    descs.reverse();
    descs.swap(3, 40);
    let b = fit_pca(&descs, PCA_DIM).unwrap();
    assert_eq!(a, b);
}
