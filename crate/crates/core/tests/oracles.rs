//! Fast implementations checked against naive, independently written oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syncvision::descmatch::{match_bruteforce, DescriptorPool, MatchPair};
use syncvision::features::{detect_fast, OrbDescriptor, FAST_ARC, FAST_CIRCLE};
use syncvision::geo::{haversine_distance, nearest_grid_pixel, GeoGrid, GeoPoint, LUNAR_RADIUS_KM};
use syncvision::registration::{apply_homography, reprojection_error, Correspondence, Homography};
use syncvision::Image;

fn blocky_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    // few grey levels with 2x2 blocks gives plenty of segment-test hits
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let cells: Vec<f64> = (0..size * size / 4 + size).map(|_| levels[rng.random_range(0..5)]).collect();
    Image::from_fn(size, size, |x, y| cells[(y / 2) * (size / 2) + x / 2])
}

/// Segment test with no early exit: every start position, every polarity,
/// every arc length from 16 down to 9.
fn oracle_score(img: &Image, x: usize, y: usize, t: f64) -> Option<f64> {
    let p = img.get(x, y);
    let ring: Vec<f64> =
        FAST_CIRCLE.iter().map(|&(dx, dy)| img.get((x as isize + dx) as usize, (y as isize + dy) as usize)).collect();
    let mut best: Option<(usize, f64)> = None;
    for polarity in [1.0, -1.0] {
        for len in (FAST_ARC..=16).rev() {
            for start in 0..16 {
                let arc: Vec<f64> = (0..len).map(|k| ring[(start + k) % 16]).collect();
                let ok = arc.iter().all(|&v| if polarity > 0.0 { v > p + t } else { v < p - t });
                if ok {
                    let score: f64 = arc.iter().map(|v| (v - p).abs()).sum();
                    if best.is_none_or(|(l, _)| len > l) {
                        best = Some((len, score));
                    }
                }
            }
        }
    }
    best.map(|(_, s)| s)
}

fn oracle_fast(img: &Image, t: f64) -> Vec<(usize, usize, f64)> {
    let (w, h) = img.dims();
    let mut score = vec![None; w * h];
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            score[y * w + x] = oracle_score(img, x, y, t);
        }
    }
    let mut out = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let Some(s) = score[y * w + x] else { continue };
            let mut is_max = true;
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if let Some(n) = score[ny * w + nx] {
                        if n > s {
                            is_max = false;
                        }
                    }
                }
            }
            if is_max {
                out.push((x, y, s));
            }
        }
    }
    out
}

#[test]
fn fast_matches_exhaustive_segment_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut total = 0;
    for trial in 0..20 {
        let img = blocky_image(&mut rng, 32);
        let t = [0.05, 0.1, 0.2][trial % 3];
        let got: Vec<(usize, usize, f64)> =
            detect_fast(&img, t).iter().map(|k| (k.x as usize, k.y as usize, k.response)).collect();
        let want = oracle_fast(&img, t);
        assert_eq!(got.len(), want.len(), "trial {trial}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!((g.0, g.1), (w.0, w.1), "trial {trial}");
            assert!((g.2 - w.2).abs() < 1e-12);
        }
        total += want.len();
    }
    assert!(total > 20, "oracle images produced too few corners ({total})");
}

fn naive_match(dist: impl Fn(usize, usize) -> f64, na: usize, nb: usize, cross: bool) -> Vec<(usize, usize, f64)> {
    let nn = |n_other: usize, d: &dyn Fn(usize) -> f64| {
        let mut best = 0;
        for j in 1..n_other {
            if d(j) < d(best) {
                best = j;
            }
        }
        best
    };
    let mut out = Vec::new();
    for i in 0..na {
        let j = nn(nb, &|j| dist(i, j));
        if cross && nn(na, &|k| dist(k, j)) != i {
            continue;
        }
        out.push((i, j, dist(i, j)));
    }
    out
}

fn as_triples(m: &[MatchPair]) -> Vec<(usize, usize, f64)> {
    m.iter().map(|p| (p.query_index, p.train_index, p.distance)).collect()
}

#[test]
fn float_matcher_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 32;
    let mut rows = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect()).collect()
    };
    let a = rows(200);
    let b = rows(200);
    let pa = DescriptorPool::from_float(dim, &a, (0..200).collect()).unwrap();
    let pb = DescriptorPool::from_float(dim, &b, (0..200).collect()).unwrap();
    // rank on squared distance: sqrt can merge sums one ulp apart
    let sq = |i: usize, j: usize| a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    for cross in [false, true] {
        let got = as_triples(&match_bruteforce(&pa, &pb, cross).unwrap());
        let want: Vec<_> = naive_match(sq, 200, 200, cross).into_iter().map(|(i, j, d)| (i, j, d.sqrt())).collect();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!((g.0, g.1), (w.0, w.1));
            assert!((g.2 - w.2).abs() < 1e-9);
        }
    }
}

#[test]
fn binary_matcher_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut descs = |n: usize| -> Vec<OrbDescriptor> {
        (0..n)
            .map(|_| {
                let mut d = [0u8; 32];
                rng.fill(&mut d[..]);
                OrbDescriptor(d)
            })
            .collect()
    };
    let a = descs(200);
    let b = descs(200);
    let pa = DescriptorPool::from_binary(a.clone(), (0..200).collect()).unwrap();
    let pb = DescriptorPool::from_binary(b.clone(), (0..200).collect()).unwrap();
    let ham =
        |i: usize, j: usize| (0..256).filter(|&k| ((a[i].0[k / 8] ^ b[j].0[k / 8]) >> (k % 8)) & 1 == 1).count() as f64;
    for cross in [false, true] {
        let got = as_triples(&match_bruteforce(&pa, &pb, cross).unwrap());
        assert_eq!(got, naive_match(ham, 200, 200, cross));
    }
}

#[test]
fn nearest_grid_pixel_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (rows, cols, step) = (5, 5, 10);
        let lat0 = rng.random_range(-60.0..50.0);
        let lon0 = rng.random_range(-170.0..160.0);
        let nodes: Vec<GeoPoint> = (0..rows * cols)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                let jitter: f64 = rng.random_range(-0.05..0.05);
                GeoPoint::new(lat0 + r as f64 * 0.5 + jitter, lon0 + c as f64 * 0.5 - jitter).unwrap()
            })
            .collect();
        let grid = GeoGrid::new(rows, cols, step, (0.0, 0.0), nodes.clone()).unwrap();
        let target = GeoPoint::new(lat0 + rng.random_range(-0.5..2.5), lon0 + rng.random_range(-0.5..2.5)).unwrap();

        let mut best = (0usize, f64::INFINITY);
        for (k, n) in nodes.iter().enumerate() {
            let d = haversine_distance(*n, target, LUNAR_RADIUS_KM);
            if d < best.1 {
                best = (k, d);
            }
        }
        let hit = nearest_grid_pixel(&grid, target, LUNAR_RADIUS_KM);
        assert_eq!((hit.row, hit.col), (best.0 / cols, best.0 % cols));
        assert_eq!(hit.distance_km, best.1);
        assert_eq!(hit.pixel, ((hit.col * step) as f64, (hit.row * step) as f64));
    }
}

#[test]
fn reprojection_error_is_apply_plus_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let h = Homography::new([
            [1.0 + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-20.0..20.0)],
            [rng.random_range(-0.1..0.1), 1.0 + rng.random_range(-0.1..0.1), rng.random_range(-20.0..20.0)],
            [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), 1.0],
        ])
        .unwrap();
        let p1 = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let p2 = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let q = apply_homography(&h, p1).unwrap();
        let want = ((q.0 - p2.0).powi(2) + (q.1 - p2.1).powi(2)).sqrt();
        let got = reprojection_error(&h, &Correspondence::new(p1, p2)).unwrap();
        assert!((got - want).abs() < 1e-12);

        let back = apply_homography(&h.inverse().unwrap(), q).unwrap();
        assert!((back.0 - p1.0).abs() < 1e-9 && (back.1 - p1.1).abs() < 1e-9);
    }
}
