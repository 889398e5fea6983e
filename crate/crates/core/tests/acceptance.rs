//! Acceptance checks. Prints one PASS/FAIL line per criterion with its
//! runtime and budget, then exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use xray_bovw::detect::{balance, image_entries, DatasetEntry, Detector, ProposalDataset};
use xray_bovw::encode::{Chi2FeatureMap, FeatureMapVector, KernelMapConfig};
use xray_bovw::eval::{
    classification_metrics, confusion, f1_from_rates, iou, learning_curve, localization_rate,
    pr_curve, predict_at, score_set, select_threshold_max_f1, Annotation,
};
use xray_bovw::features::{flatten, phow_extract};
use xray_bovw::imagecore::{gaussian_blur, metal_mask, GrayImage};
use xray_bovw::proposals::{
    felzenszwalb_segment, selective_search_detailed, similarity, Grouping, Segmentation,
    SelectiveSearchParams, Strategy,
};
use xray_bovw::svm::{gradient, objective, solve, svm_train, LabeledSet, TrainOptions};
use xray_bovw::synth::{generate_corpus, generate_scene, SynthImage, SynthParams};
use xray_bovw::vocab::{build_vocabulary, kmeans};
use xray_bovw::{BoundingBox, Label, RunConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- metrics

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (tp, fp, tn, fn_) = (
            rng.gen_range(0..40usize),
            rng.gen_range(0..40usize),
            rng.gen_range(0..40usize),
            rng.gen_range(0..40usize),
        );
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (n, p, t) in [
            (tp, true, true),
            (fp, true, false),
            (tn, false, false),
            (fn_, false, true),
        ] {
            pred.extend(std::iter::repeat_n(Label::from_bool(p), n));
            truth.extend(std::iter::repeat_n(Label::from_bool(t), n));
        }
        if pred.is_empty() {
            continue;
        }
        let c = confusion(&pred, &truth).map_err(|e| e.to_string())?;
        ensure((c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_), || {
            format!("counts {c:?}")
        })?;
        let vpr = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let ppv = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        ensure(c.vpr() == vpr && c.ppv() == ppv, || format!("rates {c:?}"))?;
        if let (Some(r), Some(p)) = (vpr, ppv) {
            ensure((c.f1() - f1_from_rates(r, p)).abs() < 1e-12, || {
                format!("f1 identity {c:?}")
            })?;
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        ensure((c.f1() - f1).abs() < 1e-12, || format!("f1 {c:?}"))?;
        let err = (fp + fn_) as f64 / (tp + fp + tn + fn_) as f64;
        ensure((c.error() - err).abs() < 1e-12, || format!("error {c:?}"))?;
    }
    let f = f1_from_rates(0.94, 0.74);
    ensure((f - 0.828).abs() <= 0.005, || {
        format!("F1(0.94, 0.74) = {f}")
    })?;
    Ok(format!("F1(0.94, 0.74) = {f:.4}"))
}

fn iou_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let (a, b) = (rng.gen_range(0..64u32), rng.gen_range(0..64u32));
        let (c, d) = (rng.gen_range(0..64u32), rng.gen_range(0..64u32));
        BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (rand_box(&mut rng), rand_box(&mut rng));
        let (mut inter, mut uni) = (0u32, 0u32);
        for y in 0..64 {
            for x in 0..64 {
                let ia = a.contains(x as f64, y as f64);
                let ib = b.contains(x as f64, y as f64);
                inter += u32::from(ia && ib);
                uni += u32::from(ia || ib);
            }
        }
        let want = f64::from(inter) / f64::from(uni);
        worst = worst.max((iou(&a, &b) - want).abs());
        ensure((iou(&a, &b) - iou(&b, &a)).abs() == 0.0, || {
            "asymmetric".into()
        })?;
    }
    ensure(worst < 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:e}"))
}

// ---------------------------------------------------------------- svm

/// Minimizer of λ/2‖w‖² + 1/n ‖y − Xw − b‖² from the normal equations.
fn ridge_closed_form(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (n, d) = (x.len(), x[0].len());
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
    let mut a = z.transpose() * &z * (2.0 / n as f64);
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let rhs = z.transpose() * DVector::from_column_slice(y) * (2.0 / n as f64);
    let theta = a.lu().solve(&rhs).expect("regular system");
    (theta.as_slice()[..d].to_vec(), theta[d])
}

fn svm_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_gap, mut worst_grad) = (0.0f64, 0.0f64);
    for inst in 0..50 {
        let n = rng.gen_range(20..=200);
        let d = rng.gen_range(2..=50);
        let lambda = [0.1, 1.0, 10.0][inst % 3];
        let truth: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let x: Vec<f32> = (0..d).map(|_| rng.gen_range(0.0f32..1.0)).collect();
            let s: f64 = x
                .iter()
                .zip(&truth)
                .map(|(a, b)| f64::from(*a) * b)
                .sum::<f64>()
                + 0.5 * gauss(&mut rng);
            // alternate forced labels keep both classes present
            let pos = if i < 2 { i == 0 } else { s > 0.0 };
            xs.push(FeatureMapVector(x));
            ys.push(Label::from_bool(pos));
        }
        let set = LabeledSet::new(xs, ys.clone()).map_err(|e| e.to_string())?;
        let xf: Vec<Vec<f64>> = set
            .features()
            .iter()
            .map(|v| v.values().iter().map(|a| f64::from(*a)).collect())
            .collect();
        let yf: Vec<f64> = ys.iter().map(|l| l.sign()).collect();

        let (w_star, b_star) = ridge_closed_form(&xf, &yf, lambda);
        let e_star = objective(&set, lambda, &w_star, b_star);
        let model = svm_train(&set, lambda, TrainOptions::default()).map_err(|e| e.to_string())?;
        let w: Vec<f64> = model.w.iter().map(|v| f64::from(*v)).collect();
        // the stored model keeps f32 weights; compare the solver output too
        let sol = solve(&set, lambda, 500, 1e-6, None).map_err(|e| e.to_string())?;
        for e in [objective(&set, lambda, &w, model.b), sol.objective] {
            let gap = (e - e_star) / e_star.abs();
            worst_gap = worst_gap.max(gap);
            ensure(gap <= 1e-4, || {
                format!("instance {inst}: relative gap {gap:e}")
            })?;
        }

        let wp: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let bp = gauss(&mut rng);
        let (gw, gb) = gradient(&set, lambda, &wp, bp);
        let h = 1e-5;
        let fd = |j: usize| {
            let (mut a, mut b) = (wp.clone(), wp.clone());
            if j < d {
                a[j] += h;
                b[j] -= h;
                (objective(&set, lambda, &a, bp) - objective(&set, lambda, &b, bp)) / (2.0 * h)
            } else {
                (objective(&set, lambda, &wp, bp + h) - objective(&set, lambda, &wp, bp - h))
                    / (2.0 * h)
            }
        };
        for (j, g) in gw.iter().copied().chain([gb]).enumerate() {
            let err = (g - fd(j)).abs() / g.abs().max(1.0);
            worst_grad = worst_grad.max(err);
            ensure(err <= 1e-5, || {
                format!("instance {inst}: gradient {j} error {err:e}")
            })?;
        }
    }
    Ok(format!(
        "worst objective gap {worst_gap:.1e}, worst gradient error {worst_grad:.1e}"
    ))
}

// ---------------------------------------------------------------- encode

fn chi2_map() -> Check {
    let map = Chi2FeatureMap::new(KernelMapConfig::default()).map_err(|e| e.to_string())?;
    let block = map.config().block_len();
    let grid: Vec<f64> = (0..20).map(|i| 0.01 + 0.99 * i as f64 / 19.0).collect();
    let mut worst = 0.0f64;
    let (mut fx, mut fy) = (vec![0.0; block], vec![0.0; block]);
    for &x in &grid {
        for &y in &grid {
            map.map_scalar(x, &mut fx);
            map.map_scalar(y, &mut fy);
            let approx: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
            worst = worst.max((approx - 2.0 * x * y / (x + y)).abs());
        }
    }
    let out = map
        .map_values(&[0.1, 0.4, 0.0, 0.9, 0.3, 0.2, 0.7])
        .map_err(|e| e.to_string())?;
    ensure(out.len() == 5 * 7, || format!("dimension {}", out.len()))?;
    ensure(worst <= 1e-2, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.2e}, dimension 5x"))
}

// ---------------------------------------------------------------- vocab

fn kmeans_checks() -> Check {
    let dim = 8;
    for ds in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + ds);
        let clusters = rng.gen_range(3..8);
        let centers: Vec<Vec<f64>> = (0..clusters)
            .map(|_| (0..dim).map(|_| 5.0 * gauss(&mut rng)).collect())
            .collect();
        let n = rng.gen_range(200..600);
        let data: Vec<f32> = (0..n)
            .flat_map(|i| {
                let c = &centers[i % clusters];
                c.iter()
                    .map(|v| (v + gauss(&mut rng)) as f32)
                    .collect::<Vec<_>>()
            })
            .collect();
        let k = rng.gen_range(2..12);
        let run = kmeans(&data, dim, k, ds).map_err(|e| e.to_string())?;
        ensure(
            run.cost_history
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
            || format!("dataset {ds}: cost increased {:?}", run.cost_history),
        )?;
        let build = build_vocabulary(&data, dim, k, 4, ds * 10).map_err(|e| e.to_string())?;
        let min = build
            .restart_costs
            .iter()
            .map(|(_, c)| *c)
            .fold(f64::INFINITY, f64::min);
        ensure(build.best.cost == min, || {
            format!("dataset {ds}: best {} vs min {min}", build.best.cost)
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = 16;
    let distinct: Vec<f32> = (0..v * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let run = kmeans(&distinct, dim, v, 3).map_err(|e| e.to_string())?;
    ensure(run.cost == 0.0, || {
        format!("V distinct points cost {}", run.cost)
    })?;
    Ok("20 datasets monotone, restart minimum kept, V points cost 0".into())
}

// ---------------------------------------------------------------- proposals

/// Labels cover `0..n`, every label is used and every component is
/// 8-connected.
fn is_partition(seg: &Segmentation) -> bool {
    let (w, h) = (seg.width, seg.height);
    if seg.labels.len() != w * h || seg.labels.iter().any(|l| *l >= seg.num_components) {
        return false;
    }
    let mut seen = vec![false; seg.num_components];
    let mut visited = vec![false; w * h];
    for start in 0..w * h {
        if visited[start] {
            continue;
        }
        let l = seg.labels[start];
        if seen[l] {
            return false;
        }
        seen[l] = true;
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(p) = queue.pop_front() {
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !visited[q] && seg.labels[q] == l {
                        visited[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    seen.iter().all(|s| *s)
}

fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(4.0..20.0),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    GrayImage::from_fn(w, h, |x, y| {
        let mut v = 0.5;
        for (cx, cy, r, val) in &blobs {
            if (x as f64 - cx).hypot(y as f64 - cy) < *r {
                v = *val;
            }
        }
        v + rng.gen_range(-0.05..0.05)
    })
}

fn segmentation() -> Check {
    let p = SelectiveSearchParams::default();
    for s in 0..20 {
        let img = random_image(200 + s, 64, 64);
        let seg =
            felzenszwalb_segment(&img, p.k, p.sigma, p.min_size).map_err(|e| e.to_string())?;
        ensure(is_partition(&seg), || {
            format!("image {s} is not a partition")
        })?;
    }
    let constant = felzenszwalb_segment(&GrayImage::filled(64, 64, 0.37), p.k, p.sigma, p.min_size)
        .map_err(|e| e.to_string())?;
    ensure(constant.num_components == 1, || {
        format!("constant image: {}", constant.num_components)
    })?;
    let halves = GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0.2 } else { 0.8 });
    let seg = felzenszwalb_segment(&halves, 1.0, 0.0, 1).map_err(|e| e.to_string())?;
    ensure(seg.num_components == 2, || {
        format!("two halves: {}", seg.num_components)
    })?;
    ensure(
        seg.labels
            .iter()
            .enumerate()
            .all(|(i, l)| *l == seg.label(0, 0) || i % 64 >= 32),
        || "halves split in the wrong place".into(),
    )?;
    Ok("20 partitions, constant 1, halves 2".into())
}

/// Independent per-pixel statistics of a set of pixels.
struct PixelStats {
    count: usize,
    bbox: BoundingBox,
    intensity: Vec<f64>,
    texture: Vec<f64>,
}

/// Texture code per pixel: magnitude bin (10 over [0, 0.4]) of the positive
/// directional derivative along 8 orientations of the σ = 1 blurred image.
fn texture_codes(img: &GrayImage) -> Vec<[usize; 8]> {
    let s = gaussian_blur(img, 1.0).unwrap();
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = (s.get((x + 1).min(w - 1), y) - s.get(x.saturating_sub(1), y)) / 2.0;
            let gy = (s.get(x, (y + 1).min(h - 1)) - s.get(x, y.saturating_sub(1))) / 2.0;
            let mut c = [0; 8];
            for (o, slot) in c.iter_mut().enumerate() {
                let t = o as f64 * std::f64::consts::PI / 4.0;
                let v = (gx * t.cos() + gy * t.sin()).max(0.0);
                *slot = ((v / 0.4 * 10.0) as usize).min(9);
            }
            out.push(c);
        }
    }
    out
}

fn pixel_stats(img: &GrayImage, codes: &[[usize; 8]], pixels: &[usize]) -> PixelStats {
    let w = img.width();
    let mut intensity = vec![0.0; 25];
    let mut texture = vec![0.0; 80];
    let mut bbox: Option<BoundingBox> = None;
    for &p in pixels {
        let v = img.data()[p];
        intensity[((v * 25.0) as usize).min(24)] += 1.0;
        for (o, m) in codes[p].iter().enumerate() {
            texture[o * 10 + m] += 1.0;
        }
        let pt = BoundingBox::point((p % w) as u32, (p / w) as u32);
        bbox = Some(bbox.map_or(pt, |b| b.union(&pt)));
    }
    let n = pixels.len() as f64;
    intensity.iter_mut().for_each(|v| *v /= n);
    texture.iter_mut().for_each(|v| *v /= 8.0 * n);
    PixelStats {
        count: pixels.len(),
        bbox: bbox.unwrap(),
        intensity,
        texture,
    }
}

fn hist_min(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Per-term similarity from pixel statistics.
fn oracle_terms(a: &PixelStats, b: &PixelStats, area: f64) -> [f64; 4] {
    let joint = (a.count + b.count) as f64;
    [
        hist_min(&a.intensity, &b.intensity),
        hist_min(&a.texture, &b.texture),
        1.0 - joint / area,
        1.0 - (a.bbox.union(&b.bbox).area() as f64 - joint) / area,
    ]
}

const TERMS: [Strategy; 4] = [
    Strategy {
        color: true,
        texture: false,
        size: false,
        fill: false,
    },
    Strategy {
        color: false,
        texture: true,
        size: false,
        fill: false,
    },
    Strategy {
        color: false,
        texture: false,
        size: true,
        fill: false,
    },
    Strategy {
        color: false,
        texture: false,
        size: false,
        fill: true,
    },
];

/// Replays the grouping and checks every step against pixel recounts.
fn check_grouping(img: &GrayImage, params: &SelectiveSearchParams) -> Result<usize, String> {
    let seg = felzenszwalb_segment(img, params.k, params.sigma, params.min_size)
        .map_err(|e| e.to_string())?;
    let codes = texture_codes(img);
    let area = img.len() as f64;
    let mut segment_pixels = vec![Vec::new(); seg.num_components];
    for (p, l) in seg.labels.iter().enumerate() {
        segment_pixels[*l].push(p);
    }
    let mut g = Grouping::new(img, &seg, Strategy::all()).map_err(|e| e.to_string())?;
    let mut stats: BTreeMap<usize, PixelStats> = (0..seg.num_components)
        .map(|i| (i, pixel_stats(img, &codes, &segment_pixels[i])))
        .collect();
    let tol = 1e-9;
    // initial regions and every similarity term
    for (id, s) in &stats {
        let r = g.region(*id).ok_or("missing region")?;
        ensure(r.pixel_count == s.count && r.bbox == s.bbox, || {
            format!("region {id} geometry")
        })?;
        ensure(
            r.intensity_hist
                .iter()
                .zip(&s.intensity)
                .all(|(a, b)| (a - b).abs() < tol),
            || format!("region {id} intensity"),
        )?;
        ensure(
            r.texture_hist
                .iter()
                .zip(&s.texture)
                .all(|(a, b)| (a - b).abs() < tol),
            || format!("region {id} texture"),
        )?;
    }
    for (a, b) in g.neighbor_pairs() {
        let want = oracle_terms(&stats[&a], &stats[&b], area);
        for (t, strategy) in TERMS.iter().enumerate() {
            let got = similarity(
                g.region(a).unwrap(),
                g.region(b).unwrap(),
                img.len(),
                *strategy,
            )
            .map_err(|e| e.to_string())?;
            ensure((got - want[t]).abs() < tol, || {
                format!("pair ({a},{b}) term {t}: {got} vs {}", want[t])
            })?;
        }
    }
    let mut merges = 0;
    loop {
        let pairs = g.neighbor_pairs();
        let best = pairs
            .iter()
            .map(|(a, b)| oracle_terms(&stats[a], &stats[b], area).iter().sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let Some(m) = g.merge_next().map_err(|e| e.to_string())? else {
            break;
        };
        merges += 1;
        let chosen: f64 = oracle_terms(&stats[&m.left], &stats[&m.right], area)
            .iter()
            .sum();
        ensure(chosen >= best - tol, || {
            format!("merge {merges} took {chosen} below best {best}")
        })?;
        let pixels: Vec<usize> = g
            .members(m.merged)
            .iter()
            .flat_map(|s| segment_pixels[*s].iter().copied())
            .collect();
        let s = pixel_stats(img, &codes, &pixels);
        let r = g.region(m.merged).ok_or("merged region missing")?;
        ensure(
            r.pixel_count == s.count && r.bbox == s.bbox && m.bbox == s.bbox,
            || format!("merge {merges} geometry"),
        )?;
        ensure(
            r.intensity_hist
                .iter()
                .zip(&s.intensity)
                .all(|(a, b)| (a - b).abs() < tol),
            || format!("merge {merges} intensity"),
        )?;
        ensure(
            r.texture_hist
                .iter()
                .zip(&s.texture)
                .all(|(a, b)| (a - b).abs() < tol),
            || format!("merge {merges} texture"),
        )?;
        stats.remove(&m.left);
        stats.remove(&m.right);
        stats.insert(m.merged, s);
    }
    ensure(merges + 1 == seg.num_components, || {
        format!("{merges} merges for {} segments", seg.num_components)
    })?;
    Ok(merges)
}

fn selective_search_checks() -> Check {
    let params = SelectiveSearchParams::default();
    let mut images: Vec<GrayImage> = (0..4).map(|s| random_image(300 + s, 96, 72)).collect();
    images.extend((0..4).map(|s| generate_scene("s", &SynthParams::default(), 400 + s).image));
    let mut total = 0;
    for (i, img) in images.iter().enumerate() {
        let trace = selective_search_detailed(img, &params).map_err(|e| e.to_string())?;
        let n = trace.segmentation.num_components;
        ensure(trace.merges.len() == n - 1, || {
            format!("image {i}: {} merges for {n} regions", trace.merges.len())
        })?;
        let full = BoundingBox::full(img.width(), img.height());
        ensure(
            trace.merges.last().map(|m| m.bbox) == Some(full) || n == 1,
            || format!("image {i}: final box"),
        )?;
        ensure(
            trace
                .boxes
                .iter()
                .all(|b| b.fits(img.width(), img.height())),
            || format!("image {i}: box out of bounds"),
        )?;
        ensure(
            trace.boxes.len() == trace.boxes.iter().collect::<BTreeSet<_>>().len(),
            || "duplicate boxes".into(),
        )?;
        total += check_grouping(img, &params)?;
    }
    Ok(format!(
        "{} images, {total} merges replayed against pixel recounts",
        images.len()
    ))
}

// ---------------------------------------------------------------- end to end

fn entries(
    set: &[SynthImage],
    vocab: &xray_bovw::Vocabulary,
    cfg: &RunConfig,
) -> Result<Vec<DatasetEntry>, String> {
    let mut out = Vec::new();
    for s in set {
        out.extend(image_entries(&s.id, &s.image, &s.guns, vocab, cfg).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn end_to_end() -> Check {
    let corpus = generate_corpus(40, &SynthParams::default(), 1);
    let cfg = RunConfig {
        vocab_size: 64,
        restarts: 2,
        lambda: 0.01,
        ..Default::default()
    };
    let (train, rest) = corpus.split_at(20);
    let (val, test) = rest.split_at(10);

    let mut data = Vec::new();
    for s in train {
        let m = metal_mask(&s.image, cfg.metal_threshold, None).map_err(|e| e.to_string())?;
        data.extend(flatten(
            &phow_extract(&s.image, Some(&m), &cfg.phow()).map_err(|e| e.to_string())?,
        ));
    }
    let vocab = build_vocabulary(&data, 128, cfg.vocab_size, cfg.restarts, cfg.seed)
        .map_err(|e| e.to_string())?
        .best
        .vocabulary;
    let map = Chi2FeatureMap::new(cfg.kernel()).map_err(|e| e.to_string())?;
    let labeled = |e: Vec<DatasetEntry>| ProposalDataset::new(&vocab, e);

    let tr = labeled(balance(entries(train, &vocab, &cfg)?, 0));
    let mut model = svm_train(
        &tr.to_labeled_set(&map).map_err(|e| e.to_string())?,
        cfg.lambda,
        cfg.train_options(),
    )
    .map_err(|e| e.to_string())?;
    let va = labeled(balance(entries(val, &vocab, &cfg)?, 1));
    let vs = score_set(&model, &va.to_labeled_set(&map).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let best = select_threshold_max_f1(&pr_curve(&vs, &va.labels()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    model.threshold = best.threshold;

    let test_all = entries(test, &vocab, &cfg)?;
    let f1_of = |e: Vec<DatasetEntry>| -> Result<f64, String> {
        let ds = labeled(e);
        let s = score_set(&model, &ds.to_labeled_set(&map).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        Ok(
            classification_metrics(&predict_at(&s, model.threshold), &ds.labels())
                .map_err(|e| e.to_string())?
                .f1,
        )
    };
    let f1 = f1_of(balance(test_all.clone(), 2))?;
    let f1_all = f1_of(test_all)?;

    let det = Detector::new(
        vocab.clone(),
        model.bind(cfg.kernel(), vocab.content_hash()),
        cfg.clone(),
    )
    .map_err(|e| e.to_string())?;
    let mut found = BTreeMap::new();
    for s in test {
        if let Some(d) = det
            .detect(&s.id, &s.image)
            .map_err(|e| e.to_string())?
            .detection
        {
            found.insert(s.id.clone(), d.bbox);
        }
    }
    let planted: Vec<Annotation> = xray_bovw::synth::annotations(test);
    let loc = localization_rate(&found, &planted, 0.4).map_err(|e| e.to_string())?;
    let summary = format!(
        "test F1 {f1:.3} (unbalanced {f1_all:.3}), localized {:.0}% of {} objects",
        100.0 * loc,
        planted.len()
    );
    ensure(f1 >= 0.90 && loc >= 0.60, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- overfitting

/// Small train set, few informative dimensions among many noisy ones.
fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> LabeledSet {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let pos = i % 2 == 0;
        let s = if pos { 1.0 } else { -1.0 };
        x.push(FeatureMapVector(
            (0..d)
                .map(|j| (if j < 3 { s } else { 0.0 } + gauss(rng)) as f32)
                .collect(),
        ));
        y.push(Label::from_bool(pos));
    }
    LabeledSet::new(x, y).unwrap()
}

fn overfitting_trend() -> Check {
    let lambdas = [1e-4, 10.0];
    let reps = 100;
    let mut gap = [0.0; 2];
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + r);
        let train = gaussian_set(&mut rng, 20, 20);
        let val = gaussian_set(&mut rng, 20, 20);
        let test = gaussian_set(&mut rng, 400, 20);
        let curve = learning_curve(
            &train,
            &val,
            &test,
            &lambdas,
            TrainOptions {
                max_epochs: 3000,
                tol: 1e-9,
                seed: 0,
            },
        )
        .map_err(|e| e.to_string())?;
        for (g, p) in gap.iter_mut().zip(&curve.points) {
            *g += (p.test_error - p.val_error).abs() / reps as f64;
        }
    }
    let summary = format!(
        "mean |test - val| error {:.3} at 1e-4, {:.3} at 10",
        gap[0], gap[1]
    );
    ensure(gap[0] > gap[1], || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- determinism

fn cli(bin: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(bin: &Path, dir: &Path, jobs: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    let img = |i: usize| d(&format!("corpus/scene_{i:03}.png"));
    let imgs = |r: std::ops::Range<usize>| r.map(img).collect::<Vec<_>>();
    let ann = d("corpus/annotations.json");
    let run = |mut args: Vec<String>| {
        args.extend(["--jobs".into(), jobs.into(), "--seed".into(), "3".into()]);
        cli(bin, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    run(s(&[
        "synth",
        "--out",
        &d("corpus"),
        "--count",
        "12",
        "--crops",
        "2",
    ]))?;
    let mut a = s(&[
        "build-vocab",
        "--out",
        &d("vocab.bin"),
        "--vocab-size",
        "16",
        "--restarts",
        "2",
        "--dump-descriptors",
        &d("desc.bin"),
        "--images",
    ]);
    a.extend(imgs(0..6));
    run(a)?;
    let mut a = s(&[
        "build-dataset",
        "--vocab",
        &d("vocab.bin"),
        "--out",
        &d("train.bin"),
        "--annotations",
        &ann,
        "--crops",
        &d("corpus/crops"),
        "--images",
    ]);
    a.extend(imgs(0..6));
    run(a)?;
    let mut a = s(&[
        "build-dataset",
        "--vocab",
        &d("vocab.bin"),
        "--out",
        &d("val.bin"),
        "--annotations",
        &ann,
        "--images",
    ]);
    a.extend(imgs(6..9));
    run(a)?;
    let mut a = s(&[
        "build-dataset",
        "--vocab",
        &d("vocab.bin"),
        "--out",
        &d("test.bin"),
        "--annotations",
        &ann,
        "--images",
    ]);
    a.extend(imgs(9..12));
    run(a)?;
    run(s(&[
        "train",
        "--dataset",
        &d("train.bin"),
        "--vocab",
        &d("vocab.bin"),
        "--out",
        &d("model.bin"),
        "--lambda",
        "0.01",
    ]))?;
    run(s(&[
        "tune",
        "--dataset",
        &d("val.bin"),
        "--model",
        &d("model.bin"),
        "--out",
        &d("tuned.bin"),
        "--curve",
        &d("pr.csv"),
    ]))?;
    let mut a = s(&[
        "detect",
        "--model",
        &d("tuned.bin"),
        "--vocab",
        &d("vocab.bin"),
        "--out",
        &d("det.jsonl"),
        "--overlay-dir",
        &d("overlays"),
        "--annotations",
        &ann,
        "--images",
    ]);
    a.extend(imgs(9..12));
    run(a)?;
    let mut a = s(&[
        "eval",
        "--mode",
        "proposals",
        "--annotations",
        &ann,
        "--k",
        "50,100",
        "--thresholds",
        "0.4,0.5",
        "--out",
        &d("proposals.csv"),
        "--dump-proposals",
        &d("props"),
        "--images",
    ]);
    a.extend(imgs(9..12));
    run(a)?;
    run(s(&[
        "eval",
        "--mode",
        "classifier",
        "--dataset",
        &d("test.bin"),
        "--model",
        &d("tuned.bin"),
        "--out",
        &d("classifier.csv"),
    ]))?;
    run(s(&[
        "eval",
        "--mode",
        "detection",
        "--annotations",
        &ann,
        "--detections",
        &d("det.jsonl"),
        "--out",
        &d("detection.csv"),
    ]))?;
    run(s(&[
        "learning-curve",
        "--train",
        &d("train.bin"),
        "--val",
        &d("val.bin"),
        "--test",
        &d("test.bin"),
        "--lambdas",
        "0.001,0.1,10",
        "--out",
        &d("lc.csv"),
    ]))?;

    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).map_err(|e| e.to_string())? {
            let path = e.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Check {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_xray-bovw"));
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(&bin, &tmp.path().join("a"), "1")?;
    let b = pipeline(&bin, &tmp.path().join("b"), "4")?;
    ensure(a.keys().eq(b.keys()), || "different file sets".into())?;
    for (k, v) in &a {
        ensure(b[k] == *v, || {
            format!("{} differs between runs", k.display())
        })?;
    }
    Ok(format!(
        "{} artifacts identical across reruns (1 and 4 threads)",
        a.len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "metric identities",
            metric_identities,
            Duration::from_secs(1),
        ),
        ("IoU oracle", iou_oracle, Duration::from_secs(1)),
        ("SVM optimality", svm_optimality, Duration::from_secs(10)),
        ("chi2 feature map", chi2_map, Duration::from_secs(1)),
        ("k-means", kmeans_checks, Duration::from_secs(5)),
        ("segmentation", segmentation, Duration::from_secs(5)),
        (
            "selective search",
            selective_search_checks,
            Duration::from_secs(10),
        ),
        ("end-to-end synthetic", end_to_end, Duration::from_secs(600)),
        (
            "overfitting trend",
            overfitting_trend,
            Duration::from_secs(120),
        ),
        ("determinism", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let t = Instant::now();
        let result = check();
        let took = t.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
