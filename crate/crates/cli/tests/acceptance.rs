//! One line per acceptance criterion: `PASS` or `FAIL`, the criterion and
//! the measured value against its threshold.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use camlab::cam::{
    capture, gradcam, gradcam_pp, hessian_diag_closed_form, hessian_diag_fd, score_from_activations, CamConfig,
    FeatureMapCapture, ScoreKind,
};
use camlab::data::{
    add_gaussian_noise, augment_chain, hflip, stratified_split, synth_dataset, AugmentConfig, ImageF, PAPER_RATIOS,
    SYNTH_CLASSES,
};
use camlab::gradcheck::run_suite;
use camlab::metrics::{confusion, report};
use camlab::nn::{encode_weights, preset, read_weights, LayerSpec, Mode, Model, ModelSpec};
use camlab::optim::{evaluate, train, TrainConfig};
use camlab::rng::Rng;
use camlab::Tensor;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn c1_readme_statement() -> Outcome {
    let text = fs::read_to_string(workspace_root().join("README.md")).map_err(|e| format!("README.md: {e}"))?;
    let needles = ["NOT reproducible", "99.17%", "ImageNet-pretrained", "6,056"];
    let missing: Vec<&str> = needles.iter().copied().filter(|n| !text.contains(n)).collect();
    check(missing.is_empty(), format!("README statement, missing phrases: {missing:?}"))
}

fn c2_gradient_suite() -> Outcome {
    let start = Instant::now();
    let outcomes = run_suite(0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = outcomes.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name.as_str()).collect();
    let excluded: usize = outcomes.iter().map(|o| o.excluded).sum();
    check(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, max rel err {worst:.2e} (<= 1e-6), {excluded} non-smooth probes excluded, {secs:.1}s (< 60s), failed {failed:?}",
            outcomes.len()
        ),
    )
}

const SIDE: usize = 6;
const MAP: usize = 4;
const Z: usize = MAP * MAP;

/// conv(2, 3×3) → flatten → dense(2) with map weights +1 / −1 for class 0.
fn hand_network() -> Model {
    let spec = ModelSpec {
        input_shape: (1, SIDE, SIDE),
        layers: vec![
            LayerSpec::conv(2, 3, 1, 0),
            LayerSpec::Flatten,
            LayerSpec::dense(2),
            LayerSpec::SoftmaxOutput,
        ],
        class_names: vec!["a".into(), "b".into()],
    };
    let mut m = Model::build(spec, 0).unwrap();
    let w: Vec<f64> = [1, 0, -1, 2, 0, -2, 1, 0, -1, 1, 2, 1, 0, 0, 0, -1, -2, -1]
        .iter()
        .map(|&v| f64::from(v) / 8.0)
        .collect();
    m.params_mut()[0] = Tensor::from_vec(&[2, 1, 3, 3], w).unwrap();
    m.params_mut()[1] = Tensor::from_vec(&[2], vec![0.125, -0.25]).unwrap();
    let dense = (0..2 * Z)
        .flat_map(|f| [if f < Z { 1.0 } else { -1.0 }, 0.25 * ((f % 5) as f64 - 2.0)])
        .collect();
    m.params_mut()[2] = Tensor::from_vec(&[2 * Z, 2], dense).unwrap();
    m.params_mut()[3] = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
    m
}

fn hand_input(seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_vec(&[1, 1, SIDE, SIDE], (0..SIDE * SIDE).map(|_| rng.below(9) as f64 / 8.0).collect()).unwrap()
}

/// α_k = (1/Z)·Σ grad, raw = ReLU(Σ α_k A^k), then half-pixel bilinear
/// upsampling and division by the peak, all by explicit loops.
fn scripted_gradcam(m: &Model, x: &Tensor, class: usize) -> (Vec<f64>, Vec<f64>) {
    let (cw, cb, dw, x) = (m.params()[0].data(), m.params()[1].data(), m.params()[2].data(), x.data());
    let mut a = [[[0.0; MAP]; MAP]; 2];
    for k in 0..2 {
        for i in 0..MAP {
            for j in 0..MAP {
                let mut s = cb[k];
                for di in 0..3 {
                    for dj in 0..3 {
                        s += cw[k * 9 + di * 3 + dj] * x[(i + di) * SIDE + j + dj];
                    }
                }
                a[k][i][j] = s;
            }
        }
    }
    let mut alpha = [0.0; 2];
    for (k, al) in alpha.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in 0..Z {
            s += dw[(k * Z + p) * 2 + class];
        }
        *al = s / Z as f64;
    }
    let mut raw = [[0.0; MAP]; MAP];
    for i in 0..MAP {
        for j in 0..MAP {
            raw[i][j] = (alpha[0] * a[0][i][j] + alpha[1] * a[1][i][j]).max(0.0);
        }
    }
    let peak = raw.iter().flatten().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return (raw.iter().flatten().copied().collect(), vec![0.0; SIDE * SIDE]);
    }
    let coord = |d: usize| {
        let s = ((d as f64 + 0.5) * MAP as f64 / SIDE as f64 - 0.5).clamp(0.0, (MAP - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(MAP - 1), s - i0 as f64)
    };
    let mut up = Vec::new();
    for y in 0..SIDE {
        let (y0, y1, ty) = coord(y);
        for xx in 0..SIDE {
            let (x0, x1, tx) = coord(xx);
            let r = |i: usize, j: usize| raw[i][j] / peak;
            let top = (1.0 - tx) * r(y0, x0) + tx * r(y0, x1);
            let bottom = (1.0 - tx) * r(y1, x0) + tx * r(y1, x1);
            up.push((1.0 - ty) * top + ty * bottom);
        }
    }
    let up_peak = up.iter().copied().fold(0.0, f64::max);
    (raw.iter().flatten().copied().collect(), up.iter().map(|v| v / up_peak).collect())
}

fn c3_gradcam_brute_force() -> Outcome {
    let mut m = hand_network();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let x = hand_input(seed);
        for class in 0..2 {
            let (raw, norm) = scripted_gradcam(&m, &x, class);
            let (_, h) = gradcam(&mut m, &x, class, &CamConfig::default()).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(h.raw.data(), &raw)).max(max_abs_diff(h.normalized.values(), &norm));
        }
    }
    check(worst <= 1e-12, format!("100 maps, max elementwise diff {worst:.2e} (<= 1e-12)"))
}

fn c4a_linear_head() -> Outcome {
    let mut m = hand_network();
    let cfg = CamConfig {
        fd_step: 2f64.powi(-10),
        ..CamConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let x = hand_input(500 + seed);
        for class in 0..2 {
            let (_, gc) = gradcam(&mut m, &x, class, &cfg).map_err(|e| e.to_string())?;
            let (_, pp) = gradcam_pp(&mut m, &x, class, &cfg).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(gc.normalized.values(), pp.normalized.values()));
        }
    }
    check(worst <= 1e-12, format!("100 maps, max |pp - gc| {worst:.2e} (<= 1e-12)"))
}

fn c4b_exp_toy() -> Outcome {
    let spec = ModelSpec {
        input_shape: (1, 1, 1),
        layers: vec![
            LayerSpec::conv(1, 1, 1, 0),
            LayerSpec::Flatten,
            LayerSpec::dense(2),
            LayerSpec::SoftmaxOutput,
        ],
        class_names: vec!["a".into(), "b".into()],
    };
    let mut m = Model::build(spec, 0).unwrap();
    m.params_mut()[0] = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
    m.params_mut()[1] = Tensor::zeros(&[1]);
    m.params_mut()[2] = Tensor::from_vec(&[1, 2], vec![2.0, -1.0]).unwrap();
    m.params_mut()[3] = Tensor::zeros(&[2]);
    let mut worst: f64 = 0.0;
    for a in [-1.5, -0.3, 0.0, 0.4, 1.2, 2.0] {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![a]).unwrap();
        let cap = capture(&mut m, &x, 0).map_err(|e| e.to_string())?;
        let fd = hessian_diag_fd(&m, &cap, 0, ScoreKind::ExpLogit, 1e-3).map_err(|e| e.to_string())?.data()[0];
        let analytic = 4.0 * (2.0 * a).exp();
        worst = worst.max((fd - analytic).abs() / analytic);
    }
    check(worst <= 1e-4, format!("6 points, max rel err {worst:.2e} (<= 1e-4) at h = 1e-3"))
}

/// Last-conv elements of vgg-nano whose ±h probes leave every later ReLU
/// and pooling decision unchanged.
fn smooth_elements(m: &mut Model, x: &Tensor, h: f64) -> (FeatureMapCapture, Vec<bool>) {
    let layer = m.spec().last_conv().unwrap();
    m.forward(x, Mode::Eval, true).unwrap();
    let pre = m.captured(layer + 4).unwrap().data().to_vec();
    let dense_w = m.params()[m.params().len() - 4].clone();
    let cap = capture(m, x, layer).unwrap();
    let (u, v) = (cap.activations.shape()[1], cap.activations.shape()[2]);
    let a = cap.activations.data();
    let ok = (0..a.len())
        .map(|e| {
            let (c, i, j) = (e / (u * v), e / v % u, e % v);
            if a[e] < -h {
                return true;
            }
            if a[e].abs() <= h {
                return false;
            }
            let (pi, pj) = (i / 2, j / 2);
            let others = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(dy, dx)| (2 * pi + dy, 2 * pj + dx))
                .filter(|&p| p != (i, j))
                .map(|(y, xx)| a[(c * u + y) * v + xx].max(0.0))
                .fold(0.0, f64::max);
            if a[e] + h < others {
                return true;
            }
            if a[e] - h <= others {
                return false;
            }
            let f = (c * (u / 2) + pi) * (v / 2) + pj;
            let row = &dense_w.data()[f * pre.len()..(f + 1) * pre.len()];
            pre.iter().zip(row).all(|(z, w)| z.abs() > h * w.abs())
        })
        .collect();
    (cap, ok)
}

fn c4c_fast_path() -> Outcome {
    let h = 1e-2;
    let mut worst: f64 = 0.0;
    let (mut kept, mut total) = (0, 0);
    for seed in 0..3 {
        let spec = preset("vgg-nano").unwrap().with_input_shape(1, 16, 16);
        let mut m = Model::build(spec, 10 + seed).unwrap();
        let mut rng = Rng::derived(10 + seed, &[9]);
        for p in m.params_mut().iter_mut().skip(1).step_by(2) {
            p.data_mut().iter_mut().for_each(|b| *b = rng.uniform_range(-0.05, 0.05));
        }
        let x = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|_| rng.uniform()).collect()).unwrap();
        let (cap, ok) = smooth_elements(&mut m, &x, h);
        kept += ok.iter().filter(|k| **k).count();
        total += ok.len();
        for class in 0..3 {
            let closed = hessian_diag_closed_form(&m, &cap, class, ScoreKind::ExpLogit).map_err(|e| e.to_string())?;
            let fd = hessian_diag_fd(&m, &cap, class, ScoreKind::ExpLogit, h).map_err(|e| e.to_string())?;
            let y = score_from_activations(&m, cap.layer_index, &cap.activations, class, ScoreKind::ExpLogit)
                .map_err(|e| e.to_string())?;
            for ((c, f), keep) in closed.data().iter().zip(fd.data()).zip(&ok) {
                if *keep {
                    worst = worst.max((c - f).abs() / c.abs().max(f.abs()).max(1e-8 * y));
                }
            }
        }
    }
    check(
        worst <= 1e-3 && kept * 2 > total,
        format!("{kept}/{total} smooth elements, max rel err {worst:.2e} (<= 1e-3)"),
    )
}

fn c5_heatmap_invariants() -> Outcome {
    let size = 32;
    let spec = preset("vgg-nano").unwrap().with_input_shape(1, size, size);
    let mut m = Model::build(spec, 5).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(55);
    let (mut violations, mut zero_maps) = (0, 0);
    let start = Instant::now();
    for _ in 0..100 {
        let x = Tensor::from_vec(&[1, 1, size, size], (0..size * size).map(|_| rng.uniform()).collect()).unwrap();
        let class = rng.below(3) as usize;
        for method in [gradcam, gradcam_pp] {
            let (_, h) = method(&mut m, &x, class, &CamConfig::default()).map_err(|e| e.to_string())?;
            let raw_nonzero = h.raw.data().iter().any(|&v| v > 0.0);
            let n = h.normalized.values();
            let max = n.iter().copied().fold(0.0, f64::max);
            let ok = h.raw.data().iter().all(|&v| v >= 0.0)
                && n.iter().all(|v| (0.0..=1.0).contains(v))
                && (max == 1.0) == raw_nonzero
                && (raw_nonzero || n.iter().all(|&v| v == 0.0));
            violations += usize::from(!ok);
            zero_maps += usize::from(!raw_nonzero);
        }
    }
    check(
        violations == 0,
        format!(
            "200 maps ({zero_maps} identically zero), {violations} violations, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c6_augmentation() -> Outcome {
    let cfg = AugmentConfig {
        noise_std: 0.0,
        rotation_set: vec![0.0],
        flip_probability: 0.0,
        ..AugmentConfig::default()
    };
    let img = ImageF::new(1, 2, 1, vec![0.5, 1.0]).unwrap();
    let out = augment_chain(&img, &cfg, &mut Rng::new(0));
    let arith = (out.values()[0] - 0.635).abs().max((out.values()[1] - 1.0).abs());
    let mut rng = Rng::new(6);
    let mut noise_ok = true;
    let mut flip_ok = true;
    for i in 0..200 {
        let (h, w) = (1 + rng.below(16) as usize, 1 + rng.below(16) as usize);
        let img = ImageF::new(h, w, 1, (0..h * w).map(|_| rng.uniform()).collect()).unwrap();
        let std = [0.0023, 0.1, 1.0, 5.0][i % 4];
        noise_ok &= add_gaussian_noise(&img, std, &mut rng).values().iter().all(|v| (0.0..=1.0).contains(v));
        flip_ok &= hflip(&hflip(&img)) == img;
    }
    check(
        arith <= 1e-12 && noise_ok && flip_ok,
        format!("0.5 -> 0.635 and 1.0 -> 1.0 err {arith:.1e} (<= 1e-12), noise in [0,1]: {noise_ok}, hflip involution: {flip_ok}"),
    )
}

fn c7_split() -> Outcome {
    let labels: Vec<usize> = [(0usize, 2004usize), (1, 2004), (2, 2048)]
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
        .collect();
    let m = stratified_split(&labels, 3, PAPER_RATIOS, 0).map_err(|e| e.to_string())?;
    let counts = (m.test.len(), m.val.len(), m.train.len());
    let mut partition_ok = true;
    for seed in 0..50 {
        let m = stratified_split(&labels, 3, PAPER_RATIOS, seed).map_err(|e| e.to_string())?;
        let mut seen = vec![0u8; labels.len()];
        for &i in m.train.iter().chain(&m.val).chain(&m.test) {
            seen[i] += 1;
        }
        partition_ok &= seen.iter().all(|&s| s == 1);
    }
    check(
        counts == (604, 604, 4848) && partition_ok,
        format!("test/val/train = {counts:?} (604, 604, 4848), disjoint cover for 50 seeds: {partition_ok}"),
    )
}

fn c8_end_to_end() -> Outcome {
    let start = Instant::now();
    let ds = synth_dataset(200, 128, 7);
    let split = stratified_split(&ds.labels(), 3, PAPER_RATIOS, 7).map_err(|e| e.to_string())?;
    let (tr, va, te) = (ds.subset(&split.train), ds.subset(&split.val), ds.subset(&split.test));
    let spec = preset("vgg-nano").unwrap().with_classes(&SYNTH_CLASSES);
    let mut model = Model::build(spec, 42).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: 42,
        augment: None,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &tr, &va, &cfg).map_err(|e| e.to_string())?;
    let train_acc = evaluate(&model, &tr, 32).map_err(|e| e.to_string())?.accuracy;
    let test_acc = evaluate(&model, &te, 32).map_err(|e| e.to_string())?.accuracy;
    let secs = start.elapsed().as_secs_f64();
    let last = report.last().expect("30 epochs");
    check(
        train_acc >= 0.99 && test_acc >= 0.95 && secs <= 600.0,
        format!(
            "{} epochs, train acc {train_acc:.4} (>= 0.99; last-epoch running {:.4}), test acc {test_acc:.4} (>= 0.95), {secs:.0}s (<= 600s)",
            report.epochs.len(),
            last.train_acc
        ),
    )
}

fn camlab(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_camlab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("camlab {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// report.csv with the wall-clock column removed.
fn report_without_seconds(path: &Path) -> Result<String, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let spec = preset("vgg-nano").unwrap().with_input_shape(1, 32, 32);
    fs::write(p("nano32.spec"), spec.canonical()).map_err(|e| e.to_string())?;
    camlab(&["synth", "--out", &p("d"), "--n", "20", "--size", "32", "--seed", "7"])?;
    camlab(&["split", "--data", &p("d"), "--seed", "7"])?;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let (t, e) = (p(&format!("train_{run}")), p(&format!("eval_{run}")));
        camlab(&["train", "--data", &p("d"), "--spec", &p("nano32.spec"), "--seed", "42", "--epochs", "3", "--out", &t])?;
        camlab(&["eval", "--weights", &format!("{t}/weights.camf"), "--data", &p("d"), "--out", &e])?;
        let read = |f: String| fs::read(&f).map_err(|err| format!("{f}: {err}"));
        files.push((
            read(format!("{t}/weights.camf"))?,
            report_without_seconds(Path::new(&format!("{t}/report.csv")))?,
            read(format!("{e}/metrics.csv"))?,
        ));
    }
    let same_weights = files[0].0 == files[1].0;
    let same_report = files[0].1 == files[1].1;
    let same_metrics = files[0].2 == files[1].2;
    let loaded = read_weights(p("train_a/weights.camf")).map_err(|e| e.to_string())?;
    let round_trip = encode_weights(&loaded) == files[0].0;
    check(
        same_weights && same_report && same_metrics && round_trip,
        format!(
            "weights identical: {same_weights}, report.csv identical (seconds column excluded): {same_report}, metrics.csv identical: {same_metrics}, save/load bit-exact: {round_trip}"
        ),
    )
}

fn c10_metrics_oracle() -> Outcome {
    let mut rng = Rng::new(10);
    let mut mismatches = 0;
    for case in 0..1000 {
        let k = [2usize, 3, 5][case % 3];
        let n = rng.below(40) as usize;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.bernoulli(0.6) { l } else { rng.below(k as u64) as usize })
            .collect();
        let r = report(&confusion(&preds, &labels, k).map_err(|e| e.to_string())?);
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let mut ok = r.accuracy == div(correct, n);
        for c in 0..k {
            let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p == c && l == c).count();
            let predicted = preds.iter().filter(|&&p| p == c).count();
            let actual = labels.iter().filter(|&&l| l == c).count();
            let (pr, rc) = (div(tp, predicted), div(tp, actual));
            let f1 = if pr + rc == 0.0 { 0.0 } else { 2.0 * pr * rc / (pr + rc) };
            let m = &r.per_class[c];
            ok &= m.precision == pr && m.recall == rc && m.f1 == f1;
        }
        mismatches += usize::from(!ok);
    }
    check(mismatches == 0, format!("1000 cases, K in {{2,3,5}}, {mismatches} mismatches (exact equality)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 12] = [
        ("1", "paper-scale results declared not reproducible", c1_readme_statement),
        ("2", "gradient oracle suite", c2_gradient_suite),
        ("3", "Grad-CAM brute-force equivalence", c3_gradcam_brute_force),
        ("4a", "Grad-CAM++ equals Grad-CAM under a linear logit head", c4a_linear_head),
        ("4b", "exp-score FD Hessian vs analytic", c4b_exp_toy),
        ("4c", "closed-form Hessian vs FD on vgg-nano", c4c_fast_path),
        ("5", "heatmap invariants on 100 random inputs", c5_heatmap_invariants),
        ("6", "augmentation arithmetic", c6_augmentation),
        ("7", "stratified split rule", c7_split),
        ("8", "end-to-end learning on synth", c8_end_to_end),
        ("9", "determinism of train and eval", c9_determinism),
        ("10", "metrics oracle", c10_metrics_oracle),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  [{id:>3}] {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  [{id:>3}] {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
