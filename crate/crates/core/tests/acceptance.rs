//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! the measured value next to its bound, then asserts.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{batch_sets, confusion_iou, instance_sets, layer_sets, normalize_sets, Constants};
use vifuse::cli::dataset_correlation;
use vifuse::diffcore::{Shape4, Tensor4};
use vifuse::experiments::{
    fit_vi_experiment, pixel_dataset, synth_dataset, toy_segmentation_experiment, FitConfig,
    SegConfig, SynthSpec, VariantRegistry,
};
use vifuse::gradsuite::{GradSuite, TOLERANCE, TRIALS};
use vifuse::gvi::{express_vi, gvi_forward};
use vifuse::indices::{compute_vi, ViKind, ViParams};
use vifuse::metrics::{miou_overlapped, LabelGrid, PredGrid};
use vifuse::norm::{self, bn_to_agn_upgrade, NormMode, NormState};
use vifuse::raster::NrgbImage;
use vifuse::Error;

/// Writes straight to stdout so the line shows up even when test output is captured.
fn report(name: &str, pass: bool, detail: String) {
    use std::io::Write;
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn random_image(n: usize, seed: u64, lo: f64) -> NrgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes: [Vec<f64>; 4] = Default::default();
    for p in planes.iter_mut() {
        *p = (0..n).map(|_| rng.random_range(lo..1.0)).collect();
    }
    NrgbImage::from_planes(n, 1, planes).unwrap()
}

/// Pixels whose every index denominator stays at least 0.05 away from zero,
/// so no clipping happens and the ratios stay well conditioned.
fn clip_free_image(n: usize, seed: u64, gamma: f64) -> NrgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes: [Vec<f64>; 4] = Default::default();
    while planes[0].len() < n {
        let [nir, r, g, b]: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
        let dens = [
            nir + r,
            nir + (1.0 + gamma) * r - gamma * b,
            1.0 + nir + 6.0 * r - 7.5 * b,
            r + 2.0 * g + b,
            0.2 * nir + r,
            nir,
            g + r,
        ];
        if dens.iter().all(|d| d.abs() >= 0.05) {
            for (p, v) in planes.iter_mut().zip([nir, r, g, b]) {
                p.push(v);
            }
        }
    }
    NrgbImage::from_planes(n, 1, planes).unwrap()
}

#[test]
fn gradient_suite() {
    let t = Instant::now();
    let reports = GradSuite::standard().run(0, TRIALS);
    let secs = t.elapsed().as_secs_f64();
    let (worst_name, worst) = reports
        .iter()
        .map(|r| (r.name.as_str(), r.worst))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let pass = failed.is_empty() && secs < 60.0;
    report(
        "gradient suite",
        pass,
        format!(
            "{} ops x {TRIALS} points, worst {worst:.2e} ({worst_name}) < {TOLERANCE:e}, {secs:.1} s < 60 s, failing {failed:?}",
            reports.len()
        ),
    );
    assert!(pass);
}

#[test]
fn vi_oracle() {
    let img = random_image(1000, 11, 0.0);
    let c = Constants {
        gamma: 0.9,
        savi_l: 0.5,
        ndvi_min: -0.2,
        ndvi_max: 0.9,
        eps: 1e-6,
    };
    let params = ViParams {
        gamma: c.gamma,
        savi_l: c.savi_l,
        ndvi_range: Some((c.ndvi_min, c.ndvi_max)),
        clip_eps: c.eps,
    };
    let px = common::pixels(&img);
    let mut worst = 0.0f64;
    let mut worst_kind = ViKind::Ndvi;
    for kind in ViKind::ALL {
        let raster = compute_vi(kind, &img, &params).unwrap();
        for (v, p) in raster.values.iter().zip(&px) {
            let e = (v - common::scalar_vi(kind.name(), p, &c)).abs();
            if e > worst {
                worst = e;
                worst_kind = kind;
            }
        }
    }
    let pass = worst <= 1e-12;
    report(
        "vi oracle",
        pass,
        format!("13 kinds x 1000 pixels, max |diff| {worst:.2e} ({worst_kind}) <= 1e-12"),
    );
    assert!(pass);
}

#[test]
fn gvi_expressivity() {
    let params = ViParams::default().with_ndvi_range(0.0, 1.0);
    let img = clip_free_image(500, 5, 0.9);
    let x = img.to_tensor();
    let mut worst = 0.0f64;
    let mut expressed = Vec::new();
    let mut rejected = Vec::new();
    for kind in ViKind::ALL {
        match express_vi(kind, &params) {
            Ok(layer) => {
                let y = gvi_forward(&layer, &x).unwrap();
                let r = compute_vi(kind, &img, &params).unwrap();
                for (a, b) in y.data().iter().zip(&r.values) {
                    worst = worst.max((a - b).abs());
                }
                expressed.push(kind);
            }
            Err(Error::NotExpressible(_)) => rejected.push(kind),
            Err(e) => panic!("{kind}: {e}"),
        }
    }
    let expected_rejects = [ViKind::Msavi2, ViKind::Mcari, ViKind::Vci];
    let pass = worst <= 1e-10 && rejected == expected_rejects;
    report(
        "gvi expressivity",
        pass,
        format!(
            "{} expressed, max |diff| {worst:.2e} <= 1e-10; rejected {rejected:?} (expected {expected_rejects:?})",
            expressed.len()
        ),
    );
    assert!(pass);
}

fn unit_tensor(shape: Shape4, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    Tensor4::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.sample(normal)).collect(),
    )
    .unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn normalization_identities() {
    let s = Shape4::new(4, 8, 5, 5);
    let x = unit_tensor(s, 3);
    let plane = s.h * s.w;
    let eps = norm::DEFAULT_EPS;

    let mut gn_c = NormState::group(8, 8).unwrap();
    let gn_in = norm::group_norm(&x, &mut gn_c).unwrap();
    let in_oracle = normalize_sets(x.data(), &instance_sets(s.n, s.c, plane), eps);
    let in_lib = norm::forward(&x, &mut NormState::instance(8).unwrap())
        .unwrap()
        .0;
    let d_in = max_diff(gn_in.data(), &in_oracle).max(max_diff(gn_in.data(), in_lib.data()));

    let mut gn_1 = NormState::group(8, 1).unwrap();
    let gn_ln = norm::group_norm(&x, &mut gn_1).unwrap();
    let ln_oracle = normalize_sets(x.data(), &layer_sets(s.n, s.c, plane), eps);
    let ln_lib = norm::forward(&x, &mut NormState::layer(8).unwrap())
        .unwrap()
        .0;
    let d_ln = max_diff(gn_ln.data(), &ln_oracle).max(max_diff(gn_ln.data(), ln_lib.data()));

    let bn_oracle = normalize_sets(x.data(), &batch_sets(s.n, s.c, plane), eps);
    let mut agn = NormState::additive(8, 4, -10.0).unwrap();
    let agn_out = norm::agn(&x, &mut agn).unwrap();
    let d_agn = max_diff(agn_out.data(), &bn_oracle);

    let mut bn = NormState::batch(8).unwrap();
    for seed in 0..20 {
        let batch = unit_tensor(s, 100 + seed);
        norm::batch_norm(&batch, &mut bn).unwrap();
    }
    bn.training = false;
    let mut up = bn_to_agn_upgrade(&bn, 4, -10.0).unwrap();
    up.training = false;
    let probe = unit_tensor(s, 999);
    let before = norm::batch_norm(&probe, &mut bn).unwrap();
    let after = norm::agn(&probe, &mut up).unwrap();
    let d_up = max_diff(before.data(), after.data());
    assert_eq!(up.mode, NormMode::Additive);

    let pass = d_in <= 1e-12 && d_ln <= 1e-12 && d_agn <= 5e-4 && d_up <= 5e-4;
    report(
        "normalization identities",
        pass,
        format!(
            "GN(G=C) vs IN {d_in:.2e} <= 1e-12; GN(G=1) vs LN {d_ln:.2e} <= 1e-12; \
             AGN(rho=-10) vs BN {d_agn:.2e} <= 5e-4; upgrade eval drift {d_up:.2e} <= 5e-4"
        ),
    );
    assert!(pass);
}

#[test]
fn metric_oracle() {
    let target = LabelGrid::new(3, 1, 2, vec![0b01, 0b11, 0b10], vec![true; 3]).unwrap();
    let pred = PredGrid::new(3, 1, vec![0, 1, 0]).unwrap();
    let r = miou_overlapped(&[pred], &[target]).unwrap();
    let example_ok = r.iou == [Some(0.5), Some(0.5)] && r.miou == 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (w, h, k) = (
            rng.random_range(2..12),
            rng.random_range(2..12),
            rng.random_range(2..6),
        );
        let t: Vec<usize> = (0..w * h).map(|_| rng.random_range(0..k)).collect();
        let p: Vec<usize> = (0..w * h).map(|_| rng.random_range(0..k)).collect();
        let lib = miou_overlapped(
            &[PredGrid::new(w, h, p.clone()).unwrap()],
            &[LabelGrid::from_classes(w, h, k, &t).unwrap()],
        )
        .unwrap();
        let oracle = confusion_iou(&p, &t, k);
        for (a, b) in lib.iou.iter().zip(&oracle) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => worst = f64::INFINITY,
            }
        }
        let present: Vec<f64> = oracle.iter().flatten().copied().collect();
        let m = present.iter().sum::<f64>() / present.len() as f64;
        worst = worst.max((lib.miou - m).abs());
    }
    let pass = example_ok && worst <= 1e-12;
    report(
        "metric oracle",
        pass,
        format!(
            "3-pixel example IoU {:?} mIoU {} (expect 0.5/0.5/0.5); 50 random grids max |diff| {worst:.2e}",
            r.iou, r.miou
        ),
    );
    assert!(pass);
}

#[test]
fn agn_fits_indices_better() {
    let t = Instant::now();
    let data = synth_dataset(&SynthSpec {
        images: 40,
        ..SynthSpec::default()
    })
    .unwrap();
    let kinds: Vec<ViKind> = ViKind::network_inputs().collect();
    let results: Vec<(ViKind, f64, f64)> = kinds
        .par_iter()
        .map(|&kind| {
            let pixels = pixel_dataset(&data.images, kind, &ViParams::default(), 5000, 1).unwrap();
            let mut sums = [0.0; 2];
            for seed in 0..3 {
                for (j, norm) in [NormMode::Batch, NormMode::Additive]
                    .into_iter()
                    .enumerate()
                {
                    let config = FitConfig {
                        seed,
                        norm,
                        target: kind,
                        ..FitConfig::default()
                    };
                    sums[j] += fit_vi_experiment(&config, &pixels)
                        .unwrap()
                        .relative_error_pct;
                }
            }
            (kind, sums[0] / 3.0, sums[1] / 3.0)
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    for (k, bn, agn) in &results {
        println!("    {k:7} bn {bn:7.3}%  agn {agn:7.3}%");
    }
    let wins = results.iter().filter(|(_, bn, agn)| agn <= bn).count();
    let pass = wins >= 9 && secs < 300.0;
    report(
        "agn vs bn index fitting",
        pass,
        format!("AGN <= BN on {wins}/12 indices (need >= 9), 3 paired seeds, {secs:.1} s < 300 s"),
    );
    assert!(pass);
}

#[test]
fn segmentation_variant_ordering() {
    let t = Instant::now();
    let spec = SynthSpec::default();
    assert!(spec.images >= 200 && spec.size == 64);
    let data = synth_dataset(&spec).unwrap();
    let registry = VariantRegistry::standard();
    let config = SegConfig::default();
    let jobs: Vec<(&str, u64)> = ["baseline", "gvi", "agn"]
        .into_iter()
        .flat_map(|v| (0..3).map(move |s| (v, s)))
        .collect();
    let mious: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            toy_segmentation_experiment(registry.get(v).unwrap(), &data, &config, seed)
                .unwrap()
                .miou
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    let mean = |name: &str| {
        let v: Vec<f64> = jobs
            .iter()
            .zip(&mious)
            .filter(|((n, _), _)| *n == name)
            .map(|(_, m)| *m)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (base, gvi, agn) = (mean("baseline"), mean("gvi"), mean("agn"));
    for ((v, s), m) in jobs.iter().zip(&mious) {
        println!("    {v:8} seed {s}: mIoU {m:.4}");
    }
    let pass = gvi > base && agn >= gvi && secs < 1800.0;
    report(
        "segmentation variant ordering",
        pass,
        format!(
            "mean mIoU baseline {base:.4} < gvi {gvi:.4} <= agn {agn:.4}; {} images {}x{}, 3 seeds, {secs:.0} s < 1800 s",
            spec.images, spec.size, spec.size
        ),
    );
    assert!(pass);
}

#[test]
fn correlation_sanity() {
    let data = synth_dataset(&SynthSpec {
        images: 40,
        ..SynthSpec::default()
    })
    .unwrap();
    let m = dataset_correlation(&data.images, &ViParams::default()).unwrap();
    let k = m.size();
    let mut asym = 0.0f64;
    let mut diag = 0.0f64;
    for i in 0..k {
        diag = diag.max((m.get(i, i).unwrap() - 1.0).abs());
        for j in 0..k {
            asym = asym.max((m.get(i, j).unwrap() - m.get(j, i).unwrap()).abs());
        }
    }
    let r = m.between(ViKind::Ndvi, ViKind::Savi).unwrap();

    let c = Constants {
        gamma: 0.9,
        savi_l: 0.5,
        ndvi_min: 0.0,
        ndvi_max: 1.0,
        eps: 1e-6,
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for img in &data.images {
        for (i, p) in common::pixels(img).iter().enumerate() {
            if img.valid()[i] {
                a.push(common::scalar_vi("ndvi", p, &c));
                b.push(common::scalar_vi("savi", p, &c));
            }
        }
    }
    let oracle = common::pearson(&a, &b);
    let pass = k == 12 && asym == 0.0 && diag == 0.0 && r > 0.9 && (r - oracle).abs() < 1e-9;
    report(
        "correlation sanity",
        pass,
        format!(
            "{k}x{k}, max asymmetry {asym:.1e}, max |diag - 1| {diag:.1e}, corr(NDVI, SAVI) {r:.4} > 0.9 (oracle {oracle:.4})"
        ),
    );
    assert!(pass);
}

fn vifuse(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vifuse"))
        .args(args)
        .env("VIFUSE_THREADS", "2")
        .output()
        .expect("run vifuse")
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn cli_determinism() {
    let work = tempfile::tempdir().unwrap();
    let images = work.path().join("images");
    std::fs::create_dir(&images).unwrap();
    let data = synth_dataset(&SynthSpec {
        images: 3,
        size: 24,
        ..SynthSpec::default()
    })
    .unwrap();
    for (i, img) in data.images.iter().enumerate() {
        common::save_pair(img, &images, &format!("tile{i}"));
    }
    let rgb = images.join("tile0_rgb.png");
    let nir = images.join("tile0_nir.png");
    let mask = images.join("tile0_mask.png");
    let (rgb, nir, mask) = (
        rgb.to_str().unwrap(),
        nir.to_str().unwrap(),
        mask.to_str().unwrap(),
    );
    let img_dir = images.to_str().unwrap();

    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "vi compute csv",
            vec![
                "vi",
                "compute",
                "--rgb",
                rgb,
                "--nir",
                nir,
                "--mask",
                mask,
                "--kind",
                "all",
                "--ndvi-min",
                "-0.5",
                "--ndvi-max",
                "0.9",
                "--out",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "vi compute png16",
            vec![
                "vi",
                "compute",
                "--rgb",
                rgb,
                "--nir",
                nir,
                "--kind",
                "all",
                "--dataset-stats",
                "--format",
                "png16",
                "--out",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "vi corr",
            vec!["vi", "corr", img_dir, "--out"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "gradcheck",
            vec!["gradcheck", "--seed", "4", "--trials", "5", "--out"]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        (
            "fit-experiment",
            vec![
                "fit-experiment",
                "--vi",
                "ndvi,evi",
                "--images",
                "4",
                "--size",
                "16",
                "--pixels",
                "400",
                "--epochs",
                "2",
                "--seeds",
                "2",
                "--out",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "toy-seg",
            vec![
                "toy-seg",
                "--seeds",
                "1",
                "--images",
                "16",
                "--size",
                "16",
                "--epochs",
                "2",
                "--out-dir",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
        (
            "params save",
            vec![
                "params",
                "save",
                "--gamma",
                "0.8",
                "--ndvi-min",
                "0.1",
                "--ndvi-max",
                "0.7",
                "--out",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ),
    ];
    let mut failures = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let target = work
                .path()
                .join(format!("{}-{attempt}", name.replace(' ', "_")));
            let dir_output = matches!(*name, "vi compute csv" | "vi compute png16" | "toy-seg");
            let out_path = if dir_output {
                target.clone()
            } else {
                std::fs::create_dir_all(&target).unwrap();
                target.join("out.csv")
            };
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.push(out_path.to_str().unwrap());
            let out = vifuse(&full);
            assert!(
                out.status.success(),
                "{name}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            outputs.push((tree_bytes(&target), out.stdout));
        }
        let (files, _) = &outputs[0];
        if files.is_empty() || outputs[0] != outputs[1] {
            failures.push(*name);
        }
    }
    let pass = failures.is_empty();
    report(
        "cli determinism",
        pass,
        format!(
            "{} subcommands run twice, byte-identical files and stdout; differing {failures:?}",
            runs.len()
        ),
    );
    assert!(pass);
}
