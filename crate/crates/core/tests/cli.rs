mod common;

use std::path::Path;
use std::process::{Command, Output};

use vifuse::cli::{cmd_gradcheck, EXIT_NUMERICAL, EXIT_OK};
use vifuse::diffcore::{Differentiable, FnOp};
use vifuse::experiments::{synth_dataset, SynthSpec};
use vifuse::gradsuite::{FnCase, GradSuite, Sample};

fn vifuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vifuse"))
        .args(args)
        .output()
        .expect("run vifuse")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_tiles(dir: &Path, n: usize) {
    let data = synth_dataset(&SynthSpec {
        images: n,
        size: 12,
        ..SynthSpec::default()
    })
    .unwrap();
    for (i, img) in data.images.iter().enumerate() {
        common::save_pair(img, dir, &format!("t{i}"));
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn compute_single_kind() {
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), 1);
    let out = dir.path().join("out");
    let o = vifuse(&[
        "vi",
        "compute",
        "--rgb",
        dir.path().join("t0_rgb.png").to_str().unwrap(),
        "--nir",
        dir.path().join("t0_nir.png").to_str().unwrap(),
        "--kind",
        "ndvi",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 1);
    let rows = read_csv(&out.join("ndvi.csv"));
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.len() == 12));
}

#[test]
fn compute_all_writes_twelve_rasters() {
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), 1);
    let out = dir.path().join("out");
    let o = vifuse(&[
        "vi",
        "compute",
        "--rgb",
        dir.path().join("t0_rgb.png").to_str().unwrap(),
        "--nir",
        dir.path().join("t0_nir.png").to_str().unwrap(),
        "--kind",
        "all",
        "--dataset-stats",
        "--format",
        "png16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pngs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png")
        .count();
    assert_eq!(pngs, 12);
    assert!(!out.join("iavi.png").exists());
    let img = image::open(out.join("ndvi.png")).unwrap();
    assert_eq!(img.color(), image::ColorType::L16);
    let sidecar = std::fs::read_to_string(out.join("rvi.range.txt")).unwrap();
    assert!(sidecar.contains("hi_source=observed"));
}

#[test]
fn vci_without_extrema_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), 1);
    let o = vifuse(&[
        "vi",
        "compute",
        "--rgb",
        dir.path().join("t0_rgb.png").to_str().unwrap(),
        "--nir",
        dir.path().join("t0_nir.png").to_str().unwrap(),
        "--kind",
        "vci",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn corr_matrix_is_symmetric_with_unit_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), 2);
    let out = dir.path().join("corr.csv");
    let o = vifuse(&[
        "vi",
        "corr",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out);
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0][0], "vi");
    for i in 1..13 {
        assert_eq!(rows[i][0], rows[0][i]);
        let d: f64 = rows[i][i].parse().unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        for j in 1..13 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
    }
}

#[test]
fn corr_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = vifuse(&[
        "vi",
        "corr",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("c.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&vifuse(&["frobnicate"])), 1);
    assert_eq!(code(&vifuse(&["gradcheck", "--no-such-flag"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = vifuse(&[
        "toy-seg",
        "--variant",
        "resnet",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("baseline"));
    assert_eq!(code(&vifuse(&["--version"])), 0);
}

#[test]
fn gradcheck_reports_every_op() {
    let o = vifuse(&["gradcheck", "--seed", "1", "--trials", "3"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in GradSuite::standard().names() {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn corrupted_backward_fails_gradcheck() {
    let mut suite = GradSuite::standard();
    suite.register(Box::new(FnCase::new(
        "square_wrong",
        |rng: &mut rand_chacha::ChaCha8Rng| {
            use rand::Rng;
            let x: f64 = rng.random_range(0.5..2.0);
            let op: Box<dyn Differentiable> = Box::new(FnOp::new(
                |p: &[f64]| vec![p[0] * p[0]],
                |p: &[f64], up: &[f64]| vec![3.0 * p[0] * up[0]],
            ));
            Sample {
                op,
                point: vec![x],
                upstream: vec![1.0],
            }
        },
    )));
    let mut text = Vec::new();
    let code = cmd_gradcheck(&suite, 0, 5, None, &mut text).unwrap();
    assert_eq!(code, EXIT_NUMERICAL);
    assert!(String::from_utf8(text).unwrap().contains("square_wrong"));
    let mut quiet = Vec::new();
    assert_eq!(
        cmd_gradcheck(&GradSuite::standard(), 0, 2, None, &mut quiet).unwrap(),
        EXIT_OK
    );
}

#[test]
fn fit_experiment_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.csv");
    let o = vifuse(&[
        "fit-experiment",
        "--norm",
        "bn",
        "--vi",
        "all",
        "--images",
        "3",
        "--size",
        "12",
        "--pixels",
        "200",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out);
    assert_eq!(rows[0], ["vi", "norm_mode", "seed", "relative_error_pct"]);
    assert_eq!(rows.len(), 13);
    assert!(rows[1..].iter().all(|r| r[1] == "bn"));

    let o = vifuse(&[
        "fit-experiment",
        "--norm",
        "agn",
        "--vi",
        "ndvi",
        "--images",
        "3",
        "--size",
        "12",
        "--pixels",
        "200",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let rows = read_csv(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][..3], ["ndvi", "agn", "0"]);
}

#[test]
fn toy_seg_runs_and_summary_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = vifuse(&[
        "toy-seg",
        "--seeds",
        "3",
        "--images",
        "12",
        "--size",
        "12",
        "--epochs",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = read_csv(&dir.path().join("runs.csv"));
    assert_eq!(runs.len(), 13);
    let summary = read_csv(&dir.path().join("summary.csv"));
    let labels: Vec<&str> = summary[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(
        labels,
        ["Baseline", "Baseline + VI", "Baseline + GVI", "AGN"]
    );
    assert!(summary[1..].iter().all(|r| r[2] == "3"));
    let epochs = read_csv(&dir.path().join("epochs.csv"));
    assert_eq!(epochs.len(), 13);
}

#[test]
fn params_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.csv");
    let o = vifuse(&[
        "params",
        "save",
        "--savi-l",
        "1",
        "--ndvi-min",
        "-0.1",
        "--ndvi-max",
        "0.8",
        "--out",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = vifuse(&["params", "load", file.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("savi_l=1\n"));
    assert!(text.contains("ndvi_min=-0.1\n"));

    std::fs::write(&file, "key,value\ngamma,5\n").unwrap();
    assert_eq!(
        code(&vifuse(&["params", "load", file.to_str().unwrap()])),
        1
    );
    std::fs::write(&file, "key,value\nbogus,5\n").unwrap();
    assert_eq!(
        code(&vifuse(&["params", "load", file.to_str().unwrap()])),
        2
    );
}

#[test]
fn bad_thread_variable_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_vifuse"))
        .args(["params", "load", "nonexistent.csv"])
        .env("VIFUSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
