use std::path::Path;
use std::process::{Command, Output};

use safesite::format::{GridFile, GridKind};
use safesite::Dem;

const TINY: &[&str] = &[
    "--terrain.size",
    "24",
    "--dataset.train",
    "8",
    "--dataset.validation",
    "1",
    "--dataset.test",
    "1",
    "--model.input_size",
    "16",
    "--model.encoder_blocks",
    "2",
    "--model.channels",
    "2,4",
    "--train.epochs",
    "2",
    "--train.learning_rate",
    "0.01",
    "--predict.mc_samples",
    "2",
];

fn safesite(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safesite"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn tiny(dir: &Path, stage: &str, extra: &[&str]) -> Output {
    let mut args = vec![stage];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    safesite(dir, &args)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_counts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&tiny(dir, "generate", &["--dataset.train", "8", "--dataset.validation", "1", "--dataset.test", "1"]));
    }
    let files = files_under(&a);
    let count = |prefix: &str| files.iter().filter(|p| p.starts_with(prefix)).count();
    assert_eq!(count("dems/clean"), 10);
    assert_eq!(count("dems/sigma_0.0167") + count("dems/sigma_0.03") + count("dems/sigma_0.07"), 30);
    assert!(a.join("manifest.txt").is_file());
    assert_eq!(files, files_under(&b));
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn zero_noise_variant_equals_clean_dem() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&tiny(tmp.path(), "generate", &["--noise.test_sigmas_m", "0,0.07"]));
    let clean = std::fs::read(tmp.path().join("dems/clean/dem_0000.dem")).unwrap();
    let zero = std::fs::read(tmp.path().join("dems/sigma_0/dem_0000.dem")).unwrap();
    let noisy = std::fs::read(tmp.path().join("dems/sigma_0.07/dem_0000.dem")).unwrap();
    assert_eq!(clean, zero);
    assert_ne!(clean, noisy);
}

#[test]
fn generate_refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&tiny(tmp.path(), "generate", &[]));
    let again = tiny(tmp.path(), "generate", &[]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&tiny(tmp.path(), "generate", &["--force"]));
}

#[test]
fn stages_out_of_order_name_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tiny(tmp.path(), "label", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("safesite generate"));

    ok(&tiny(tmp.path(), "generate", &[]));
    let out = tiny(tmp.path(), "predict", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("safesite train"));

    let out = tiny(tmp.path(), "train", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("safesite label"));
}

#[test]
fn usage_and_validation_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(safesite(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(safesite(tmp.path(), &["generate", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(
        safesite(tmp.path(), &["generate", "--model.dropout_rate", "1.5"]).status.code(),
        Some(3)
    );
    assert_eq!(safesite(tmp.path(), &["generate", "--nope.key", "1"]).status.code(), Some(3));
    assert_eq!(safesite(tmp.path(), &["generate", "--seed", "x"]).status.code(), Some(1));
    assert!(!tmp.path().join("manifest.txt").exists());
}

#[test]
fn config_file_and_overrides_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "# desk run\nseed = 9\ntrain.epochs = 7\n").unwrap();
    let cfg_str = cfg.to_str().unwrap();
    let out = safesite(tmp.path(), &["show-config", "--config", cfg_str, "--train.epochs", "5"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9\n"));
    assert!(text.contains("train.epochs = 5\n"));
    let out = safesite(tmp.path(), &["show-config", "--config", cfg_str, "--seed", "3"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("seed = 3\n"));
}

#[test]
fn full_pipeline_reports_every_method_and_noise_level() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&tiny(root, "run", &[]));

    let csv = std::fs::read_to_string(root.join("report/metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    for method in ["baseline", "base_net", "uncertainty_aware"] {
        for sigma in ["0.0167", "0.03", "0.07"] {
            assert!(
                rows.iter().any(|r| r.starts_with(&format!("{method},")) && r.split(',').nth(2) == Some(sigma)),
                "{method} at {sigma}"
            );
        }
    }

    // Re-running evaluation rewrites identical bytes.
    let before = std::fs::read(root.join("report/report.txt")).unwrap();
    ok(&tiny(root, "evaluate", &[]));
    assert_eq!(before, std::fs::read(root.join("report/report.txt")).unwrap());

    // Artifacts carry the config digest that produced them.
    let show = tiny(root, "show-config", &[]);
    let digest = {
        use sha2::{Digest, Sha256};
        format!("{:x}", Sha256::digest(&show.stdout))
    };
    let aware = GridFile::read(&root.join("aware/sigma_0.07/dem_0009.sfm")).unwrap();
    assert_eq!(aware.header.digest.as_deref(), Some(digest.as_str()));
    for stage in ["generate", "label", "train", "predict", "calibrate", "select", "evaluate"] {
        let prov = std::fs::read_to_string(root.join(format!("provenance/{stage}.prov"))).unwrap();
        assert!(prov.contains(&format!("config_digest {digest}")), "{stage}");
        assert!(prov.lines().any(|l| l.starts_with("output ")), "{stage}");
    }
    let log = std::fs::read_to_string(root.join("model/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,loss\n1,"));
}

#[test]
fn render_preserves_crater_height_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let dem = Dem::from_fn(21, 21, 1.0, |x, y| {
        let r = ((x - 10.0).powi(2) + (y - 10.0).powi(2)).sqrt();
        if r < 6.0 {
            -0.1 * (36.0 - r * r)
        } else {
            0.8 * (-(r - 7.0).powi(2)).exp()
        }
    })
    .unwrap();
    let input = tmp.path().join("crater.dem");
    GridFile::from_dem(&dem).write(&input).unwrap();
    let output = tmp.path().join("crater.pgm");
    ok(&safesite(
        tmp.path(),
        &["render", input.to_str().unwrap(), "--output", output.to_str().unwrap()],
    ));
    let bytes = std::fs::read(&output).unwrap();
    let header = b"P5\n21 21\n255\n";
    assert!(bytes.starts_with(header));
    let pixels = &bytes[header.len()..];
    let row = 10;
    for a in 0..21 {
        for b in 0..21 {
            let (ha, hb) = (dem.at(row, a), dem.at(row, b));
            let (pa, pb) = (pixels[row * 21 + a], pixels[row * 21 + b]);
            if ha < hb - 0.01 {
                assert!(pa <= pb, "cols {a},{b}");
            }
        }
    }
    // Darker bowl, brighter rim.
    assert!(pixels[row * 21 + 10] < pixels[row * 21 + 17]);
}

#[test]
fn render_marks_sites_and_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let unc = tmp.path().join("u.unc");
    GridFile::from_values(GridKind::Uncertainty, 6, 6, 1.0, &[0.0; 36]).write(&unc).unwrap();
    let out = tmp.path().join("u.ppm");
    ok(&safesite(
        tmp.path(),
        &["render", unc.to_str().unwrap(), "-o", out.to_str().unwrap(), "--site", "2,3"],
    ));
    let bytes = std::fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P6\n6 6\n255\n"));

    let junk = tmp.path().join("junk.map");
    std::fs::write(&junk, "SAFESITE-GRID 1\nkind elevation\nwidth 1\nheight 1\npitch_m 1\nend\n").unwrap();
    let r = safesite(tmp.path(), &["render", junk.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown kind"));
    let missing = safesite(tmp.path(), &["render", "nope.dem", "-o", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}
