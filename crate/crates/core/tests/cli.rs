mod common;

use std::fs;

use common::{cli, tiny_run_config, write_config};
use topofield::extraction::import_mesh;

#[test]
fn argument_and_prerequisite_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(tmp.path());
    let c = write_config(tmp.path(), &cfg);
    let c = c.to_str().unwrap();
    assert_eq!(cli(&["train", "--bogus"]), 2);
    assert_eq!(cli(&["train", "--config", c, "--stage", "7"]), 2);
    // stage 2 without the 0b checkpoint (or a dataset)
    assert_eq!(cli(&["train", "--config", c, "--stage", "2"]), 4);
    assert_eq!(cli(&["reconstruct", "--config", c, "--image", "inst0000_v00"]), 4);

    let mut bad = cfg.clone();
    bad.gen.genus_mix = 2.0;
    let b = tmp.path().join("bad.json");
    fs::write(&b, serde_json::to_string(&bad).unwrap()).unwrap();
    assert_eq!(cli(&["gen-data", "--config", b.to_str().unwrap()]), 2);
    fs::write(&b, r#"{"train": {"lerning_rate": 1}}"#).unwrap();
    assert_eq!(cli(&["gen-data", "--config", b.to_str().unwrap()]), 2);
}

#[test]
fn gen_data_refuses_non_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(tmp.path());
    let c = write_config(tmp.path(), &cfg);
    let c = c.to_str().unwrap();
    fs::create_dir_all(&cfg.data_dir).unwrap();
    fs::write(cfg.data_dir.join("stray.txt"), "x").unwrap();
    assert_eq!(cli(&["gen-data", "--config", c]), 2);
    assert!(cfg.data_dir.join("stray.txt").exists());
    assert_eq!(cli(&["gen-data", "--config", c, "--force"]), 0);
    assert!(!cfg.data_dir.join("stray.txt").exists());
    assert!(cfg.data_dir.join("manifest.json").exists());
    assert!(cfg.data_dir.join("inst0001_v00").join("camera.json").exists());
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(tmp.path());
    let c = write_config(tmp.path(), &cfg);
    let c = c.to_str().unwrap();
    assert_eq!(cli(&["gen-data", "--config", c]), 0);
    assert_eq!(cli(&["train", "--config", c, "--stage", "all"]), 0);
    for s in ["0a", "1", "0b", "2"] {
        assert!(cfg.run_dir.join(format!("ckpt_{s}")).join("meta.json").exists(), "{s}");
    }
    assert_eq!(cli(&["train", "--config", c, "--stage", "all", "--resume"]), 0);

    // grid resolution changes the mesh density
    let out16 = tmp.path().join("out16");
    let out32 = tmp.path().join("out32");
    let o16 = out16.to_str().unwrap();
    let o32 = out32.to_str().unwrap();
    assert_eq!(cli(&["reconstruct", "--config", c, "--image", "inst0000_v00", "--res", "16", "--out", o16]), 0);
    assert_eq!(
        cli(&["reconstruct", "--config", c, "--image", "inst0000_v00", "--res", "32", "--out", o32, "--canonical-colors"]),
        0
    );
    let m16 = import_mesh(&out16.join("inst0000_v00.obj")).unwrap();
    let m32 = import_mesh(&out32.join("inst0000_v00.obj")).unwrap();
    assert!(!m16.is_empty());
    assert!(m32.vertices.len() > m16.vertices.len());
    assert!(out32.join("inst0000_v00_canonical.obj").exists());
    assert!(out32.join("inst0000_v00_depth.png").exists());
    let obj = fs::read_to_string(out32.join("inst0000_v00.obj")).unwrap();
    assert!(obj.starts_with("# topofield config_hash "));

    assert_eq!(cli(&["eval", "--config", c]), 0);
    let csv = fs::read_to_string(cfg.output_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash "));
    assert_eq!(lines[1], "instance,acc,cov,overall,emd,precision,recall,fscore");
    assert_eq!(lines.len(), 2 + 2 + 1);
    assert!(lines[4].starts_with("mean,"));

    // painting and transferring onto the same shape is the identity
    assert_eq!(
        cli(&["texture-transfer", "--config", c, "--source", "inst0000_v00", "--target", "inst0000_v00", "--paint", "x"]),
        0
    );
    let painted = import_mesh(&cfg.output_dir.join("inst0000_v00_painted.obj")).unwrap();
    let moved = import_mesh(&cfg.output_dir.join("inst0000_v00_from_inst0000_v00.obj")).unwrap();
    assert_eq!(painted.colors, moved.colors);
    assert!(painted.colors.is_some());
    assert_eq!(cli(&["texture-transfer", "--config", c, "--source", "inst0000_v00", "--target", "inst0001_v00"]), 0);
}
