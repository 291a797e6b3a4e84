mod common;

use std::fs;

use common::run_cli;
use occpretrain::io;
use occpretrain::labels::voxelize_occupancy;

fn small_dataset(dir: &std::path::Path, extra: &[&str]) {
    fs::write(dir.join("run.cfg"), common::small_config().canonical()).unwrap();
    let mut args = vec!["synth", "--out", "data", "--config", "run.cfg"];
    args.extend_from_slice(extra);
    run_cli(dir, &args, 0);
}

#[test]
fn more_label_frames_never_lose_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir, &[]);
    run_cli(
        dir,
        &["gen-labels", "--data", "data", "--frames", "1", "--out", "l1"],
        0,
    );
    run_cli(
        dir,
        &["gen-labels", "--data", "data", "--frames", "3", "--out", "l3"],
        0,
    );
    let count = |p: std::path::PathBuf| io::decode_occupancy(&fs::read(p).unwrap()).unwrap().occupied_count();
    for i in 0..common::small_config().bench.sequences {
        let name = format!("seq_{i:04}.uoog");
        assert!(
            count(dir.join("l3").join(&name)) >= count(dir.join("l1").join(&name)),
            "{name}"
        );
    }
}

#[test]
fn seed_42_pipeline_is_byte_identical() {
    let cfg = common::small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = common::cli_pipeline(a.path(), &cfg, 42);
    assert_eq!(first, common::cli_pipeline(b.path(), &cfg, 42));
    let other = tempfile::tempdir().unwrap();
    assert_ne!(first[0], common::cli_pipeline(other.path(), &cfg, 43)[0]);
}

#[test]
fn ablate_frames_gives_one_three_five() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir, &["--set", "scene.frames=5"]);
    let args = [
        "ablate",
        "--grid",
        "frames",
        "--seeds",
        "3",
        "--data",
        "data",
        "--out",
        "abl",
        "--config",
        "run.cfg",
        "--set",
        "scene.frames=5",
        "--set",
        "train.pretrain_epochs=1",
        "--set",
        "train.finetune_epochs=1",
    ];
    run_cli(dir, &args, 0);
    let csv = fs::read_to_string(dir.join("abl/ablation_frames.csv")).unwrap();
    let points: Vec<(&str, &str)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1], f[2])
        })
        .collect();
    assert_eq!(
        points,
        [
            ("1", "3"),
            ("1", "mean"),
            ("3", "3"),
            ("3", "mean"),
            ("5", "3"),
            ("5", "mean")
        ]
    );
}

#[test]
fn csv_points_match_the_voxel_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut r = common::rng(11);
    for k in 0..5 {
        let spec = common::dyadic_spec(&mut r);
        let cloud = common::random_cloud(&mut r, &spec, 2000);
        let path = tmp.path().join(format!("g{k}.uoog"));
        fs::write(&path, io::encode_occupancy(&voxelize_occupancy(&cloud, &spec))).unwrap();
        let out = run_cli(
            tmp.path(),
            &["dump-grid", path.to_str().unwrap(), "--format", "csv-points"],
            0,
        );

        let (occ, _) = common::voxel_oracle(&cloud, &spec);
        let [_, hh, ww] = spec.dims;
        let mut expected = String::from("d,h,w\n");
        for (i, _) in occ.iter().enumerate().filter(|(_, &o)| o != 0) {
            expected += &format!("{},{},{}\n", i / (hh * ww), i / ww % hh, i % ww);
        }
        assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
    }
}

#[test]
fn ascii_slices_show_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut r = common::rng(12);
    let spec = common::dyadic_spec(&mut r);
    let grid = voxelize_occupancy(&common::random_cloud(&mut r, &spec, 300), &spec);
    fs::write(tmp.path().join("g.uoog"), io::encode_occupancy(&grid)).unwrap();
    let out = run_cli(tmp.path(), &["dump-grid", "g.uoog"], 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let [dd, hh, ww] = spec.dims;
    assert_eq!(text.lines().count(), dd * (hh + 1));
    assert_eq!(text.matches('#').count(), grid.occupied_count());
    assert_eq!(text.matches('.').count(), dd * hh * ww - grid.occupied_count());
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_dataset(dir, &[]);

    run_cli(dir, &["--help"], 0);
    run_cli(dir, &["frobnicate"], 1);
    run_cli(dir, &["finetune", "--data", "data", "--out", "x", "--report", "y"], 1);
    run_cli(
        dir,
        &["pretrain", "--data", "data", "--out", "x", "--set", "no.such_key=1"],
        1,
    );
    let frac = [
        "finetune",
        "--data",
        "data",
        "--scratch",
        "--label-fraction",
        "1.5",
        "--out",
        "x",
        "--report",
        "y",
    ];
    run_cli(dir, &frac, 1);
    let bad_env = common::cli()
        .current_dir(dir)
        .env("UNISCENE_SEED", "minus one")
        .args(["synth", "--out", "d2"])
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(1));

    run_cli(dir, &["pretrain", "--data", "missing", "--out", "x"], 2);
    run_cli(
        dir,
        &["pretrain", "--data", "data", "--out", "x", "--set", "scene.seed=9"],
        2,
    );
    fs::write(dir.join("junk.uoog"), b"UOOG\x02\0\0\0").unwrap();
    let out = run_cli(dir, &["dump-grid", "junk.uoog"], 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte 4"));
    assert!(!dir.join("x").exists());
}
