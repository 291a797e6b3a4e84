use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use occpretrain::config::RunConfig;
use occpretrain::geometry::{Frame, SE3Pose, Vec3};
use occpretrain::io;
use occpretrain::labels::{voxelize_occupancy, PointCloud, SemanticClass, VoxelGridSpec};
use occpretrain::net::model::{DEPTH_HEAD_PREFIX, ENCODER_PREFIX, OCC_DECODER_PREFIX};
use occpretrain::net::{ModelConfig, ModelParams};
use occpretrain::train::{Checkpoint, Provenance, Stage};
use occpretrain_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(occp_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn ok(s: OccpStatus) {
    assert_eq!(s, OccpStatus::Ok, "{}", last_error());
}

/// Deterministic scatter of points partly outside a 4x5x6 grid.
fn points(n: usize) -> Vec<f64> {
    (0..n * 3)
        .map(|i| ((i * 7919) % 1000) as f64 / 1000.0 * 8.0 - 1.5 + if i % 3 == 2 { 0.25 } else { 0.0 })
        .collect()
}

#[test]
fn voxelize_agrees_with_the_library() {
    let xyz = points(500);
    let labels: Vec<u8> = (0..500).map(|i| (i % 3 + 1) as u8).collect();
    let (origin, size, dims) = ([-1.0, -1.0, -0.5], [0.5, 0.75, 1.0], [4usize, 5, 6]);
    let spec = VoxelGridSpec::new(Vec3::from(origin), size, dims).unwrap();
    let mut cloud = PointCloud::new(Frame::Ego(0.0));
    for (p, &l) in xyz.chunks(3).zip(&labels) {
        let class = SemanticClass::from_id(l).unwrap();
        cloud.push(
            Vec3::new(p[0], p[1], p[2]),
            class,
            class == SemanticClass::DynamicObject,
        );
    }
    let expected = voxelize_occupancy(&cloud, &spec);

    for labels in [labels.as_ptr(), ptr::null()] {
        let mut grid = ptr::null_mut();
        unsafe {
            ok(occp_voxelize(
                xyz.as_ptr(),
                labels,
                500,
                origin.as_ptr(),
                size.as_ptr(),
                dims.as_ptr(),
                &mut grid,
            ));
            let mut n = 0;
            ok(occp_grid_occupied_count(grid, &mut n));
            assert_eq!(n, expected.occupied_count());
            let mut got = [0usize; 3];
            ok(occp_grid_dims(grid, got.as_mut_ptr()));
            assert_eq!(got, dims);
            for (d, h, w) in expected.occupied_cells() {
                let mut b = false;
                ok(occp_grid_get(grid, d, h, w, &mut b));
                assert!(b);
            }
            let mut b = false;
            assert_eq!(occp_grid_get(grid, 4, 0, 0, &mut b), OccpStatus::InvalidArgument);
            occp_grid_free(grid);
        }
    }

    let bad = vec![0u8; 500];
    let mut grid = ptr::null_mut();
    let status = unsafe {
        occp_voxelize(
            xyz.as_ptr(),
            bad.as_ptr(),
            500,
            origin.as_ptr(),
            size.as_ptr(),
            dims.as_ptr(),
            &mut grid,
        )
    };
    assert_eq!(status, OccpStatus::InvalidArgument);
    assert!(last_error().contains("class id 0"), "{}", last_error());
    assert!(grid.is_null());
}

#[test]
fn grid_bytes_round_trip_with_size_query() {
    let xyz = points(200);
    let (origin, size, dims) = ([-1.0, -1.0, -0.5], [1.0, 1.0, 1.0], [3usize, 7, 9]);
    unsafe {
        let mut grid = ptr::null_mut();
        ok(occp_voxelize(
            xyz.as_ptr(),
            ptr::null(),
            200,
            origin.as_ptr(),
            size.as_ptr(),
            dims.as_ptr(),
            &mut grid,
        ));
        let mut len = 0;
        ok(occp_grid_encode(grid, ptr::null_mut(), 0, &mut len));
        assert_eq!(len, 44 + (3 * 7 * 9usize).div_ceil(8));
        let mut small = vec![0u8; len - 1];
        assert_eq!(
            occp_grid_encode(grid, small.as_mut_ptr(), small.len(), &mut len),
            OccpStatus::BufferTooSmall
        );
        let mut buf = vec![0u8; len];
        ok(occp_grid_encode(grid, buf.as_mut_ptr(), buf.len(), &mut len));

        let mut back = ptr::null_mut();
        ok(occp_grid_decode(buf.as_ptr(), buf.len(), &mut back));
        let mut again = vec![0u8; len];
        ok(occp_grid_encode(back, again.as_mut_ptr(), again.len(), &mut len));
        assert_eq!(buf, again);

        let mut junk = ptr::null_mut();
        assert_eq!(occp_grid_decode(buf.as_ptr(), 10, &mut junk), OccpStatus::Format);
        assert!(last_error().contains("byte"), "{}", last_error());
        occp_grid_free(grid);
        occp_grid_free(back);
        occp_grid_free(ptr::null_mut());
    }
}

#[test]
fn focal_loss_matches_hand_values() {
    let mut v = 0.0;
    unsafe {
        ok(occp_focal_loss(
            [1u8].as_ptr(),
            [0.9].as_ptr(),
            1,
            2.0,
            1.0,
            0.25,
            &mut v,
        ));
        assert!((v - 0.118_497_143_996).abs() < 1e-9, "{v}");
        ok(occp_focal_loss(
            [0u8].as_ptr(),
            [0.2].as_ptr(),
            1,
            2.0,
            1.0,
            0.25,
            &mut v,
        ));
        assert!((v - 0.149_225_086_559).abs() < 1e-9, "{v}");
        assert_eq!(
            occp_focal_loss([1u8].as_ptr(), [0.9].as_ptr(), 1, 2.0, 1.0, -1.0, &mut v),
            OccpStatus::InvalidArgument
        );
        assert_eq!(
            occp_focal_loss(ptr::null(), [0.9].as_ptr(), 1, 2.0, 1.0, 0.25, &mut v),
            OccpStatus::NullPointer
        );
    }
}

#[test]
fn project_and_unproject_invert() {
    let pose = SE3Pose::from_euler(0.1, -0.2, 0.7, Vec3::new(0.3, -1.0, 1.6));
    let a = pose.to_array();
    unsafe {
        let mut cam = ptr::null_mut();
        ok(occp_camera_new(
            40.0,
            42.0,
            16.0,
            12.0,
            32,
            24,
            a.as_ptr(),
            a[9..].as_ptr(),
            &mut cam,
        ));
        for (u, v, d) in [(3.0, 4.0, 2.0), (16.0, 12.0, 0.5), (31.5, 0.25, 30.0)] {
            let mut p = [0.0; 3];
            ok(occp_unproject(cam, u, v, d, p.as_mut_ptr()));
            let mut uvd = [0.0; 3];
            ok(occp_project(cam, p.as_ptr(), uvd.as_mut_ptr()));
            for (x, y) in uvd.iter().zip([u, v, d]) {
                assert!((x - y).abs() < 1e-9, "{uvd:?} vs {u} {v} {d}");
            }
        }
        let mut p = [0.0; 3];
        assert_eq!(occp_unproject(cam, 1.0, 1.0, 0.0, p.as_mut_ptr()), OccpStatus::Domain);
        occp_camera_free(cam);

        let skew = [1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(
            occp_camera_new(40.0, 42.0, 16.0, 12.0, 32, 24, skew.as_ptr(), a[9..].as_ptr(), &mut cam),
            OccpStatus::Domain,
            "{}",
            last_error()
        );
    }
}

fn pretrained() -> Checkpoint {
    let params = ModelParams::init(
        &ModelConfig::default(),
        5,
        &[ENCODER_PREFIX, DEPTH_HEAD_PREFIX, OCC_DECODER_PREFIX],
    )
    .unwrap();
    Checkpoint::new(
        &params,
        &Provenance::new(Stage::Pretrained, 3, &RunConfig::default(), vec![]),
    )
}

fn digest(ck: *const OccpCheckpoint) -> String {
    let mut buf = [0 as std::ffi::c_char; OCCP_DIGEST_LEN];
    ok(unsafe { occp_checkpoint_digest(ck, buf.as_mut_ptr(), buf.len()) });
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned()
}

#[test]
fn checkpoints_load_strip_and_save() {
    let core = pretrained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.uock");
    core.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut ck = ptr::null_mut();
        ok(occp_checkpoint_load(cpath.as_ptr(), &mut ck));
        assert_eq!(digest(ck), core.digest());
        let mut n = 0;
        ok(occp_checkpoint_tensor_count(ck, &mut n));
        assert_eq!(n, core.params.len());

        let mut stripped = ptr::null_mut();
        ok(occp_checkpoint_strip_decoder(ck, &mut stripped));
        let mut m = 0;
        ok(occp_checkpoint_tensor_count(stripped, &mut m));
        assert!(m < n);
        let expected = core.strip_decoder().unwrap();
        assert_eq!(digest(stripped), expected.digest());

        let mut len = 0;
        ok(occp_checkpoint_encode(stripped, ptr::null_mut(), 0, &mut len));
        let mut buf = vec![0u8; len];
        ok(occp_checkpoint_encode(stripped, buf.as_mut_ptr(), len, &mut len));
        assert_eq!(buf, io::encode_checkpoint(&expected));

        let out = CString::new(dir.path().join("ft.uock").to_str().unwrap()).unwrap();
        ok(occp_checkpoint_save(stripped, out.as_ptr()));
        assert_eq!(std::fs::read(dir.path().join("ft.uock")).unwrap(), buf);

        let mut small = [0 as std::ffi::c_char; 8];
        assert_eq!(
            occp_checkpoint_digest(ck, small.as_mut_ptr(), small.len()),
            OccpStatus::BufferTooSmall
        );
        occp_checkpoint_free(ck);
        occp_checkpoint_free(stripped);

        let missing = CString::new(dir.path().join("none.uock").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(occp_checkpoint_load(missing.as_ptr(), &mut none), OccpStatus::Io);
        assert_eq!(
            occp_checkpoint_decode(b"UOCK".as_ptr(), 4, &mut none),
            OccpStatus::Format
        );
        assert_eq!(occp_checkpoint_load(ptr::null(), &mut none), OccpStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/occpretrain.h")).unwrap();
    let src = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(
            header.contains(&format!(" {name}(")) || header.contains(&format!("*{name}(")),
            "{name} missing"
        );
    }
}

/// Build directory holding the library artifacts (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = artifact_dir().join("liboccpretrain_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let build = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}
