use proptest::prelude::*;
use srsplat::ply::{decode, encode, export_ply, has_flag_properties, import_ply, write_checkpoint, Precision};
use srsplat_core::gaussian::color_len;
use srsplat_core::math::{Quat, Vec3};
use srsplat_core::{Gaussian, GaussianCloud};

fn cloud(degree: usize, n: usize, flags: bool) -> GaussianCloud {
    let mut c = GaussianCloud::new(degree).unwrap();
    for i in 0..n {
        let t = i as f64;
        let sh = (0..color_len(degree)).map(|k| 0.1 * k as f64 - 0.3 + 0.01 * t).collect();
        let mut g = Gaussian::from_decoded(
            Vec3::new(0.1 * t, -0.2 * t, 0.3),
            [0.05 + 0.01 * t, 0.1, 0.2],
            Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.3 * t),
            0.2 + 0.05 * t,
            sh,
        )
        .unwrap();
        if flags {
            g.flags_mut().iter_mut().enumerate().for_each(|(k, f)| *f = 0.01 * k as f64 - t);
        }
        c.push(g).unwrap();
    }
    c
}

fn max_delta(a: &GaussianCloud, b: &GaussianCloud) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.params().into_iter().zip(y.params()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn checkpoint_round_trip_is_exact_with_flags() {
    for degree in 0..=2 {
        let c = cloud(degree, 5, true);
        let back = decode(&encode(&c, Precision::F64, true)).unwrap();
        assert_eq!(back, c);
    }
}

#[test]
fn export_round_trip_within_float_precision_and_drops_flags() {
    let c = cloud(1, 7, true);
    let bytes = encode(&c, Precision::F32, false);
    assert!(!has_flag_properties(&bytes));
    let back = decode(&bytes).unwrap();
    assert!(max_delta(&back, &c) < 1e-6);
    assert!(back.iter().all(|g| g.flags.is_none()));
}

#[test]
fn file_helpers() {
    let dir = tempfile::tempdir().unwrap();
    let c = cloud(1, 3, true);
    export_ply(&c, &dir.path().join("a.ply")).unwrap();
    write_checkpoint(&c, &dir.path().join("b.ply")).unwrap();
    assert!(import_ply(&dir.path().join("a.ply")).unwrap().iter().all(|g| g.flags.is_none()));
    assert_eq!(import_ply(&dir.path().join("b.ply")).unwrap(), c);
    let err = import_ply(&dir.path().join("missing.ply")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn empty_cloud() {
    let c = GaussianCloud::new(1).unwrap();
    let back = decode(&encode(&c, Precision::F32, false)).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.sh_degree(), 1);
}

/// A degree-0 file written by hand, in the property order of common
/// 3DGS exporters, with comments and CRLF line endings.
#[test]
fn hand_written_fixture() {
    let mut bytes = b"ply\r\nformat binary_little_endian 1.0\r\ncomment made by hand\r\nelement vertex 1\r\n".to_vec();
    let names = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ];
    for n in names {
        bytes.extend_from_slice(format!("property float {n}\r\n").as_bytes());
    }
    bytes.extend_from_slice(b"end_header\r\n");
    let values: [f32; 17] = [
        1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.25, 2.0, -1.0, -2.0, -3.0, 1.0, 0.0, 0.0, 0.0,
    ];
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let c = decode(&bytes).unwrap();
    assert_eq!(c.sh_degree(), 0);
    let g = &c.gaussians[0];
    assert_eq!(g.mean, Vec3::new(1.0, 2.0, 3.0));
    assert_eq!(g.sh, vec![0.5, -0.5, 0.25]);
    assert_eq!(g.opacity_logit, 2.0);
    assert_eq!(g.log_scale, [-1.0, -2.0, -3.0]);
    assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn f_rest_is_channel_major() {
    let c = cloud(1, 1, false);
    let bytes = encode(&c, Precision::F64, false);
    let body = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    let value = |i: usize| f64::from_le_bytes(bytes[body + 8 * i..body + 8 * i + 8].try_into().unwrap());
    let sh = &c.gaussians[0].sh;
    // f_rest_0..2 are the red coefficients of basis functions 1..3.
    for b in 1..4 {
        assert_eq!(value(9 + b - 1), sh[b * 3]);
        assert_eq!(value(9 + 3 + b - 1), sh[b * 3 + 1]);
    }
}

fn replace(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
    let pos = bytes.windows(from.len()).position(|w| w == from.as_bytes()).unwrap();
    let mut out = bytes[..pos].to_vec();
    out.extend_from_slice(to.as_bytes());
    out.extend_from_slice(&bytes[pos + from.len()..]);
    out
}

#[test]
fn malformed_inputs_are_rejected_with_offsets() {
    let good = encode(&cloud(1, 2, false), Precision::F32, false);
    let cases: Vec<(Vec<u8>, &str)> = vec![
        (b"plx\n".to_vec(), "magic"),
        (replace(&good, "binary_little_endian", "ascii"), "format"),
        (replace(&good, "property float opacity", "property float opacitx"), "unknown property"),
        (replace(&good, "property float rot_3", "property float rot_2"), "duplicate"),
        (replace(&good, "property float f_rest_8", "property uchar f_rest_8"), "unsupported type"),
        (replace(&good, "element vertex 2", "element vertex 3"), "truncated"),
        (replace(&good, "element vertex 2", "element vertex x"), "vertex count"),
        (good[..good.len() - 1].to_vec(), "truncated"),
        ([good.clone(), vec![0]].concat(), "trailing"),
        (good[..20].to_vec(), "unterminated"),
    ];
    for (bytes, want) in cases {
        let e = decode(&bytes).unwrap_err();
        assert!(e.message.contains(want), "expected `{want}`, got `{}`", e.message);
        assert!(e.offset <= bytes.len());
    }
}

#[test]
fn non_finite_and_zero_quaternion_rejected() {
    let mut c = cloud(0, 1, false);
    let mut bytes = encode(&c, Precision::F64, false);
    let body = bytes.len() - 17 * 8;
    bytes[body..body + 8].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(decode(&bytes).unwrap_err().message.contains("non-finite"));
    c.gaussians[0].rotation = [0.0; 4];
    let bytes = encode(&c, Precision::F64, false);
    assert!(decode(&bytes).unwrap_err().message.contains("quaternion"));
}

proptest! {
    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn corrupted_files_never_panic(pos in 0usize..4096, val in any::<u8>(), cut in 0usize..4096) {
        let mut bytes = encode(&cloud(1, 3, true), Precision::F32, true);
        let p = pos % bytes.len();
        bytes[p] = val;
        bytes.truncate(bytes.len() - cut % bytes.len());
        let _ = decode(&bytes);
    }

    #[test]
    fn round_trip_random_clouds(
        raw in prop::collection::vec((prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-4.0f64..0.0),
            prop::array::uniform4(0.1f64..1.0), -6.0f64..6.0, prop::collection::vec(-2.0f64..2.0, 12)), 0..20)
    ) {
        let mut c = GaussianCloud::new(1).unwrap();
        for (m, s, q, o, sh) in raw {
            c.push(Gaussian { mean: Vec3(m), log_scale: s, rotation: q, opacity_logit: o, sh, flags: None }).unwrap();
        }
        prop_assert_eq!(&decode(&encode(&c, Precision::F64, true)).unwrap(), &c);
        prop_assert!(c.is_empty() || max_delta(&decode(&encode(&c, Precision::F32, false)).unwrap(), &c) < 1e-6);
    }
}
