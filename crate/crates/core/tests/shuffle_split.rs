use proptest::prelude::*;
use srsplat_core::densify::{shuffle_split, split_children, ShuffleSplitParams};
use srsplat_core::gaussian::{color_len, Gaussian};
use srsplat_core::math::{Quat, Vec3};
use srsplat_core::GaussianCloud;

fn arb_gaussian() -> impl Strategy<Value = Gaussian> {
    (
        prop::array::uniform3(-2.0f64..2.0),
        prop::array::uniform3(0.01f64..1.0),
        prop::array::uniform4(-1.0f64..1.0),
        0.05f64..0.95,
        prop::collection::vec(-1.0f64..1.0, color_len(1)),
    )
        .prop_filter("nonzero quaternion", |(_, _, q, _, _)| Quat(*q).norm() > 0.1)
        .prop_map(|(m, s, q, o, sh)| {
            let mut g = Gaussian::from_decoded(Vec3(m), s, Quat(q), o, sh).unwrap();
            g.rotation = q;
            g.flags_mut().iter_mut().for_each(|f| *f = 0.3);
            g
        })
}

fn arb_cloud() -> impl Strategy<Value = GaussianCloud> {
    prop::collection::vec(arb_gaussian(), 0..12).prop_map(|gs| GaussianCloud::with_gaussians(1, gs).unwrap())
}

proptest! {
    #[test]
    fn count_and_reset(cloud in arb_cloud()) {
        let p = ShuffleSplitParams::default();
        let eligible = cloud.iter().filter(|g| g.opacity() > 0.5).count();
        let out = shuffle_split(&cloud, &p).unwrap();
        prop_assert_eq!(out.len(), 6 * eligible + (cloud.len() - eligible));
        for g in out.iter() {
            prop_assert!((g.opacity() - 0.01).abs() < 1e-12);
            prop_assert!(g.flags.as_ref().is_none_or(|f| f.iter().all(|&v| v == 0.0)));
        }
        let again = shuffle_split(&out, &p).unwrap();
        prop_assert_eq!(again.len(), out.len());
    }

    #[test]
    fn children_match_closed_form(g in arb_gaussian()) {
        let p = ShuffleSplitParams::default();
        let kids = split_children(&g, &p).unwrap();
        let r = srsplat_core::gaussian::rotation_matrix(g.quat()).unwrap();
        let s = g.scale();
        for axis in 0..3 {
            let (a, b) = (&kids[2 * axis], &kids[2 * axis + 1]);
            let offset = r.column(axis) * (0.5 * s[axis]);
            for j in 0..3 {
                prop_assert!((a.mean[j] - (g.mean[j] + offset[j])).abs() < 1e-9);
                prop_assert!((b.mean[j] - (g.mean[j] - offset[j])).abs() < 1e-9);
                prop_assert!((0.5 * (a.mean[j] + b.mean[j]) - g.mean[j]).abs() < 1e-9);
                let want = if j == axis { s[j] / 4.0 } else { s[j] / 1.9 };
                prop_assert!((a.scale()[j] - want).abs() < 1e-9 * want.max(1.0));
                prop_assert!((b.scale()[j] - want).abs() < 1e-9 * want.max(1.0));
            }
            for k in [a, b] {
                prop_assert_eq!(k.rotation, g.rotation);
                prop_assert_eq!(&k.sh, &g.sh);
                prop_assert_eq!(k.opacity_logit, g.opacity_logit);
            }
        }
    }

    #[test]
    fn ineligible_geometry_unchanged(cloud in arb_cloud()) {
        let out = shuffle_split(&cloud, &ShuffleSplitParams::default()).unwrap();
        let mut it = out.iter();
        for g in cloud.iter() {
            if g.opacity() > 0.5 {
                for _ in 0..6 { it.next(); }
            } else {
                let c = it.next().unwrap();
                prop_assert_eq!(c.mean, g.mean);
                prop_assert_eq!(c.log_scale, g.log_scale);
                prop_assert_eq!(c.rotation, g.rotation);
                prop_assert_eq!(&c.sh, &g.sh);
            }
        }
    }
}
