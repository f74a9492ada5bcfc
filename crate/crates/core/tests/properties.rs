use nalgebra::{Point2, Point3, Vector3};
use proptest::prelude::*;

use gr3dkit::camera::{
    backproject, project, sample_region_points, transform_to_reference, CameraIntrinsics, DepthMap, Pose,
};
use gr3dkit::datagen::{keep_all, make_detect_cot, make_grounded_cot, AnnotatedScene, SceneObject};
use gr3dkit::eval::{average_precision, evaluate_gcot, ApInterpolation, GCoTRecord};
use gr3dkit::geom2d::{iou2d, jitter, Box2D, JitterParams};
use gr3dkit::geom3d::{canonicalize, corners, euler_to_rotation, iou3d, rotation_to_euler, Box3D, EulerAngles};
use gr3dkit::ground_text::{bbox2d_text, parse, parse_lenient, serialize, StreamParser};
use gr3dkit::region_protocol::decode_scripted;

fn box2d() -> impl Strategy<Value = Box2D> {
    (-500.0..500.0f64, -500.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
        .prop_map(|(x, y, w, h)| Box2D::new(x, y, x + w, y + h).unwrap())
}

fn angles() -> impl Strategy<Value = EulerAngles> {
    (-0.5..0.5f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(p, r, y)| EulerAngles::new(p, r, y))
}

fn box3d() -> impl Strategy<Value = Box3D> {
    (
        prop::array::uniform3(-2.0..2.0f64),
        prop::array::uniform3(0.2..3.0f64),
        angles(),
    )
        .prop_map(|(c, s, a)| Box3D::new(Point3::from(c), Vector3::from(s), a).unwrap())
}

fn pose() -> impl Strategy<Value = Pose> {
    (angles(), prop::array::uniform3(-5.0..5.0f64))
        .prop_map(|(a, t)| Pose::new(euler_to_rotation(&a), Vector3::from(t)))
}

/// Largest distance from a point of either set to the nearest point of the other.
fn set_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let one_way = |x: &[Point3<f64>], y: &[Point3<f64>]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou2d_symmetric_reflexive_translation_invariant(a in box2d(), b in box2d(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let ab = iou2d(&a, &b).unwrap();
        prop_assert_eq!(ab, iou2d(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou2d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let moved = iou2d(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap()).unwrap();
        prop_assert!((moved - ab).abs() < 1e-9);
    }

    #[test]
    fn jitter_reproducible_and_valid(b in box2d(), c in 0.0..0.5f64, s in 0.0..0.5f64, seed in any::<u64>()) {
        let p = JitterParams::new(c, s, seed).unwrap();
        let j = jitter(&b, &p, 1000.0, 800.0);
        prop_assert_eq!(j, jitter(&b, &p, 1000.0, 800.0));
        prop_assert!(Box2D::new(j.x1(), j.y1(), j.x2(), j.y2()).is_ok());
        prop_assert!(j.x1() >= 0.0 && j.y1() >= 0.0 && j.x2() <= 1000.0 && j.y2() <= 800.0);
    }

    #[test]
    fn iou3d_symmetric_bounded_rigid_invariant(a in box3d(), b in box3d(), t in pose()) {
        let ab = iou3d(&a, &b).unwrap();
        prop_assert_eq!(ab, iou3d(&b, &a).unwrap());
        prop_assert_eq!(iou3d(&a, &a).unwrap(), 1.0);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        let moved = iou3d(&transform_to_reference(&t, &a), &transform_to_reference(&t, &b)).unwrap();
        prop_assert!((moved - ab).abs() <= 1e-6);
    }

    #[test]
    fn canonicalize_idempotent_and_shape_preserving(b in box3d()) {
        let c = canonicalize(&b);
        prop_assert!((c.volume() - b.volume()).abs() < 1e-9);
        prop_assert!(set_distance(&corners(&b), &corners(&c)) < 1e-9);
        let cc = canonicalize(&c);
        for (x, y) in c.to_array().iter().zip(cc.to_array()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_round_trip(p in -0.45..0.45f64, r in -1.0..1.0f64, y in -1.0..1.0f64) {
        let a = EulerAngles::new(p, r, y);
        let back = rotation_to_euler(&euler_to_rotation(&a)).unwrap();
        let m = euler_to_rotation(&back);
        prop_assert!((m.matrix() - euler_to_rotation(&a).matrix()).abs().max() < 1e-9);
        let wrap = |d: f64| (d + 1.0).rem_euclid(2.0) - 1.0;
        for (u, v) in a.to_array().iter().zip(back.to_array()) {
            prop_assert!(wrap(u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn project_backproject_inverse(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.1..50.0f64, f in 100.0..2000.0f64) {
        let k = CameraIntrinsics::new(f, f * 1.1, 320.0, 240.0, 640, 480).unwrap();
        let p = backproject(&k, &Point2::new(u, v), d).unwrap();
        prop_assert!((p.z - d).abs() < 1e-12);
        let uv = project(&k, &p).unwrap();
        prop_assert!((uv.x - u).abs() < 1e-9 && (uv.y - v).abs() < 1e-9);
    }

    #[test]
    fn poses_compose(b in box3d(), t1 in pose(), t2 in pose()) {
        let stepwise = transform_to_reference(&t2, &transform_to_reference(&t1, &b));
        let composed = transform_to_reference(&t2.after(&t1), &b);
        prop_assert!(set_distance(&corners(&stepwise), &corners(&composed)) < 1e-9);
        let mapped: Vec<_> = corners(&b).iter().map(|p| t2.apply(&t1.apply(p))).collect();
        prop_assert!(set_distance(&mapped, &corners(&composed)) < 1e-9);
    }

    #[test]
    fn sampled_points_come_from_valid_pixels(
        cells in prop::collection::vec(prop_oneof![Just(f64::NAN), Just(0.0), 0.5..9.0f64], 12 * 10),
        mask in prop::collection::vec(any::<bool>(), 12 * 10),
        region in (0.0..11.0f64, 0.0..9.0f64, 0.5..12.0f64, 0.5..10.0f64),
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let (w, h) = (12u32, 10u32);
        let k = CameraIntrinsics::new(20.0, 20.0, 6.0, 5.0, w, h).unwrap();
        let depth = DepthMap::new(w, h, cells, Some(mask)).unwrap();
        let (x1, y1) = (region.0, region.1);
        let r = Box2D::new(x1, y1, (x1 + region.2).min(12.0), (y1 + region.3).min(10.0)).unwrap();
        if let Ok(points) = sample_region_points(&depth, &k, &r, n, seed) {
            for p in points {
                let uv = project(&k, &p).unwrap();
                let (c, row) = (uv.x.floor() as u32, uv.y.floor() as u32);
                prop_assert_eq!(depth.at(c, row), Some(p.z));
            }
        }
    }

    #[test]
    fn stream_chunking_invariant(s in "[a-z <>/\\[\\],.0-9é]{0,40}|(<bbox>\\[[0-9]{1,3}, [0-9]{1,3}, [0-9]{1,3}, [0-9]{1,3}\\]</bbox> ?[a-z]{0,4}){1,3}", cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..8)) {
        let bytes = s.as_bytes();
        let mut whole = StreamParser::new();
        let mut want = whole.feed_bytes(bytes);
        want.extend(whole.finish());
        let mut at: Vec<usize> = cuts.iter().map(|i| i.index(bytes.len() + 1)).collect();
        at.sort();
        let mut parser = StreamParser::new();
        let mut got = Vec::new();
        let mut from = 0;
        for c in at.into_iter().chain([bytes.len()]) {
            got.extend(parser.feed_bytes(&bytes[from..c]));
            from = c;
        }
        got.extend(parser.finish());
        prop_assert_eq!(got, want);
    }

    #[test]
    fn lenient_parse_covers_input(s in "[a-z <>/\\[\\],.0-9]{0,60}") {
        let tokens = parse_lenient(&s);
        let mut next = 0;
        for t in &tokens {
            prop_assert_eq!(t.span.start, next);
            next = t.span.end;
        }
        prop_assert_eq!(next, s.len());
    }

    #[test]
    fn serialize_parse_round_trip(words in prop::collection::vec("[a-z]{1,6}", 1..6), boxes in prop::collection::vec(box2d(), 0..4)) {
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            text.push_str(w);
            text.push(' ');
            if let Some(b) = boxes.get(i) {
                text.push_str(&bbox2d_text(b));
            }
        }
        let tokens = parse(&text).unwrap();
        let canonical = serialize(&tokens).unwrap();
        prop_assert_eq!(&canonical, &text);
        let again = parse(&canonical).unwrap();
        prop_assert_eq!(again.iter().map(|t| &t.kind).collect::<Vec<_>>(), tokens.iter().map(|t| &t.kind).collect::<Vec<_>>());
    }

    #[test]
    fn protocol_segments_ignore_chunking(words in prop::collection::vec("[a-z]{1,5}", 1..6), boxes in prop::collection::vec(box2d(), 1..4), a in 1usize..20, b in 1usize..20) {
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            text.push_str(w);
            if let Some(bx) = boxes.get(i) {
                text.push_str(&bbox2d_text(bx));
            }
            text.push(' ');
        }
        prop_assert_eq!(decode_scripted(&text, a).unwrap(), decode_scripted(&text, b).unwrap());
    }

    #[test]
    fn ap_lowest_false_positive_never_helps(ranked in prop::collection::vec(any::<bool>(), 0..30), extra_gt in 0usize..5) {
        let num_gt = ranked.iter().filter(|&&t| t).count() + extra_gt;
        prop_assume!(num_gt > 0);
        for interp in [ApInterpolation::Point101, ApInterpolation::AllPoints] {
            let base = average_precision(&ranked, num_gt, interp).unwrap_or(0.0);
            let mut worse = ranked.clone();
            worse.push(false);
            prop_assert!(average_precision(&worse, num_gt, interp).unwrap() <= base + 1e-12);
        }
    }

    #[test]
    fn ap_true_positive_never_costs_more_than_a_grid_step(ranked in prop::collection::vec(any::<bool>(), 0..30), extra_gt in 1usize..5, pos in any::<prop::sample::Index>()) {
        let num_gt = ranked.iter().filter(|&&t| t).count() + extra_gt;
        let base = average_precision(&ranked, num_gt, ApInterpolation::Point101).unwrap_or(0.0);
        let mut better = ranked.clone();
        better.insert(pos.index(ranked.len() + 1), true);
        prop_assert!(average_precision(&better, num_gt, ApInterpolation::Point101).unwrap() >= base - 1.0 / 101.0);
    }

    #[test]
    fn consistency_bounded_by_both_accuracies(recs in prop::collection::vec((any::<bool>(), prop::option::of(0.05..1.0f64)), 1..40)) {
        let gt_box = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let recs: Vec<_> = recs
            .into_iter()
            .map(|(answer_correct, iou)| GCoTRecord {
                id: None,
                answer_correct,
                predicted_box: iou.map(|f| Box2D::new(0.0, 0.0, 10.0 * f, 10.0).unwrap()),
                gt_box,
            })
            .collect();
        let r = evaluate_gcot(&recs).unwrap();
        prop_assert!(r.consistency <= r.a_acc.min(r.g_acc));
    }

    #[test]
    fn generated_records_parse(objs in prop::collection::vec((box2d(), box3d(), "[a-z]{2,8}"), 1..25), seed in any::<u64>()) {
        let objects: Vec<_> = objs
            .into_iter()
            .map(|(b2, b3, name)| SceneObject {
                category: name.clone(),
                description: format!("the {name}"),
                box2d: Box2D::new(b2.x1().abs(), b2.y1().abs(), b2.x1().abs() + b2.width(), b2.y1().abs() + b2.height()).unwrap(),
                box3d: Some(b3),
            })
            .collect();
        let scene = AnnotatedScene {
            image_id: "s".into(),
            intrinsics: CameraIntrinsics::new(800.0, 800.0, 400.0, 400.0, 900, 900).unwrap(),
            objects,
            depth: None,
            pose: None,
            reasoning: None,
        };
        let cot = make_grounded_cot(&scene, 20, seed).unwrap();
        prop_assert_eq!(cot.clone(), make_grounded_cot(&scene, 20, seed).unwrap());
        parse(&cot.text).unwrap();
        parse(&make_detect_cot(&scene, 20, &keep_all).unwrap().text).unwrap();
    }
}
