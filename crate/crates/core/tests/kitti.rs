mod common;

use motrack_core::data::{load_kitti_tracklets, DataError, Source};
use motrack_core::geometry::wrap_angle;

#[test]
fn mini_fixture_matches_offline_boxes() {
    let ts = load_kitti_tracklets(&common::kitti_mini(), "0000").unwrap();
    let expected = common::kitti_mini_expected();
    assert_eq!(ts.len(), expected.len());
    for (t, (id, category, boxes)) in ts.iter().zip(&expected) {
        assert_eq!(&t.id, id);
        assert_eq!(&t.category, category);
        assert_eq!(t.source, Source::Kitti);
        assert_eq!(t.len(), boxes.len());
        for (b, (c, size, yaw)) in t.gt_boxes.iter().zip(boxes) {
            for k in 0..3 {
                assert!((b.center[k] - c[k]).abs() < 1e-6, "{id}: {b:?}");
            }
            assert_eq!([b.size.width, b.size.length, b.size.height], *size);
            assert!(wrap_angle(b.yaw - yaw).unwrap().abs() < 1e-9);
        }
    }
}

#[test]
fn frames_and_timestamps() {
    let ts = load_kitti_tracklets(&common::kitti_mini(), "0000").unwrap();
    let car = &ts[0];
    assert_eq!(car.frames.iter().map(|f| f.timestamp).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(car.frames.iter().map(|f| f.len()).collect::<Vec<_>>(), vec![6, 0, 4]);
    // reflectance is dropped, xyz kept at f32 precision
    let p = car.frames[0].points[0];
    assert_eq!(p.x, 5.4784674644470215);
}

#[test]
fn missing_sequence_reports_calibration() {
    let err = load_kitti_tracklets(&common::kitti_mini(), "0042").unwrap_err();
    assert!(matches!(err, DataError::MissingCalib(_)));
}
