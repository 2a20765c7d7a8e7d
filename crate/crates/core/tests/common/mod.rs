#![allow(dead_code)]

use std::path::PathBuf;

pub fn kitti_mini() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kitti_mini")
}

/// LiDAR-frame boxes of the mini fixture, computed offline with numpy from
/// the label rows and the calibration file:
/// `(tracklet id, [[x, y, z], [width, length, height], [yaw]] per frame)`.
pub fn kitti_mini_expected() -> Vec<(&'static str, &'static str, Vec<([f64; 3], [f64; 3], f64)>)> {
    let car = [1.63, 3.88, 1.52];
    let ped = [0.62, 0.81, 1.74];
    let van = [1.9, 4.9, 2.1];
    vec![
        (
            "0000_0",
            "car",
            vec![
                ([14.580929068227, 2.109095149690, -0.790550684174], car, -0.000671953323),
                ([13.681094474040, 2.059091664107, -0.810483928110], car, -0.020671882666),
                ([12.781259879854, 2.009088178524, -0.830417172047], car, -0.050671611372),
            ],
        ),
        (
            "0000_1",
            "pedestrian",
            vec![
                ([9.481976498921, -3.391760483980, -0.851956982913], ped, -1.920574889485),
                ([9.281859454879, -3.291896590650, -0.842992000122], ped, -1.970578692834),
            ],
        ),
        // frame 1 is unlabeled for this track, so it ends after frame 0
        (
            "0000_2",
            "van",
            vec![([25.280783202280, -5.990601308400, -0.624301348267], van, 1.912611735862)],
        ),
    ]
}
