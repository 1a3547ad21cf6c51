//! KITTI label and calibration round trips on a generated corpus.

use std::f64::consts::PI;

use lss_core::kitti::{
    parse_calib, parse_label_file, parse_label_line, project_to_image, serialize_calib, serialize_label,
    serialize_label_file, CameraIntrinsics,
};
use lss_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: [&str; 8] = [
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
];

fn two(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> String {
    let v: f64 = rng.random_range(lo..hi);
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// One canonical label line, DontCare roughly one time in ten.
fn canonical_line(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.1) {
        let l: f64 = rng.random_range(0.0..1000.0);
        let t: f64 = rng.random_range(0.0..300.0);
        return format!(
            "DontCare -1.00 -1 -10.00 {:.2} {:.2} {:.2} {:.2} -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00",
            l,
            t,
            l + rng.random_range(1.0..100.0),
            t + rng.random_range(1.0..60.0)
        );
    }
    let class = CLASSES[rng.random_range(0..CLASSES.len())];
    let left: f64 = rng.random_range(0.0..1100.0);
    let top: f64 = rng.random_range(0.0..300.0);
    format!(
        "{class} {} {} {} {:.2} {:.2} {:.2} {:.2} {} {} {} {} {} {} {}",
        two(rng, 0.0, 1.0),
        rng.random_range(0..=3),
        two(rng, -PI, PI),
        left,
        top,
        left + rng.random_range(1.0..200.0),
        top + rng.random_range(1.0..120.0),
        two(rng, 0.5, 4.0),
        two(rng, 0.3, 3.0),
        two(rng, 0.3, 12.0),
        two(rng, -30.0, 30.0),
        two(rng, -2.0, 3.0),
        two(rng, 2.0, 80.0),
        two(rng, -PI, PI),
    )
}

#[test]
fn thousand_line_corpus_round_trips_byte_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut text: String = (0..1000).map(|_| canonical_line(&mut rng) + "\n").collect();
    text.push_str("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n");
    let labels = parse_label_file(&text).unwrap();
    assert_eq!(labels.len(), 1001);
    let out = serialize_label_file(&labels);
    let (head, tail) = out.split_at(out.len() - out.lines().last().unwrap().len() - 1);
    assert_eq!(head, &text[..head.len()]);
    // the integer-sentinel DontCare record comes back in canonical two-decimal form
    assert_eq!(
        tail,
        "DontCare -1.00 -1 -10.00 503.89 169.71 590.61 190.13 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00\n"
    );
    assert_eq!(parse_label_file(&out).unwrap(), labels);
}

#[test]
fn negative_zero_is_canonicalized() {
    let line = "Car -0.00 0 -0.00 10.00 20.00 30.00 40.00 1.50 1.60 3.90 -0.00 1.00 20.00 -0.00";
    let label = parse_label_line(line, 1).unwrap();
    assert_eq!(
        serialize_label(&label),
        "Car 0.00 0 0.00 10.00 20.00 30.00 40.00 1.50 1.60 3.90 0.00 1.00 20.00 0.00"
    );
}

#[test]
fn malformed_lines_report_their_line_number() {
    let good = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";
    let cases = [
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70",
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59 9",
        "Car 0.00 zero -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
        "Car 0.00 7 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
        "Car 0.00 0 -1.58 614.12 173.33 587.01 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 -1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
        "Car 0.00 0 nan 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
    ];
    for bad in cases {
        let text = format!("{good}\n{good}\n{bad}\n{good}\n");
        match parse_label_file(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3, "{bad}"),
            other => panic!("{bad}: expected a parse error, got {other:?}"),
        }
    }
}

fn random_projection(rng: &mut ChaCha8Rng) -> [[f64; 4]; 3] {
    let fx = rng.random_range(500.0..900.0);
    [
        [
            fx,
            rng.random_range(-1.0..1.0),
            rng.random_range(500.0..700.0),
            rng.random_range(-50.0..50.0),
        ],
        [
            0.0,
            fx * rng.random_range(0.95..1.05),
            rng.random_range(150.0..200.0),
            rng.random_range(-1.0..1.0),
        ],
        [0.0, 0.0, 1.0, rng.random_range(-0.01..0.01)],
    ]
}

#[test]
fn projection_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let k = CameraIntrinsics::from_projection(random_projection(&mut rng)).unwrap();
        let x = [
            rng.random_range(-20.0..20.0),
            rng.random_range(-2.0..3.0),
            rng.random_range(1.0..80.0),
        ];
        let h = [x[0], x[1], x[2], 1.0];
        let y: Vec<f64> =
            k.p.iter()
                .map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum())
                .collect();
        let (u, v) = project_to_image(x, &k).unwrap();
        assert!((u - y[0] / y[2]).abs() < 1e-9 && (v - y[1] / y[2]).abs() < 1e-9);
    }
    let k = CameraIntrinsics::pinhole(700.0, 700.0, 600.0, 180.0, 1242, 375).unwrap();
    assert!(matches!(
        project_to_image([0.0, 0.0, -1.0], &k),
        Err(Error::BehindCamera(_))
    ));
}

#[test]
fn calibration_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let k = CameraIntrinsics::from_projection(random_projection(&mut rng)).unwrap();
        let text = serialize_calib(&k);
        let back = parse_calib(&text).unwrap();
        for (a, b) in back.p.iter().flatten().zip(k.p.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        // text written once is a fixed point
        assert_eq!(serialize_calib(&back), text);
        assert_eq!(parse_calib(&serialize_calib(&back)).unwrap(), back);
    }
    assert!(matches!(
        parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"),
        Err(Error::MissingP2)
    ));
}
