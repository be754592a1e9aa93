mod common;

use common::*;
use e2edrive::dataset::{Sample, Source};
use e2edrive::vision::*;
use proptest::prelude::*;

#[test]
fn checkerboard_downscale_matches_bilinear_oracle() {
    for cell in [1, 2, 3, 5] {
        let src = checkerboard(64, 48, cell);
        let got = resize_bilinear(&src, 32, 24).unwrap();
        assert_eq!(got.pixels(), &bilinear_oracle(&src, 32, 24)[..], "cell {cell}");
    }
}

#[test]
fn non_integer_resize_within_one_step_of_oracle() {
    let src = checkerboard(320, 126, 7);
    let got = resize_bilinear(&src, MODEL_WIDTH, MODEL_HEIGHT).unwrap();
    let want = bilinear_oracle(&src, MODEL_WIDTH, MODEL_HEIGHT);
    assert!(got.pixels().iter().zip(&want).all(|(&a, &b)| a.abs_diff(b) <= 1));
}

#[test]
fn red_maps_to_reference_yuv() {
    assert_eq!(rgb_to_yuv_pixel([255, 0, 0]), [76, 85, 255]);
    assert_eq!(rgb_to_yuv_pixel([255, 255, 255]), [255, 128, 128]);
    assert_eq!(rgb_to_yuv_pixel([0, 0, 0]), [0, 128, 128]);
}

#[test]
fn ten_large_steer_samples_double() {
    let s: Vec<_> = (0..10).map(|i| sample_from(i, 0.5, 0.1)).collect();
    assert_eq!(balance(&s, &BalanceConfig::default(), 3).len(), 20);
    assert!(balance(&[], &BalanceConfig::default(), 3).is_empty());
}

fn sample_from(seed: u64, steering: f32, throttle: f32) -> Sample {
    let mut r = rng(seed);
    let px = random_vec(&mut r, 5 * 4 * 3).iter().map(|v| ((v + 1.0) * 127.0) as u8).collect();
    Sample {
        frame: RawFrame::new(5, 4, px).unwrap(),
        steering,
        throttle,
        source: Source::ExpertRecovery,
        timestamp: seed as f64,
    }
}

fn arb_frame() -> impl Strategy<Value = RawFrame> {
    (2usize..24, 2usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| RawFrame::new(w, h, px).unwrap())
    })
}

fn arb_labels() -> impl Strategy<Value = Vec<(f32, f32)>> {
    prop::collection::vec((-1.0f32..=1.0, -1.0f32..=1.0), 0..1000)
}

proptest! {
    #[test]
    fn flip_is_an_involution(frame in arb_frame(), steering in -1.0f32..=1.0, throttle in -1.0f32..=1.0) {
        let s = Sample { frame, steering, throttle, source: Source::Human, timestamp: 1.5 };
        let once = flip_horizontal(&s);
        prop_assert_eq!(once.steering, -steering);
        prop_assert_eq!(once.throttle, throttle);
        prop_assert_eq!(flip_horizontal(&once), s);
    }

    #[test]
    fn yuv_round_trip_within_two(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let back = yuv_to_rgb_pixel(rgb_to_yuv_pixel([r, g, b]));
        for (x, y) in back.iter().zip([r, g, b]) {
            prop_assert!(x.abs_diff(y) <= 2, "{:?} -> {:?}", [r, g, b], back);
        }
    }

    #[test]
    fn large_steer_count_doubles(labels in arb_labels(), seed in any::<u64>()) {
        let out = balance_indices(&labels, &BalanceConfig::default(), seed);
        let big = |&(s, _): &(f32, f32)| s.abs() > 0.3;
        let before = labels.iter().filter(|l| big(l)).count();
        let after = out.iter().filter(|&&i| big(&labels[i])).count();
        prop_assert_eq!(after, 2 * before);
        for (i, l) in labels.iter().enumerate() {
            let n = out.iter().filter(|&&j| j == i).count();
            if big(l) {
                prop_assert_eq!(n, 2);
            } else if l.1 > 0.0 {
                prop_assert!(n <= 1);
            } else {
                prop_assert_eq!(n, 1);
            }
        }
    }

    #[test]
    fn keep_all_without_large_steer_is_a_permutation(labels in prop::collection::vec((-0.3f32..=0.3, -1.0f32..=1.0), 0..1000), seed in any::<u64>()) {
        let cfg = BalanceConfig { p_keep: 1.0, ..BalanceConfig::default() };
        let mut out = balance_indices(&labels, &cfg, seed);
        out.sort_unstable();
        prop_assert_eq!(out, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn preprocess_is_total_and_deterministic(frame in arb_frame()) {
        let region = CropRegion::full(frame.width(), frame.height());
        let a = preprocess(&frame, &region).unwrap();
        prop_assert_eq!(a.shape(), [3, MODEL_HEIGHT, MODEL_WIDTH]);
        prop_assert_eq!(preprocess(&frame, &region).unwrap(), a);
    }

    #[test]
    fn brightness_only_darkens(frame in arb_frame(), f in 0.4f32..=1.0) {
        let out = adjust_brightness(&frame, f).unwrap();
        prop_assert!(out.pixels().iter().zip(frame.pixels()).all(|(a, b)| a <= b));
    }
}
