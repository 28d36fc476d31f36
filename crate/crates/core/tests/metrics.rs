use firecast_core::dataset::FireFrame;
use firecast_core::metrics::*;
use proptest::prelude::*;

const TAU: f32 = 15.0 / 255.0;
const N: usize = 12;

/// Frames with a burned blob and sub-threshold noise elsewhere.
fn frame() -> impl Strategy<Value = FireFrame> {
    (
        prop::collection::vec(0.0f32..0.05, N * N),
        2usize..10,
        2usize..10,
        1usize..4,
        0.2f32..1.0,
    )
        .prop_map(|(noise, r0, c0, radius, level)| {
            let mut data: Vec<f32> = noise.iter().map(|v| v.min(TAU * 0.9)).collect();
            for r in 0..N {
                for c in 0..N {
                    if r.abs_diff(r0) <= radius && c.abs_diff(c0) <= radius {
                        data[r * N + c] = level - 0.01 * (r + c) as f32 / N as f32;
                    }
                }
            }
            FireFrame::new(N, N, data).unwrap()
        })
}

fn near(mask: &BinaryMask, r: usize, c: usize, reach: usize) -> bool {
    (0..N * N).any(|i| mask.data[i] && (i / N).abs_diff(r) <= reach && (i % N).abs_diff(c) <= reach)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_values(a in frame()) {
        let m = FrameMetrics::compute(&a, &a, TAU).unwrap();
        prop_assert_eq!(m.mse.value, 0.0);
        prop_assert!((m.ssim.value - 1.0).abs() <= 1e-9);
        prop_assert_eq!(m.bmae.value, 0.0);
        prop_assert!(m.flags().is_empty());
    }

    #[test]
    fn ssim_is_symmetric(a in frame(), b in frame()) {
        let ab = ssim_masked(&a, &b, TAU, SSIM_WINDOW).unwrap().value;
        let ba = ssim_masked(&b, &a, TAU, SSIM_WINDOW).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn changes_outside_the_masks_leave_scores_alone(a in frame(), b in frame(), fresh in prop::collection::vec(0.0f32..0.05, N * N)) {
        let union = burned_mask(&a, TAU).union(&burned_mask(&b, TAU));
        let (mut a2, mut b2) = (a.clone(), b.clone());
        let mut mse_only = (a.clone(), b.clone());
        for i in 0..N * N {
            if union.data[i] {
                continue;
            }
            let v = fresh[i].min(TAU * 0.9);
            mse_only.1.data[i] = v;
            if !near(&union, i / N, i % N, SSIM_WINDOW / 2) {
                a2.data[i] = v;
                b2.data[i] = v * 0.5;
            }
        }
        let before = FrameMetrics::compute(&a, &b, TAU).unwrap();
        let after = FrameMetrics::compute(&a2, &b2, TAU).unwrap();
        prop_assert_eq!(before.ssim.value, after.ssim.value);
        let loose = FrameMetrics::compute(&mse_only.0, &mse_only.1, TAU).unwrap();
        prop_assert_eq!(before.mse.value, loose.mse.value);
        prop_assert_eq!(before.bmae.value, loose.bmae.value);
    }

    #[test]
    fn boundary_lies_inside_its_mask(a in frame()) {
        let m = burned_mask(&a, TAU);
        let b = extract_boundary(&m);
        prop_assert!(b.is_subset(&m));
        prop_assert!(b.count() <= m.count());
    }

    #[test]
    fn interior_changes_leave_bmae_alone(a in frame(), b in frame(), bump in 0.0f32..0.1) {
        let (bt, bp) = (extract_boundary(&burned_mask(&a, TAU)), extract_boundary(&burned_mask(&b, TAU)));
        let ring = bt.union(&bp);
        let mut a2 = a.clone();
        for i in 0..N * N {
            if a.data[i] >= TAU && !ring.data[i] {
                a2.data[i] = (a.data[i] + bump).min(1.0);
            }
        }
        prop_assert_eq!(bmae(&a, &b, TAU).unwrap().value, bmae(&a2, &b, TAU).unwrap().value);
    }
}

#[test]
fn full_grid_boundary_is_its_ring() {
    let m = BinaryMask { rows: 5, cols: 7, data: vec![true; 35] };
    let b = extract_boundary(&m);
    assert_eq!(b.count(), 2 * 5 + 2 * 7 - 4);
    for r in 0..5 {
        for c in 0..7 {
            assert_eq!(b.data[r * 7 + c], r == 0 || c == 0 || r == 4 || c == 6);
        }
    }
}

#[test]
fn square_fixture() {
    let mut t = FireFrame::zeros(7, 7);
    for r in 2..5 {
        for c in 2..5 {
            t.data[r * 7 + c] = 1.0;
        }
    }
    assert_eq!(boundary_length(&t, TAU), 8);
    let empty = FireFrame::zeros(7, 7);
    assert_eq!(bmae(&t, &empty, TAU).unwrap().value, 1.0);
    let mut shifted = FireFrame::zeros(7, 7);
    for r in 2..5 {
        for c in 3..6 {
            shifted.data[r * 7 + c] = 1.0;
        }
    }
    assert_eq!(shifted.burned(), t.burned());
    assert!(bmae(&t, &shifted, TAU).unwrap().value > 0.0);
}

#[test]
fn rows_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = FireFrame::zeros(6, 6);
    a.data[14] = 0.8;
    let m = FrameMetrics::compute(&a, &FireFrame::zeros(6, 6), TAU).unwrap();
    let rows = vec![MetricsRow::new(3, 4, "cgan", &m), MetricsRow::new(3, 8, "ae", &m)];
    let path = dir.path().join("metrics.csv");
    write_rows(&path, &rows).unwrap();
    assert_eq!(read_rows(&path).unwrap(), rows);
}
