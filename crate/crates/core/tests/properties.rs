use adele::consistency::{consistency_loss, GateMode};
use adele::earlycurve::{curve_derivative, curve_value, FitResult};
use adele::grid::{average_probmaps, Grid, LabelMask};
use adele::io::metrics_csv::round_sig6;
use adele::io::{metrics_from_csv, metrics_to_csv};
use adele::metrics::{iou, iou_el, iou_m, wrong_region};
use adele::netcore::softmax;
use adele::synthgen::{dilate, erode};
use adele::trainer::MetricsRow;
use proptest::prelude::*;

fn binary_mask(max_side: usize) -> impl Strategy<Value = LabelMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..=1, h * w).prop_map(move |d| LabelMask::new(h, w, d).unwrap())
    })
}

fn nested_masks(max_side: usize) -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        (proptest::collection::vec(0u8..=1, h * w), proptest::collection::vec(0u8..=1, h * w)).prop_map(move |(a, b)| {
            let inner: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x & y).collect();
            (LabelMask::new(h, w, inner).unwrap(), LabelMask::new(h, w, a).unwrap())
        })
    })
}

fn label_triple(max_side: usize, k: u8) -> impl Strategy<Value = (LabelMask, LabelMask, LabelMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        let v = || proptest::collection::vec(0..k, h * w);
        (v(), v(), v()).prop_map(move |(a, b, c)| {
            (LabelMask::new(h, w, a).unwrap(), LabelMask::new(h, w, b).unwrap(), LabelMask::new(h, w, c).unwrap())
        })
    })
}

fn subset(a: &LabelMask, b: &LabelMask) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| x <= y)
}

fn logits(h: usize, w: usize, k: usize) -> impl Strategy<Value = Grid> {
    proptest::collection::vec(-4.0f64..4.0, h * w * k).prop_map(move |d| Grid::new(h, w, k, d).unwrap())
}

fn opt_float() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (-1e6f64..1e6).prop_map(Some), (0.0f64..1.0).prop_map(Some)]
}

prop_compose! {
    fn metrics_row()(
        epoch in 0usize..500,
        class in proptest::option::of(0u8..8),
        a in opt_float(), b in opt_float(), c in opt_float(), d in opt_float(),
        e in opt_float(), f in opt_float(), g in opt_float(), h in opt_float(),
        triggered in any::<bool>(),
        trigger_epoch in proptest::option::of(1usize..500),
        corrected_pixels in any::<u32>(),
    ) -> MetricsRow {
        MetricsRow {
            epoch, class, train_iou: a, iou_el: b, iou_m: c, val_miou: d, test_miou: e,
            label_quality: f, triggered, trigger_epoch, corrected_pixels: u64::from(corrected_pixels),
            fit_a: g, fit_b: h, fit_c: a, fit_sse: b, consistency_loss: c, train_loss: d,
        }
    }
}

proptest! {
    #[test]
    fn dilation_is_extensive_and_erosion_anti_extensive(m in binary_mask(16), n in 0usize..=3) {
        prop_assert!(subset(&m, &dilate(&m, n)));
        prop_assert!(subset(&erode(&m, n), &m));
    }

    #[test]
    fn morphology_is_monotone_in_the_mask((small, big) in nested_masks(16), n in 0usize..=3) {
        prop_assert!(subset(&dilate(&small, n), &dilate(&big, n)));
        prop_assert!(subset(&erode(&small, n), &erode(&big, n)));
    }

    #[test]
    fn morphology_is_monotone_in_iterations(m in binary_mask(16), n in 0usize..3) {
        prop_assert!(subset(&dilate(&m, n), &dilate(&m, n + 1)));
        prop_assert!(subset(&erode(&m, n + 1), &erode(&m, n)));
    }

    #[test]
    fn iou_is_symmetric_and_bounded((a, b, _) in label_triple(16, 4), class in 0u8..4) {
        let ab = iou(&a, &b, class, None).unwrap();
        prop_assert_eq!(ab, iou(&b, &a, class, None).unwrap());
        if let Some(v) = ab {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(iou(&a, &a, class, None).unwrap().unwrap_or(1.0), 1.0);
    }

    #[test]
    fn perfect_predictions_bound_early_learning_metrics((gt, noisy, _) in label_triple(12, 4), class in 0u8..4) {
        let region = wrong_region(&gt, &noisy).unwrap();
        // predicting the truth gives iou_el 1 and iou_m 0 wherever they are defined
        if let Some(v) = iou_el(&gt, &gt, &noisy, class).unwrap() {
            prop_assert_eq!(v, 1.0);
        }
        if let Some(v) = iou_m(&gt, &gt, &noisy, class).unwrap() {
            prop_assert_eq!(v, 0.0);
        }
        if region.iter().all(|&r| !r) {
            prop_assert_eq!(iou_el(&noisy, &gt, &noisy, class).unwrap(), None);
        }
    }

    #[test]
    fn consistency_loss_is_nonnegative(
        l in proptest::collection::vec(logits(3, 4, 3), 2..=3),
        rho in 0.0f64..1.0,
        image_gate in any::<bool>(),
    ) {
        let ps: Vec<_> = l.iter().map(softmax).collect();
        let q = average_probmaps(&ps).unwrap();
        let mode = if image_gate { GateMode::Image } else { GateMode::Pixel };
        let (loss, _) = consistency_loss(&ps, &q, rho, mode).unwrap();
        prop_assert!(loss >= -1e-15 && loss.is_finite());
        let same = vec![ps[0].clone(); ps.len()];
        let (zero, _) = consistency_loss(&same, &ps[0], rho, mode).unwrap();
        prop_assert!(zero.abs() < 1e-15);
    }

    #[test]
    fn curve_derivative_matches_finite_differences(
        a in 0.05f64..1.0, b in 0.01f64..2.0, c in 0.2f64..3.0, t in prop::sample::select(vec![1.0, 2.0, 5.0, 10.0]),
    ) {
        let fit = FitResult { a, b, c, sse: 0.0, converged: true, points_used: 0 };
        let h = 1e-5;
        // differencing -a*exp(-b t^c) avoids cancellation against the asymptote a
        let g = |t: f64| -a * (-b * t.powf(c)).exp();
        let fd = (g(t + h) - g(t - h)) / (2.0 * h);
        prop_assert!((curve_value(a, b, c, t) - (a + g(t))).abs() <= 1e-12);
        let d = curve_derivative(&fit, t);
        prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1e-8), "analytic {d} vs fd {fd}");
    }

    #[test]
    fn metrics_csv_round_trips_at_declared_precision(rows in proptest::collection::vec(metrics_row(), 1..6)) {
        let text = metrics_to_csv(&rows).unwrap();
        let back = metrics_from_csv(&text).unwrap();
        let r6 = |o: Option<f64>| o.map(round_sig6);
        let expect: Vec<MetricsRow> = rows.iter().map(|r| MetricsRow {
            train_iou: r6(r.train_iou), iou_el: r6(r.iou_el), iou_m: r6(r.iou_m), val_miou: r6(r.val_miou),
            test_miou: r6(r.test_miou), label_quality: r6(r.label_quality), fit_a: r6(r.fit_a), fit_b: r6(r.fit_b),
            fit_c: r6(r.fit_c), fit_sse: r6(r.fit_sse), consistency_loss: r6(r.consistency_loss),
            train_loss: r6(r.train_loss), ..r.clone()
        }).collect();
        prop_assert_eq!(&back, &expect);
        prop_assert_eq!(metrics_to_csv(&back).unwrap(), text);
    }
}
