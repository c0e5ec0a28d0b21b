use roleplay_core::scenario::{BorrowBuySetup, BorrowDonateSetup};
use roleplay_web::{compare_donate, profit_curve, round_trajectory};

#[test]
fn curve_peaks_at_the_closed_form() {
    let c = profit_curve(&BorrowBuySetup::desk(), 201).unwrap();
    assert_eq!(c.points.len(), 201);
    let best = c
        .points
        .iter()
        .filter(|p| p.feasible)
        .map(|p| p.profit)
        .fold(f64::NEG_INFINITY, f64::max);
    let opt = c.optimum_profit.unwrap();
    assert!(best <= opt + 1e-9 && best > opt * 0.99);
    assert!(!c.points[1].feasible);
}

#[test]
fn trajectory_ends_within_the_bound() {
    let t = round_trajectory(&BorrowBuySetup::desk(), 60).unwrap();
    assert_eq!(t.points.len(), 60);
    assert!((t.points[0].profit - t.single_round_profit).abs() < 1e-6);
    assert!(t.points.windows(2).all(|w| w[1].profit >= w[0].profit - 1e-9));
    assert!(t.points.last().unwrap().residual_stable <= t.residual_bound);
}

#[test]
fn desk_comparison_favors_the_enhanced_variant() {
    let c = compare_donate(&BorrowDonateSetup::desk(), 5, 100.0).unwrap();
    assert!(c.primitive.feasible && c.enhanced.feasible);
    assert!((c.primitive.profit - c.primitive.closed_form).abs() < 1e-6);
    assert!(c.enhanced.profit > c.primitive.profit);
}

#[test]
fn infeasible_inputs_are_reported_not_thrown() {
    let setup = BorrowDonateSetup {
        borrowable_s: 0.0,
        ..BorrowDonateSetup::desk()
    };
    let c = compare_donate(&setup, 1, 0.0).unwrap();
    assert!(!c.primitive.feasible);
    assert!(c.primitive.failure.is_some());
}
