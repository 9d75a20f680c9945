mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpp_core::dispatch::*;

/// Prices drawn from a small set so that ties are common.
fn tied_prices(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(1..6) as f64 * 0.02).collect()
}

fn distinct_prices(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.01..0.3)).collect()
}

#[test]
fn ev_flags_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..600 {
        let n = rng.random_range(1..30);
        let prices = if case % 2 == 0 { tied_prices(&mut rng, n) } else { distinct_prices(&mut rng, n) };
        let first = rng.random_range(0..n);
        let last = rng.random_range(first..n);
        let needed_h = rng.random_range(0.0..(last - first + 2) as f64);
        let k = (needed_h - 1e-9).max(0.0).ceil() as usize;
        let mask = ev_pricing_factor(&prices, first, last, needed_h, 1.0).unwrap();
        assert_eq!(mask, support::lowest_k(&prices, first, last, k), "case {case}");
        let flag = ev_pricing_flag(&prices, first, last, needed_h, 1.0).unwrap();
        assert_eq!(flag, mask[0], "case {case}");
    }
}

#[test]
fn ev_flags_match_printed_exchange_sort() {
    // The printed sort is not stable, so ties are excluded here.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let n = rng.random_range(1..30);
        let prices = distinct_prices(&mut rng, n);
        let first = rng.random_range(0..n);
        let last = rng.random_range(first..n);
        let k = rng.random_range(0..=last - first + 1);
        let flag = ev_pricing_flag(&prices, first, last, k as f64, 1.0).unwrap();
        assert_eq!(flag, support::literal_ev_pricing(&prices, first, last, k), "case {case}");
    }
}

#[test]
fn load_flags_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..600 {
        let n = rng.random_range(1..30);
        let prices = if case % 2 == 0 { tied_prices(&mut rng, n) } else { distinct_prices(&mut rng, n) };
        let first = rng.random_range(0..n);
        let last = rng.random_range(first..n);
        let mask = cl_pricing_factor(&prices, first, last).unwrap();
        assert_eq!(mask, support::highest_half(&prices, first, last), "case {case}");
        let full = cl_flags(&prices, first, last + 1).unwrap();
        assert!(full[..first].iter().chain(&full[last + 1..]).all(|&f| !f));
        assert_eq!(&full[first..=last], &mask[..]);
    }
}

#[test]
fn ev_mode_table_is_exhaustive() {
    for rho in [0.0, 0.5, 0.999, 1.0, 1.7] {
        for cheap in [false, true] {
            for connected in [false, true] {
                for soc in [0.3, 0.6, 0.9] {
                    let full = soc >= 0.9;
                    let got = ev_mode_select(rho, cheap, connected, soc, 0.9);
                    assert_eq!(got, support::ev_mode_truth(rho >= 1.0, cheap, connected, full), "rho {rho} p {cheap} c {connected} soc {soc}");
                }
            }
        }
    }
}

#[test]
fn battery_mode_table_is_exhaustive() {
    let bounds = (0.3, 0.9);
    for rho in [0.0, 0.5, 1.0, 2.0] {
        for irradiance in [0.0, 0.05, 0.1, 0.8] {
            for soc in [0.3, 0.6, 0.9] {
                let got = battery_mode_select(rho, irradiance, 0.1, soc, bounds);
                let expected = support::battery_mode_truth(rho >= 1.0, irradiance >= 0.1, soc >= 0.9, soc <= 0.3);
                assert_eq!(got, expected, "rho {rho} s {irradiance} soc {soc}");
            }
        }
    }
}

#[test]
fn priority_hand_value() {
    let rho = ev_priority_factor(0.4, 0.9, 50.0, 0.9, 10.0, 0.0, 6.0, 24.0);
    assert!((required_charge_time_h(0.4, 0.9, 50.0, 0.9, 10.0) - 2.7778).abs() < 1e-4);
    assert!((rho - 0.9111).abs() < 1e-4);
}

fn slots_strategy() -> impl Strategy<Value = Vec<DispatchSlot>> {
    prop::collection::vec((0.0f64..1.5, -10.0f64..0.0, 0.0f64..10.0), 0..12).prop_map(|v| {
        v.into_iter()
            .map(|(rho, min_kw, max_kw)| DispatchSlot {
                rho,
                min_kw,
                max_kw,
                power_kw: 0.0,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn allocation_respects_slot_limits(mut slots in slots_strategy(), fraction in 0.0f64..1.0) {
        let mut order = Vec::new();
        let total = allocate_by_priority(&mut slots, &mut order, fraction);
        let lo: f64 = slots.iter().map(|s| s.min_kw).sum();
        let hi: f64 = slots.iter().map(|s| s.max_kw).sum();
        prop_assert!((total - (lo + fraction * (hi - lo))).abs() < 1e-9);
        for s in &slots {
            prop_assert!(s.power_kw >= s.min_kw - 1e-12 && s.power_kw <= s.max_kw + 1e-12);
        }
        // A less urgent slot only gets headroom once every more urgent one is full.
        for a in &slots {
            for b in &slots {
                if a.rho > b.rho && b.power_kw > b.min_kw + 1e-12 {
                    prop_assert!(a.power_kw >= a.max_kw - 1e-9);
                }
            }
        }
    }

    #[test]
    fn curtailment_never_creates_a_new_peak(nominal in prop::collection::vec(0.0f64..500.0, 1..48)) {
        let b = curtailment_bounds(&nominal);
        let peak = nominal.iter().copied().fold(0.0, f64::max);
        for t in 0..nominal.len() {
            prop_assert!(nominal[t] - b.lower_kw[t] <= peak + 1e-9);
            prop_assert!(b.upper_kw[t] <= nominal[t] + 1e-12 && b.lower_kw[t] <= 0.0);
        }
    }

    #[test]
    fn power_window_keeps_soc_in_range(
        soc in 0.3f64..0.9,
        kwh in 10.0f64..100.0,
        rated in 1.0f64..50.0,
        class in 0usize..4,
    ) {
        let class = [PowerClass::Idle, PowerClass::Uncoordinated, PowerClass::Charge, PowerClass::Discharge][class];
        let (lo, hi) = feasible_power_range(class, rated, soc, (0.3, 0.9), kwh, (0.9, 0.9), 1.0);
        prop_assert!(lo <= hi + 1e-12);
        for p in [lo, hi] {
            let next = if p >= 0.0 { soc + 0.9 * p / kwh } else { soc + p / (0.9 * kwh) };
            prop_assert!((0.3 - 1e-9..=0.9 + 1e-9).contains(&next));
        }
    }
}
