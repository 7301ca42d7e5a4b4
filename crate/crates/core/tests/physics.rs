use malgo::checks::{oracle_case, physics_case, physics_suite};
use malgo::systems::Family;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_tls_propagation(seed in any::<u64>()) {
        physics_case(Family::ClosedTls, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    }

    #[test]
    fn open_tls_propagation(seed in any::<u64>()) {
        physics_case(Family::OpenTls, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    }

    #[test]
    fn heisenberg_propagation(seed in any::<u64>()) {
        physics_case(Family::Heisenberg2, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    }

    #[test]
    fn exponentials_match_power_series(seed in any::<u64>(), four in any::<bool>()) {
        oracle_case(if four { 4 } else { 2 }, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    }
}

#[test]
fn seeded_suite_passes() {
    physics_suite(20, 7).unwrap();
}

#[test]
fn gate_configurations_are_rejected() {
    assert!(physics_case(Family::GateConfig, 0).is_err());
}
