//! Global hazard clock, zone-delayed local hazard, per-capita risk mapping,
//! and hazard-coupled charger failure sampling.

use crate::network::Zone;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hazard clock and risk parameters for one scenario.
///
/// The global hazard is the remaining time to landfall, `landfall_h - t`.
/// Each zone sees it with a delay offset, and per-capita risk is an
/// exponential mapping of the delayed local hazard that saturates at 1 once
/// the local hazard reaches zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardModel {
    /// Hurricane landfall time in hours from episode start.
    pub landfall_h: f64,
    /// Zone offsets in hours, indexed by [`Zone::index`]: A, B, C, safe.
    pub zone_offsets_h: [f64; 4],
    /// Risk growth parameter in hours.
    pub tau_h: f64,
    /// Per-step charger failure coefficient (probability scale).
    pub kappa: f64,
}

impl Default for HazardModel {
    fn default() -> Self {
        Self {
            landfall_h: 48.0,
            zone_offsets_h: [0.0, 6.0, 9.0, 12.0],
            tau_h: 12.0,
            kappa: 0.002,
        }
    }
}

impl HazardModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.landfall_h <= 0.0 {
            return Err("hazard.landfall_h must be positive".into());
        }
        if self.tau_h <= 0.0 {
            return Err("hazard.tau_h must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err("hazard.kappa must lie in [0, 1]".into());
        }
        if self.zone_offsets_h.iter().any(|&d| d < 0.0) {
            return Err("hazard.zone_offsets_h must be non-negative".into());
        }
        Ok(())
    }

    /// Global hazard H(t): remaining hours to landfall (may go negative).
    pub fn global_hazard(&self, t_h: f64) -> f64 {
        self.landfall_h - t_h
    }

    /// Local hazard for a zone: H(t) plus the zone's delay offset.
    pub fn local_hazard(&self, zone: Zone, t_h: f64) -> f64 {
        self.global_hazard(t_h) + self.zone_offsets_h[zone.index()]
    }

    /// Per-capita risk exposure: exp(-H_i(t)/tau) while the local hazard is
    /// positive, saturating at 1 afterwards. Always in (0, 1].
    pub fn per_capita_risk(&self, zone: Zone, t_h: f64) -> f64 {
        let h = self.local_hazard(zone, t_h);
        if h > 0.0 {
            (-h / self.tau_h).exp()
        } else {
            1.0
        }
    }

    /// One failure-sampling step for a station's operational chargers. Each
    /// charger independently fails with probability `kappa * R_i(t)`; failed
    /// chargers never recover within an episode.
    pub fn sample_charger_failures<R: Rng>(
        &self,
        operational: u32,
        zone: Zone,
        t_h: f64,
        rng: &mut R,
    ) -> u32 {
        if operational == 0 || self.kappa == 0.0 {
            return operational;
        }
        let p = (self.kappa * self.per_capita_risk(zone, t_h)).min(1.0);
        let mut surviving = 0;
        for _ in 0..operational {
            if rng.random::<f64>() >= p {
                surviving += 1;
            }
        }
        surviving
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn local_hazard_examples() {
        let m = HazardModel::default();
        assert_eq!(m.local_hazard(Zone::A, 0.0), 48.0);
        assert_eq!(m.local_hazard(Zone::C, 48.0), 9.0);
        assert_eq!(m.local_hazard(Zone::A, 54.0), -6.0);
    }

    #[test]
    fn risk_examples() {
        let m = HazardModel::default();
        // Local hazard exactly zero -> saturated risk.
        assert_eq!(m.per_capita_risk(Zone::A, 48.0), 1.0);
        // H_i = tau -> e^{-1}.
        let t = m.landfall_h - m.tau_h;
        assert!((m.per_capita_risk(Zone::A, t) - (-1.0f64).exp()).abs() < 1e-12);
        // tau = 12, zone A, t = 24 -> exp(-2).
        assert!((m.per_capita_risk(Zone::A, 24.0) - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn failure_sampling_edge_cases() {
        let mut rng = crate::rng::stream(1, 2);
        let zero = HazardModel { kappa: 0.0, ..Default::default() };
        assert_eq!(zero.sample_charger_failures(10, Zone::A, 10.0, &mut rng), 10);
        let certain = HazardModel { kappa: 1.0, ..Default::default() };
        // At saturation R = 1, so p = 1: everything fails.
        assert_eq!(certain.sample_charger_failures(10, Zone::A, 48.0, &mut rng), 0);
    }

    #[test]
    fn failure_rate_matches_binomial_mean() {
        // kappa=0.002, R=0.5 -> p=0.001 per charger; 10 chargers over 1e5
        // trials should average 0.01 failures/step within a 3-sigma band.
        let m = HazardModel { kappa: 0.002, tau_h: 12.0, ..Default::default() };
        // Choose t so R = 0.5: H = tau * ln 2.
        let t = m.landfall_h - m.tau_h * std::f64::consts::LN_2;
        assert!((m.per_capita_risk(Zone::A, t) - 0.5).abs() < 1e-12);
        let mut rng = crate::rng::stream(42, 2);
        let trials = 100_000;
        let mut failures = 0u64;
        for _ in 0..trials {
            failures += u64::from(10 - m.sample_charger_failures(10, Zone::A, t, &mut rng));
        }
        let mean = failures as f64 / trials as f64;
        let p = 0.001;
        let sigma = (10.0 * p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (mean - 0.01).abs() <= 3.0 * sigma,
            "mean {mean} outside 0.01 +/- {}",
            3.0 * sigma
        );
    }

    proptest! {
        #[test]
        fn risk_monotone_in_time_and_bounded(t1 in 0.0..60.0f64, dt in 0.0..20.0f64) {
            let m = HazardModel::default();
            for zone in Zone::ALL {
                let r1 = m.per_capita_risk(zone, t1);
                let r2 = m.per_capita_risk(zone, t1 + dt);
                prop_assert!(r1 > 0.0 && r1 <= 1.0);
                prop_assert!(r2 >= r1);
            }
        }

        #[test]
        fn earlier_zone_is_at_least_as_risky(t in 0.0..60.0f64) {
            let m = HazardModel::default();
            // Offsets increase A -> B -> C -> safe, so risk decreases.
            prop_assert!(m.per_capita_risk(Zone::A, t) >= m.per_capita_risk(Zone::B, t));
            prop_assert!(m.per_capita_risk(Zone::B, t) >= m.per_capita_risk(Zone::C, t));
            prop_assert!(m.per_capita_risk(Zone::C, t) >= m.per_capita_risk(Zone::Safe, t));
        }

        #[test]
        fn operational_count_never_increases(n in 0u32..20, t in 0.0..48.0f64, seed in any::<u64>()) {
            let m = HazardModel { kappa: 0.05, ..Default::default() };
            let mut rng = crate::rng::stream(seed, 2);
            let after = m.sample_charger_failures(n, Zone::B, t, &mut rng);
            prop_assert!(after <= n);
        }
    }
}
