//! Result records written by the command-line tools.

use serde::{Deserialize, Serialize};

use crate::simulator::EpisodeResult;

/// Version tag stamped into every emitted file.
pub const SCHEMA_VERSION: &str = "tethernet/1";

/// Summary of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub target_z_m: f64,
    /// Settled capture index; `null` after divergence.
    #[serde(rename = "I_star_cqi")]
    pub cqi: Option<f64>,
    #[serde(rename = "N_L")]
    pub locked_pairs: u32,
    pub fuel_consumed_kg: f64,
    pub m_f_kg: f64,
    pub t_sim_s: f64,
    pub success: bool,
    pub diverged: bool,
}

impl ResultRecord {
    pub fn new(scenario_hash: &str, seed: u64, r: &EpisodeResult) -> Self {
        Self {
            schema: SCHEMA_VERSION.into(),
            scenario_hash: scenario_hash.into(),
            seed,
            target_z_m: r.target_z,
            cqi: r.settled_cqi.is_finite().then_some(r.settled_cqi),
            locked_pairs: r.locked_pairs,
            fuel_consumed_kg: r.fuel_consumed,
            m_f_kg: r.final_mu_mass,
            t_sim_s: r.sim_time,
            success: r.success,
            diverged: r.diverged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_and_round_trip() {
        let r = ResultRecord {
            schema: SCHEMA_VERSION.into(),
            scenario_hash: "ab".into(),
            seed: 3,
            target_z_m: -30.25,
            cqi: Some(0.1 + 0.2),
            locked_pairs: 12,
            fuel_consumed_kg: 0.1815,
            m_f_kg: 2.3185,
            t_sim_s: 50.0,
            success: true,
            diverged: false,
        };
        let text = serde_json::to_string(&r).unwrap();
        for key in ["\"I_star_cqi\"", "\"N_L\"", "\"fuel_consumed_kg\"", "\"m_f_kg\"", "\"t_sim_s\"", "\"schema\""] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        assert_eq!(serde_json::from_str::<ResultRecord>(&text).unwrap(), r);
        let diverged = ResultRecord { cqi: None, ..r };
        let text = serde_json::to_string(&diverged).unwrap();
        assert!(text.contains("\"I_star_cqi\":null"));
        assert_eq!(serde_json::from_str::<ResultRecord>(&text).unwrap(), diverged);
    }
}
