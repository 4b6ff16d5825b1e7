//! Run configuration: every tunable of every stage, read from TOML.

use serde::{Deserialize, Serialize};

use occrisk::guidance::GuidanceConfig;
use occrisk::metrics::{CRITICAL_TTC, DEFAULT_TTC_CAP, INTERACTION_RADIUS};
use occrisk::phantom::PhantomConfig;
use occrisk::planner::{PlannerConfig, PlannerKind};
use occrisk::risk::{RiskConfig, DEFAULT_ANCHORS};
use occrisk::trajgen::{NominalConfig, DEFAULT_MODES, DEFAULT_V_MIN};
use occrisk::visibility::{DEFAULT_MAX_RANGE, DEFAULT_RAY_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityConfig {
    pub ray_count: usize,
    pub max_range: f64,
    /// Centerline sampling step for occluded-segment extraction (m).
    pub sample_step: f64,
    /// Occluded runs shorter than this are ignored (m).
    pub min_length: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            ray_count: DEFAULT_RAY_COUNT,
            max_range: DEFAULT_MAX_RANGE,
            sample_step: 0.5,
            min_length: 2.0,
        }
    }
}

/// How phantoms move once placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomMotion {
    /// Guided reverse diffusion toward the ego.
    Guided,
    /// Rule-based baseline: hold the initial speed and heading.
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub motion: PhantomMotion,
    pub phantom: PhantomConfig,
    pub guidance: GuidanceConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            motion: PhantomMotion::Guided,
            phantom: PhantomConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Ego motion the collision layer is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionEgo {
    Log,
    Noap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskStageConfig {
    pub modes: usize,
    /// Agents slower than this at t = 0 are not predicted (m/s).
    pub v_min: f64,
    pub collision_ego: CollisionEgo,
    pub anchors: usize,
    pub field: RiskConfig,
}

impl Default for RiskStageConfig {
    fn default() -> Self {
        Self {
            modes: DEFAULT_MODES,
            v_min: DEFAULT_V_MIN,
            collision_ego: CollisionEgo::Log,
            anchors: DEFAULT_ANCHORS,
            field: RiskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanStageConfig {
    pub planners: Vec<PlannerKind>,
    pub weights: PlannerConfig,
}

impl Default for PlanStageConfig {
    fn default() -> Self {
        Self {
            planners: PlannerKind::ALL.to_vec(),
            weights: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ttc_cap: f64,
    pub critical_ttc: f64,
    pub interaction_radius: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ttc_cap: DEFAULT_TTC_CAP,
            critical_ttc: CRITICAL_TTC,
            interaction_radius: INTERACTION_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub count: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            count: occrisk::demo::DEFAULT_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every per-scenario and per-agent stream derives from it.
    pub seed: u64,
    pub visibility: VisibilityConfig,
    pub nominal: NominalConfig,
    pub generation: GenerationConfig,
    pub risk: RiskStageConfig,
    pub plan: PlanStageConfig,
    pub metrics: MetricsConfig,
    pub demo: DemoConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Every field, defaults included.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.resolved()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        assert!(RunConfig::from_toml("[risk]\nmodez = 3").is_err());
        assert_eq!(RunConfig::from_toml("seed = 3").unwrap().seed, 3);
    }
}
