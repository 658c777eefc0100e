//! Experiment description: geometry, targets, sources and all parameters.
//!
//! A [`Config`] is the in-memory form of a scenario file. The file is JSON
//! with the sections `domain`, `boundary`, `grid_h`, `obstacles`, `targets`,
//! `sources`, `model`, `population`, `integrator`, `measurement` and
//! `duration`. Absent parameter sections fall back to their defaults.

mod presets;
mod spawn;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Obstacle, Polygon, Rect, Vec2};
use crate::integrator::IntegratorConfig;
use crate::measurement::MeasurementConfig;
use crate::smoothmath::{BumpParams, LogisticParams};

pub use presets::{bidirectional_walkway, bottleneck, bottleneck_opening, corridor, standoff, PresetKind, BOTTLENECK_LENGTH};
pub use spawn::{draw_desired_speed, spawn_agents, spawn_all, MIN_SPAWN_SPACING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Closed,
    PeriodicX,
}

/// Model constants. Defaults are the calibrated single-layer values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Viewing-angle constant.
    pub kappa: f64,
    /// Relaxation time (s).
    pub tau: f64,
    pub ped_height: f64,
    /// Support of the pedestrian repulsion (m).
    pub ped_radius: f64,
    pub obstacle_height: f64,
    /// Support of the obstacle repulsion (m).
    pub obstacle_radius: f64,
    /// Inner radius of the `h_eps` kernel (m).
    pub eps: f64,
    /// Maximum density (P/m^2).
    pub rho_max: f64,
    /// Support radius of the floor-field mollifier (m).
    pub moll_radius: f64,
    pub logistic_midpoint: f64,
    pub logistic_steepness: f64,
    /// Pairs closer than this are logged as collisions (m).
    pub collision_threshold: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            kappa: 0.6,
            tau: 0.5,
            ped_height: 3.59,
            ped_radius: 0.70,
            obstacle_height: 9.96,
            obstacle_radius: 0.25,
            eps: 0.1,
            rho_max: 7.0,
            moll_radius: 0.5,
            logistic_midpoint: 0.3,
            logistic_steepness: 0.03,
            collision_threshold: 0.3,
        }
    }
}

impl ModelParams {
    /// The two-layer calibration (`R_p = 1.0`).
    pub fn second_layer() -> Self {
        Self {
            ped_height: 1.79,
            ped_radius: 1.0,
            obstacle_height: 11.3,
            obstacle_radius: 0.25,
            ..Self::default()
        }
    }

    pub fn pedestrian_bump(&self) -> BumpParams {
        BumpParams {
            radius: self.ped_radius,
            height: self.ped_height,
        }
    }

    pub fn obstacle_bump(&self) -> BumpParams {
        BumpParams {
            radius: self.obstacle_radius,
            height: self.obstacle_height,
        }
    }

    pub fn logistic(&self) -> LogisticParams {
        LogisticParams {
            midpoint: self.logistic_midpoint,
            steepness: self.logistic_steepness,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("tau", self.tau),
            ("ped_height", self.ped_height),
            ("ped_radius", self.ped_radius),
            ("obstacle_height", self.obstacle_height),
            ("obstacle_radius", self.obstacle_radius),
            ("eps", self.eps),
            ("rho_max", self.rho_max),
            ("moll_radius", self.moll_radius),
            ("logistic_steepness", self.logistic_steepness),
            ("collision_threshold", self.collision_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("model.{name}"), format!("must be positive, got {v}")));
            }
        }
        if !self.logistic_midpoint.is_finite() {
            return Err(Error::config("model.logistic_midpoint", "must be finite"));
        }
        if self.eps >= self.ped_radius {
            return Err(Error::config("model.eps", "must be smaller than ped_radius"));
        }
        if self.eps >= self.obstacle_radius {
            return Err(Error::config("model.eps", "must be smaller than obstacle_radius"));
        }
        Ok(())
    }

    /// Set a field by its file key, as used by `--param key=value`.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let mut json = serde_json::to_value(*self).expect("model params serialize");
        let obj = json.as_object_mut().expect("object");
        if !obj.contains_key(key) {
            let keys: Vec<&String> = obj.keys().collect();
            return Err(Error::config(
                format!("model.{key}"),
                format!("unknown parameter; known keys: {keys:?}"),
            ));
        }
        obj.insert(key.to_string(), serde_json::json!(value));
        *self = serde_json::from_value(json).map_err(|e| Error::config(format!("model.{key}"), e.to_string()))?;
        Ok(())
    }
}

/// Desired-speed distribution: normal, redrawn until inside `[v_min, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationParams {
    pub v_mean: f64,
    pub v_std: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub seed: u64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        Self {
            v_mean: 1.34,
            v_std: 0.26,
            v_min: 0.3,
            v_max: 3.0,
            seed: 0,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(Error::config("population.v_min", "need 0 < v_min < v_max"));
        }
        if !(self.v_std >= 0.0 && self.v_std.is_finite()) {
            return Err(Error::config("population.v_std", "must be non-negative"));
        }
        if !self.v_mean.is_finite() {
            return Err(Error::config("population.v_mean", "must be finite"));
        }
        if self.v_std == 0.0 && !(self.v_min..=self.v_max).contains(&self.v_mean) {
            return Err(Error::config("population.v_mean", "outside [v_min, v_max] with zero spread"));
        }
        Ok(())
    }
}

/// A destination. Closed domains use a polygon; periodic corridors use a
/// constant walking heading instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Polygon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<[f64; 2]>,
}

impl Target {
    pub fn heading_vec(&self) -> Option<Vec2> {
        self.heading.map(|[x, y]| Vec2::new(x, y).normalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    /// Rejection sampling with a minimum pairwise spacing.
    Random {
        #[serde(default = "default_spacing")]
        min_spacing: f64,
    },
    /// Randomly chosen cells of a regular grid filling the region, jittered.
    Lattice {
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    /// Exact positions; `count` must match.
    Explicit {
        positions: Vec<[f64; 2]>,
        #[serde(default)]
        pinned: bool,
    },
}

fn default_spacing() -> f64 {
    MIN_SPAWN_SPACING
}

fn default_jitter() -> f64 {
    0.1
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Random {
            min_spacing: MIN_SPAWN_SPACING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub region: Rect,
    pub count: usize,
    pub target: u32,
    #[serde(default)]
    pub placement: Placement,
    /// Fixed desired speed for every agent of this source instead of a draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub domain: Rect,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default = "default_grid_h")]
    pub grid_h: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub targets: Vec<Target>,
    #[serde(default)]
    pub sources: Vec<Source>,
}

fn default_boundary() -> Boundary {
    Boundary::Closed
}

fn default_grid_h() -> f64 {
    0.1
}

impl Scenario {
    pub fn target(&self, id: u32) -> Result<&Target> {
        self.targets.iter().find(|t| t.id == id).ok_or_else(|| Error::UnknownTarget {
            requested: id,
            available: self.targets.iter().map(|t| t.id).collect(),
        })
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::PeriodicX
    }

    pub fn validate(&self) -> Result<()> {
        if !self.domain.is_valid() {
            return Err(Error::config(
                "domain",
                "needs finite bounds with x_max > x_min and y_max > y_min",
            ));
        }
        if !(self.grid_h.is_finite() && self.grid_h > 0.0) {
            return Err(Error::config("grid_h", "must be positive"));
        }
        if self.targets.is_empty() {
            return Err(Error::config("targets", "at least one target is required"));
        }
        let slack = 1e-9;
        let inside = self.domain.expanded(slack);
        for (i, t) in self.targets.iter().enumerate() {
            if self.targets[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::config(format!("targets[{i}].id"), format!("duplicate id {}", t.id)));
            }
            match (&t.polygon, t.heading) {
                (Some(poly), _) => {
                    if poly.vertices.len() < 3 || poly.area() <= 0.0 {
                        return Err(Error::config(
                            format!("targets[{i}].polygon"),
                            "needs at least three vertices and positive area",
                        ));
                    }
                    if !inside.contains_rect(&poly.bounding_box()) {
                        return Err(Error::config(
                            format!("targets[{i}]"),
                            "polygon lies outside the domain (targets must be inside the domain)",
                        ));
                    }
                }
                (None, Some([hx, hy])) => {
                    if !(hx.is_finite() && hy.is_finite()) || hx.hypot(hy) == 0.0 {
                        return Err(Error::config(format!("targets[{i}].heading"), "must be a non-zero vector"));
                    }
                }
                (None, None) => {
                    return Err(Error::config(format!("targets[{i}]"), "needs a polygon or a heading"));
                }
            }
            if self.is_periodic() && t.heading.is_none() {
                return Err(Error::config(
                    format!("targets[{i}].heading"),
                    "periodic-x corridors steer by heading",
                ));
            }
            if !self.is_periodic() && t.polygon.is_none() {
                return Err(Error::config(
                    format!("targets[{i}].polygon"),
                    "closed domains need target polygons",
                ));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if let Obstacle::Polygon(p) = o {
                if p.vertices.len() < 3 {
                    return Err(Error::config(
                        format!("obstacles[{i}]"),
                        "polygon needs at least three vertices",
                    ));
                }
                if self.is_periodic() {
                    return Err(Error::config(
                        format!("obstacles[{i}]"),
                        "periodic-x is only valid for rectangular corridors bounded by walls",
                    ));
                }
            }
            if !inside.contains_rect(&o.bounding_box()) {
                return Err(Error::config(format!("obstacles[{i}]"), "lies outside the domain"));
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !s.region.is_valid() || !inside.contains_rect(&s.region) {
                return Err(Error::config(
                    format!("sources[{i}].region"),
                    "must be a valid rectangle inside the domain",
                ));
            }
            self.target(s.target)
                .map_err(|_| Error::config(format!("sources[{i}].target"), format!("unknown target id {}", s.target)))?;
            match &s.placement {
                Placement::Random { min_spacing } if !(*min_spacing >= 0.0) => {
                    return Err(Error::config(
                        format!("sources[{i}].placement.min_spacing"),
                        "must be non-negative",
                    ));
                }
                Placement::Lattice { jitter } if !(0.0..0.5).contains(jitter) => {
                    return Err(Error::config(
                        format!("sources[{i}].placement.jitter"),
                        "must lie in [0, 0.5)",
                    ));
                }
                Placement::Explicit { positions, .. } if positions.len() != s.count => {
                    return Err(Error::config(
                        format!("sources[{i}].placement.positions"),
                        "length must equal count",
                    ));
                }
                _ => {}
            }
            if let Some(v) = s.desired_speed {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::config(format!("sources[{i}].desired_speed"), "must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

/// A complete, validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub population: PopulationParams,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    /// Simulated time (s).
    #[serde(default = "default_duration")]
    pub duration: f64,
}

const CONFIG_KEYS: [&str; 12] = [
    "name",
    "domain",
    "boundary",
    "grid_h",
    "obstacles",
    "targets",
    "sources",
    "model",
    "population",
    "integrator",
    "measurement",
    "duration",
];

fn default_duration() -> f64 {
    180.0
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.model.validate()?;
        self.population.validate()?;
        self.integrator.validate()?;
        self.measurement.validate()?;
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::config("duration", "must be non-negative"));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(obj) = value.as_object() {
            if let Some(key) = obj.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
                return Err(serde::de::Error::custom(format!(
                    "unknown field `{key}`, expected one of {CONFIG_KEYS:?}"
                )));
            }
        }
        serde_json::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn total_agents(&self) -> usize {
        self.scenario.sources.iter().map(|s| s.count).sum()
    }
}

/// Read, parse and validate a scenario file.
///
/// A run manifest (`run.json`) is accepted too: its `config` member is used.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let parse_err = |source| Error::Parse {
        path: path.to_path_buf(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let config: Config = match value.get("config") {
        Some(inner) if value.get("domain").is_none() => serde_json::from_value(inner.clone()).map_err(parse_err)?,
        _ => serde_json::from_value(value).map_err(parse_err)?,
    };
    config.validate()?;
    Ok(config)
}

pub fn save_scenario(config: &Config, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, config.to_json() + "\n")?;
    Ok(())
}

/// A pedestrian.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub pos: Vec2,
    /// Relaxed speed (m/s).
    pub w: f64,
    /// Desired speed (m/s).
    pub v_des: f64,
    pub target: u32,
    pub alive: bool,
    /// Pinned agents never move but still repel others.
    pub pinned: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "domain": {"x_min": 0, "y_min": 0, "x_max": 40, "y_max": 4},
        "boundary": "periodic-x",
        "obstacles": [{"wall": [[0, 0], [40, 0]]}, {"wall": [[0, 4], [40, 4]]}],
        "targets": [{"id": 1, "heading": [1, 0]}]
    }"#;

    #[test]
    fn minimal_corridor_config() {
        let c = Config::from_json_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.scenario.targets.len(), 1);
        assert_eq!(c.scenario.boundary, Boundary::PeriodicX);
        assert_eq!(c.model, ModelParams::default());
        assert_eq!(c.model.ped_height, 3.59);
        assert_eq!(c.model.obstacle_height, 9.96);
        assert_eq!(c.integrator.tol_abs, 1e-5);
    }

    #[test]
    fn target_outside_domain_is_rejected() {
        let text = r#"{
            "domain": {"x_min": 0, "y_min": 0, "x_max": 10, "y_max": 10},
            "targets": [{"id": 1, "polygon": [[11, 0], [12, 0], [12, 1], [11, 1]]}]
        }"#;
        let c = Config::from_json_str(text).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("targets"), "{err}");
    }

    #[test]
    fn missing_targets_rejected() {
        let text = r#"{"domain": {"x_min": 0, "y_min": 0, "x_max": 10, "y_max": 10}, "targets": []}"#;
        let err = Config::from_json_str(text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("targets"));
    }

    #[test]
    fn eps_must_be_below_radii() {
        let m = ModelParams {
            eps: 0.3,
            ..ModelParams::default()
        };
        assert!(m.validate().unwrap_err().to_string().contains("eps"));
    }

    #[test]
    fn param_override_by_key() {
        let mut m = ModelParams::default();
        m.set("ped_radius", 1.0).unwrap();
        assert_eq!(m.ped_radius, 1.0);
        assert!(m.set("nope", 1.0).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = MINIMAL.replace("\"boundary\"", "\"bondary\"");
        assert!(Config::from_json_str(&text).is_err());
    }

    #[test]
    fn bottleneck_preset_file_has_four_meter_constriction() {
        let dir = env!("CARGO_MANIFEST_DIR");
        let c = load_scenario(format!("{dir}/presets/bottleneck.json")).unwrap();
        let blocks: Vec<Rect> = c
            .scenario
            .obstacles
            .iter()
            .filter_map(|o| match o {
                Obstacle::Polygon(p) => Some(p.bounding_box()),
                _ => None,
            })
            .collect();
        assert_eq!(blocks.len(), 2);
        for b in blocks {
            assert!((b.width() - BOTTLENECK_LENGTH).abs() < 1e-12);
            assert_eq!(BOTTLENECK_LENGTH, 4.0);
        }
    }

    #[test]
    fn shipped_presets_match_builders() {
        let dir = env!("CARGO_MANIFEST_DIR");
        for kind in PresetKind::ALL {
            let built = kind.default_config();
            let loaded = load_scenario(format!("{dir}/presets/{}.json", kind.file_stem())).unwrap();
            assert_eq!(built, loaded, "preset {}", kind.file_stem());
        }
    }

    #[test]
    fn round_trip_serialization() {
        for kind in PresetKind::ALL {
            let c = kind.default_config();
            let back = Config::from_json_str(&c.to_json()).unwrap();
            assert_eq!(c, back);
        }
    }

    #[test]
    fn manifest_is_accepted_as_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let c = PresetKind::Bottleneck.default_config();
        let manifest = serde_json::json!({ "seed": 7, "config": c });
        std::fs::write(&path, manifest.to_string()).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), c);
    }
}
