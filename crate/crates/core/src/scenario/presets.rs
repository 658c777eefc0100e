//! Built-in experiments. The JSON files under `presets/` are these
//! builders serialized at their default arguments.

use super::{Boundary, Config, ModelParams, Placement, PopulationParams, Scenario, Source, Target};
use crate::geometry::{Obstacle, Polygon, Rect, Segment, Vec2};
use crate::integrator::IntegratorConfig;
use crate::measurement::MeasurementConfig;

/// Length of the constriction along the walking direction (m).
pub const BOTTLENECK_LENGTH: f64 = 4.0;

const BOTTLENECK_ENTRANCE_X: f64 = 12.0;
const BOTTLENECK_HEIGHT: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Bottleneck,
    FundamentalDiagram,
    StopAndGo,
    Lanes,
    Standoff,
}

impl PresetKind {
    pub const ALL: [PresetKind; 5] = [
        PresetKind::Bottleneck,
        PresetKind::FundamentalDiagram,
        PresetKind::StopAndGo,
        PresetKind::Lanes,
        PresetKind::Standoff,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PresetKind::Bottleneck => "bottleneck",
            PresetKind::FundamentalDiagram => "fundamental-diagram",
            PresetKind::StopAndGo => "stop-and-go",
            PresetKind::Lanes => "lanes",
            PresetKind::Standoff => "standoff",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.file_stem() == name)
    }

    pub fn default_config(self) -> Config {
        match self {
            PresetKind::Bottleneck => bottleneck(1.0),
            PresetKind::FundamentalDiagram => corridor(40.0, 4.0, 1.0),
            PresetKind::StopAndGo => corridor(50.0, 4.0, 4.0),
            PresetKind::Lanes => bidirectional_walkway(0.3),
            PresetKind::Standoff => {
                let r = crate::calibration::lattice_spacing(7.0);
                let h = 3f64.sqrt() / 2.0 * r;
                let neighbors = [
                    Vec2::new(r, 0.0),
                    Vec2::new(-r, 0.0),
                    Vec2::new(r / 2.0, h),
                    Vec2::new(-r / 2.0, h),
                ];
                standoff(&neighbors, 0.2)
            }
        }
    }
}

fn boundary_walls(d: &Rect) -> Vec<Obstacle> {
    d.corners()
        .iter()
        .zip(d.corners().iter().cycle().skip(1))
        .map(|(a, b)| Obstacle::Wall(Segment::new(*a, *b)))
        .collect()
}

/// Waiting room, a 4 m long constriction of the given width, and an exit
/// area ending in the target. 180 pedestrians start in the waiting room.
pub fn bottleneck(width: f64) -> Config {
    let domain = Rect::new(0.0, 0.0, 25.0, BOTTLENECK_HEIGHT);
    let mid = BOTTLENECK_HEIGHT / 2.0;
    let (x0, x1) = (BOTTLENECK_ENTRANCE_X, BOTTLENECK_ENTRANCE_X + BOTTLENECK_LENGTH);
    let mut obstacles = boundary_walls(&domain);
    obstacles.push(Obstacle::Polygon(Polygon::from_rect(&Rect::new(
        x0,
        0.0,
        x1,
        mid - width / 2.0,
    ))));
    obstacles.push(Obstacle::Polygon(Polygon::from_rect(&Rect::new(
        x0,
        mid + width / 2.0,
        x1,
        BOTTLENECK_HEIGHT,
    ))));
    let scenario = Scenario {
        name: "bottleneck".into(),
        domain,
        boundary: Boundary::Closed,
        grid_h: 0.1,
        obstacles,
        targets: vec![Target {
            id: 1,
            polygon: Some(Polygon::from_rect(&Rect::new(23.5, 0.0, 25.0, BOTTLENECK_HEIGHT))),
            heading: None,
        }],
        sources: vec![Source {
            region: Rect::new(0.5, 0.5, 11.0, BOTTLENECK_HEIGHT - 0.5),
            count: 180,
            target: 1,
            placement: Placement::default(),
            desired_speed: None,
        }],
    };
    Config {
        scenario,
        model: ModelParams::default(),
        population: PopulationParams::default(),
        integrator: IntegratorConfig::default(),
        measurement: MeasurementConfig {
            flow_line: Some([[x1, 0.0], [x1, BOTTLENECK_HEIGHT]]),
            ..MeasurementConfig::default()
        },
        duration: 300.0,
    }
}

/// The bottleneck's entrance line (x) and the y-range of its opening.
pub fn bottleneck_opening(width: f64) -> (f64, f64, f64) {
    let mid = BOTTLENECK_HEIGHT / 2.0;
    (BOTTLENECK_ENTRANCE_X, mid - width / 2.0, mid + width / 2.0)
}

fn corridor_walls(domain: &Rect) -> Vec<Obstacle> {
    vec![
        Obstacle::Wall(Segment::new(
            Vec2::new(domain.x_min, domain.y_min),
            Vec2::new(domain.x_max, domain.y_min),
        )),
        Obstacle::Wall(Segment::new(
            Vec2::new(domain.x_min, domain.y_max),
            Vec2::new(domain.x_max, domain.y_max),
        )),
    ]
}

/// Unidirectional periodic corridor at global density `rho` (P/m^2).
pub fn corridor(length: f64, width: f64, rho: f64) -> Config {
    let domain = Rect::new(0.0, 0.0, length, width);
    let count = (rho * domain.area()).round() as usize;
    let scenario = Scenario {
        name: format!("corridor-{length}x{width}"),
        domain,
        boundary: Boundary::PeriodicX,
        grid_h: 0.1,
        obstacles: corridor_walls(&domain),
        targets: vec![Target {
            id: 1,
            polygon: None,
            heading: Some([1.0, 0.0]),
        }],
        sources: vec![Source {
            region: domain,
            count,
            target: 1,
            placement: Placement::Lattice { jitter: 0.1 },
            desired_speed: None,
        }],
    };
    Config {
        scenario,
        model: ModelParams::default(),
        population: PopulationParams::default(),
        integrator: IntegratorConfig::default(),
        measurement: MeasurementConfig::default(),
        duration: 180.0,
    }
}

/// 150 m x 10 m walkway with two opposing groups at total density `rho`,
/// both uniformly spread over the walkway at the start.
pub fn bidirectional_walkway(rho: f64) -> Config {
    let domain = Rect::new(0.0, 0.0, 150.0, 10.0);
    let per_direction = (rho * domain.area() / 2.0).round() as usize;
    let scenario = Scenario {
        name: "bidirectional-walkway".into(),
        domain,
        boundary: Boundary::PeriodicX,
        grid_h: 0.1,
        obstacles: corridor_walls(&domain),
        targets: vec![
            Target {
                id: 1,
                polygon: None,
                heading: Some([1.0, 0.0]),
            },
            Target {
                id: 2,
                polygon: None,
                heading: Some([-1.0, 0.0]),
            },
        ],
        sources: [1, 2]
            .into_iter()
            .map(|target| Source {
                region: domain,
                count: per_direction,
                target,
                placement: Placement::default(),
                desired_speed: None,
            })
            .collect(),
    };
    Config {
        scenario,
        model: ModelParams::default(),
        population: PopulationParams::default(),
        integrator: IntegratorConfig::default(),
        measurement: MeasurementConfig {
            lane_times: vec![120.0],
            ..MeasurementConfig::default()
        },
        duration: 120.0,
    }
}

/// One walker at the origin heading along +x, held in place by pinned
/// neighbors and a wall `wall_distance` below.
pub fn standoff(neighbors: &[Vec2], wall_distance: f64) -> Config {
    let reach = neighbors.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
    let half = (reach + 3.0).ceil();
    let domain = Rect::new(-half, -wall_distance, half, reach + 3.0);
    let scenario = Scenario {
        name: "standoff".into(),
        domain,
        boundary: Boundary::PeriodicX,
        grid_h: 0.1,
        obstacles: vec![Obstacle::Wall(Segment::new(
            Vec2::new(-half, -wall_distance),
            Vec2::new(half, -wall_distance),
        ))],
        targets: vec![Target {
            id: 1,
            polygon: None,
            heading: Some([1.0, 0.0]),
        }],
        sources: vec![
            Source {
                region: Rect::new(-0.1, -0.1, 0.1, 0.1).clamp_into(&domain),
                count: 1,
                target: 1,
                placement: Placement::Explicit {
                    positions: vec![[0.0, 0.0]],
                    pinned: false,
                },
                desired_speed: Some(1.34),
            },
            Source {
                region: domain,
                count: neighbors.len(),
                target: 1,
                placement: Placement::Explicit {
                    positions: neighbors.iter().map(|p| [p.x, p.y]).collect(),
                    pinned: true,
                },
                desired_speed: Some(0.0),
            },
        ],
    };
    Config {
        scenario,
        model: ModelParams::default(),
        population: PopulationParams::default(),
        integrator: IntegratorConfig::default(),
        measurement: MeasurementConfig::default(),
        duration: 10.0,
    }
}
