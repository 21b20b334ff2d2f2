use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Approach, FlowSpec, Network, SimError, Simulation, Turn, LANES_PER_INTERSECTION};
use super::movement_index;

pub const SCENARIO_VERSION: u32 = 1;

/// Direction of travel of a straight flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heading {
    East,
    West,
    North,
    South,
}

/// A flow crossing the whole grid on one row (east/west) or column
/// (north/south) without turning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StraightFlow {
    pub heading: Heading,
    pub line: usize,
    /// Vehicles per hour.
    pub rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowPreset {
    /// 300 veh/h eastbound and westbound, 90 veh/h northbound and southbound.
    GridBi,
    /// 300 veh/h eastbound, 90 veh/h southbound.
    GridUni,
}

impl FromStr for FlowPreset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "grid-bi" | "gridbi" => Ok(FlowPreset::GridBi),
            "grid-uni" | "griduni" => Ok(FlowPreset::GridUni),
            _ => Err(SimError::UnknownPreset(s.to_string())),
        }
    }
}

pub const MAJOR_RATE: f64 = 300.0;
pub const MINOR_RATE: f64 = 90.0;

impl FlowPreset {
    pub fn flows(self, rows: usize, cols: usize) -> Vec<StraightFlow> {
        let headings: &[(Heading, f64)] = match self {
            FlowPreset::GridBi => &[
                (Heading::East, MAJOR_RATE),
                (Heading::West, MAJOR_RATE),
                (Heading::North, MINOR_RATE),
                (Heading::South, MINOR_RATE),
            ],
            FlowPreset::GridUni => &[(Heading::East, MAJOR_RATE), (Heading::South, MINOR_RATE)],
        };
        let mut out = Vec::new();
        for &(heading, rate) in headings {
            let lines = match heading {
                Heading::East | Heading::West => rows,
                Heading::North | Heading::South => cols,
            };
            out.extend((0..lines).map(|line| StraightFlow { heading, line, rate }));
        }
        out
    }
}

/// Route of through-lanes for each straight flow.
pub(super) fn straight_flows(rows: usize, cols: usize, flows: &[StraightFlow]) -> Result<Vec<FlowSpec>, SimError> {
    flows
        .iter()
        .map(|f| {
            let (approach, bound) = match f.heading {
                Heading::East => (Approach::West, rows),
                Heading::West => (Approach::East, rows),
                Heading::North => (Approach::South, cols),
                Heading::South => (Approach::North, cols),
            };
            if f.line >= bound {
                return Err(SimError::InvalidFlow(format!("{:?} flow on line {} outside the grid", f.heading, f.line)));
            }
            let nodes: Vec<usize> = match f.heading {
                Heading::East => (0..cols).map(|c| f.line * cols + c).collect(),
                Heading::West => (0..cols).rev().map(|c| f.line * cols + c).collect(),
                Heading::North => (0..rows).map(|r| r * cols + f.line).collect(),
                Heading::South => (0..rows).rev().map(|r| r * cols + f.line).collect(),
            };
            let m = movement_index(approach, Turn::Through);
            Ok(FlowSpec {
                route: nodes.iter().map(|i| i * LANES_PER_INTERSECTION + m).collect(),
                rate: f.rate,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Demand {
    Preset(FlowPreset),
    Custom(Vec<StraightFlow>),
}

fn default_scale() -> f64 {
    1.0
}

/// Scenario description as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub lane_length: f64,
    pub demand: Demand,
    /// Multiplies every flow rate.
    #[serde(default = "default_scale")]
    pub demand_scale: f64,
    /// Simulated seconds per episode.
    pub duration: u64,
}

impl Scenario {
    pub fn grid(rows: usize, cols: usize, preset: FlowPreset) -> Self {
        Self {
            version: SCENARIO_VERSION,
            rows,
            cols,
            lane_length: 300.0,
            demand: Demand::Preset(preset),
            demand_scale: 1.0,
            duration: 3600,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.version != SCENARIO_VERSION {
            return Err(SimError::InvalidScenario(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                self.version
            )));
        }
        if !(self.demand_scale >= 0.0) || !self.demand_scale.is_finite() {
            return Err(SimError::InvalidScenario(format!("demand_scale {} must be non-negative", self.demand_scale)));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Arc<Network>, SimError> {
        self.validate()?;
        let mut flows = match &self.demand {
            Demand::Preset(p) => p.flows(self.rows, self.cols),
            Demand::Custom(fs) => fs.clone(),
        };
        for f in &mut flows {
            f.rate *= self.demand_scale;
        }
        let flows = straight_flows(self.rows, self.cols, &flows)?;
        Ok(Arc::new(Network::new(self.rows, self.cols, self.lane_length, flows)?))
    }

    pub fn simulation(&self, seed: u64) -> Result<Simulation, SimError> {
        Ok(Simulation::new(self.network()?, seed))
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
