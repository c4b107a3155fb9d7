//! Network model: Manhattan-grid mobility, base-station coverage and the
//! wireless channel that turns distances into per-link rates.
//!
//! Coordinates are meters with `+y` pointing north. Roads run along every
//! multiple of the cell width in both axes, so a grid of `n` cells per side
//! spans `[0, n * cell_width]` in each direction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distances below this are raised to it before the path-loss formula.
pub const MIN_DISTANCE: f64 = 1.0;

const GRID_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    South,
    East,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::South, Heading::East, Heading::West];

    fn unit(self) -> (f64, f64) {
        match self {
            Heading::North => (0.0, 1.0),
            Heading::South => (0.0, -1.0),
            Heading::East => (1.0, 0.0),
            Heading::West => (-1.0, 0.0),
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn left(self) -> Heading {
        self.right().right().right()
    }

    pub fn reverse(self) -> Heading {
        self.right().right()
    }

    fn horizontal(self) -> bool {
        matches!(self, Heading::East | Heading::West)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Straight,
    Right,
    Left,
}

/// Junction turn probabilities. They must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurnProbs {
    pub straight: f64,
    pub right: f64,
    pub left: f64,
}

impl Default for TurnProbs {
    fn default() -> Self {
        TurnProbs {
            straight: 0.5,
            right: 0.25,
            left: 0.25,
        }
    }
}

impl TurnProbs {
    pub fn validate(&self) -> Result<()> {
        let all = [self.straight, self.right, self.left];
        if all.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "turn probabilities must be non-negative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Turn {
        let u: f64 = rng.gen();
        if u < self.straight {
            Turn::Straight
        } else if u < self.straight + self.right {
            Turn::Right
        } else {
            Turn::Left
        }
    }
}

/// Square Manhattan grid of bidirectional roads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridWorld {
    pub cells_per_side: usize,
    pub cell_width: f64,
}

impl Default for GridWorld {
    fn default() -> Self {
        GridWorld {
            cells_per_side: 4,
            cell_width: 100.0,
        }
    }
}

impl GridWorld {
    pub fn new(cells_per_side: usize, cell_width: f64) -> Result<Self> {
        let w = GridWorld {
            cells_per_side,
            cell_width,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_per_side == 0 || !(self.cell_width > 0.0) || !self.cell_width.is_finite() {
            return Err(Error::Config(format!(
                "grid needs at least one cell and a positive width, got {} x {}",
                self.cells_per_side, self.cell_width
            )));
        }
        Ok(())
    }

    /// Side length of the square world in meters.
    pub fn extent(&self) -> f64 {
        self.cells_per_side as f64 * self.cell_width
    }

    fn on_line(&self, v: f64) -> bool {
        let k = (v / self.cell_width).round();
        (v - k * self.cell_width).abs() <= GRID_TOL && k >= 0.0 && k <= self.cells_per_side as f64
    }

    fn in_bounds(&self, v: f64) -> bool {
        v >= -GRID_TOL && v <= self.extent() + GRID_TOL
    }

    /// True when `p` lies on a road inside the world.
    pub fn is_on_grid(&self, p: &Point) -> bool {
        self.in_bounds(p.x) && self.in_bounds(p.y) && (self.on_line(p.x) || self.on_line(p.y))
    }

    pub fn is_junction(&self, p: &Point) -> bool {
        self.on_line(p.x) && self.on_line(p.y)
    }

    fn snap(&self, v: f64) -> f64 {
        if self.on_line(v) {
            (v / self.cell_width).round() * self.cell_width
        } else {
            v
        }
    }

    /// Whether leaving junction `p` along `h` stays inside the world.
    fn can_leave(&self, p: &Point, h: Heading) -> bool {
        let (dx, dy) = h.unit();
        let nx = p.x + dx * self.cell_width;
        let ny = p.y + dy * self.cell_width;
        self.in_bounds(nx) && self.in_bounds(ny)
    }

    /// Uniform point on a uniformly chosen road, with a random heading along it.
    pub fn random_road_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point, Heading) {
        let lines = self.cells_per_side + 1;
        let line = rng.gen_range(0..lines) as f64 * self.cell_width;
        let along = rng.gen_range(0.0..self.extent());
        let forward: bool = rng.gen();
        if rng.gen::<bool>() {
            let h = if forward {
                Heading::East
            } else {
                Heading::West
            };
            (Point::new(along, line), h)
        } else {
            let h = if forward {
                Heading::North
            } else {
                Heading::South
            };
            (Point::new(line, along), h)
        }
    }
}

/// Mobile device with its radio and compute characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    /// Zero-based index, also the row of the device in every snapshot.
    pub id: usize,
    pub position: Point,
    pub heading: Heading,
    /// Meters per second.
    pub speed: f64,
    /// Cycles per second.
    pub cpu_freq: f64,
    /// Watts.
    pub tx_power: f64,
    /// Samples held this iteration.
    pub data_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
    pub coverage_radius: f64,
    pub cpu_freq: f64,
    /// Hertz.
    pub bandwidth: f64,
    /// Units per second between this station and the cloud, both directions.
    pub backhaul_rate: f64,
    /// Watts, used for the downlink rate.
    pub tx_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateLog {
    /// `B ln(1 + SNR)`.
    #[default]
    Natural,
    /// `B log2(1 + SNR)`.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub path_loss_coeff: f64,
    pub path_loss_exponent: f64,
    /// Watts.
    pub noise_power: f64,
    pub log: RateLog,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.path_loss_coeff) || !ok(self.path_loss_exponent) || !ok(self.noise_power) {
            return Err(Error::Config(format!(
                "channel parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Rate of a link at `distance` (floored at [`MIN_DISTANCE`]).
    pub fn rate(&self, bandwidth: f64, tx_power: f64, distance: f64) -> Result<f64> {
        let g = channel_gain(distance.max(MIN_DISTANCE), self)?;
        let nats = link_rate(bandwidth, tx_power, g, self.noise_power)?;
        Ok(match self.log {
            RateLog::Natural => nats,
            RateLog::Binary => nats / std::f64::consts::LN_2,
        })
    }
}

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Path-loss gain `C_g d^(-α)`.
pub fn channel_gain(distance: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!(
            "channel gain needs a positive finite distance, got {distance}"
        )));
    }
    Ok(params.path_loss_coeff * distance.powf(-params.path_loss_exponent))
}

/// Link rate `B ln(1 + Pt g / η)`.
pub fn link_rate(bandwidth: f64, tx_power: f64, gain: f64, noise: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !(noise > 0.0) || !(tx_power >= 0.0) || !(gain >= 0.0) {
        return Err(Error::Domain(format!(
            "link rate needs B > 0, noise > 0, Pt >= 0, g >= 0 \
             (B {bandwidth}, Pt {tx_power}, g {gain}, noise {noise})"
        )));
    }
    Ok(bandwidth * (tx_power * gain / noise).ln_1p())
}

/// Advances every device by `speed * dt` along the road network.
///
/// A device that reaches a junction draws straight, right or left from
/// `turns`. If the drawn road leaves the world it turns back instead.
pub fn step_mobility<R: Rng + ?Sized>(
    world: &GridWorld,
    devices: &[Device],
    dt: f64,
    turns: &TurnProbs,
    rng: &mut R,
) -> Result<Vec<Device>> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!(
            "mobility step needs dt >= 0, got {dt}"
        )));
    }
    devices
        .iter()
        .map(|d| advance(world, d, dt, turns, rng))
        .collect()
}

fn advance<R: Rng + ?Sized>(
    world: &GridWorld,
    device: &Device,
    dt: f64,
    turns: &TurnProbs,
    rng: &mut R,
) -> Result<Device> {
    let mut d = device.clone();
    if !world.is_on_grid(&d.position) {
        return Err(Error::InvalidState(format!(
            "device {} at ({}, {}) is off the road grid",
            d.id, d.position.x, d.position.y
        )));
    }
    let mut p = Point::new(world.snap(d.position.x), world.snap(d.position.y));
    let mut h = d.heading;
    // A device in the middle of a road must travel along it.
    if !world.is_junction(&p) {
        let on_horizontal_road = world.on_line(p.y);
        if h.horizontal() != on_horizontal_road {
            h = if on_horizontal_road {
                Heading::East
            } else {
                Heading::North
            };
        }
    } else if !world.can_leave(&p, h) {
        h = h.reverse();
    }
    let mut remaining = d.speed * dt;
    let w = world.cell_width;
    while remaining > 0.0 {
        let (dx, dy) = h.unit();
        let coord = if h.horizontal() { p.x } else { p.y };
        let dir = if h.horizontal() { dx } else { dy };
        let cell = coord / w;
        let next_line = if dir > 0.0 {
            (cell + GRID_TOL / w).floor() + 1.0
        } else {
            (cell - GRID_TOL / w).ceil() - 1.0
        } * w;
        let gap = (next_line - coord).abs();
        if remaining < gap {
            if h.horizontal() {
                p.x += dx * remaining;
            } else {
                p.y += dy * remaining;
            }
            break;
        }
        remaining -= gap;
        if h.horizontal() {
            p.x = next_line;
        } else {
            p.y = next_line;
        }
        let proposed = match turns.sample(rng) {
            Turn::Straight => h,
            Turn::Right => h.right(),
            Turn::Left => h.left(),
        };
        h = if world.can_leave(&p, proposed) {
            proposed
        } else {
            h.reverse()
        };
    }
    d.position = p;
    d.heading = h;
    Ok(d)
}

/// Nearest covering station for every position, ties to the lowest id.
pub fn assign_coverage(positions: &[Point], stations: &[BaseStation]) -> Vec<Option<usize>> {
    positions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (i, bs) in stations.iter().enumerate() {
                let dist = p.distance(&bs.position);
                if dist <= bs.coverage_radius && best.is_none_or(|(_, bd)| dist < bd) {
                    best = Some((i, dist));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect()
}

/// Per-iteration view of the network consumed by timing and the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub iteration: usize,
    pub positions: Vec<Point>,
    pub assignment: Vec<Option<usize>>,
    /// Uplink rate `R[u][i]`, zero unless device `u` is assigned to station `i`.
    pub rate_matrix: Vec<Vec<f64>>,
    /// Downlink rate with the station's transmit power, same sparsity.
    pub downlink_matrix: Vec<Vec<f64>>,
    pub bs_cpu: Vec<f64>,
    pub dev_cpu: Vec<f64>,
    pub backhaul: Vec<f64>,
}

impl NetworkSnapshot {
    pub fn num_devices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_stations(&self) -> usize {
        self.bs_cpu.len()
    }

    pub fn is_covered(&self, device: usize) -> bool {
        self.assignment.get(device).copied().flatten().is_some()
    }

    pub fn uplink(&self, device: usize) -> Option<f64> {
        self.assignment[device].map(|i| self.rate_matrix[device][i])
    }

    pub fn downlink(&self, device: usize) -> Option<f64> {
        self.assignment[device].map(|i| self.downlink_matrix[device][i])
    }
}

pub fn build_snapshot(
    iteration: usize,
    devices: &[Device],
    stations: &[BaseStation],
    channel: &ChannelParams,
) -> Result<NetworkSnapshot> {
    for (k, d) in devices.iter().enumerate() {
        if d.id != k {
            return Err(Error::InvalidState(format!(
                "device at index {k} has id {}",
                d.id
            )));
        }
    }
    let positions: Vec<Point> = devices.iter().map(|d| d.position).collect();
    let assignment = assign_coverage(&positions, stations);
    let m = stations.len();
    let mut rate_matrix = vec![vec![0.0; m]; devices.len()];
    let mut downlink_matrix = vec![vec![0.0; m]; devices.len()];
    for (u, d) in devices.iter().enumerate() {
        if let Some(i) = assignment[u] {
            let bs = &stations[i];
            let dist = d.position.distance(&bs.position);
            rate_matrix[u][i] = channel.rate(bs.bandwidth, d.tx_power, dist)?;
            downlink_matrix[u][i] = channel.rate(bs.bandwidth, bs.tx_power, dist)?;
        }
    }
    Ok(NetworkSnapshot {
        iteration,
        positions,
        assignment,
        rate_matrix,
        downlink_matrix,
        bs_cpu: stations.iter().map(|b| b.cpu_freq).collect(),
        dev_cpu: devices.iter().map(|d| d.cpu_freq).collect(),
        backhaul: stations.iter().map(|b| b.backhaul_rate).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn device(x: f64, y: f64, heading: Heading) -> Device {
        Device {
            id: 0,
            position: Point::new(x, y),
            heading,
            speed: 12.5,
            cpu_freq: 2e9,
            tx_power: 0.2,
            data_size: 0,
        }
    }

    fn station(id: usize, x: f64, y: f64) -> BaseStation {
        BaseStation {
            id,
            position: Point::new(x, y),
            coverage_radius: 300.0,
            cpu_freq: 3e9,
            bandwidth: 28e6,
            backhaul_rate: 1e9,
            tx_power: 2.5,
        }
    }

    fn channel() -> ChannelParams {
        ChannelParams {
            path_loss_coeff: 1.0,
            path_loss_exponent: 5.0,
            noise_power: 1e-12,
            log: RateLog::Natural,
        }
    }

    #[test]
    fn linear_advance_without_junction() {
        let world = GridWorld::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = step_mobility(
            &world,
            &[device(0.0, 100.0, Heading::East)],
            1.0,
            &TurnProbs::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out[0].position, Point::new(12.5, 100.0));
        assert_eq!(out[0].heading, Heading::East);
    }

    #[test]
    fn zero_step_is_identity() {
        let world = GridWorld::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = vec![device(30.0, 200.0, Heading::West)];
        let out = step_mobility(&world, &d, 0.0, &TurnProbs::default(), &mut rng).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn straight_fraction_matches_probability() {
        let probs = TurnProbs::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let straight = (0..n)
            .filter(|_| probs.sample(&mut rng) == Turn::Straight)
            .count();
        let frac = straight as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "straight fraction {frac}");
    }

    #[test]
    fn off_grid_device_is_rejected() {
        let world = GridWorld::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = step_mobility(
            &world,
            &[device(50.0, 50.0, Heading::East)],
            1.0,
            &TurnProbs::default(),
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn reflects_at_the_boundary() {
        let world = GridWorld::new(1, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = vec![device(0.0, 50.0, Heading::North)];
        for _ in 0..500 {
            d = step_mobility(&world, &d, 3.7, &TurnProbs::default(), &mut rng).unwrap();
            assert!(world.is_on_grid(&d[0].position), "{:?}", d[0].position);
        }
    }

    #[test]
    fn coverage_rules() {
        let bss = vec![station(0, 0.0, 0.0), station(1, 850.0, 0.0)];
        let a = assign_coverage(
            &[
                Point::new(250.0, 0.0),
                Point::new(425.0, 0.0),
                Point::new(0.0, 400.0),
            ],
            &bss,
        );
        assert_eq!(a, vec![Some(0), None, None]);
        let tie = vec![station(0, 0.0, 0.0), station(1, 400.0, 0.0)];
        assert_eq!(
            assign_coverage(&[Point::new(200.0, 0.0)], &tie),
            vec![Some(0)]
        );
    }

    #[test]
    fn gain_examples() {
        let mut c = channel();
        assert_eq!(channel_gain(1.0, &c).unwrap(), 1.0);
        assert!((channel_gain(100.0, &c).unwrap() - 1e-10).abs() < 1e-24);
        c.path_loss_coeff = 0.1;
        c.path_loss_exponent = 2.0;
        assert!((channel_gain(10.0, &c).unwrap() - 1e-3).abs() < 1e-18);
        assert!(matches!(channel_gain(0.0, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(link_rate(28e6, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((link_rate(28e6, e1, 1.0, 1.0).unwrap() / 28e6 - 1.0).abs() < 1e-9);
        let r = link_rate(30e6, 3.0, 1.0, 1.0).unwrap();
        assert!((r - 30e6 * 4f64.ln()).abs() / r < 1e-12);
        assert!(link_rate(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(link_rate(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(23.0) - 0.19952623149688797).abs() < 1e-15);
    }

    #[test]
    fn snapshot_rows() {
        let bss = vec![station(0, 0.0, 0.0), station(1, 2000.0, 0.0)];
        let mut near = device(100.0, 0.0, Heading::East);
        let mut far = device(1000.0, 1000.0, Heading::East);
        near.id = 0;
        far.id = 1;
        let s = build_snapshot(3, &[near, far], &bss, &channel()).unwrap();
        assert_eq!(s.rate_matrix[1], vec![0.0, 0.0]);
        assert_eq!(s.rate_matrix[0].iter().filter(|r| **r > 0.0).count(), 1);
        let expected = 28e6 * 21f64.ln();
        assert!((s.rate_matrix[0][0] - expected).abs() / expected < 1e-12);
        assert!(s.downlink_matrix[0][0] > s.rate_matrix[0][0]);
        assert_eq!(s.uplink(1), None);
    }

    #[test]
    fn binary_log_scales_rate() {
        let mut c = channel();
        let n = c.rate(1e6, 0.2, 50.0).unwrap();
        c.log = RateLog::Binary;
        let b = c.rate(1e6, 0.2, 50.0).unwrap();
        assert!((b * std::f64::consts::LN_2 - n).abs() / n < 1e-12);
    }
}
