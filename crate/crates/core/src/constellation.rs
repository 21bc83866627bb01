//! Walker Star constellation: orbit geometry, propagation, line-of-sight
//! visibility, time-varying topology, link rates, and per-round delay
//! and energy accounting.

use crate::seed::stream;
use rand::Rng;
use std::io::Write;
use thiserror::Error;

/// Standard gravitational parameter of Earth, km^3/s^2.
pub const MU_EARTH_KM3_S2: f64 = 3.986004418e5;

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Thermal noise power spectral density (-174 dBm/Hz), W/Hz.
pub const DEFAULT_NOISE_PSD_W_HZ: f64 = 3.98e-21;

#[derive(Debug, Error)]
pub enum ConstellationError {
    #[error("constellation needs at least one orbit and one satellite per orbit")]
    EmptyConstellation,
    #[error("orbital altitude must be positive, got {0} km")]
    NonPositiveAltitude(f64),
    #[error("LOS threshold radius {r_t} km must be at least the Earth radius {r_d} km")]
    ThresholdBelowEarth { r_t: f64, r_d: f64 },
    #[error(
        "shell radius {shell} km lies below the LOS threshold {r_t} km; no line of sight exists"
    )]
    ShellBelowThreshold { shell: f64, r_t: f64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Geometry of the Walker Star constellation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationConfig {
    /// Number of orbital planes G.
    pub num_orbits: usize,
    /// Satellites per orbital plane S.
    pub sats_per_orbit: usize,
    /// Orbital altitude above the surface, km.
    pub altitude_km: f64,
    /// Inclination of every plane, degrees.
    pub inclination_deg: f64,
    /// Earth radius used throughout, km.
    pub earth_radius_km: f64,
    /// Line-of-sight threshold radius r_T, km. A link exists only while
    /// the inter-satellite ray clears this radius.
    pub los_threshold_radius_km: f64,
    /// RAAN span covered by the planes, degrees (180 for Walker Star).
    pub raan_spread_deg: f64,
    /// Extra in-plane phase advance per plane index, degrees.
    pub phase_offset_deg: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            num_orbits: 5,
            sats_per_orbit: 10,
            altitude_km: 330.0,
            inclination_deg: 90.0,
            earth_radius_km: EARTH_RADIUS_KM,
            los_threshold_radius_km: EARTH_RADIUS_KM + 80.0,
            raan_spread_deg: 180.0,
            phase_offset_deg: 0.0,
        }
    }
}

impl ConstellationConfig {
    pub fn total_satellites(&self) -> usize {
        self.num_orbits * self.sats_per_orbit
    }

    pub fn shell_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    pub fn validate(&self) -> Result<(), ConstellationError> {
        if self.num_orbits == 0 || self.sats_per_orbit == 0 {
            return Err(ConstellationError::EmptyConstellation);
        }
        if self.altitude_km <= 0.0 {
            return Err(ConstellationError::NonPositiveAltitude(self.altitude_km));
        }
        if self.los_threshold_radius_km < self.earth_radius_km {
            return Err(ConstellationError::ThresholdBelowEarth {
                r_t: self.los_threshold_radius_km,
                r_d: self.earth_radius_km,
            });
        }
        Ok(())
    }
}

/// Per-satellite hardware parameters used to populate satellites at
/// build time. Capacities are drawn uniformly from
/// `capacity_range x base_capacity_flops` under the build seed.
#[derive(Clone, Debug, PartialEq)]
pub struct HardwareProfile {
    pub base_capacity_flops: f64,
    pub capacity_range: (f64, f64),
    pub transmit_power_w: f64,
    pub compute_power_w: f64,
    pub channel_gain: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self {
            base_capacity_flops: 1e9,
            capacity_range: (0.5, 2.0),
            transmit_power_w: 5.0,
            compute_power_w: 5.0,
            channel_gain: 1000.0,
        }
    }
}

/// One satellite of the constellation with its orbital elements and
/// hardware parameters. `position_km` is the epoch (t = 0) position.
#[derive(Clone, Debug)]
pub struct SatelliteState {
    pub sat_id: usize,
    pub orbit_id: usize,
    pub in_orbit_index: usize,
    /// Epoch position, Earth-centered inertial, km.
    pub position_km: [f64; 3],
    pub compute_capacity_flops: f64,
    pub transmit_power_w: f64,
    pub compute_power_w: f64,
    pub channel_gain: f64,
    /// Orbital radius (Earth radius + altitude), km.
    pub radius_km: f64,
    /// Altitude above surface, km.
    pub altitude_km: f64,
    raan_rad: f64,
    inclination_rad: f64,
    phase0_rad: f64,
}

impl SatelliteState {
    /// In-plane phase at epoch, degrees.
    pub fn phase_deg(&self) -> f64 {
        self.phase0_rad.to_degrees()
    }

    /// RAAN, degrees.
    pub fn raan_deg(&self) -> f64 {
        self.raan_rad.to_degrees()
    }

    /// Mean motion, rad/s (circular orbit).
    pub fn angular_rate_rad_s(&self) -> f64 {
        (MU_EARTH_KM3_S2 / self.radius_km.powi(3)).sqrt()
    }

    /// Orbital period, s.
    pub fn period_s(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.angular_rate_rad_s()
    }
}

/// Builds the Walker Star constellation. Planes are spaced evenly in
/// RAAN across `raan_spread_deg`; satellites are spaced 360/S degrees
/// apart in phase within each plane.
pub fn build_walker_star(
    config: &ConstellationConfig,
    hardware: &HardwareProfile,
    seed: u64,
) -> Result<Vec<SatelliteState>, ConstellationError> {
    config.validate()?;
    let g = config.num_orbits;
    let s = config.sats_per_orbit;
    let mut rng = stream(seed, "compute-capacity", 0);
    let mut sats = Vec::with_capacity(g * s);
    for orbit in 0..g {
        let raan_deg = config.raan_spread_deg * orbit as f64 / g as f64;
        for slot in 0..s {
            let phase_deg =
                360.0 * slot as f64 / s as f64 + config.phase_offset_deg * orbit as f64;
            let (lo, hi) = hardware.capacity_range;
            let capacity = hardware.base_capacity_flops * rng.gen_range(lo..=hi);
            let mut sat = SatelliteState {
                sat_id: orbit * s + slot,
                orbit_id: orbit,
                in_orbit_index: slot,
                position_km: [0.0; 3],
                compute_capacity_flops: capacity,
                transmit_power_w: hardware.transmit_power_w,
                compute_power_w: hardware.compute_power_w,
                channel_gain: hardware.channel_gain,
                radius_km: config.shell_radius_km(),
                altitude_km: config.altitude_km,
                raan_rad: raan_deg.to_radians(),
                inclination_rad: config.inclination_deg.to_radians(),
                phase0_rad: phase_deg.to_radians(),
            };
            sat.position_km = propagate(&sat, 0.0);
            sats.push(sat);
        }
    }
    Ok(sats)
}

/// Position at time `t` seconds after epoch on the circular orbit.
pub fn propagate(sat: &SatelliteState, t: f64) -> [f64; 3] {
    let theta = sat.phase0_rad + sat.angular_rate_rad_s() * t;
    let (sin_t, cos_t) = theta.sin_cos();
    let (sin_o, cos_o) = sat.raan_rad.sin_cos();
    let (sin_i, cos_i) = sat.inclination_rad.sin_cos();
    let r = sat.radius_km;
    [
        r * (cos_o * cos_t - sin_o * sin_t * cos_i),
        r * (sin_o * cos_t + cos_o * sin_t * cos_i),
        r * (sin_t * sin_i),
    ]
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Maximum inter-satellite distance with a clear line of sight:
/// sqrt((h_i + r_d)^2 - r_T^2) + sqrt((h_j + r_d)^2 - r_T^2).
pub fn max_los_range(
    sat_i: &SatelliteState,
    sat_j: &SatelliteState,
    config: &ConstellationConfig,
) -> Result<f64, ConstellationError> {
    let r_t = config.los_threshold_radius_km;
    let term = |altitude: f64| -> Result<f64, ConstellationError> {
        let shell = altitude + config.earth_radius_km;
        if shell < r_t {
            return Err(ConstellationError::ShellBelowThreshold { shell, r_t });
        }
        Ok((shell * shell - r_t * r_t).sqrt())
    };
    Ok(term(sat_i.altitude_km)? + term(sat_j.altitude_km)?)
}

/// True when the propagated distance at `t` is below the LOS maximum.
pub fn visible(
    sat_i: &SatelliteState,
    sat_j: &SatelliteState,
    t: f64,
    config: &ConstellationConfig,
) -> Result<bool, ConstellationError> {
    let d = distance(propagate(sat_i, t), propagate(sat_j, t));
    Ok(d < max_los_range(sat_i, sat_j, config)?)
}

/// Topology construction mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyMode {
    /// Edge wherever line of sight exists.
    Los,
    /// Ring: intra-plane predecessor/successor plus, when visible, the
    /// nearest satellite in each adjacent plane (at most two cross-plane
    /// links, matching the two inter-orbital terminals per satellite).
    Ring,
    /// Complete graph; baseline plumbing for dense averaging runs.
    Complete,
}

/// Symmetric, zero-diagonal adjacency snapshot for one round.
#[derive(Clone, Debug)]
pub struct TimeVaryingTopology {
    round: usize,
    n: usize,
    adj: Vec<bool>,
}

impl TimeVaryingTopology {
    fn empty(round: usize, n: usize) -> Self {
        Self {
            round,
            n,
            adj: vec![false; n * n],
        }
    }

    fn connect(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.adj[a * self.n + b] = true;
        self.adj[b * self.n + a] = true;
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.n + b]
    }

    pub fn degree(&self, a: usize) -> usize {
        (0..self.n).filter(|&b| self.connected(a, b)).count()
    }

    /// Neighbor set S_n (self excluded).
    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        (0..self.n).filter(|&b| self.connected(a, b)).collect()
    }

    /// All neighbor sets in node order.
    pub fn neighbor_sets(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|a| self.neighbors(a)).collect()
    }

    /// Undirected edges with src < dst.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.connected(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Topology snapshot at time `t`, labeled with `round`.
pub fn adjacency(
    sats: &[SatelliteState],
    round: usize,
    t: f64,
    mode: TopologyMode,
    config: &ConstellationConfig,
) -> Result<TimeVaryingTopology, ConstellationError> {
    let n = sats.len();
    let mut topo = TimeVaryingTopology::empty(round, n);
    match mode {
        TopologyMode::Complete => {
            for a in 0..n {
                for b in a + 1..n {
                    topo.connect(a, b);
                }
            }
        }
        TopologyMode::Los => {
            let pos: Vec<[f64; 3]> = sats.iter().map(|s| propagate(s, t)).collect();
            for a in 0..n {
                for b in a + 1..n {
                    let d = distance(pos[a], pos[b]);
                    if d < max_los_range(&sats[a], &sats[b], config)? {
                        topo.connect(a, b);
                    }
                }
            }
        }
        TopologyMode::Ring => {
            assert!(
                config.sats_per_orbit >= 2,
                "ring topology needs at least two satellites per orbit"
            );
            let pos: Vec<[f64; 3]> = sats.iter().map(|s| propagate(s, t)).collect();
            let g = config.num_orbits;
            let s = config.sats_per_orbit;
            let id = |orbit: usize, slot: usize| orbit * s + slot;
            for orbit in 0..g {
                for slot in 0..s {
                    topo.connect(id(orbit, slot), id(orbit, (slot + 1) % s));
                }
            }
            // Cross-plane: nearest visible satellite in each adjacent
            // plane, chosen at round start and held for the round.
            for orbit in 0..g {
                for slot in 0..s {
                    let a = id(orbit, slot);
                    for adj_orbit in [orbit.checked_sub(1), Some(orbit + 1)]
                        .into_iter()
                        .flatten()
                    {
                        if adj_orbit >= g {
                            continue;
                        }
                        let mut best: Option<(f64, usize)> = None;
                        for other in 0..s {
                            let b = id(adj_orbit, other);
                            let d = distance(pos[a], pos[b]);
                            if d >= max_los_range(&sats[a], &sats[b], config)? {
                                continue;
                            }
                            let better = match best {
                                None => true,
                                Some((bd, bi)) => d < bd || (d == bd && b < bi),
                            };
                            if better {
                                best = Some((d, b));
                            }
                        }
                        if let Some((_, b)) = best {
                            topo.connect(a, b);
                        }
                    }
                }
            }
        }
    }
    Ok(topo)
}

/// Channel parameters shared by all inter-satellite links.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub noise_psd_w_hz: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            noise_psd_w_hz: DEFAULT_NOISE_PSD_W_HZ,
        }
    }
}

/// Shannon rate R = B log2(1 + p g / (N_p B)), bit/s.
pub fn link_rate(budget: &LinkBudget, sat: &SatelliteState) -> f64 {
    let snr =
        sat.transmit_power_w * sat.channel_gain / (budget.noise_psd_w_hz * budget.bandwidth_hz);
    budget.bandwidth_hz * (1.0 + snr).log2()
}

/// Additive delay components of one round for one satellite.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoundDelay {
    pub comm_s: f64,
    pub comp_s: f64,
    pub energy_j: f64,
}

impl RoundDelay {
    pub fn total_s(&self) -> f64 {
        self.comm_s + self.comp_s
    }
}

/// Communication, computation, and energy cost of one round:
/// comm = payload / rate, comp = epochs * |D| * work / capacity,
/// energy = p_tx * comm + p_comp * comp.
///
/// The local-epoch factor multiplies last so that the kappa = 5 cost is
/// bitwise exactly five times the kappa = 1 cost.
pub fn round_delay(
    payload_bits: f64,
    rate_bps: f64,
    local_epochs: usize,
    dataset_size: usize,
    work_per_sample_flop: f64,
    sat: &SatelliteState,
) -> RoundDelay {
    let comm_s = payload_bits / rate_bps;
    let comp_s = dataset_size as f64 * work_per_sample_flop / sat.compute_capacity_flops
        * local_epochs as f64;
    RoundDelay {
        comm_s,
        comp_s,
        energy_j: sat.transmit_power_w * comm_s + sat.compute_power_w * comp_s,
    }
}

/// Writes one `round,src,dst` row per undirected edge.
pub fn write_topology_csv<W: Write>(
    w: &mut W,
    topos: &[TimeVaryingTopology],
) -> Result<(), ConstellationError> {
    writeln!(w, "round,src,dst")?;
    for topo in topos {
        for (src, dst) in topo.edges() {
            writeln!(w, "{},{},{}", topo.round(), src, dst)?;
        }
    }
    Ok(())
}

/// Writes the constellation dump: sat_id, orbit_id, phase_deg, capacity.
pub fn write_constellation_csv<W: Write>(
    w: &mut W,
    sats: &[SatelliteState],
) -> Result<(), ConstellationError> {
    writeln!(w, "sat_id,orbit_id,phase_deg,capacity_flops")?;
    for sat in sats {
        writeln!(
            w,
            "{},{},{},{}",
            sat.sat_id,
            sat.orbit_id,
            sat.phase_deg(),
            sat.compute_capacity_flops
        )?;
    }
    Ok(())
}
